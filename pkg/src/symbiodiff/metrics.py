"""Region-restricted image metrics used as stand-ins for pretrained scorers.

Images are (B, C, H, W) tensors in [-1, 1]; masks are (B, 1, H, W) with
1 = preserved scene, so the evaluated region is ``mask == 0``.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F


def to_unit(x: torch.Tensor) -> torch.Tensor:
    return ((x.double() + 1) / 2).clamp(0, 1)


def _region(mask: torch.Tensor) -> torch.Tensor:
    return (mask < 0.5).double()


def region_l1(out, gt, mask) -> torch.Tensor:
    r = _region(mask)
    diff = (to_unit(out) - to_unit(gt)).abs() * r
    return diff.sum(dim=(1, 2, 3)) / (r.sum(dim=(1, 2, 3)) * out.shape[1])


def region_mse(out, gt, mask) -> torch.Tensor:
    r = _region(mask)
    diff = (to_unit(out) - to_unit(gt)) ** 2 * r
    return diff.sum(dim=(1, 2, 3)) / (r.sum(dim=(1, 2, 3)) * out.shape[1])


def psnr_from_mse(mse: torch.Tensor, cap: float = 100.0) -> torch.Tensor:
    return torch.where(mse > 0, -10 * torch.log10(mse.clamp_min(1e-30)), torch.full_like(mse, cap)).clamp(max=cap)


def region_psnr(out, gt, mask) -> torch.Tensor:
    return psnr_from_mse(region_mse(out, gt, mask))


def psnr(out, gt) -> torch.Tensor:
    mse = ((to_unit(out) - to_unit(gt)) ** 2).mean(dim=(1, 2, 3))
    return psnr_from_mse(mse)


def region_boxes(mask: torch.Tensor) -> list[tuple[int, int, int, int]]:
    boxes = []
    for m in mask:
        ys, xs = torch.nonzero(m[0] < 0.5, as_tuple=True)
        if len(ys) == 0:
            boxes.append((0, 0, m.shape[-1], m.shape[-2]))
        else:
            boxes.append((int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1))
    return boxes


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 5) -> torch.Tensor:
    """Mean structural similarity with a uniform window, inputs in [0, 1]."""
    c1, c2 = 0.01**2, 0.03**2
    window = min(window, a.shape[-1], a.shape[-2])
    pool = lambda x: F.avg_pool2d(x, window, stride=1)
    mu_a, mu_b = pool(a), pool(b)
    var_a = pool(a * a) - mu_a**2
    var_b = pool(b * b) - mu_b**2
    cov = pool(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return s.mean(dim=(1, 2, 3))


def region_ssim(out, gt, mask) -> torch.Tensor:
    vals = []
    for i, (x0, y0, x1, y1) in enumerate(region_boxes(mask)):
        vals.append(ssim(to_unit(out[i:i + 1, :, y0:y1, x0:x1]), to_unit(gt[i:i + 1, :, y0:y1, x0:x1]))[0])
    return torch.stack(vals)


def crop_resize(x: torch.Tensor, mask: torch.Tensor, size: int) -> torch.Tensor:
    crops = []
    for i, (x0, y0, x1, y1) in enumerate(region_boxes(mask)):
        crops.append(F.interpolate(x[i:i + 1, :, y0:y1, x0:x1], size=(size, size), mode="bilinear",
                                   align_corners=False))
    return torch.cat(crops)


def boundary_pairs(mask: torch.Tensor):
    """Horizontal and vertical neighbour pairs straddling the region boundary."""
    r = mask < 0.5
    h = r[..., :, 1:] ^ r[..., :, :-1]
    v = r[..., 1:, :] ^ r[..., :-1, :]
    return h, v


def seam_excess(out, gt, mask) -> torch.Tensor:
    """Mean extra contrast across the region boundary relative to the ground truth."""
    o, g = to_unit(out), to_unit(gt)
    h, v = boundary_pairs(mask)
    dh_o = (o[..., :, 1:] - o[..., :, :-1]).abs().mean(1, keepdim=True)
    dh_g = (g[..., :, 1:] - g[..., :, :-1]).abs().mean(1, keepdim=True)
    dv_o = (o[..., 1:, :] - o[..., :-1, :]).abs().mean(1, keepdim=True)
    dv_g = (g[..., 1:, :] - g[..., :-1, :]).abs().mean(1, keepdim=True)
    num = ((dh_o - dh_g).clamp_min(0) * h).sum(dim=(1, 2, 3)) + ((dv_o - dv_g).clamp_min(0) * v).sum(dim=(1, 2, 3))
    den = (h.sum(dim=(1, 2, 3)) + v.sum(dim=(1, 2, 3))).clamp_min(1).double()
    return num / den


def high_frequency_energy(x, mask) -> torch.Tensor:
    """Mean absolute Laplacian response inside the region."""
    u = to_unit(x)
    k = torch.tensor([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=u.dtype).view(1, 1, 3, 3).repeat(u.shape[1], 1, 1, 1)
    lap = F.conv2d(F.pad(u, (1, 1, 1, 1), mode="replicate"), k, groups=u.shape[1]).abs().mean(1, keepdim=True)
    r = _region(mask)
    return (lap * r).sum(dim=(1, 2, 3)) / r.sum(dim=(1, 2, 3)).clamp_min(1)


def quality_proxy(out, gt, mask) -> torch.Tensor:
    """Harmony score, higher is better: penalises boundary seams and texture-energy mismatch."""
    hf_gap = (high_frequency_energy(out, mask) - high_frequency_energy(gt, mask)).abs()
    return -(seam_excess(out, gt, mask) + hf_gap)


def pairwise_region_l2(samples: torch.Tensor, mask: torch.Tensor) -> float:
    """Mean pairwise RMS difference over the region between samples of one subject.

    ``samples`` is (S, C, H, W); ``mask`` is (1, 1, H, W).
    """
    r = _region(mask)[0]
    u = to_unit(samples)
    n = u.shape[0]
    dists = []
    for i in range(n):
        for j in range(i + 1, n):
            d = ((u[i] - u[j]) ** 2 * r).sum() / (r.sum() * u.shape[1])
            dists.append(float(d.sqrt()))
    return math.fsum(dists) / len(dists) if dists else 0.0


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.cosine_similarity(a.double(), b.double(), dim=-1)
