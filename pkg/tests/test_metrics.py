import math

import numpy as np
import pytest
import torch

from symbiodiff import metrics as M


def _pair(seed=0):
    g = torch.Generator().manual_seed(seed)
    gt = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    mask = torch.ones(2, 1, 16, 16)
    mask[:, :, 4:12, 2:10] = 0
    return gt, mask


def test_identical_output_scores():
    gt, mask = _pair()
    assert torch.equal(M.region_l1(gt, gt, mask), torch.zeros(2, dtype=torch.float64))
    assert torch.equal(M.region_psnr(gt, gt, mask), torch.full((2,), 100.0, dtype=torch.float64))
    assert torch.allclose(M.region_ssim(gt, gt, mask), torch.ones(2, dtype=torch.float64))
    assert torch.equal(M.seam_excess(gt, gt, mask), torch.zeros(2, dtype=torch.float64))
    assert torch.equal(M.quality_proxy(gt, gt, mask), torch.zeros(2, dtype=torch.float64))
    assert torch.allclose(M.cosine(gt.flatten(1), gt.flatten(1)), torch.ones(2, dtype=torch.float64))


def test_region_l1_and_psnr_hand_values():
    gt = -torch.ones(1, 1, 4, 4)
    out = gt.clone()
    mask = torch.ones(1, 1, 4, 4)
    mask[..., :2, :2] = 0
    out[..., 0, 0] = 1.0  # one region pixel off by the full range
    out[..., 3, 3] = 1.0  # background pixels are ignored
    assert float(M.region_l1(out, gt, mask)) == 0.25
    assert float(M.region_psnr(out, gt, mask)) == pytest.approx(-10 * math.log10(0.25))
    assert float(M.psnr(out, gt)) == pytest.approx(-10 * math.log10(2 / 16))


def test_ssim_matches_numpy_oracle():
    g = np.random.default_rng(0)
    a, b = g.random((8, 8)), g.random((8, 8))
    c1, c2, w = 0.01**2, 0.03**2, 5
    vals = []
    for i in range(8 - w + 1):
        for j in range(8 - w + 1):
            x, y = a[i:i + w, j:j + w], b[i:i + w, j:j + w]
            mx, my = x.mean(), y.mean()
            vx, vy = (x * x).mean() - mx**2, (y * y).mean() - my**2
            cov = (x * y).mean() - mx * my
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    got = M.ssim(torch.from_numpy(a)[None, None], torch.from_numpy(b)[None, None])
    assert float(got) == pytest.approx(float(np.mean(vals)), abs=1e-12)


def test_region_boxes_and_crop():
    _, mask = _pair()
    assert M.region_boxes(mask) == [(2, 4, 10, 12)] * 2
    x = torch.arange(16.0).view(1, 1, 4, 4).repeat(2, 1, 1, 1)
    m = torch.ones(2, 1, 4, 4)
    m[:, :, 1:3, 1:3] = 0
    crop = M.crop_resize(x, m, 2)
    assert torch.equal(crop[0, 0], torch.tensor([[5.0, 6.0], [9.0, 10.0]]))


def test_seam_excess_detects_boundary_jump():
    gt = torch.zeros(1, 1, 8, 8)
    mask = torch.ones(1, 1, 8, 8)
    mask[..., 2:6, 2:6] = 0
    out = gt.clone()
    out[..., 2:6, 2:6] = 0.5
    assert float(M.seam_excess(out, gt, mask)) > 0
    assert float(M.quality_proxy(out, gt, mask)) < 0


def test_high_frequency_energy_of_flat_image_is_zero():
    x = torch.full((1, 3, 8, 8), 0.3)
    mask = torch.zeros(1, 1, 8, 8)
    assert float(M.high_frequency_energy(x, mask)) == 0.0


def test_diversity_of_identical_samples_is_zero():
    gt, mask = _pair()
    same = gt[:1].repeat(8, 1, 1, 1)
    assert M.pairwise_region_l2(same, mask[:1]) == 0.0
    two = torch.stack([gt[0], gt[1]])
    r = mask[:1].expand(1, 3, 16, 16) < 0.5
    expected = math.sqrt(float(((M.to_unit(gt[0]) - M.to_unit(gt[1])) ** 2)[r[0]].mean()))
    assert M.pairwise_region_l2(two, mask[:1]) == pytest.approx(expected, abs=1e-12)
