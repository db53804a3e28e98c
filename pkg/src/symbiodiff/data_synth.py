"""Procedural (subject, scene, mask) triplets of logo-like graphics.

Every logo is a list of vector primitives in normalised coordinates, so the
scene copy (rendered into the region) and the subject copy (re-rendered on a
neutral ground, slightly perturbed) come from the same description.

Masks use the internal polarity: 1 = preserved scene, 0 = region to customise.
Mask *files* store 255 for the region to customise (the usual painting
convention) and are converted on load.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

CATEGORIES = ("glyph_text", "shape_logo", "tryon_patch")
TEST_OFFSET = 1_000_000  # benchmark indices start here; training indices stay below
DATASET_FORMAT = "symbiodiff-dataset/1"
SUPERSAMPLE = 4
MAX_RETRIES = 100
_GLYPHS = "ABCDEFGHJKLMNPQRSTUVWXYZ0123456789&#@"


@dataclass
class SynthSpec:
    image_size: int = 64
    categories: tuple[str, ...] = CATEGORIES
    category_weights: tuple[float, ...] = (0.2, 0.65, 0.15)
    mask_area_range: tuple[float, float] = (0.10, 0.30)
    rng_seed: int = 0
    align: int = 4  # region corners snap to this pixel grid (latent cell size)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        self.category_weights = tuple(float(w) for w in self.category_weights)
        if len(self.categories) != len(self.category_weights):
            raise ValueError("one weight per category")
        if any(c not in CATEGORIES for c in self.categories):
            raise ValueError(f"categories must come from {CATEGORIES}")
        if min(self.category_weights) < 0 or not math.isclose(sum(self.category_weights), 1.0, abs_tol=1e-9):
            raise ValueError("category weights must be >= 0 and sum to 1")
        lo, hi = self.mask_area_range
        if not 0 < lo < hi < 1:
            raise ValueError("need 0 < min area < max area < 1")


@dataclass
class SamplePair:
    scene: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8, 1 = keep scene
    subject: np.ndarray  # (H, W, 3) uint8
    category: str
    index: int
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 of the customised region
    flags: dict = field(default_factory=dict)

    @property
    def area_fraction(self) -> float:
        return float((self.mask == 0).mean())


# -- vector logos ----------------------------------------------------------------------


def _color(rng, avoid=None, min_dist=90):
    for _ in range(50):
        c = tuple(int(v) for v in rng.integers(0, 256, 3))
        if avoid is None or all(sum(abs(a - b) for a, b in zip(c, o)) >= min_dist for o in avoid):
            return c
    return c


def _make_logo(category: str, rng: np.random.Generator) -> dict:
    """Random vector description: aspect ratio, palette and primitives in [0, 1]^2."""
    n_colors = int(rng.integers(2, 5))
    palette = []
    for _ in range(n_colors):
        palette.append(_color(rng, palette))
    prims = []
    if category == "shape_logo":
        aspect = float(rng.uniform(0.7, 1.5))
        if rng.random() < 0.5:
            prims.append({"kind": "rect", "box": [0, 0, 1, 1], "color": 0})
        for _ in range(int(rng.integers(2, 6))):
            kind = rng.choice(["polygon", "ellipse", "stroke", "rect"])
            col = int(rng.integers(1, n_colors))
            if kind == "polygon":
                cx, cy, r = rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.15, 0.4)
                k = int(rng.integers(3, 7))
                angles = np.sort(rng.uniform(0, 2 * np.pi, k))
                pts = [[float(cx + r * np.cos(a)), float(cy + r * np.sin(a))] for a in angles]
                prims.append({"kind": "polygon", "points": pts, "color": col})
            elif kind == "ellipse":
                x0, y0 = rng.uniform(0.05, 0.55, 2)
                w, h = rng.uniform(0.2, 0.45, 2)
                prims.append({"kind": "ellipse", "box": [float(x0), float(y0), float(x0 + w), float(y0 + h)], "color": col})
            elif kind == "stroke":
                pts = rng.uniform(0.1, 0.9, (int(rng.integers(2, 4)), 2)).tolist()
                prims.append({"kind": "stroke", "points": pts, "width": float(rng.uniform(0.05, 0.12)), "color": col})
            else:
                x0, y0 = rng.uniform(0.05, 0.6, 2)
                w, h = rng.uniform(0.15, 0.35, 2)
                prims.append({"kind": "rect", "box": [float(x0), float(y0), float(x0 + w), float(y0 + h)], "color": col})
    elif category == "glyph_text":
        n_chars = int(rng.integers(1, 4))
        text = "".join(rng.choice(list(_GLYPHS), n_chars))
        aspect = float(np.clip(0.75 * n_chars, 0.7, 2.0))
        if rng.random() < 0.6:
            prims.append({"kind": "rect", "box": [0, 0, 1, 1], "color": 0})
        prims.append({"kind": "text", "text": text, "color": 1})
        if n_colors > 2 and rng.random() < 0.5:
            prims.append({"kind": "rect", "box": [0.05, 0.86, 0.95, 0.95], "color": 2})
    else:  # tryon_patch: striped fabric with a central emblem
        aspect = float(rng.uniform(0.8, 1.25))
        n_stripes = int(rng.integers(3, 8))
        vertical = bool(rng.random() < 0.5)
        prims.append({"kind": "rect", "box": [0, 0, 1, 1], "color": 0})
        for i in range(0, n_stripes, 2):
            a, b = i / n_stripes, (i + 1) / n_stripes
            box = [a, 0, b, 1] if vertical else [0, a, 1, b]
            prims.append({"kind": "rect", "box": box, "color": 1})
        if n_colors > 2:
            k = int(rng.integers(3, 7))
            r = float(rng.uniform(0.2, 0.3))
            pts = [[0.5 + r * math.cos(2 * math.pi * j / k), 0.5 + r * math.sin(2 * math.pi * j / k)] for j in range(k)]
            prims.append({"kind": "polygon", "points": pts, "color": 2})
    return {"aspect": aspect, "palette": palette, "primitives": prims}


def _font(size: int):
    return ImageFont.load_default(size=max(size, 4))


def render_logo(logo: dict, width: int, height: int, palette=None, offset=(0.0, 0.0), scale=1.0) -> Image.Image:
    """Rasterise a logo to an RGBA image of the given size (antialiased by supersampling)."""
    W, H = width * SUPERSAMPLE, height * SUPERSAMPLE
    img = Image.new("RGBA", (W, H), (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)
    pal = palette or logo["palette"]
    ox, oy = offset

    def px(x, y):
        return ((x - 0.5) * scale + 0.5 + ox) * W, ((y - 0.5) * scale + 0.5 + oy) * H

    for p in logo["primitives"]:
        col = tuple(pal[p["color"]]) + (255,)
        if p["kind"] == "rect":
            x0, y0, x1, y1 = p["box"]
            draw.rectangle([px(x0, y0), px(x1, y1)], fill=col)
        elif p["kind"] == "ellipse":
            x0, y0, x1, y1 = p["box"]
            draw.ellipse([px(x0, y0), px(x1, y1)], fill=col)
        elif p["kind"] == "polygon":
            draw.polygon([px(*q) for q in p["points"]], fill=col)
        elif p["kind"] == "stroke":
            draw.line([px(*q) for q in p["points"]], fill=col, width=max(1, int(p["width"] * min(W, H) * scale)))
        elif p["kind"] == "text":
            font = _font(int(0.8 * H * scale))
            x0, y0, x1, y1 = draw.textbbox((0, 0), p["text"], font=font)
            tw, th = x1 - x0, y1 - y0
            if tw > 0.92 * W * scale:
                font = _font(int(0.8 * H * scale * 0.92 * W * scale / tw))
                x0, y0, x1, y1 = draw.textbbox((0, 0), p["text"], font=font)
                tw, th = x1 - x0, y1 - y0
            cx, cy = px(0.5, 0.5)
            draw.text((cx - tw / 2 - x0, cy - th / 2 - y0), p["text"], font=font, fill=col)
    return img.resize((width, height), Image.Resampling.BOX)


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth textured scene: two-colour gradient, soft waves and mild grain."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    c0 = np.array(_color(rng), dtype=np.float64)
    c1 = np.array(_color(rng), dtype=np.float64)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(ang) * xx + np.sin(ang) * yy)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    img = c0 * (1 - ramp[..., None]) + c1 * ramp[..., None]
    freq = rng.uniform(1.5, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (np.cos(ang + 1.3) * xx + np.sin(ang + 1.3) * yy) + phase)
    img += rng.uniform(8, 30) * wave[..., None]
    img += rng.normal(0, 3.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def _neutral(rng) -> tuple[int, int, int]:
    v = int(rng.integers(200, 246))
    return (v, v, v)


def _region(spec: SynthSpec, aspect: float, rng: np.random.Generator):
    S, a = spec.image_size, spec.align
    lo, hi = spec.mask_area_range
    for _ in range(MAX_RETRIES):
        area = rng.uniform(lo, hi) * S * S
        w = int(round(math.sqrt(area * aspect) / a)) * a
        h = int(round(math.sqrt(area / aspect) / a)) * a
        if w < a or h < a or w > S - 2 * a or h > S - 2 * a:
            continue
        if not lo <= w * h / (S * S) <= hi:
            continue
        x0 = int(rng.integers(a // a, (S - w) // a)) * a
        y0 = int(rng.integers(a // a, (S - h) // a)) * a
        return x0, y0, x0 + w, y0 + h
    raise RuntimeError("could not place a region satisfying the area constraint")


def gen_pair(spec: SynthSpec, index: int) -> SamplePair:
    """Deterministically render sample ``index`` of the synthetic corpus."""
    rng = np.random.default_rng([spec.rng_seed, index])
    cat = spec.categories[int(np.searchsorted(np.cumsum(spec.category_weights), rng.random(), side="right").clip(
        0, len(spec.categories) - 1))]
    logo = _make_logo(cat, rng)
    S = spec.image_size
    x0, y0, x1, y1 = _region(spec, logo["aspect"], rng)
    scene = Image.fromarray(_background(S, rng)).convert("RGBA")
    scene.alpha_composite(render_logo(logo, x1 - x0, y1 - y0), (x0, y0))
    scene = np.asarray(scene.convert("RGB"))
    mask = np.ones((S, S), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 0

    # subject: the same logo re-rendered at the scene's pixel scale with jittered colours, placed at a
    # random cell-aligned position on neutral ground, so its latent cells can match the region's
    jitter = [tuple(int(np.clip(c + rng.integers(-10, 11), 0, 255)) for c in col) for col in logo["palette"]]
    w, h, a = x1 - x0, y1 - y0, spec.align
    sx = int(rng.integers(0, (S - w) // a + 1)) * a
    sy = int(rng.integers(0, (S - h) // a + 1)) * a
    subj = Image.new("RGBA", (S, S), _neutral(rng) + (255,))
    subj.alpha_composite(render_logo(logo, w, h, palette=jitter), (sx, sy))
    subject = np.asarray(subj.convert("RGB"))
    region_aspect = (x1 - x0) / (y1 - y0)
    flags = {"aspect_mismatch": bool(abs(math.log(region_aspect / logo["aspect"])) > math.log(1.25))}
    return SamplePair(scene, mask, subject, cat, index, (x0, y0, x1, y1), flags)


def validate_pair(spec: SynthSpec, pair: SamplePair) -> list[str]:
    """Invariant violations of a generated pair (empty when valid)."""
    errs = []
    S = spec.image_size
    if pair.scene.shape != (S, S, 3) or pair.subject.shape != (S, S, 3) or pair.mask.shape != (S, S):
        errs.append("shape")
    if not set(np.unique(pair.mask)).issubset({0, 1}):
        errs.append("mask not binary")
    lo, hi = spec.mask_area_range
    if not lo <= pair.area_fraction <= hi:
        errs.append(f"area {pair.area_fraction:.3f} outside range")
    x0, y0, x1, y1 = pair.bbox
    if (pair.mask[y0:y1, x0:x1] != 0).any() or (pair.mask == 0).sum() != (x1 - x0) * (y1 - y0):
        errs.append("mask is not the region box")
    if pair.category not in spec.categories:
        errs.append("category")
    return errs


# -- augmentation ------------------------------------------------------------------------


@dataclass
class AugmentParams:
    flip: bool
    angle: float  # degrees
    distortion: float  # radial coefficient, 0 = none
    sharpen: bool

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle == 0 and self.distortion == 0 and not self.sharpen


def draw_augment(seed: int, flip_p=0.5, rotate_p=0.5, distort_p=0.3, sharpen_p=0.3, max_angle=15.0,
                 max_distortion=0.08) -> AugmentParams:
    rng = np.random.default_rng(seed)
    u = rng.random(4)
    angle = float(rng.uniform(-max_angle, max_angle))
    dist = float(rng.uniform(-max_distortion, max_distortion))
    return AugmentParams(flip=bool(u[0] < flip_p), angle=angle if u[1] < rotate_p else 0.0,
                         distortion=dist if u[2] < distort_p else 0.0, sharpen=bool(u[3] < sharpen_p))


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the centre (counter-clockwise, degrees), filling with the corner colour."""
    fill = tuple(int(v) for v in img[0, 0])
    return np.asarray(Image.fromarray(img).rotate(angle, resample=Image.Resampling.BILINEAR, fillcolor=fill))


def optical_distort(img: np.ndarray, k: float) -> np.ndarray:
    """Radial (barrel k > 0 / pincushion k < 0) distortion about the image centre."""
    from scipy.ndimage import map_coordinates

    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    ny, nx = (yy - cy) / cy, (xx - cx) / cx
    factor = 1 + k * (nx**2 + ny**2)
    sy, sx = cy + ny * factor * cy, cx + nx * factor * cx
    out = np.stack([map_coordinates(img[..., c].astype(np.float64), [sy, sx], order=1, mode="nearest")
                    for c in range(img.shape[2])], axis=-1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def sharpen(img: np.ndarray) -> np.ndarray:
    return np.asarray(Image.fromarray(img).filter(ImageFilter.UnsharpMask(radius=1, percent=60, threshold=2)))


def augment_subject(subject: np.ndarray, seed: int, **probs) -> np.ndarray:
    """Seeded flip / rotation (up to 15 degrees) / radial distortion / sharpening."""
    p = draw_augment(seed, **probs)
    out = subject
    if p.flip:
        out = hflip(out)
    if p.angle:
        out = rotate(out, p.angle)
    if p.distortion:
        out = optical_distort(out, p.distortion)
    if p.sharpen:
        out = sharpen(out)
    return out


# -- sampling ------------------------------------------------------------------------------


def weighted_sampler(categories: Sequence[str], weights: dict, seed: int) -> Iterator[int]:
    """Infinite stream of dataset indices; category first (by weight), then round-robin.

    Within a category each pass visits every index once in a freshly shuffled order.
    """
    rng = np.random.default_rng(seed)
    names = [c for c, w in weights.items() if w > 0]
    probs = np.array([weights[c] for c in names], dtype=np.float64)
    probs = probs / probs.sum()
    pools = {c: [i for i, k in enumerate(categories) if k == c] for c in names}
    for c, pool in pools.items():
        if not pool:
            raise ValueError(f"category {c!r} has positive weight but no samples")
    orders = {c: [] for c in names}
    while True:
        c = names[int(rng.choice(len(names), p=probs))]
        if not orders[c]:
            orders[c] = list(rng.permutation(pools[c]))
        yield int(orders[c].pop(0))


# -- storage ---------------------------------------------------------------------------------


def write_dataset(root: Path, spec: SynthSpec, indices: Sequence[int]) -> Path:
    """Write numbered PNG triplets plus ``manifest.jsonl`` and ``dataset.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i in indices:
        pair = gen_pair(spec, i)
        stem = f"{i:07d}"
        Image.fromarray(pair.scene).save(root / f"scene_{stem}.png")
        Image.fromarray(((1 - pair.mask) * 255).astype(np.uint8)).save(root / f"mask_{stem}.png")
        Image.fromarray(pair.subject).save(root / f"subject_{stem}.png")
        records.append({"index": i, "scene": f"scene_{stem}.png", "mask": f"mask_{stem}.png",
                        "subject": f"subject_{stem}.png", "category": pair.category,
                        "seed": spec.rng_seed, "bbox": list(pair.bbox), "flags": pair.flags})
    with (root / "manifest.jsonl").open("w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    header = {"format": DATASET_FORMAT, "spec": _spec_dict(spec), "count": len(records)}
    (root / "dataset.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return root


def _spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def read_mask_file(path: Path) -> np.ndarray:
    """Mask file (255 = customise) -> internal mask (1 = keep scene)."""
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr < 128).astype(np.uint8)


def read_dataset(root: Path) -> list[SamplePair]:
    root = Path(root)
    header = json.loads((root / "dataset.json").read_text())
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"unsupported dataset format {header.get('format')!r}")
    pairs = []
    for line in (root / "manifest.jsonl").read_text().splitlines():
        r = json.loads(line)
        pairs.append(SamplePair(
            scene=np.asarray(Image.open(root / r["scene"]).convert("RGB")),
            mask=read_mask_file(root / r["mask"]),
            subject=np.asarray(Image.open(root / r["subject"]).convert("RGB")),
            category=r["category"], index=r["index"], bbox=tuple(r["bbox"]), flags=r["flags"],
        ))
    return pairs


def dataset_checksum(root: Path) -> str:
    """Hash of every dataset file; the run's ``config.txt`` is not part of the data."""
    h = hashlib.sha256()
    for p in sorted(Path(root).iterdir()):
        if p.name == "config.txt":
            continue
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def generate_pairs(spec: SynthSpec, indices: Sequence[int]) -> list[SamplePair]:
    return [gen_pair(spec, i) for i in indices]


def benchmark_indices(count: int) -> range:
    return range(TEST_OFFSET, TEST_OFFSET + count)
