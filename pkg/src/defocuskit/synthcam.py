"""Thin-lens depth-of-field renderer and procedural test corpus.

Scenes are layered planes at known depths; rendering blurs each depth layer
with the Gaussian matching its circle of confusion, so every rendered image
comes with an exact per-pixel blur ground truth.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import imgcore, io
from .imgcore import ShapeError

SCENE_SIZE = 96


@dataclass(frozen=True)
class CameraParams:
    focal_length: float = 50.0
    f_number: float = 2.8
    focus_distance: float = 2000.0
    pixel_pitch: float = 0.01
    coc_to_sigma: float = 0.25

    def __post_init__(self):
        if not (self.focal_length > 0 and self.f_number > 0 and self.pixel_pitch > 0):
            raise ValueError("focal_length, f_number and pixel_pitch must be positive")
        if not self.focus_distance > self.focal_length:
            raise ValueError("focus_distance must exceed focal_length")
        if not self.coc_to_sigma > 0:
            raise ValueError("coc_to_sigma must be positive")

    @property
    def aperture(self) -> float:
        return self.focal_length / self.f_number

    def to_dict(self) -> dict:
        return asdict(self)


def coc_sigma(depth, cam: CameraParams):
    """Gaussian blur sigma (pixels) of a point at ``depth`` mm.

    CoC diameter = A * f * |d - d_f| / (d * (d_f - f)) with aperture A = f / N,
    converted to pixels and scaled by ``cam.coc_to_sigma``.
    """
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("depth must be positive")
    f, df = cam.focal_length, cam.focus_distance
    coc_mm = cam.aperture * f * np.abs(d - df) / (d * (df - f))
    sigma = coc_mm / cam.pixel_pitch * cam.coc_to_sigma
    return float(sigma) if sigma.ndim == 0 else sigma


def quantize_levels(sigma: np.ndarray, layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Evenly spaced blur levels spanning ``sigma`` and each pixel's nearest level."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    lo, hi = float(sigma.min()), float(sigma.max())
    if hi == lo or layers == 1:
        return np.array([(lo + hi) / 2.0]), np.zeros(sigma.shape, dtype=np.intp)
    levels = np.linspace(lo, hi, layers)
    step = (hi - lo) / (layers - 1)
    membership = np.clip(np.rint((sigma - lo) / step), 0, layers - 1).astype(np.intp)
    return levels, membership


def render_dof(sharp, depth, cam: CameraParams, layers: int = 8):
    """Blur ``sharp`` by depth. Returns ``(blurred, ground_truth_sigma)``."""
    img = imgcore.as_gray(sharp)
    dep = np.asarray(depth, dtype=np.float64)
    if dep.shape != img.shape:
        raise ShapeError(f"depth {dep.shape} does not match image {img.shape}")
    truth = np.asarray(coc_sigma(dep, cam), dtype=np.float64)
    levels, membership = quantize_levels(truth, layers)
    out = np.empty_like(img)
    for k, level in enumerate(levels):
        sel = membership == k
        if not sel.any():
            continue
        layer = img if level <= 0 else imgcore.gaussian_blur(img, level)
        out[sel] = layer[sel]
    return out, truth


def render_uniform(sharp, sigma: float) -> np.ndarray:
    img = imgcore.as_gray(sharp)
    return img.copy() if sigma <= 0 else imgcore.gaussian_blur(img, sigma)


# -- procedural scenes -------------------------------------------------------

def _texture(rng, h, w):
    """Band-limited random texture in [0, 1]."""
    noise = imgcore.gaussian_blur(rng.random((h, w)), rng.uniform(0.7, 1.5))
    noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)
    return noise


def make_scene(rng: np.random.Generator, cam: CameraParams, size: int = SCENE_SIZE):
    """Sharp image plus depth map: textured background and 1-3 nearer planes.

    The focal plane holds one of the foreground planes; the background sits far
    behind it.
    """
    h = w = size
    n_planes = int(rng.integers(2, 5))
    depths = np.sort(rng.uniform(cam.focus_distance * 0.9, cam.focus_distance * 1.1, n_planes - 1))
    focused = depths[int(rng.integers(0, len(depths)))]
    background_depth = cam.focus_distance * rng.uniform(1.5, 3.0)
    # shift the planes so the chosen one is exactly in focus
    depths = depths - focused + cam.focus_distance

    yy, xx = np.mgrid[0:h, 0:w] / float(size)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * np.cos(angle) * (xx - 0.5) + 0.5 * np.sin(angle) * (yy - 0.5)
    image = 0.4 * ramp + 0.3 * _texture(rng, h, w)
    # high-contrast blocks keep the background's edges detectable once blurred
    for _ in range(int(rng.integers(4, 9))):
        y0, x0 = rng.integers(0, size - size // 8, 2)
        bh, bw = rng.integers(size // 8, size // 3, 2)
        image[y0:y0 + bh, x0:x0 + bw] = rng.choice([0.05, 0.95])
    depth = np.full((h, w), background_depth)

    for d in depths[::-1]:
        y0, x0 = rng.integers(0, size // 2, 2)
        y1 = int(min(h, y0 + rng.integers(size // 4, size // 2 + 1)))
        x1 = int(min(w, x0 + rng.integers(size // 4, size // 2 + 1)))
        patch = rng.uniform(0.1, 0.9) + rng.uniform(0.2, 0.5) * (_texture(rng, y1 - y0, x1 - x0) - 0.5)
        image[y0:y1, x0:x1] = patch
        depth[y0:y1, x0:x1] = d
    return np.clip(image, 0.0, 1.0), depth


def make_item(seed: int, label: str, cam: CameraParams, size: int = SCENE_SIZE, layers: int = 8):
    """Render one corpus item. Returns ``(image, ground_truth_sigma, kind)``.

    Real-style items follow the depth map. Fake-style items are either
    all-in-focus or blurred uniformly regardless of depth.
    """
    rng = np.random.default_rng(seed)
    sharp, depth = make_scene(rng, cam, size)
    if label == "real":
        img, truth = render_dof(sharp, depth, cam, layers)
        return img, truth, "depth-of-field"
    if label != "fake":
        raise ValueError(f"unknown label {label!r}")
    if rng.random() < 0.5:
        return sharp.copy(), np.zeros_like(sharp), "all-in-focus"
    far = float(coc_sigma(depth.max(), cam))
    sigma = rng.uniform(0.3, 1.0) * far
    return render_uniform(sharp, sigma), np.full_like(sharp, sigma), "uniform-blur"


def make_corpus(seed: int, n_real: int, n_fake: int, cam: CameraParams, out_dir=None,
                size: int = SCENE_SIZE, layers: int = 8):
    """Generate a labelled corpus. Item ``i`` is rendered from seed ``seed + i``.

    With ``out_dir`` set, writes PNG images, FMAP ground truth and
    ``manifest.jsonl`` (paths relative to ``out_dir``). Returns the manifest
    records.
    """
    if n_real < 1 or n_fake < 1:
        raise ValueError("n_real and n_fake must be >= 1")
    labels = ["real"] * n_real + ["fake"] * n_fake
    records = []
    for i, label in enumerate(labels):
        item_id = f"{label}_{i:05d}"
        img, truth, kind = make_item(seed + i, label, cam, size, layers)
        rec = {"id": item_id, "label": label, "image": f"images/{item_id}.png",
               "gt_blur": f"gt/{item_id}.fmap", "kind": kind}
        if out_dir is not None:
            io.write_png(os.path.join(out_dir, rec["image"]), img)
            io.write_fmap(os.path.join(out_dir, rec["gt_blur"]), truth)
        records.append(rec)
    if out_dir is not None:
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        io.atomic_write_text(os.path.join(out_dir, "manifest.jsonl"), lines)
    return records


def read_manifest(path) -> list[dict]:
    """Load manifest records with paths resolved against the manifest's folder."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("image", "gt_blur"):
                if key in rec and not os.path.isabs(rec[key]):
                    rec[key] = os.path.join(base, rec[key])
            records.append(rec)
    return records
