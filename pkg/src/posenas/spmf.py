"""Encode a 3D pose sequence and its motion as one fixed-size color image.

Rows are joints (pose rows, then motion rows), columns are frames, and the
three coordinate channels become the color channels. The stacked map is
resized bilinearly and optionally contrast-enhanced by per-channel histogram
equalization.
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

CACHE_MAGIC = "#posenas-images 1"


@dataclass(frozen=True)
class EncoderConfig:
    output_height: int = 32
    output_width: int = 32
    colormap: str = "linear_rgb"
    enhance: bool = True
    motion_scale: float = 0.05

    def __post_init__(self):
        if self.output_height < 8 or self.output_width < 8:
            raise ValueError("output dimensions must be >= 8")
        if self.motion_scale <= 0:
            raise ValueError("motion_scale must be positive")
        if self.colormap not in ("jet", "linear_rgb"):
            raise ValueError(f"unknown colormap {self.colormap!r}")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SPMFImage:
    pixels: np.ndarray  # H x W x 3 in [0, 1]
    sample_id: str = ""
    label: Optional[int] = None
    split_tag: Optional[str] = None


def _data(seq):
    d = seq.data if hasattr(seq, "data") else np.asarray(seq, dtype=np.float64)
    if d.ndim != 3 or d.shape[2] != 3:
        raise ValueError("expected a 3D pose sequence (T x M x 3)")
    return d


def pose_map(seq):
    """M x T x 3 coordinates, each joint coordinate min-max normalized over time.

    A joint coordinate that never changes (zero range) is set to 0.5.
    """
    d = _data(seq).transpose(1, 0, 2)
    lo = d.min(axis=1, keepdims=True)
    span = d.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (d - lo) / safe, 0.5)


def motion_map(seq, motion_scale=0.05, frame_rate=None):
    """M x (T-1) x 3 clamped velocities: 0.5 + scale * dx / dt."""
    d = _data(seq)
    if d.shape[0] < 2:
        raise ValueError("motion needs at least two frames")
    fr = frame_rate if frame_rate is not None else seq.frame_rate
    vel = np.diff(d, axis=0) * fr
    return np.clip(0.5 + motion_scale * vel, 0.0, 1.0).transpose(1, 0, 2)


def jet(x):
    """Standard jet ramp for values in [0, 1]; returns (..., 3)."""
    x = np.asarray(x)[..., None]
    centers = np.array([0.75, 0.5, 0.25])
    return np.clip(1.5 - np.abs(4.0 * x - 4.0 * centers), 0.0, 1.0)


def resize_bilinear(img, height, width):
    """Bilinear resize of H x W x C with corner-aligned sampling."""
    h, w = img.shape[:2]

    def coords(n_in, n_out):
        if n_in == 1:
            return np.zeros(n_out, int), np.zeros(n_out, int), np.zeros(n_out)
        pos = np.linspace(0.0, n_in - 1, n_out)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
        return i0, i0 + 1, pos - i0

    y0, y1, fy = coords(h, height)
    x0, x1, fx = coords(w, width)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def equalize_channel(c, bins=256):
    """Histogram-equalize one channel of values in [0, 1]."""
    idx = np.minimum((np.clip(c, 0.0, 1.0) * bins).astype(int), bins - 1)
    cdf = np.cumsum(np.bincount(idx.ravel(), minlength=bins))
    cdf_min = cdf[cdf > 0][0]
    n = idx.size
    if n == cdf_min:  # a single occupied bin
        return c.copy()
    return (cdf[idx] - cdf_min) / (n - cdf_min)


def enhance_contrast(img):
    pix = img.pixels if isinstance(img, SPMFImage) else np.asarray(img, dtype=np.float64)
    out = np.stack([equalize_channel(pix[..., ch]) for ch in range(pix.shape[-1])], axis=-1)
    if isinstance(img, SPMFImage):
        return SPMFImage(out, img.sample_id, img.label, img.split_tag)
    return out


def encode(seq, config=EncoderConfig(), sample_id="", label=None, split_tag=None):
    """Pose map stacked over the motion map (last motion column repeated), colored and resized."""
    pm = pose_map(seq)
    mm = motion_map(seq, config.motion_scale)
    mm = np.concatenate([mm, mm[:, -1:]], axis=1)
    stacked = np.concatenate([pm, mm], axis=0)
    if config.colormap == "jet":
        stacked = jet(stacked.mean(axis=-1))
    pix = np.clip(resize_bilinear(stacked, config.output_height, config.output_width), 0.0, 1.0)
    if config.enhance:
        pix = enhance_contrast(pix)
    return SPMFImage(pix, sample_id, label, split_tag)


def encode_samples(samples, config=EncoderConfig()):
    return [encode(s.sequence, config, s.sample_id, s.label, s.split_tag) for s in samples]


# ---- image cache --------------------------------------------------------------

def write_image_cache(path, images, config):
    lines = [CACHE_MAGIC, f"# config: {config.digest()}", f"# count: {len(images)}"]
    for im in images:
        h, w, _ = im.pixels.shape
        vals = " ".join(repr(float(v)) for v in im.pixels.reshape(-1))
        tag = im.split_tag or "-"
        lines.append(f"{im.sample_id} {im.label} {tag} {h} {w} {vals}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_image_cache(path, config=None):
    """Load cached images; a config whose digest differs from the header is rejected."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CACHE_MAGIC:
        raise ValueError(f"{path}: not an image cache")
    digest = lines[1].partition(":")[2].strip()
    if config is not None and digest != config.digest():
        raise ValueError(f"{path}: cache was built with a different encoder config")
    images = []
    for line in lines[3:]:
        parts = line.split()
        sid, label, tag, h, w = parts[0], int(parts[1]), parts[2], int(parts[3]), int(parts[4])
        pix = np.array([float(v) for v in parts[5:]]).reshape(h, w, 3)
        images.append(SPMFImage(pix, sid, label, None if tag == "-" else tag))
    return images
