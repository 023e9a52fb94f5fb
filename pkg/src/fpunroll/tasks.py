"""
Degradations, augmentation and on-the-fly batch sampling.

Four task families are supported:

    gdn   gray Gaussian denoising (gray patch replicated to 3 channels)
    cdn   color Gaussian denoising
    sisr  bicubic down-then-up resampling by an integer factor
    jpeg  8x8 block DCT quantisation with IJG-scaled tables

Images are float64 arrays in [0, 1] with shape (H, W, C) unless noted.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError

TASK_KINDS = ("gdn", "cdn", "sisr", "jpeg")
SISR_SCALES = (2, 3, 4, 8)
JPEG_QUALITIES = (10, 20, 30, 40, 50)
SIGMA_MAX = 75.0


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    param: float
    noise_key: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; valid: {', '.join(TASK_KINDS)}")
        if self.kind in ("gdn", "cdn") and self.param < 0:
            raise ConfigError(f"noise level must be >= 0, got {self.param}")
        if self.kind == "sisr" and (self.param != int(self.param) or self.param < 1):
            raise ConfigError(f"sisr scale must be a positive integer, got {self.param}")
        if self.kind == "jpeg" and not 1 <= self.param <= 100:
            raise ConfigError(f"jpeg quality must be in [1, 100], got {self.param}")

    def apply(self, img: np.ndarray) -> np.ndarray:
        """Degrade an RGB patch. gdn expects the patch already in gray form."""
        if self.kind in ("gdn", "cdn"):
            key = self.noise_key if self.noise_key is not None else (0,)
            if self.kind == "gdn":
                noisy = awgn(img[..., :1], self.param, key)
                return np.repeat(noisy, img.shape[-1], axis=-1)
            return awgn(img, self.param, key)
        if self.kind == "sisr":
            return sisr_degrade(img, int(self.param))
        return jpeg_degrade(img, int(self.param))


# -- noise --------------------------------------------------------------------------


def awgn(img, sigma: float, key=0) -> np.ndarray:
    """Add ``sigma / 255`` scaled standard normal noise; no clipping.

    ``key`` (an int or a sequence of ints) seeds the noise stream, so equal
    keys give identical noise.
    """
    img = np.asarray(img, dtype=np.float64)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    seed = list(key) if isinstance(key, (tuple, list)) else [int(key)]
    n = np.random.default_rng(seed).standard_normal(img.shape)
    return img + (sigma / 255.0) * n


# -- bicubic resampling ----------------------------------------------------------------


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel (support [-2, 2])."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) resampling matrix, Matlab ``imresize`` style.

    When downscaling with antialiasing the kernel is stretched by
    ``1 / scale``. Out-of-range taps are clamped to the edge sample, and
    each row is normalised to sum to one.
    """
    if in_len < 1 or out_len < 1:
        raise ValueError("lengths must be >= 1")
    scale = out_len / in_len
    if antialias and scale < 1:
        width = 4.0 / scale

        def kernel(x):
            return scale * cubic(scale * x)
    else:
        width = 4.0
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx - 1, 0, in_len - 1).astype(int)
    M = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(M, (rows, idx.ravel()), w.ravel())
    return M


def _spatial_axes(ndim: int) -> tuple[int, int]:
    if ndim in (2, 3):
        return 0, 1
    if ndim == 4:
        return 1, 2
    raise ShapeError(f"expected an image of rank 2, 3 or 4, got rank {ndim}")


def resize_bicubic(img, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resize of the spatial axes."""
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    ah, aw = _spatial_axes(img.ndim)
    Mh = resize_matrix(img.shape[ah], out_h, antialias)
    Mw = resize_matrix(img.shape[aw], out_w, antialias)
    out = np.moveaxis(np.tensordot(Mh, img, axes=(1, ah)), 0, ah)
    out = np.moveaxis(np.tensordot(Mw, out, axes=(1, aw)), 0, aw)
    return out


def sisr_degrade(img, scale: int) -> np.ndarray:
    """Antialiased downscale by ``scale``, bicubic upscale back, clip to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    ah, aw = _spatial_axes(img.ndim)
    H, W = img.shape[ah], img.shape[aw]
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if min(H, W) < scale:
        raise ShapeError(f"image {H}x{W} is smaller than the scale factor {scale}")
    small = resize_bicubic(img, math.ceil(H / scale), math.ceil(W / scale), antialias=True)
    return np.clip(resize_bicubic(small, H, W, antialias=False), 0.0, 1.0)


# -- JPEG-style quantisation ------------------------------------------------------------

LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.full((8, 8), 99.0)
CHROMA_TABLE[:4, :4] = [
    [17, 18, 24, 47],
    [18, 21, 26, 66],
    [24, 26, 56, 99],
    [47, 66, 99, 99],
]


def quality_tables(q: int) -> tuple[np.ndarray, np.ndarray]:
    """IJG-scaled (luma, chroma) quantisation tables for quality ``q``."""
    if not 1 <= q <= 100:
        raise ValueError(f"quality must be in [1, 100], got {q}")
    s = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    return tuple(np.maximum(1.0, np.floor(t * s / 100.0 + 0.5)) for t in (LUMA_TABLE, CHROMA_TABLE))


def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix (rows are basis vectors)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    C = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    C[0] /= np.sqrt(2.0)
    return C


_DCT8 = dct_matrix(8)


def _quantise_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    H, W = plane.shape
    ph, pw = (-H) % 8, (-W) % 8
    p = np.pad(plane, ((0, ph), (0, pw)), mode="edge") - 128.0
    Hb, Wb = p.shape[0] // 8, p.shape[1] // 8
    blocks = p.reshape(Hb, 8, Wb, 8).transpose(0, 2, 1, 3)
    coef = _DCT8 @ blocks @ _DCT8.T
    coef = np.round(coef / table) * table
    rec = _DCT8.T @ coef @ _DCT8
    rec = rec.transpose(0, 2, 1, 3).reshape(Hb * 8, Wb * 8) + 128.0
    return rec[:H, :W]


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range (JFIF) YCbCr on a 0..255 scale."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def jpeg_degrade(img, q: int) -> np.ndarray:
    """Block-DCT quantise an RGB (H, W, 3) or gray (H, W) image at quality ``q``.

    No chroma subsampling; the result is clipped to [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    luma, chroma = quality_tables(q)
    if img.ndim == 2:
        return np.clip(_quantise_plane(255.0 * img, luma) / 255.0, 0.0, 1.0)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) or (H, W), got {img.shape}")
    ycc = rgb_to_ycbcr(255.0 * img)
    planes = [_quantise_plane(ycc[..., c], luma if c == 0 else chroma) for c in range(3)]
    return np.clip(ycbcr_to_rgb(np.stack(planes, axis=-1)) / 255.0, 0.0, 1.0)


# -- augmentation -------------------------------------------------------------------------


def dihedral(patch: np.ndarray, k: int) -> np.ndarray:
    """Transform ``k`` in 0..7: ``k % 4`` quarter turns, then a flip if ``k >= 4``."""
    out = np.rot90(patch, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(patch, rng: np.random.Generator) -> np.ndarray:
    """Apply one of the 8 dihedral transforms chosen uniformly."""
    patch = np.asarray(patch)
    if patch.shape[0] != patch.shape[1]:
        raise ShapeError(f"augmentation needs a square patch, got {patch.shape[:2]}")
    return dihedral(patch, int(rng.integers(8)))


def to_gray3(img: np.ndarray) -> np.ndarray:
    """BT.601 luma replicated to three channels."""
    y = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return np.repeat(y[..., None], 3, axis=-1)


# -- image files ----------------------------------------------------------------------------


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    i = 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PNM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_pnm(path) -> np.ndarray:
    """Read a binary 8-bit PGM (P5) or PPM (P6) as floats in [0, 1], shape (H, W, 3).

    Gray images are replicated to three channels.
    """
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _pnm_tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    c = 3 if magic == b"P6" else 1
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=off)
    img = raw.reshape(h, w, c).astype(np.float64) / 255.0
    if c == 1:
        img = np.repeat(img, 3, axis=-1)
    return img


def write_pnm(path, img) -> None:
    """Write (H, W) / (H, W, 1) as P5 or (H, W, 3) as P6, 8-bit."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    q = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 2:
        header = f"P5\n{q.shape[1]} {q.shape[0]}\n255\n"
    elif q.ndim == 3 and q.shape[-1] == 3:
        header = f"P6\n{q.shape[1]} {q.shape[0]}\n255\n"
    else:
        raise ShapeError(f"cannot write image of shape {img.shape}")
    Path(path).write_bytes(header.encode() + q.tobytes())


MANIFEST = "manifest.txt"


def load_corpus(folder) -> list[tuple[str, np.ndarray]]:
    """Load every ``.ppm`` / ``.pgm`` in ``folder`` in sorted-name order.

    The sorted file list is cached as ``manifest.txt`` in the folder when
    the folder is writable; an existing manifest defines the order.
    """
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"corpus folder not found: {folder}")
    manifest = folder / MANIFEST
    if manifest.is_file():
        names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        names = sorted(p.name for p in folder.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
        try:
            manifest.write_text("".join(n + "\n" for n in names))
        except OSError:
            pass
    if not names:
        raise ConfigError(f"corpus folder {folder} contains no PPM/PGM images")
    return [(n, read_pnm(folder / n)) for n in names]


def synthetic_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-smooth RGB test image: shaded background, blobs and flat shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.2, 0.8, 3)
    grad = rng.uniform(-0.3, 0.3, (2, 3))
    img = base + yy[..., None] * grad[0] + xx[..., None] * grad[1]
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.08, 0.3)
        amp = rng.uniform(-0.4, 0.4, 3)
        img = img + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))[..., None]
    for _ in range(rng.integers(1, 4)):
        color = rng.uniform(0, 1, 3)
        if rng.uniform() < 0.5:
            y0, x0 = rng.uniform(0, 0.8, 2)
            h, w = rng.uniform(0.15, 0.5, 2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0, 1, 2)
            r = rng.uniform(0.1, 0.3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[mask] = color
    return np.clip(img, 0.0, 1.0)


def synthetic_corpus(count: int, size: int, seed: int) -> list[tuple[str, np.ndarray]]:
    rng = np.random.default_rng([seed, 0x5EED])
    return [(f"synthetic_{i:04d}", synthetic_image(size, rng)) for i in range(count)]


# -- batch sampling ------------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskMix:
    """Task-kind probabilities and the parameter sets drawn from.

    Noise levels are uniform on ``sigma_range``; scales and qualities are
    uniform over their finite sets.
    """

    weights: dict[str, float] = field(default_factory=lambda: {k: 1.0 for k in TASK_KINDS})
    sigma_range: tuple[float, float] = (0.0, SIGMA_MAX)
    scales: tuple[int, ...] = SISR_SCALES
    qualities: tuple[int, ...] = JPEG_QUALITIES

    def __post_init__(self):
        bad = set(self.weights) - set(TASK_KINDS)
        if bad:
            raise ConfigError(f"unknown task kinds {sorted(bad)}; valid: {', '.join(TASK_KINDS)}")
        if any(w < 0 for w in self.weights.values()) or sum(self.weights.values()) <= 0:
            raise ConfigError("task weights must be >= 0 with a positive total")
        lo, hi = self.sigma_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid sigma range {self.sigma_range}")
        if not self.scales or not self.qualities:
            raise ConfigError("scales and qualities must be non-empty")

    def kinds_and_probs(self) -> tuple[list[str], np.ndarray]:
        kinds = [k for k in TASK_KINDS if self.weights.get(k, 0) > 0]
        p = np.array([self.weights[k] for k in kinds], dtype=np.float64)
        return kinds, p / p.sum()

    def draw(self, rng: np.random.Generator, noise_key: tuple[int, ...]) -> TaskSpec:
        kinds, p = self.kinds_and_probs()
        kind = kinds[int(rng.choice(len(kinds), p=p))]
        if kind in ("gdn", "cdn"):
            lo, hi = self.sigma_range
            return TaskSpec(kind, float(rng.uniform(lo, hi)) if hi > lo else float(lo), noise_key)
        if kind == "sisr":
            return TaskSpec(kind, float(self.scales[int(rng.integers(len(self.scales)))]))
        return TaskSpec(kind, float(self.qualities[int(rng.integers(len(self.qualities)))]))


@dataclass
class SampleBatch:
    f_task: np.ndarray
    u_gt: np.ndarray
    specs: list[TaskSpec]


def _worker_count() -> int:
    env = os.environ.get("FPUNROLL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FPUNROLL_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def make_sample(images: Sequence[np.ndarray], P: int, mix: TaskMix, seed: int, step: int, index: int):
    """One (degraded, clean, spec) triple, keyed by (seed, step, index)."""
    rng = np.random.default_rng([seed, step, index])
    img = images[int(rng.integers(len(images)))]
    y = int(rng.integers(img.shape[0] - P + 1))
    x = int(rng.integers(img.shape[1] - P + 1))
    clean = augment(img[y : y + P, x : x + P, :3], rng)
    spec = mix.draw(rng, noise_key=(seed, step, index, 1))
    if spec.kind == "gdn":
        clean = to_gray3(clean)
    return spec.apply(clean), clean, spec


def sample_batch(
    corpus,
    P: int,
    B: int,
    mix: TaskMix,
    seed: int,
    step: int,
    workers: int | None = None,
) -> SampleBatch:
    """Assemble a batch of ``B`` degraded/clean ``P x P`` patch pairs.

    ``corpus`` is a list of images or ``(name, image)`` pairs. Each sample
    has its own RNG stream keyed by ``(seed, step, index)``, so the batch
    does not depend on ``workers``.
    """
    images = [item[1] if isinstance(item, tuple) else item for item in corpus]
    if not images:
        raise ConfigError("corpus is empty")
    eligible = [im for im in images if im.shape[0] >= P and im.shape[1] >= P]
    if not eligible:
        raise ConfigError(f"patch size {P} is larger than every corpus image")
    workers = _worker_count() if workers is None else max(1, workers)
    workers = min(workers, B)

    def one(i):
        return make_sample(eligible, P, mix, seed, step, i)

    if workers == 1:
        out = [one(i) for i in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(B)))
    return SampleBatch(
        f_task=np.stack([o[0] for o in out]),
        u_gt=np.stack([o[1] for o in out]),
        specs=[o[2] for o in out],
    )
