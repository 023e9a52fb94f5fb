"""
Operator zoo for the fixed-point solvers.

All operators are immutable callables ``F(z) -> array``. They accept either
their native shape or a flat vector of the same size, and return an array
of the shape they were given.
"""

from __future__ import annotations

import hashlib
from functools import cached_property

import numpy as np

from .errors import ShapeError


class AffineOperator:
    """``F(z) = A z + b``."""

    def __init__(self, A, b):
        A = np.array(A, dtype=np.float64)
        b = np.array(b, dtype=np.float64).ravel()
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got shape {A.shape}")
        if A.shape[0] != b.size:
            raise ShapeError(f"A is {A.shape} but b has {b.size} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("A and b must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b

    @property
    def n(self) -> int:
        return self.b.size

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.size != self.n:
            raise ShapeError(f"expected {self.n} entries, got {z.size}")
        return (self.A @ z.ravel() + self.b).reshape(z.shape)

    @cached_property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @cached_property
    def lipschitz(self) -> float:
        """Operator 2-norm of ``A`` (the exact contraction factor)."""
        return float(np.linalg.norm(self.A, 2))

    def fixed_point(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.n) - self.A, self.b)

    @classmethod
    def scaling(cls, rho: float, n: int = 1) -> "AffineOperator":
        """``F(z) = rho * z`` with fixed point 0."""
        return cls(rho * np.eye(n), np.zeros(n))

    @classmethod
    def random(cls, n: int, radius: float, rng: np.random.Generator) -> "AffineOperator":
        """Random ``A = Q diag(s) Q^T`` with singular values in ``[radius/2, radius]``.

        Symmetric, so the spectral radius equals ``radius`` (the largest
        eigenvalue is pinned) and also equals the 2-norm.
        """
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        s = rng.uniform(radius / 2, radius, size=n)
        s[0] = radius
        s *= rng.choice([-1.0, 1.0], size=n)
        s[0] = radius
        return cls((Q * s) @ Q.T, rng.standard_normal(n))


def neumann_laplacian(u: np.ndarray, axes=(0, 1)) -> np.ndarray:
    """Graph Laplacian of the pixel grid with reflective boundary.

    Equals the gradient of ``0.5 * sum |grad u|^2`` with forward differences
    and mirrored edges; symmetric with eigenvalues in ``[0, 8)``.
    """
    pad = [(0, 0)] * u.ndim
    for ax in axes:
        pad[ax] = (1, 1)
    p = np.pad(u, pad, mode="edge")
    out = 2 * len(axes) * u
    sl =[slice(1, -1) if i in axes else slice(None) for i in range(u.ndim)]
    for ax in axes:
        lo = list(sl)
        hi = list(sl)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out = out - p[tuple(lo)] - p[tuple(hi)]
    return out


def _spatial_axes(ndim: int) -> tuple[int, int]:
    if ndim in (2, 3):
        return (0, 1)
    if ndim == 4:
        return (1, 2)
    raise ShapeError(f"expected an image of rank 2, 3 or 4, got rank {ndim}")


class EnergyGradOperator:
    """Gradient step on a Gaussian data term plus quadratic smoothness.

    ``F(u) = u - tau * ((u - f) / sigma**2 + lam * L u)`` with ``L`` the
    reflective-boundary grid Laplacian. The default step
    ``tau = 0.9 / (1/sigma**2 + 8*lam)`` makes ``F`` a strict contraction.
    Images are (H, W), (H, W, C) or (B, H, W, C).
    """

    def __init__(self, f, sigma: float, lam: float = 0.0, tau: float | None = None):
        f = np.array(f, dtype=np.float64)
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        if lam < 0:
            raise ValueError(f"lam must be >= 0, got {lam}")
        self.axes = _spatial_axes(f.ndim)
        f.setflags(write=False)
        self.f = f
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.tau = float(tau) if tau is not None else 0.9 / (1.0 / sigma**2 + 8.0 * lam)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return (u - self.f) / self.sigma**2 + self.lam * neumann_laplacian(u, self.axes)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        shape = u.shape
        if u.shape != self.f.shape:
            if u.size != self.f.size:
                raise ShapeError(f"expected shape {self.f.shape}, got {u.shape}")
            u = u.reshape(self.f.shape)
        return (u - self.tau * self.gradient(u)).reshape(shape)

    @property
    def contraction_factor(self) -> float:
        """Operator norm of ``I - tau * Hessian``, using Laplacian eigenvalues in [0, 8]."""
        a = self.tau / self.sigma**2
        return max(abs(1.0 - a), abs(1.0 - a - 8.0 * self.tau * self.lam))


class PerturbedOperator:
    """``inner(z) + delta * u`` with ``||u||_2 <= 1`` drawn deterministically.

    The direction is uniform in the unit ball and keyed by
    ``(rng_seed, call_index)``. Calling the operator directly derives the
    call index from a hash of ``z``, which keeps ``F`` a pure function while
    still giving each visited point its own perturbation.
    """

    def __init__(self, inner, delta: float, rng_seed: int = 0):
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        self.inner = inner
        self.delta = float(delta)
        self.rng_seed = int(rng_seed)

    def direction(self, n: int, call_index: int) -> np.ndarray:
        rng = np.random.default_rng([self.rng_seed, call_index])
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        radius = rng.uniform() ** (1.0 / n)
        if norm == 0.0:
            return np.zeros(n)
        u = v * (radius / norm)
        # Rounding may push the norm a hair above 1.
        un = np.linalg.norm(u)
        if un > 1.0:
            u = u / un
        return u

    def apply(self, z, call_index: int) -> np.ndarray:
        base = np.asarray(self.inner(z), dtype=np.float64)
        if self.delta == 0.0:
            return base
        u = self.direction(base.size, call_index).reshape(base.shape)
        return base + self.delta * u

    def __call__(self, z) -> np.ndarray:
        z = np.ascontiguousarray(z, dtype=np.float64)
        digest = hashlib.blake2b(z.tobytes(), digest_size=8).digest()
        return self.apply(z, int.from_bytes(digest, "little"))
