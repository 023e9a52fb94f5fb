"""
Fixed-point solvers and diagnostics.

Plain successive substitution, Anderson acceleration (type-2, constrained
least-squares weights), the contraction error bound for approximate
operators, and the per-step distance / cosine diagnostics used to inspect
unrolled chains.

Operators are plain callables mapping an array to an array of the same
shape. States may have any shape; norms are always taken over the
flattened array and all arithmetic is float64.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .errors import DegenerateInputError, DivergedError, IllConditionedError

Operator = Callable[[np.ndarray], np.ndarray]

CONVERGED = "converged"
MAX_ITERS = "max_iters"


def _as_state(z) -> np.ndarray:
    z = np.array(z, dtype=np.float64, copy=True)
    if z.ndim == 0:
        z = z.reshape(1)
    if z.size == 0:
        raise ValueError("state must have at least one entry")
    if not np.all(np.isfinite(z)):
        raise ValueError("initial state contains non-finite entries")
    return z


def _apply(F: Operator, z: np.ndarray, t: int) -> np.ndarray:
    fz = np.asarray(F(z), dtype=np.float64)
    if fz.shape != z.shape:
        fz = fz.reshape(z.shape)
    if not np.all(np.isfinite(fz)):
        raise DivergedError(t)
    return fz


@dataclass(frozen=True)
class SolveTrace:
    """Complete history of a fixed-point run.

    ``residual_norms[t]`` is ``||z_t - F(z_t)||`` for every stored state, so
    it has one more entry than ``step_distances`` and ``cosine_sims``.
    """

    states: tuple[np.ndarray, ...]
    residual_norms: tuple[float, ...]
    step_distances: tuple[float, ...]
    cosine_sims: tuple[float, ...]
    status: str
    iterations: int
    weights: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.states) != self.iterations + 1:
            raise ValueError("trace must hold iterations + 1 states")
        for s in self.states:
            s.setflags(write=False)

    @property
    def solution(self) -> np.ndarray:
        return self.states[-1]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_csv(self, fh: TextIO, include_states: bool | None = None) -> None:
        """Write one row per stored state.

        The step distance and cosine columns of row ``t`` describe the move
        from ``z_t`` to ``z_{t+1}`` and are left empty on the final row.
        State coordinates are appended as ``z0, z1, ...`` when the state has
        at most 16 entries (or when forced with ``include_states``).
        """
        n = self.states[0].size
        if include_states is None:
            include_states = n <= 16
        writer = csv.writer(fh, lineterminator="\n")
        header = ["t", "residual_norm", "step_distance", "cosine_sim"]
        if include_states:
            header += [f"z{i}" for i in range(n)]
        writer.writerow(header)
        for t, state in enumerate(self.states):
            row = [t, repr(self.residual_norms[t])]
            if t < self.iterations:
                row += [repr(self.step_distances[t]), repr(self.cosine_sims[t])]
            else:
                row += ["", ""]
            if include_states:
                row += [repr(float(v)) for v in state.ravel()]
            writer.writerow(row)


def _finish(states, residuals, status, weights=()) -> SolveTrace:
    if len(states) > 1:
        dist, cos = trace_diagnostics(states)
    else:
        dist, cos = [], []
    return SolveTrace(
        states=tuple(states),
        residual_norms=tuple(residuals),
        step_distances=tuple(dist),
        cosine_sims=tuple(cos),
        status=status,
        iterations=len(states) - 1,
        weights=tuple(weights),
    )


def iterate(F: Operator, z0, eps: float, T: int) -> SolveTrace:
    """Successive substitution ``z_{t+1} = F(z_t)``.

    Stops as soon as ``||z_t - F(z_t)|| < eps`` or after ``T`` updates,
    whichever comes first. The evaluation used for the residual test is
    reused as the next state, so each step costs one call to ``F``.

    Raises:
        DivergedError: ``F`` returned a non-finite value; ``.iteration`` is
            the index of the state it was applied to.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    z = _as_state(z0)
    states = [z]
    residuals: list[float] = []
    t = 0
    while True:
        fz = _apply(F, z, t)
        r = float(np.linalg.norm((z - fz).ravel()))
        residuals.append(r)
        if r < eps:
            status = CONVERGED
            break
        if t >= T:
            status = MAX_ITERS
            break
        z = fz
        states.append(z)
        t += 1
    return _finish(states, residuals, status)


def default_ridge(G: np.ndarray) -> float:
    """Scale-relative ridge ``1e-10 * trace(G^T G) / m``."""
    return 1e-10 * float(np.sum(G * G)) / G.shape[1]


def solve_aa_weights(G, reg: float | None = 0.0) -> np.ndarray:
    """Anderson mixing weights.

    Minimises ``||G @ alpha||^2 + reg * ||alpha||^2`` subject to
    ``sum(alpha) == 1``; ``G`` holds one residual per column, oldest first.
    ``reg=None`` selects :func:`default_ridge`.

    The constraint is eliminated with ``alpha = e_m + N gamma`` where the
    columns of ``N`` are ``e_i - e_m``, and the remaining unconstrained
    problem is solved by SVD-based least squares. This gives the same
    minimiser as the KKT normal equations without squaring the condition
    number, and returns the minimum-norm solution when residuals are
    collinear.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    m = G.shape[1]
    if m < 1:
        raise ValueError("need at least one residual column")
    if not np.all(np.isfinite(G)):
        raise IllConditionedError("residual columns contain non-finite values")
    if reg is None:
        reg = default_ridge(G)
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")
    if m == 1:
        return np.ones(1)
    if reg > 0:
        G = np.vstack([G, math.sqrt(reg) * np.eye(m)])
    D = G[:, :-1] - G[:, -1:]
    try:
        gamma, *_ = np.linalg.lstsq(D, -G[:, -1], rcond=None)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(f"least-squares solve failed: {exc}") from None
    alpha = np.append(gamma, 1.0 - gamma.sum())
    total = alpha.sum()
    if not np.all(np.isfinite(alpha)) or not np.isfinite(total) or total == 0.0:
        raise IllConditionedError("weight solve produced non-finite weights")
    return alpha / total


@dataclass(frozen=True)
class AAConfig:
    """Anderson acceleration settings.

    ``reg=None`` selects the scale-relative ridge of :func:`default_ridge`;
    the default of 0 keeps the exact-termination property on affine maps.
    """

    m: int = 5
    reg: float | None = 0.0
    eps: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"memory depth m must be >= 1, got {self.m}")
        if self.reg is not None and self.reg < 0:
            raise ValueError(f"reg must be >= 0, got {self.reg}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


def anderson_iterate(F: Operator, z0, cfg: AAConfig) -> SolveTrace:
    """Anderson-accelerated fixed-point iteration.

    Keeps the last ``min(m, t + 1)`` pairs ``(z_i, F(z_i))`` (the initial
    point included), solves for mixing weights on the residuals
    ``F(z_i) - z_i`` and sets ``z_{t+1} = sum_i alpha_i F(z_i)``. No damping
    is applied. The stopping rule is the same as :func:`iterate`.
    """
    z = _as_state(z0)
    shape = z.shape
    xs: deque[np.ndarray] = deque(maxlen=cfg.m)
    fs: deque[np.ndarray] = deque(maxlen=cfg.m)
    states = [z]
    residuals: list[float] = []
    weights: list[np.ndarray] = []
    t = 0
    while True:
        fz = _apply(F, z, t)
        r = float(np.linalg.norm((fz - z).ravel()))
        residuals.append(r)
        if r < cfg.eps:
            status = CONVERGED
            break
        if t >= cfg.max_iters:
            status = MAX_ITERS
            break
        xs.append(z.ravel())
        fs.append(fz.ravel())
        Fmat = np.stack(fs, axis=1)
        G = Fmat - np.stack(xs, axis=1)
        try:
            alpha = solve_aa_weights(G, cfg.reg)
        except IllConditionedError as exc:
            raise IllConditionedError(str(exc), iteration=t) from None
        weights.append(alpha)
        z = (Fmat @ alpha).reshape(shape)
        if not np.all(np.isfinite(z)):
            raise DivergedError(t + 1)
        states.append(z)
        t += 1
    return _finish(states, residuals, status, weights)


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the approximate-contraction error bound.

    ``rho`` is the contraction factor of the exact operator, ``delta`` the
    uniform approximation error of the learned steps, ``dist0`` the initial
    distance to the fixed point and ``T`` the number of steps.
    """

    rho: float
    delta: float
    dist0: float
    T: int

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.dist0 < 0:
            raise ValueError(f"dist0 must be >= 0, got {self.dist0}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")


def contraction_bound(b: BoundInputs) -> float:
    """``rho**T * dist0 + delta / (1 - rho)``."""
    return b.rho**b.T * b.dist0 + b.delta / (1.0 - b.rho)


def crossover_iterations(rho: float, delta: float) -> float:
    """Step count after which the bound is dominated by the fit error.

    Returns ``ln((1 - rho) / delta) / ln(1 / rho)``; ``inf`` when
    ``delta == 0``.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return math.inf
    return math.log((1.0 - rho) / delta) / math.log(1.0 / rho)


def estimate_contraction(F: Operator, probes: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    """Largest observed Lipschitz ratio ``||F(x) - F(y)|| / ||x - y||``.

    Coincident pairs are skipped.

    Raises:
        DegenerateInputError: no pair with distinct points was supplied.
    """
    best = None
    for x, y in probes:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        d = float(np.linalg.norm((x - y).ravel()))
        if d == 0.0:
            continue
        fx = np.asarray(F(x), dtype=np.float64)
        fy = np.asarray(F(y), dtype=np.float64)
        ratio = float(np.linalg.norm((fx - fy).ravel())) / d
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise DegenerateInputError("all probe pairs are coincident")
    return best


def random_probes(shape, count: int, rng: np.random.Generator, scale: float = 1.0):
    """``count`` pairs of independent Gaussian points of the given shape."""
    if isinstance(shape, int):
        shape = (shape,)
    return [(scale * rng.standard_normal(shape), scale * rng.standard_normal(shape)) for _ in range(count)]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 and bb == 0.0:
        return 1.0
    if aa == 0.0 or bb == 0.0:
        return 0.0
    # sqrt(aa * bb) == aa exactly when a == b, so identical states give 1.0
    c = float(np.dot(a, b)) / math.sqrt(aa * bb)
    return min(1.0, max(-1.0, c))


def trace_diagnostics(states: Sequence[np.ndarray]) -> tuple[list[float], list[float]]:
    """Per-step l2 distances and cosine similarities between successive states.

    Cosine similarity is 1 when both states are zero and 0 when exactly one is.
    """
    if len(states) < 2:
        raise ValueError("need at least two states")
    flat = [np.asarray(s, dtype=np.float64).ravel() for s in states]
    distances = [float(np.linalg.norm(b - a)) for a, b in zip(flat[:-1], flat[1:])]
    cosines = [_cosine(a, b) for a, b in zip(flat[:-1], flat[1:])]
    return distances, cosines
