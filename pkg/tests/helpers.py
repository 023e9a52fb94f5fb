"""Shared oracles for the neural tests: finite differences and gradient plumbing."""

import numpy as np

from fpunroll.neural import autograd as ad
from fpunroll.neural.model import UnrollModel, UnrollSchedule

FD_STEP = 1e-4
FD_RTOL = 1e-4


def project(out: ad.Var, r: np.ndarray) -> ad.Var:
    """Smooth scalar probe loss ``sum(r * out)``."""
    return ad.linear(ad.reshape(out, (1, -1)), r.reshape(-1, 1))


def central_diff(f, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-relative error; 0 when both gradients vanish to round-off."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-10:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def fd_check(build, arrays: dict[str, np.ndarray], h: float = FD_STEP) -> dict[str, float]:
    """Compare reverse-mode and central-difference gradients.

    ``build(leaves)`` maps a dict of Var leaves to a scalar Var. Returns the
    relative error for every entry of ``arrays``.
    """
    leaves = ad.leaves(arrays)
    analytic = ad.grad(build(leaves), leaves)

    def value():
        return float(build(ad.leaves(arrays)).data.reshape(()))

    return {k: rel_error(analytic[k], central_diff(value, arrays[k], h)) for k in arrays}


def untied_clone(model: UnrollModel) -> UnrollModel:
    """Unshared (R = T) model whose step-t block is a copy of the shared block used at step t."""
    sched = model.schedule
    from dataclasses import replace

    cfg = replace(model.config, schedule=UnrollSchedule.unshared_of(sched.T))
    params = {}
    for k, v in model.params.items():
        if not k.startswith("block"):
            params[k] = v.copy()
    for t in range(sched.T):
        j = sched.block_index(t)
        src = f"block{j}."
        for k, v in model.params.items():
            if k.startswith(src):
                params[f"block{t}." + k[len(src):]] = v.copy()
    return UnrollModel(cfg, params)
