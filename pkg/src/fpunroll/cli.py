"""
Command-line experiment runner.

    fpunroll <solve|verify-bound|train|eval|diagnose> --config PATH [--seed N] [--out DIR]

The config is one JSON document with the optional sections ``solver``,
``model``, ``train``, ``tasks`` and ``eval``. Unknown keys anywhere are
rejected.

Exit codes: 0 success (or converged), 2 solver hit its iteration cap,
3 invalid config or input, 4 numeric failure or bound violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import fixpoint, metrics, tasks
from .errors import CheckpointError, ConfigError, FpUnrollError, NumericError, ShapeError
from .fixpoint import AAConfig, BoundInputs, anderson_iterate, contraction_bound, crossover_iterations, iterate
from .neural import ModelConfig, TrainConfig, UnrollModel, checkpoint, train
from .neural.train import write_loss_log
from .operators import AffineOperator, EnergyGradOperator, PerturbedOperator

log = logging.getLogger("fpunroll")

EXIT_OK = 0
EXIT_MAX_ITERS = 2
EXIT_INVALID = 3
EXIT_NUMERIC = 4

SECTIONS = ("solver", "model", "train", "tasks", "eval")

SOLVER_KEYS = {"operator", "method", "eps", "T", "m", "reg", "z0", "grid"}
GRID_KEYS = {"rho", "delta", "T", "dim", "z0_scale", "seed"}
TASKS_KEYS = {"corpus", "synthetic", "weights", "sigma_range", "scales", "qualities"}
SYNTH_KEYS = {"count", "size", "seed"}
EVAL_KEYS = {"checkpoint", "corpus", "synthetic", "tasks", "extra_T", "max_images"}

DEFAULT_GRID = {"rho": [0.3, 0.5, 0.9], "delta": [0.0, 0.01, 0.1], "T": 50, "dim": 8, "z0_scale": 1.0, "seed": 0}


def _check_keys(d: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}; allowed: {sorted(allowed)}")
    return d


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return _check_keys(cfg, set(SECTIONS), "config")


# -- operator zoo ---------------------------------------------------------------------


def _vec(x, n: int | None = None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if n is not None and a.size == 1 and n > 1:
        a = np.full(n, a.item())
    return a


def _op_affine(p):
    _check_keys(p, {"name", "A", "b"}, "operator")
    A = np.atleast_2d(np.asarray(p["A"], dtype=np.float64))
    return AffineOperator(A, _vec(p.get("b", 0.0), A.shape[0]))


def _op_diag_affine(p):
    _check_keys(p, {"name", "diag", "b"}, "operator")
    d = _vec(p["diag"])
    return AffineOperator(np.diag(d), _vec(p.get("b", 0.0), d.size))


def _op_scaling(p):
    _check_keys(p, {"name", "rho", "n"}, "operator")
    return AffineOperator.scaling(float(p["rho"]), int(p.get("n", 1)))


def _op_random_affine(p):
    _check_keys(p, {"name", "n", "radius", "seed"}, "operator")
    rng = np.random.default_rng(int(p.get("seed", 0)))
    return AffineOperator.random(int(p["n"]), float(p["radius"]), rng)


def _op_energy(p):
    _check_keys(p, {"name", "size", "sigma", "lam", "tau", "seed"}, "operator")
    size = int(p.get("size", 16))
    rng = np.random.default_rng(int(p.get("seed", 0)))
    f = np.clip(tasks.synthetic_image(size, rng)[..., 0] + 0.1 * rng.standard_normal((size, size)), 0, 1)
    return EnergyGradOperator(f, float(p.get("sigma", 0.1)), float(p.get("lam", 1.0)), p.get("tau"))


def _op_perturbed(p):
    _check_keys(p, {"name", "inner", "delta", "seed"}, "operator")
    return PerturbedOperator(make_operator(p["inner"]), float(p.get("delta", 0.0)), int(p.get("seed", 0)))


OPERATORS: dict[str, Callable[[dict], Any]] = {
    "affine": _op_affine,
    "diag_affine": _op_diag_affine,
    "scaling": _op_scaling,
    "random_affine": _op_random_affine,
    "energy": _op_energy,
    "perturbed": _op_perturbed,
}


def make_operator(spec: dict):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("operator must be an object with a 'name'")
    name = spec["name"]
    if name not in OPERATORS:
        raise ConfigError(f"unknown operator {name!r}; valid operators: {', '.join(OPERATORS)}")
    try:
        return OPERATORS[name](spec)
    except KeyError as exc:
        raise ConfigError(f"operator {name!r} is missing parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"operator {name!r}: {exc}") from None


def _state_size(op) -> tuple[int, ...]:
    if isinstance(op, PerturbedOperator):
        return _state_size(op.inner)
    if isinstance(op, AffineOperator):
        return (op.n,)
    if isinstance(op, EnergyGradOperator):
        return op.f.shape
    raise ConfigError("cannot infer the state shape for this operator; give solver.z0")


# -- solve / verify-bound -----------------------------------------------------------------------


def cmd_solve(cfg: dict, seed: int, out: Path) -> int:
    s = _check_keys(cfg.get("solver"), SOLVER_KEYS, "solver")
    op = make_operator(s.get("operator"))
    shape = _state_size(op)
    z0 = np.broadcast_to(np.asarray(s.get("z0", 0.0), dtype=np.float64), shape).copy()
    eps = float(s.get("eps", 1e-8))
    T = int(s.get("T", 100))
    method = s.get("method", "plain")
    if method == "plain":
        trace = iterate(op, z0, eps, T)
    elif method == "anderson":
        trace = anderson_iterate(op, z0, AAConfig(int(s.get("m", 5)), s.get("reg", 0.0), eps, T))
    else:
        raise ConfigError(f"unknown method {method!r}; valid: plain, anderson")
    with open(out / "trace.csv", "w", newline="") as fh:
        trace.to_csv(fh)
    print(f"{trace.status} after {trace.iterations} iterations, residual {trace.residual_norms[-1]:.3e}")
    return EXIT_OK if trace.converged else EXIT_MAX_ITERS


BOUND_COLUMNS = ("rho", "delta", "T", "observed", "bound", "margin")


def bound_grid_rows(rhos, deltas, T_max: int, dim: int = 8, z0_scale: float = 1.0, seed: int = 0) -> list[dict]:
    """Observed error against the contraction bound for every (rho, delta, T).

    Each (rho, delta) cell uses a random symmetric affine map whose 2-norm
    is exactly ``rho``, perturbed by at most ``delta`` per step, and one
    trace of ``T_max`` steps provides all ``T <= T_max``.
    """
    rows = []
    for i, rho in enumerate(rhos):
        for j, delta in enumerate(deltas):
            rng = np.random.default_rng([seed, i, j])
            inner = AffineOperator.random(dim, rho, rng)
            zstar = inner.fixed_point()
            z0 = zstar + z0_scale * rng.standard_normal(dim)
            F = PerturbedOperator(inner, delta, rng_seed=seed * 1000 + i * 10 + j)
            trace = iterate(F, z0, eps=1e-300, T=T_max)
            d0 = float(np.linalg.norm(z0 - zstar))
            last = len(trace.states) - 1
            for T in range(1, T_max + 1):
                # an exact zero residual ends the trace early; F is a pure
                # function, so every later state equals the last one
                obs = float(np.linalg.norm(trace.states[min(T, last)] - zstar))
                bound = contraction_bound(BoundInputs(inner.lipschitz, delta, d0, T))
                rows.append({"rho": rho, "delta": delta, "T": T, "observed": obs, "bound": bound, "margin": bound - obs})
    return rows


def cmd_verify_bound(cfg: dict, seed: int, out: Path) -> int:
    s = _check_keys(cfg.get("solver", {}), SOLVER_KEYS, "solver")
    g = dict(DEFAULT_GRID, seed=seed)
    g.update(_check_keys(s.get("grid", {}), GRID_KEYS, "solver.grid"))
    rows = bound_grid_rows(g["rho"], g["delta"], int(g["T"]), int(g["dim"]), float(g["z0_scale"]), int(g["seed"]))
    violations = [r for r in rows if r["observed"] > r["bound"] + 1e-12]
    with open(out / "bound.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BOUND_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with open(out / "crossover.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho", "delta", "T_star"])
        for rho in g["rho"]:
            for delta in g["delta"]:
                w.writerow([rho, delta, crossover_iterations(rho, delta)])
    print(f"{len(rows)} grid points, {len(violations)} violations")
    for rho in g["rho"]:
        for delta in g["delta"]:
            print(f"  rho={rho} delta={delta} T*={crossover_iterations(rho, delta):.3f}")
    return EXIT_NUMERIC if violations else EXIT_OK


# -- data / model plumbing ---------------------------------------------------------------------------


def _corpus(section: dict, default_seed: int, where: str):
    if section.get("corpus"):
        return tasks.load_corpus(section["corpus"])
    syn = _check_keys(section.get("synthetic", {}), SYNTH_KEYS, f"{where}.synthetic")
    return tasks.synthetic_corpus(int(syn.get("count", 32)), int(syn.get("size", 64)), int(syn.get("seed", default_seed)))


def task_mix(section: dict) -> tasks.TaskMix:
    kw: dict[str, Any] = {}
    if "weights" in section:
        kw["weights"] = dict(section["weights"])
    if "sigma_range" in section:
        kw["sigma_range"] = tuple(float(x) for x in section["sigma_range"])
    if "scales" in section:
        kw["scales"] = tuple(int(x) for x in section["scales"])
    if "qualities" in section:
        kw["qualities"] = tuple(int(x) for x in section["qualities"])
    return tasks.TaskMix(**kw)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    d = _check_keys(cfg.get("train", {}), set(TrainConfig.__dataclass_fields__), "train")
    try:
        return replace(TrainConfig(**d), seed=seed)
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from None


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg.get("model", {}))
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from None


def cmd_train(cfg: dict, seed: int, out: Path) -> int:
    tcfg = _train_config(cfg, seed)
    mcfg = _model_config(cfg)
    tsec = _check_keys(cfg.get("tasks", {}), TASKS_KEYS, "tasks")
    mix = task_mix(tsec)
    corpus = _corpus(tsec, seed, "tasks")
    model = UnrollModel.init(mcfg, seed=seed)

    def sampler(step):
        b = tasks.sample_batch(corpus, tcfg.patch, tcfg.batch, mix, tcfg.seed, step)
        return b.f_task, b.u_gt

    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    result = train(model, tcfg, sampler, checkpoint_dir=ckdir, log_every=max(1, tcfg.steps // 20))
    write_loss_log(out / "loss.csv", result.log)
    checkpoint.save(out / "final.bin", model, tcfg.steps)
    (out / "resolved_config.json").write_text(
        json.dumps({"model": mcfg.to_dict(), "train": tcfg.to_dict()}, indent=2, sort_keys=True) + "\n"
    )
    last = result.log[-1][2] if result.log else float("nan")
    print(f"trained {tcfg.steps} steps, final loss {last:.6f}; wrote {out / 'final.bin'}")
    return EXIT_OK


def _eval_setup(cfg: dict, seed: int):
    e = _check_keys(cfg.get("eval", {}), EVAL_KEYS, "eval")
    if "checkpoint" not in e:
        raise ConfigError("eval.checkpoint is required")
    model, _ = checkpoint.load(e["checkpoint"])
    corpus = _corpus(e, seed + 1, "eval")
    if e.get("max_images"):
        corpus = corpus[: int(e["max_images"])]
    specs = []
    for t in e.get("tasks", [{"kind": "gdn", "param": 25}]):
        _check_keys(t, {"kind", "param"}, "eval.tasks[]")
        specs.append(tasks.TaskSpec(t["kind"], float(t["param"])))
    return model, corpus, specs, e


def degrade_pair(img: np.ndarray, spec: tasks.TaskSpec, key: tuple[int, ...]):
    """(degraded, clean) for a full evaluation image."""
    clean = tasks.to_gray3(img) if spec.kind == "gdn" else img[..., :3]
    return replace(spec, noise_key=key).apply(clean), clean


def score(out: np.ndarray, clean: np.ndarray, kind: str) -> tuple[float, float]:
    """PSNR / SSIM on the channel set used for each task family.

    Gray denoising scores the gray channel, color denoising all RGB channels
    jointly (SSIM averaged over channels), SR and JPEG the studio-swing luma.
    """
    if kind == "gdn":
        a, b = out[..., 0], clean[..., 0]
    elif kind == "cdn":
        p = metrics.psnr(out, clean)
        s = float(np.mean([metrics.ssim(out[..., c], clean[..., c]) for c in range(out.shape[-1])]))
        return p, s
    else:
        a, b = metrics.rgb_to_y(np.clip(out, 0, 1)), metrics.rgb_to_y(clean)
    return metrics.psnr(a, b), metrics.ssim(a, b)


EVAL_COLUMNS = ("task", "param", "image_id", "psnr", "ssim")


def cmd_eval(cfg: dict, seed: int, out: Path) -> int:
    model, corpus, specs, _ = _eval_setup(cfg, seed)
    rows, base = [], []
    for spec in specs:
        for idx, (name, img) in enumerate(corpus):
            f, clean = degrade_pair(img, spec, (seed, idx))
            u = model(f[None])[0]
            rows.append((spec.kind, spec.param, name, *score(u, clean, spec.kind)))
            base.append((spec.kind, spec.param, name, *score(f, clean, spec.kind)))
    for fname, data in (("eval.csv", rows), ("eval_input.csv", base)):
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVAL_COLUMNS)
            w.writerows([(k, p, n, repr(ps), repr(ss)) for k, p, n, ps, ss in data])
    for spec in specs:
        mo = np.mean([r[3] for r in rows if r[0] == spec.kind and r[1] == spec.param])
        mi = np.mean([r[3] for r in base if r[0] == spec.kind and r[1] == spec.param])
        print(f"{spec.kind} {spec.param:g}: model {mo:.3f} dB, input {mi:.3f} dB")
    return EXIT_OK


def diagnose_curves(model: UnrollModel, f: np.ndarray, gt: np.ndarray, extra_T: int, kind: str = "cdn"):
    """Per-step distance/cosine (averaged over the batch) and over-iteration PSNR.

    PSNR is averaged over images and scored on the channels used for ``kind``.
    """
    states = model.forward(f).states
    per = [fixpoint.trace_diagnostics([s[i] for s in states]) for i in range(f.shape[0])]
    dist = np.mean([p[0] for p in per], axis=0)
    cos = np.mean([p[1] for p in per], axis=0)
    over = None
    if not model.schedule.unshared:
        over = [
            float(np.mean([score(u[i], gt[i], kind)[0] for i in range(len(f))]))
            for u in model.over_iterate(f, extra_T)
        ]
    return dist, cos, over


def cmd_diagnose(cfg: dict, seed: int, out: Path) -> int:
    model, corpus, specs, e = _eval_setup(cfg, seed)
    spec = specs[0]
    pairs = [degrade_pair(img, spec, (seed, i)) for i, (_, img) in enumerate(corpus)]
    shapes = {p[0].shape for p in pairs}
    if len(shapes) != 1:
        raise ConfigError("diagnose needs equally sized evaluation images")
    f = np.stack([p[0] for p in pairs])
    gt = np.stack([p[1] for p in pairs])
    extra = int(e.get("extra_T", 5))
    dist, cos, over = diagnose_curves(model, f, gt, extra, spec.kind)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "l2_distance", "cosine_sim"])
        for t, (d, c) in enumerate(zip(dist, cos), start=1):
            w.writerow([t, repr(float(d)), repr(float(c))])
    print(f"mean step distance: first {dist[0]:.4g}, last {dist[-1]:.4g}")
    if over is None:
        log.warning("unshared schedule: over-iteration curve skipped")
    else:
        T = model.schedule.T
        with open(out / "over_iteration.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "psnr"])
            for k, p in enumerate(over):
                w.writerow([T + k, repr(p)])
        print(f"PSNR at T={T}: {over[0]:.3f} dB, at T+{extra}: {over[-1]:.3f} dB")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify-bound": cmd_verify_bound,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpunroll", description="Fixed-point unrolling experiments.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.seed, out)
    except (ConfigError, CheckpointError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, FpUnrollError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
