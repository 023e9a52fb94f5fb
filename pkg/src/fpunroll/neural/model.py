"""
Unrolled restoration model: lift, a schedule of (possibly shared) blocks,
an optional learned acceleration module, and a projection back to RGB.

    z_0 = S(f)
    z_hat_{t+1} = block_{j(t)}(z_t)
    z_{t+1}, h_{t+1} = gru(z_t, z_hat_{t+1}, h_t)      (accelerated variant)
    u_T = U(z_T)

Three variants fall out of the configuration: one block per step (every
``N_j == 1``), shared blocks (``R < T``), and shared blocks with the
acceleration module.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..errors import ConfigError, MissingIntermediatesError, NumericError, ShapeError
from . import autograd as ad
from . import blocks


@dataclass(frozen=True)
class UnrollSchedule:
    """Recurrence counts ``N`` of the ``R`` unique blocks; ``T = sum(N)``."""

    N: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        if len(self.N) < 1:
            raise ConfigError("schedule needs at least one block")
        if any(n < 1 for n in self.N):
            raise ConfigError(f"recurrence counts must be >= 1, got {self.N}")

    @property
    def R(self) -> int:
        return len(self.N)

    @property
    def T(self) -> int:
        return sum(self.N)

    @property
    def unshared(self) -> bool:
        return self.R == self.T

    def block_index(self, t: int) -> int:
        """Unique-block index used at step ``t`` (0-based)."""
        if not 0 <= t < self.T:
            raise IndexError(f"step {t} outside schedule of length {self.T}")
        for j, n in enumerate(self.N):
            if t < n:
                return j
            t -= n
        raise AssertionError("unreachable")

    def steps(self) -> list[int]:
        return [self.block_index(t) for t in range(self.T)]

    @classmethod
    def unshared_of(cls, T: int) -> "UnrollSchedule":
        return cls((1,) * T)


@dataclass(frozen=True)
class AccelConfig:
    m: int = 3
    ks: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"accel m must be >= 1, got {self.m}")
        if self.ks < 1 or self.ks % 2 == 0:
            raise ConfigError(f"accel ks must be a positive odd integer, got {self.ks}")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    block: str = "conv_residual"
    kernel_size: int = 3
    window_size: int = 8
    schedule: UnrollSchedule = field(default_factory=lambda: UnrollSchedule((1, 9)))
    accel: AccelConfig | None = None
    image_channels: int = 3

    def __post_init__(self):
        if not isinstance(self.schedule, UnrollSchedule):
            object.__setattr__(self, "schedule", UnrollSchedule(tuple(self.schedule)))
        if isinstance(self.accel, dict):
            object.__setattr__(self, "accel", AccelConfig(**self.accel))
        if self.block not in blocks.BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block!r}; valid: {', '.join(blocks.BLOCK_KINDS)}")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if self.window_size < 1:
            raise ConfigError("window_size must be >= 1")

    @property
    def variant(self) -> str:
        if self.accel is not None:
            return "FPAformer"
        return "FPformer" if self.schedule.unshared else "FPRformer"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["schedule"] = list(self.schedule.N)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "schedule" in d:
            d["schedule"] = UnrollSchedule(tuple(d["schedule"]))
        if d.get("accel") is not None:
            acc = dict(d["accel"])
            bad = set(acc) - {"m", "ks"}
            if bad:
                raise ConfigError(f"unknown accel keys: {sorted(bad)}")
            d["accel"] = AccelConfig(**acc)
        return cls(**d)


@dataclass
class ForwardResult:
    """Outputs of one forward pass.

    ``states`` holds ``z_0 .. z_T`` and ``hidden`` holds ``h_0 .. h_T`` for
    the accelerated variant. When the pass was recorded, the graph needed
    by :func:`backward` is kept alive.
    """

    output: np.ndarray
    states: list[np.ndarray]
    hidden: list[np.ndarray] | None
    output_var: ad.Var | None = field(default=None, repr=False)
    leaves: dict[str, ad.Var] | None = field(default=None, repr=False)


class UnrollModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        template = self.param_template(config)
        if list(params) != list(template):
            missing = set(template) - set(params)
            extra = set(params) - set(template)
            if missing or extra:
                raise ShapeError(f"parameter names mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
            params = {k: params[k] for k in template}
        for k, shape in template.items():
            if params[k].shape != shape:
                raise ShapeError(f"{k}: expected shape {shape}, got {params[k].shape}")
        self.config = config
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    @staticmethod
    def _init_arrays(config: ModelConfig, rng) -> dict[str, np.ndarray]:
        c, ic = config.channels, config.image_channels
        params: dict[str, np.ndarray] = {}
        params.update({f"s_phi.{k}": v for k, v in blocks.conv_params(rng, 3, ic, c).items()})
        for j in range(config.schedule.R):
            if config.block == "conv_residual":
                params.update(blocks.init_conv_residual(rng, f"block{j}", c, config.kernel_size))
            else:
                params.update(blocks.init_window_attention(rng, f"block{j}", c))
        if config.accel is not None:
            params.update(blocks.init_gru(rng, "accel", c, config.accel.m, config.accel.ks))
        params.update({f"u_psi.{k}": v for k, v in blocks.conv_params(rng, 3, c, ic).items()})
        return params

    @classmethod
    def param_template(cls, config: ModelConfig) -> dict[str, tuple]:
        arrays = cls._init_arrays(config, np.random.default_rng(0))
        return {k: v.shape for k, v in arrays.items()}

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "UnrollModel":
        return cls(config, cls._init_arrays(config, np.random.default_rng(seed)))

    def clone(self) -> "UnrollModel":
        return UnrollModel(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def schedule(self) -> UnrollSchedule:
        return self.config.schedule

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def block_param_count(self) -> int:
        return sum(v.size for k, v in self.params.items() if k.startswith("block"))

    # -- forward ----------------------------------------------------------------

    def _block(self, P, j: int, z: ad.Var) -> ad.Var:
        prefix = f"block{j}"
        if self.config.block == "conv_residual":
            return blocks.apply_conv_residual(P, prefix, z)
        return blocks.apply_window_attention(P, prefix, z, self.config.window_size)

    def _check_input(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.ndim != 4 or f.shape[-1] != self.config.image_channels:
            raise ShapeError(f"expected (B, H, W, {self.config.image_channels}) input, got {f.shape}")
        return f

    def _run(self, P, f: np.ndarray, steps: int):
        cfg = self.config
        z = ad.conv2d(f, P["s_phi.w"], P["s_phi.b"])
        zs = [z]
        hs = None
        h = None
        if cfg.accel is not None:
            h = ad.Var(np.zeros(z.shape[:-1] + (cfg.accel.m * cfg.channels,)))
            hs = [h]
        T = cfg.schedule.T
        for t in range(steps):
            j = cfg.schedule.block_index(t) if t < T else cfg.schedule.R - 1
            z_hat = self._block(P, j, z)
            if h is not None:
                z, h = blocks.apply_gru(P, "accel", z, z_hat, h)
                hs.append(h)
            else:
                z = z_hat
            if not np.all(np.isfinite(z.data)):
                raise NumericError(t + 1, f"non-finite activation at unrolled step {t + 1}")
            zs.append(z)
        return zs, hs

    def _project(self, P, z: ad.Var) -> ad.Var:
        return ad.conv2d(z, P["u_psi.w"], P["u_psi.b"])

    def forward(self, f, record: bool = False) -> ForwardResult:
        f = self._check_input(f)
        P = ad.leaves(self.params)
        zs, hs = self._run(P, f, self.schedule.T)
        u = self._project(P, zs[-1])
        return ForwardResult(
            output=u.data,
            states=[z.data for z in zs],
            hidden=None if hs is None else [h.data for h in hs],
            output_var=u if record else None,
            leaves=P if record else None,
        )

    def __call__(self, f) -> np.ndarray:
        return self.forward(f).output

    def over_iterate(self, f, extra_T: int) -> list[np.ndarray]:
        """Restored images ``u_T .. u_{T+extra_T}``, repeating the last block.

        Only defined for shared schedules; an unshared model has no
        canonical block to repeat.
        """
        if self.schedule.unshared:
            raise ConfigError("over-iteration needs a shared schedule (R < T)")
        if extra_T < 0:
            raise ValueError("extra_T must be >= 0")
        f = self._check_input(f)
        P = ad.leaves(self.params)
        T = self.schedule.T
        zs, _ = self._run(P, f, T + extra_T)
        return [self._project(P, z).data for z in zs[T:]]


def charbonnier_loss(u_gt, u, eps_c: float = 1e-3):
    """Mean Charbonnier penalty; returns a Var when either input is a Var."""
    out = ad.charbonnier(u_gt, u, eps_c)
    if isinstance(u, ad.Var) or isinstance(u_gt, ad.Var):
        return out
    return float(out.data)


def backward(result: ForwardResult, loss: ad.Var) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``loss`` for every model parameter."""
    if result.leaves is None or result.output_var is None:
        raise MissingIntermediatesError("forward pass was not recorded; call forward(..., record=True)")
    return ad.grad(loss, result.leaves)


def loss_and_grads(model: UnrollModel, f, u_gt, eps_c: float = 1e-3) -> tuple[float, dict[str, np.ndarray], ForwardResult]:
    res = model.forward(f, record=True)
    loss = ad.charbonnier(u_gt, res.output_var, eps_c)
    return float(loss.data), backward(res, loss), res
