"""
Parameter initialisation and application of the unrolled building blocks.

Parameters live in flat ``{name: array}`` dicts; each ``apply`` function
takes the matching dict of :class:`Var` leaves and a prefix.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ad

BLOCK_KINDS = ("conv_residual", "window_attention")


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal samples truncated at two standard deviations (by resampling)."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def conv_params(rng, k: int, cin: int, cout: int, bias: bool = True, gain: float = 1.0) -> dict:
    p = {"w": trunc_normal(rng, (k, k, cin, cout), gain / math.sqrt(k * k * cin))}
    if bias:
        p["b"] = np.zeros(cout)
    return p


def ln_params(c: int) -> dict:
    return {"g": np.ones(c), "b": np.zeros(c)}


def _prefixed(prefix: str, groups: dict[str, dict]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{g}.{k}": v for g, d in groups.items() for k, v in d.items()}


# -- residual conv block ------------------------------------------------------------


def init_conv_residual(rng, prefix: str, channels: int, kernel_size: int = 3) -> dict[str, np.ndarray]:
    return _prefixed(
        prefix,
        {
            "ln": ln_params(channels),
            "conv1": conv_params(rng, kernel_size, channels, channels),
            "conv2": conv_params(rng, kernel_size, channels, channels),
        },
    )


def apply_conv_residual(P: dict[str, ad.Var], prefix: str, x: ad.Var) -> ad.Var:
    y = ad.layer_norm(x, P[f"{prefix}.ln.g"], P[f"{prefix}.ln.b"])
    y = ad.conv2d(y, P[f"{prefix}.conv1.w"], P[f"{prefix}.conv1.b"])
    y = ad.gelu(y)
    y = ad.conv2d(y, P[f"{prefix}.conv2.w"], P[f"{prefix}.conv2.b"])
    return ad.add(x, y)


# -- windowed attention block -------------------------------------------------------


def _linear_params(rng, cin: int, cout: int) -> dict:
    return {"w": trunc_normal(rng, (cin, cout), 1.0 / math.sqrt(cin)), "b": np.zeros(cout)}


def init_window_attention(rng, prefix: str, channels: int, mlp_ratio: int = 2) -> dict[str, np.ndarray]:
    c = channels
    return _prefixed(
        prefix,
        {
            "ln1": ln_params(c),
            "q": _linear_params(rng, c, c),
            "k": _linear_params(rng, c, c),
            "v": _linear_params(rng, c, c),
            "proj": _linear_params(rng, c, c),
            "ln2": ln_params(c),
            "fc1": _linear_params(rng, c, mlp_ratio * c),
            "fc2": _linear_params(rng, mlp_ratio * c, c),
        },
    )


def window_partition(x: ad.Var, ws: int) -> ad.Var:
    B, H, W, C = x.shape
    x = ad.reshape(x, (B, H // ws, ws, W // ws, ws, C))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (B * (H // ws) * (W // ws), ws * ws, C))


def window_merge(x: ad.Var, ws: int, B: int, H: int, W: int) -> ad.Var:
    C = x.shape[-1]
    x = ad.reshape(x, (B, H // ws, W // ws, ws, ws, C))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (B, H, W, C))


def apply_window_attention(P: dict[str, ad.Var], prefix: str, x: ad.Var, window_size: int) -> ad.Var:
    """Pre-norm single-head attention within non-overlapping windows, then an MLP.

    Inputs whose height or width is not a multiple of ``window_size`` are
    zero-padded at the bottom/right and cropped back afterwards.
    """
    B, H, W, C = x.shape
    ws = window_size
    ph = (-H) % ws
    pw = (-W) % ws
    xp = ad.pad_hw(x, ph, pw)
    Hp, Wp = H + ph, W + pw

    def lin(name, t):
        return ad.linear(t, P[f"{prefix}.{name}.w"], P[f"{prefix}.{name}.b"])

    y = ad.layer_norm(xp, P[f"{prefix}.ln1.g"], P[f"{prefix}.ln1.b"])
    tokens = window_partition(y, ws)
    q = lin("q", tokens)
    k = lin("k", tokens)
    v = lin("v", tokens)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(C))
    attn = ad.softmax(scores)
    out = lin("proj", ad.matmul(attn, v))
    xp = ad.add(xp, window_merge(out, ws, B, Hp, Wp))
    y = ad.layer_norm(xp, P[f"{prefix}.ln2.g"], P[f"{prefix}.ln2.b"])
    y = lin("fc2", ad.gelu(lin("fc1", y)))
    xp = ad.add(xp, y)
    return ad.crop_hw(xp, H, W)


# -- learned acceleration (ConvGRU) --------------------------------------------------

GRU_CONVS = ("diff", "gate_g", "gate_h", "gate_z", "cand_h", "cand_z")


def init_gru(rng, prefix: str, channels: int, m: int, ks: int) -> dict[str, np.ndarray]:
    """Six convolutions, one per Conv occurrence in the update rule.

    The difference conv has no bias so that a zero step gives a zero
    correction. Gate convs start with small weights so the gates open at
    about 0.5.
    """
    c, hc = channels, m * channels
    return _prefixed(
        prefix,
        {
            "diff": conv_params(rng, ks, c, c, bias=False),
            "gate_g": conv_params(rng, ks, c, hc, gain=0.1),
            "gate_h": conv_params(rng, ks, hc, hc, gain=0.1),
            "gate_z": conv_params(rng, ks, hc, c, gain=0.1),
            "cand_h": conv_params(rng, ks, c, hc),
            "cand_z": conv_params(rng, ks, c, c),
            "norm_h": ln_params(hc),
            "norm_z": ln_params(c),
        },
    )


def apply_gru(P: dict[str, ad.Var], prefix: str, z: ad.Var, z_hat: ad.Var, h: ad.Var) -> tuple[ad.Var, ad.Var]:
    """One step of the simplified Anderson module.

    G   = Conv(z_hat - z)
    r_h = sigmoid(Conv(G) + Conv(h))
    r_z = sigmoid(Conv(r_h))
    h'  = Norm((1 - r_h) * h + r_h * Conv(G))
    z'  = Norm((1 - r_z) * z_hat + r_z * Conv(G))
    """

    def conv(name, t):
        b = P.get(f"{prefix}.{name}.b")
        return ad.conv2d(t, P[f"{prefix}.{name}.w"], b)

    G = conv("diff", ad.sub(z_hat, z))
    r_h = ad.sigmoid(ad.add(conv("gate_g", G), conv("gate_h", h)))
    r_z = ad.sigmoid(conv("gate_z", r_h))
    h_mix = ad.add(ad.mul(ad.one_minus(r_h), h), ad.mul(r_h, conv("cand_h", G)))
    z_mix = ad.add(ad.mul(ad.one_minus(r_z), z_hat), ad.mul(r_z, conv("cand_z", G)))
    h_next = ad.layer_norm(h_mix, P[f"{prefix}.norm_h.g"], P[f"{prefix}.norm_h.b"])
    z_next = ad.layer_norm(z_mix, P[f"{prefix}.norm_z.g"], P[f"{prefix}.norm_z.b"])
    return z_next, h_next
