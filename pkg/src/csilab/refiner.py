"""Transformer codeword refiner with hand-written reverse-mode gradients.

One conventional codeword becomes two real tokens (one per polarization,
real parts then imaginary parts).  The tokens pass through a token-wise
embedding MLP with layer norm, a single rotary position embedding, ``L``
pre-norm transformer layers (RMSNorm, bidirectional multi-head attention,
GELU feed-forward) and a Tanh output head, and are reassembled into a
complex vector of the original length.

All arrays are float64; a batch of ``N`` codewords is processed as an
``(N, 2, features)`` tensor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import InvalidInputError, NumericFailureError

__all__ = [
    "RefinerConfig",
    "param_names",
    "param_shapes",
    "init_params",
    "preprocess",
    "reassemble",
    "embed",
    "rope_angles",
    "rope_rotate",
    "apply_rope",
    "backbone_forward",
    "output_head",
    "forward",
    "refine",
    "refine_batch",
    "loss_cosine",
    "batch_loss",
    "backward",
    "count_params",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class RefinerConfig:
    n_t: int = 16
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_hidden: Optional[int] = None  # defaults to 4 * d_model
    rmsnorm_eps: float = 1e-6
    layernorm_eps: float = 1e-5
    init_scale: float = 1.0
    rope_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 4 * self.d_model)
        if self.n_t < 1:
            raise InvalidInputError("n_t must be >= 1")
        if self.n_layers < 1:
            raise InvalidInputError("n_layers must be >= 1")
        if self.n_heads < 1 or self.d_model % (2 * self.n_heads):
            raise InvalidInputError("d_model must be divisible by 2 * n_heads")
        if self.ffn_hidden < self.d_model:
            raise InvalidInputError("ffn_hidden must be >= d_model")
        if self.init_scale < 0:
            raise InvalidInputError("init_scale must be >= 0")

    @property
    def n_c(self) -> int:
        return 2 * self.n_t

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def param_shapes(cfg: RefinerConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names (in checkpoint order) and shapes."""
    d, h, f, n_c = cfg.d_model, cfg.d_model // 2, cfg.ffn_hidden, cfg.n_c
    shapes = {
        "embed.w1": (h, n_c), "embed.b1": (h,),
        "embed.ln_gain": (h,), "embed.ln_bias": (h,),
        "embed.w2": (d, h), "embed.b2": (d,),
    }
    for layer in range(cfg.n_layers):
        p = f"layer{layer}."
        shapes.update({
            p + "attn_norm": (d,),
            p + "wq": (d, d), p + "wk": (d, d), p + "wv": (d, d), p + "wo": (d, d),
            p + "ffn_norm": (d,),
            p + "w_up": (f, d), p + "b_up": (f,),
            p + "w_down": (d, f), p + "b_down": (d,),
        })
    shapes.update({"head.w3": (n_c, d), "head.b3": (n_c,)})
    return shapes


def param_names(cfg: RefinerConfig) -> list[str]:
    return list(param_shapes(cfg))


def count_params(cfg: RefinerConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: RefinerConfig) -> dict[str, np.ndarray]:
    """Uniform(+-init_scale/sqrt(fan_in)) weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf in ("ln_gain", "attn_norm", "ffn_norm"):
            params[name] = np.ones(shape)
        elif len(shape) == 2:
            bound = cfg.init_scale / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


# ---------------------------------------------------------------- token I/O

def preprocess(c) -> np.ndarray:
    """Split codeword(s) into per-polarization real tokens.

    ``c`` of shape ``(..., n_c)`` gives ``(..., 2, n_c)``; token ``p`` is
    ``[Re(c_p); Im(c_p)]`` with ``c_p`` the ``p``-th half of ``c``.
    """
    c = np.asarray(c)
    n_c = c.shape[-1]
    if n_c % 2:
        raise InvalidInputError(f"codeword length {n_c} is odd; expected 2 * n_t")
    n_t = n_c // 2
    blocks = c.reshape(c.shape[:-1] + (2, n_t))
    return np.concatenate([blocks.real, blocks.imag], axis=-1).astype(np.float64)


def reassemble(tokens) -> np.ndarray:
    """Inverse of :func:`preprocess`: ``(..., 2, n_c)`` real to ``(..., n_c)`` complex."""
    tokens = np.asarray(tokens, dtype=np.float64)
    n_t = tokens.shape[-1] // 2
    g = tokens[..., :n_t] + 1j * tokens[..., n_t:2 * n_t]
    return g.reshape(tokens.shape[:-2] + (2 * n_t,))


# ------------------------------------------------------------------ helpers

def _gelu(x):
    """Exact GELU; also returns the normal CDF reused by the backward pass."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, cdf


def _gelu_grad(x, cdf):
    return cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _linear_grad(dy, x):
    # y = x @ w.T ; returns dW for leading batch dims
    return np.tensordot(dy, x, axes=(tuple(range(dy.ndim - 1)), tuple(range(x.ndim - 1))))


def _sum_lead(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _rms_forward(x, gain, eps):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * r * gain, r


def _rms_backward(dy, x, r, gain):
    u = dy * gain
    dgain = _sum_lead(dy * x * r)
    dx = r * u - x * r ** 3 * np.mean(u * x, axis=-1, keepdims=True)
    return dx, dgain


def _check_finite(x, stage):
    if not np.all(np.isfinite(x)):
        raise NumericFailureError(f"non-finite values after {stage}")


# ------------------------------------------------------------ forward stages

def embed(X, params, cfg: RefinerConfig, cache=None) -> np.ndarray:
    """Token-wise ``W2 GELU(LN(W1 x + b1)) + b2``."""
    a1 = X @ params["embed.w1"].T + params["embed.b1"]
    mu = a1.mean(axis=-1, keepdims=True)
    xc = a1 - mu
    rstd = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + cfg.layernorm_eps)
    xhat = xc * rstd
    z = xhat * params["embed.ln_gain"] + params["embed.ln_bias"]
    act, cdf = _gelu(z)
    out = act @ params["embed.w2"].T + params["embed.b2"]
    if cache is not None:
        cache["embed"] = (X, xhat, rstd, z, act, cdf)
    return out


def rope_angles(d_model: int, base: float = 10000.0) -> np.ndarray:
    """Per-pair rotation frequency ``base**(-2k/d_model)``, k = 0 .. d_model/2 - 1."""
    if d_model % 2:
        raise InvalidInputError("rotary embedding needs an even feature dimension")
    return base ** (-2.0 * np.arange(d_model // 2) / d_model)


def rope_rotate(x, position, base: float = 10000.0, inverse: bool = False) -> np.ndarray:
    """Rotate feature pairs ``(2k, 2k+1)`` of ``x`` by ``position * theta_k``."""
    x = np.asarray(x, dtype=np.float64)
    ang = position * rope_angles(x.shape[-1], base)
    c, s = np.cos(ang), np.sin(ang)
    if inverse:
        s = -s
    out = np.empty_like(x)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def apply_rope(X, base: float = 10000.0) -> np.ndarray:
    """Rotary embedding of a token sequence ``(..., T, D)``; token t sits at position t."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty_like(X)
    for t in range(X.shape[-2]):
        out[..., t, :] = rope_rotate(X[..., t, :], t, base)
    return out


def _rope_backward(dY, base):
    dX = np.empty_like(dY)
    for t in range(dY.shape[-2]):
        dX[..., t, :] = rope_rotate(dY[..., t, :], t, base, inverse=True)
    return dX


def _attention(R, params, prefix, cfg, cache_layer):
    n, t, d = R.shape
    h, dh = cfg.n_heads, cfg.head_dim

    def heads(w):
        return (R @ w.T).reshape(n, t, h, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(params[prefix + "wq"]), heads(params[prefix + "wk"]), heads(params[prefix + "wv"])
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    o = (p @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
    if cache_layer is not None:
        cache_layer.update(q=q, k=k, v=v, p=p, o=o)
    return o @ params[prefix + "wo"].T


def backbone_forward(X, params, cfg: RefinerConfig, cache=None) -> np.ndarray:
    """Stack of pre-norm transformer layers over the token axis."""
    layers = [] if cache is not None else None
    for layer in range(cfg.n_layers):
        p = f"layer{layer}."
        lc = {} if cache is not None else None
        r1, rr1 = _rms_forward(X, params[p + "attn_norm"], cfg.rmsnorm_eps)
        x_att = X + _attention(r1, params, p, cfg, lc)
        r2, rr2 = _rms_forward(x_att, params[p + "ffn_norm"], cfg.rmsnorm_eps)
        u = r2 @ params[p + "w_up"].T + params[p + "b_up"]
        act, cdf = _gelu(u)
        X_next = x_att + act @ params[p + "w_down"].T + params[p + "b_down"]
        if lc is not None:
            lc.update(x=X, r1=r1, rr1=rr1, x_att=x_att, r2=r2, rr2=rr2, u=u, act=act, cdf=cdf)
            layers.append(lc)
        X = X_next
        _check_finite(X, f"transformer layer {layer}")
    if cache is not None:
        cache["layers"] = layers
    return X


def output_head(X, params, cfg: RefinerConfig = None, cache=None) -> np.ndarray:
    """Token-wise ``tanh(W3 x + b3)``."""
    y = np.tanh(X @ params["head.w3"].T + params["head.b3"])
    if cache is not None:
        cache["head"] = (X, y)
    return y


def forward(C, params, cfg: RefinerConfig, cache=None) -> np.ndarray:
    """Refined (unnormalized) codewords for a batch ``C`` of shape ``(N, n_c)``."""
    X = preprocess(C)
    if X.shape[-1] != cfg.n_c:
        raise InvalidInputError(f"codeword length {X.shape[-1]} != configured n_c {cfg.n_c}")
    E = apply_rope(embed(X, params, cfg, cache), cfg.rope_base)
    Z = backbone_forward(E, params, cfg, cache)
    return reassemble(output_head(Z, params, cfg, cache))


def refine(c, params, cfg: RefinerConfig) -> np.ndarray:
    """Refine one codeword; the result is not normalized."""
    return forward(np.asarray(c)[None], params, cfg)[0]


def refine_batch(C, params, cfg: RefinerConfig, chunk: int = 4096) -> np.ndarray:
    C = np.asarray(C)
    return np.concatenate([forward(C[s:s + chunk], params, cfg) for s in range(0, len(C), chunk)])


# -------------------------------------------------------------------- loss

def loss_cosine(g, h) -> float:
    """Negative cosine similarity ``-|g^H h| / (||g|| ||h||)`` of one pair."""
    g = np.asarray(g, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    ng, nh = np.linalg.norm(g), np.linalg.norm(h)
    if not (ng > 0 and nh > 0):
        raise InvalidInputError("loss undefined for a zero vector")
    return -float(abs(np.vdot(g, h)) / (ng * nh))


def _pair_terms(G, H):
    s = np.sum(G.conj() * H, axis=-1)
    a = np.abs(s)
    ng = np.linalg.norm(G, axis=-1)
    nh = np.linalg.norm(H, axis=-1)
    if np.any(ng == 0) or np.any(nh == 0):
        raise InvalidInputError("loss undefined for a zero vector")
    return s, a, ng, nh


def batch_loss(G, H) -> float:
    """Mean pair loss over the rows of ``G`` and ``H``."""
    _, a, ng, nh = _pair_terms(np.asarray(G, dtype=np.complex128), np.asarray(H, dtype=np.complex128))
    return float(np.mean(-a / (ng * nh)))


def _loss_grad(G, H):
    s, a, ng, nh = _pair_terms(G, H)
    safe_a = np.where(a > 0, a, 1.0)
    phase = np.where(a > 0, s.conj() / safe_a, 0.0)
    dG = -(phase[:, None] * H - (a / ng ** 2)[:, None] * G) / (ng * nh)[:, None]
    return float(np.mean(-a / (ng * nh))), dG / len(G)


# ---------------------------------------------------------------- backward

def backward(params, C, H, cfg: RefinerConfig):
    """Loss and exact gradient for a batch of training pairs.

    Parameters
    ----------
    C : (N, n_c) complex
        Codewords fed to the network.
    H : (N, n_c) complex
        Target channels.

    Returns
    -------
    loss : float
        Mean pair loss.
    grads : dict
        Gradient of ``loss`` for every entry of ``params``.
    """
    C = np.asarray(C)
    H = np.asarray(H, dtype=np.complex128)
    if len(C) == 0:
        raise InvalidInputError("empty training batch")
    cache = {}
    G = forward(C, params, cfg, cache)
    _check_finite(G, "output head")
    loss, dG = _loss_grad(G, H)
    if not np.isfinite(loss):
        raise NumericFailureError("non-finite training loss")
    grads = {}

    # token layout of dG: (N, 2, n_c) with real parts then imaginary parts
    n_t = cfg.n_t
    dG = dG.reshape(len(C), 2, n_t)
    dY = np.concatenate([dG.real, dG.imag], axis=-1)

    Z, Y = cache["head"]
    dpre = dY * (1.0 - Y * Y)
    grads["head.w3"] = _linear_grad(dpre, Z)
    grads["head.b3"] = _sum_lead(dpre)
    dX = dpre @ params["head.w3"]

    for layer in reversed(range(cfg.n_layers)):
        p = f"layer{layer}."
        lc = cache["layers"][layer]
        # feed-forward branch
        grads[p + "w_down"] = _linear_grad(dX, lc["act"])
        grads[p + "b_down"] = _sum_lead(dX)
        du = (dX @ params[p + "w_down"]) * _gelu_grad(lc["u"], lc["cdf"])
        grads[p + "w_up"] = _linear_grad(du, lc["r2"])
        grads[p + "b_up"] = _sum_lead(du)
        dr2 = du @ params[p + "w_up"]
        dx_norm, grads[p + "ffn_norm"] = _rms_backward(dr2, lc["x_att"], lc["rr2"], params[p + "ffn_norm"])
        dX_att = dX + dx_norm
        # attention branch
        grads[p + "wo"] = _linear_grad(dX_att, lc["o"])
        n, t, d = dX_att.shape
        h, dh = cfg.n_heads, cfg.head_dim
        do = (dX_att @ params[p + "wo"]).reshape(n, t, h, dh).transpose(0, 2, 1, 3)
        q, k, v, pr = lc["q"], lc["k"], lc["v"], lc["p"]
        dv = pr.transpose(0, 1, 3, 2) @ do
        dp = do @ v.transpose(0, 1, 3, 2)
        ds = pr * (dp - np.sum(dp * pr, axis=-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dr1 = np.zeros_like(dX_att)
        for name, dz in (("wq", dq), ("wk", dk), ("wv", dv)):
            dz = dz.transpose(0, 2, 1, 3).reshape(n, t, d)
            grads[p + name] = _linear_grad(dz, lc["r1"])
            dr1 += dz @ params[p + name]
        dx_norm, grads[p + "attn_norm"] = _rms_backward(dr1, lc["x"], lc["rr1"], params[p + "attn_norm"])
        dX = dX_att + dx_norm

    dE = _rope_backward(dX, cfg.rope_base)
    X, xhat, rstd, z, act, cdf = cache["embed"]
    grads["embed.w2"] = _linear_grad(dE, act)
    grads["embed.b2"] = _sum_lead(dE)
    dz = (dE @ params["embed.w2"]) * _gelu_grad(z, cdf)
    grads["embed.ln_gain"] = _sum_lead(dz * xhat)
    grads["embed.ln_bias"] = _sum_lead(dz)
    dxhat = dz * params["embed.ln_gain"]
    da1 = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                  - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    grads["embed.w1"] = _linear_grad(da1, X)
    grads["embed.b1"] = _sum_lead(da1)
    return loss, {name: grads[name] for name in params}
