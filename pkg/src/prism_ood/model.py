"""The pseudo-label subspace network.

``x -> h`` (MLP encoder, penultimate features) ``-> z(h)`` (affine head,
``MK`` outputs) ``-> p`` (blockwise softmax, M pseudo-label distributions)
``-> f_hat = sum_m d_m B_m p_m`` (class posterior estimate).

Parameters live in a flat ``name -> ndarray`` dict so optimizers,
checkpoints and gradient checks can treat them uniformly. Weight matrices
are stored ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DimensionError
from .rng import INIT_OFFSET, sub_rng

INIT_VARIANTS = (
    "identity_B_uniform_d",
    "identity_B_learnable_d",
    "random_B_learnable_d",
    "identity_B_fixed_d",
    "linear_d",
)

# softmax of a column with +4 on the diagonal: ~0.95 on the diagonal for K=4
IDENTITY_LOGIT = 4.0


@dataclass
class PrismModel:
    D: int
    L: int
    M: int
    K: int
    hidden: tuple = (64, 64)
    init_variant: str = "identity_B_uniform_d"
    params: dict = field(default_factory=dict)

    @property
    def layer_sizes(self):
        return (self.D, *self.hidden, self.L)

    @property
    def n_encoder_layers(self):
        return len(self.hidden) + 1

    @property
    def instance_mixture(self):
        return self.init_variant == "linear_d"

    def confusion_matrices(self):
        """Current ``B_m`` stack, shape ``(M, K, K)``, each column-stochastic."""
        return numerics.column_stochastic_from_logits(self.params["confusion_logits"])

    def mixture_weights(self):
        """Global mixture ``d`` on the simplex (unused by the ``linear_d`` variant)."""
        return numerics.softmax(self.params["mixture_logits"])

    def copy(self):
        return PrismModel(self.D, self.L, self.M, self.K, tuple(self.hidden), self.init_variant,
                          {k: v.copy() for k, v in self.params.items()})


def init_model(D, K, M, L=32, hidden=(64, 64), seed=0, init_variant="identity_B_uniform_d"):
    """Seeded initialization.

    Affine weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)). The
    correction matrices start near the identity (diagonal logit +4; the
    exact identity is unreachable through a softmax) and the mixture
    logits at zero, i.e. ``d_m = 1/M``. The ``random_B_*`` and
    ``*_learnable_d`` variants draw standard-normal logits instead.
    """
    if init_variant not in INIT_VARIANTS:
        raise ValueError(f"unknown init_variant {init_variant!r}")
    if M < 1 or K < 2:
        raise ValueError("need M >= 1 and K >= 2")
    rng = sub_rng(seed, INIT_OFFSET)
    model = PrismModel(D=D, L=L, M=M, K=K, hidden=tuple(hidden), init_variant=init_variant)
    sizes = model.layer_sizes

    def affine(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform_range(-bound, bound, fan_in * fan_out).reshape(fan_in, fan_out)
        b = rng.uniform_range(-bound, bound, fan_out)
        return w, b

    p = model.params
    for i in range(len(sizes) - 1):
        p[f"encoder.{i}.weight"], p[f"encoder.{i}.bias"] = affine(sizes[i], sizes[i + 1])
    p["head.weight"], p["head.bias"] = affine(L, M * K)

    if init_variant == "random_B_learnable_d":
        p["confusion_logits"] = rng.normal((M, K, K))
    else:
        p["confusion_logits"] = np.tile(IDENTITY_LOGIT * np.eye(K), (M, 1, 1))
    if init_variant in ("identity_B_learnable_d", "random_B_learnable_d"):
        p["mixture_logits"] = rng.normal(M)
    else:
        p["mixture_logits"] = np.zeros(M)
    if init_variant == "linear_d":
        p["mixture_head.weight"], p["mixture_head.bias"] = affine(L, M)
    return model


@dataclass
class ForwardOutput:
    h: np.ndarray
    p: np.ndarray
    f_hat: np.ndarray


@dataclass
class ForwardCache:
    """Intermediates of a batched forward pass, kept for the backward pass."""
    activations: list   # input to each encoder layer
    pre_relu: list      # pre-activation of each hidden layer
    h: np.ndarray
    p: np.ndarray       # (N, M*K)
    B: np.ndarray       # (M, K, K)
    d: np.ndarray       # (M,) or (N, M)
    q: np.ndarray       # (N, M, K), q_m = B_m p_m
    f_hat: np.ndarray   # (N, K)


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what}: expected length {width}, got shape {x.shape}")
    return x, single


def _encode(model, X):
    acts, pre = [], []
    a = X
    n = model.n_encoder_layers
    for i in range(n):
        acts.append(a)
        z = a @ model.params[f"encoder.{i}.weight"] + model.params[f"encoder.{i}.bias"]
        if i < n - 1:
            pre.append(z)
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a, acts, pre


def encode(model, x):
    """Penultimate features ``h(x)``; ReLU between layers, last layer linear."""
    X, single = _as_batch(x, model.D, "encode")
    h, _, _ = _encode(model, X)
    return h[0] if single else h


def project(model, h):
    """Affine projection head ``R^L -> R^{MK}``."""
    H, single = _as_batch(h, model.L, "project")
    out = H @ model.params["head.weight"] + model.params["head.bias"]
    return out[0] if single else out


def pseudo_label_probs(tilde_h, M, K):
    return numerics.blockwise_softmax(tilde_h, M, K)


def recombine(B_list, d, p):
    """``sum_m d_m B_m p_m``.

    Accepts raw matrices (no simplex checks), so it doubles as the oracle
    path for inverse confusion matrices. ``d`` is ``(M,)`` or per-sample
    ``(N, M)``; ``p`` is ``(MK,)`` or ``(N, MK)``.
    """
    B = np.asarray(B_list, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if B.ndim != 3 or B.shape[1] != B.shape[2]:
        raise DimensionError(f"expected (M, K, K) matrices, got {B.shape}")
    M, K, _ = B.shape
    if d.shape[-1] != M or p.shape[-1] != M * K:
        raise DimensionError(f"dimension mismatch: M={M}, K={K}, d {d.shape}, p {p.shape}")
    blocks = p.reshape(p.shape[:-1] + (M, K))
    q = np.einsum("mij,...mj->...mi", B, blocks)
    return np.einsum("...m,...mi->...i", d, q)


def forward_batch(model, X):
    X, _ = _as_batch(X, model.D, "forward")
    h, acts, pre = _encode(model, X)
    t = h @ model.params["head.weight"] + model.params["head.bias"]
    p = numerics.blockwise_softmax(t, model.M, model.K)
    B = model.confusion_matrices()
    if model.instance_mixture:
        s = h @ model.params["mixture_head.weight"] + model.params["mixture_head.bias"]
        d = numerics._softmax_last(s)
    else:
        d = model.mixture_weights()
    blocks = p.reshape(-1, model.M, model.K)
    q = np.einsum("mij,nmj->nmi", B, blocks)
    if d.ndim == 1:
        f_hat = np.einsum("m,nmi->ni", d, q)
    else:
        f_hat = np.einsum("nm,nmi->ni", d, q)
    return ForwardCache(acts, pre, h, p, B, d, q, f_hat)


def forward(model, x):
    """Full forward pass for one sample ``(D,)`` or a batch ``(N, D)``."""
    single = np.asarray(x).ndim == 1
    c = forward_batch(model, x)
    if single:
        return ForwardOutput(c.h[0], c.p[0], c.f_hat[0])
    return ForwardOutput(c.h, c.p, c.f_hat)


def predict(model, X):
    """Class predictions, argmax of ``f_hat`` (ties to the lowest index)."""
    return np.argmax(forward_batch(model, X).f_hat, axis=1)
