"""Training criterion ``L_CE + lambda * L_reg`` and the optimization loop.

Gradients are derived by hand (reverse mode through the encoder, head,
blockwise softmax, recombination, simplex parameterizations and the
subspace regularizer) and verified against central differences by
:func:`grad_check`.
"""
import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics
from .errors import DimensionError, DivergenceError, NumericalInstabilityError
from .model import INIT_VARIANTS, forward_batch, init_model
from .rng import SHUFFLE_OFFSET, sub_rng
from .subspace import basis_from_blocks, invert_blocks, reg_loss_backward, reg_terms

LOG_CLAMP = 1e-12
THETA_GROUPS = ("encoder", "head", "mixture_head")
SIMPLEX_GROUPS = ("confusion_logits", "mixture_logits")


@dataclass
class TrainConfig:
    lam: float = 0.05
    M: int = 3
    K: int = 4
    epochs: int = 50
    batch_size: int = 64
    lr_theta: float = 0.05
    lr_B: float = 0.01
    momentum: float = 0.9
    weight_decay_theta: float = 1e-4
    weight_decay_B: float = 1e-6
    optimizer_B: str = "adam"
    inversion: str = "neumann"
    neumann_order: int = numerics.DEFAULT_NEUMANN_ORDER
    seed: int = 0
    init_variant: str = "identity_B_uniform_d"
    freeze_B_in_reg: bool = False
    L: int = 32
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.M < 1 or self.K < 2 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need M >= 1, K >= 2, batch_size >= 1, epochs >= 0")
        if self.optimizer_B not in ("sgd", "adam"):
            raise ValueError(f"optimizer_B must be sgd or adam, got {self.optimizer_B!r}")
        if self.inversion not in ("neumann", "exact"):
            raise ValueError(f"inversion must be neumann or exact, got {self.inversion!r}")
        if self.init_variant not in INIT_VARIANTS:
            raise ValueError(f"unknown init_variant {self.init_variant!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def frozen_params(self):
        if self.init_variant in ("identity_B_fixed_d", "linear_d"):
            return {"mixture_logits"}
        return set()


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    reg: float
    total: float
    acc: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "ce", "reg", "total", "acc"])
            for r in self.records:
                w.writerow([r.epoch] + [f"{v:.9g}" for v in (r.ce, r.reg, r.total, r.acc)])


def param_group(name):
    return name.split(".", 1)[0]


def ce_loss(f_hat, labels):
    """Mean negative log-probability of the true class, ``log`` clamped at 1e-12."""
    f_hat = np.atleast_2d(np.asarray(f_hat, dtype=np.float64))
    labels = np.asarray(labels)
    if f_hat.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape != (f_hat.shape[0],):
        raise DimensionError("labels and predictions differ in length")
    if np.any(labels < 0) or np.any(labels >= f_hat.shape[1]):
        raise ValueError("label out of range")
    picked = f_hat[np.arange(len(labels)), labels.astype(np.int64)]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def _losses(model, X, y, config):
    cache = forward_batch(model, X)
    y = np.asarray(y).astype(np.int64)
    ce = ce_loss(cache.f_hat, y)
    V, used = invert_blocks(cache.B, config.inversion, config.neumann_order)
    basis = basis_from_blocks(V)
    reg = float(reg_terms(basis, cache.p).mean())
    return cache, basis, V, used, ce, reg


def total_loss(model, batch, config):
    """``(total, ce, reg)`` on ``batch = (X, y)``; reg uses mean reduction."""
    X, y = batch
    _, _, _, _, ce, reg = _losses(model, X, y, config)
    return ce + config.lam * reg, ce, reg


def backward(model, batch, config):
    """Analytic gradients of the total loss for every parameter.

    Returns ``(grads, (total, ce, reg))``. With ``config.freeze_B_in_reg``
    the regularizer's gradient is not propagated into the confusion logits.
    """
    grads, losses, _ = _backward(model, batch, config)
    return grads, losses


def _backward(model, batch, config):
    X, y = batch
    cache, basis, V, used, ce, reg = _losses(model, X, y, config)
    y = np.asarray(y).astype(np.int64)
    prm = model.params
    M, K = model.M, model.K
    N = len(y)
    rows = np.arange(N)

    g_f = np.zeros_like(cache.f_hat)
    picked = cache.f_hat[rows, y]
    g_f[rows, y] = np.where(picked > LOG_CLAMP, -1.0 / (N * np.where(picked > LOG_CLAMP, picked, 1.0)), 0.0)

    d = cache.d
    d_b = d[None, :, None] if d.ndim == 1 else d[:, :, None]
    g_q = d_b * g_f[:, None, :]
    g_d = np.einsum("ni,nmi->nm", g_f, cache.q)
    blocks = cache.p.reshape(N, M, K)
    g_B = np.einsum("nmi,nmj->mij", g_q, blocks)
    g_p = np.einsum("mij,nmi->nmj", cache.B, g_q).reshape(N, M * K)

    if config.lam != 0.0:
        gp_reg, g_W = reg_loss_backward(basis, cache.p, upstream=config.lam)
        g_p = g_p + gp_reg
        if not config.freeze_B_in_reg:
            g_V = g_W.reshape(M, K, K)
            for m in range(M):
                g_B[m] += numerics.invert_backward(cache.B[m], V[m], used[m], g_V[m], config.neumann_order)

    grads = {"confusion_logits": numerics.column_stochastic_backward(cache.B, g_B)}

    g_t = numerics.blockwise_softmax_backward(cache.p, g_p, M, K)
    h = cache.h
    grads["head.weight"] = h.T @ g_t
    grads["head.bias"] = g_t.sum(axis=0)
    g_h = g_t @ prm["head.weight"].T

    if model.instance_mixture:
        g_s = numerics.softmax_backward(d, g_d)
        grads["mixture_head.weight"] = h.T @ g_s
        grads["mixture_head.bias"] = g_s.sum(axis=0)
        g_h = g_h + g_s @ prm["mixture_head.weight"].T
        grads["mixture_logits"] = np.zeros_like(prm["mixture_logits"])
    else:
        grads["mixture_logits"] = numerics.softmax_backward(d, g_d.sum(axis=0))

    g_z = g_h
    for i in reversed(range(model.n_encoder_layers)):
        grads[f"encoder.{i}.weight"] = cache.activations[i].T @ g_z
        grads[f"encoder.{i}.bias"] = g_z.sum(axis=0)
        if i > 0:
            g_z = (g_z @ prm[f"encoder.{i}.weight"].T) * (cache.pre_relu[i - 1] > 0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalInstabilityError(param_group(name))
    return {k: grads[k] for k in prm}, (ce + config.lam * reg, ce, reg), cache


@dataclass
class OptimizerState:
    t: int = 0
    momentum: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def step(params, grads, state, config):
    """One optimizer update; returns a new parameter dict.

    Network weights use SGD with momentum. Confusion and mixture logits use
    SGD with momentum or Adam per ``config.optimizer_B``. Weight decay is an
    L2 term added to the gradient. ``state`` is updated in place.
    """
    frozen = config.frozen_params()
    state.t += 1
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if name in frozen:
            out[name] = p
            continue
        simplex = param_group(name) in SIMPLEX_GROUPS
        lr = config.lr_B if simplex else config.lr_theta
        wd = config.weight_decay_B if simplex else config.weight_decay_theta
        if wd:
            g = g + wd * p
        if simplex and config.optimizer_B == "adam":
            b1, b2 = ADAM_BETAS
            m = state.adam_m.get(name, np.zeros_like(p)) * b1 + (1 - b1) * g
            v = state.adam_v.get(name, np.zeros_like(p)) * b2 + (1 - b2) * g * g
            state.adam_m[name], state.adam_v[name] = m, v
            m_hat = m / (1 - b1 ** state.t)
            v_hat = v / (1 - b2 ** state.t)
            out[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            if config.momentum:
                buf = state.momentum.get(name)
                buf = g.copy() if buf is None else config.momentum * buf + g
                state.momentum[name] = buf
                g = buf
            out[name] = p - lr * g
    return out


def fit(dataset, config, model=None, callback=None):
    """Train on ``dataset`` (anything with ``X`` and ``y``).

    Deterministic given ``config.seed``: initialization and per-epoch
    shuffles come from seed-derived generators and the arithmetic order is
    fixed. The last partial batch of each epoch is kept.

    Returns ``(model, TrainLog)``.
    """
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y).astype(np.int64)
    if np.any(y < 0) or np.any(y >= config.K):
        raise ValueError("training labels must lie in [0, K)")
    if model is None:
        model = init_model(X.shape[1], config.K, config.M, L=config.L, hidden=config.hidden,
                           seed=config.seed, init_variant=config.init_variant)
    else:
        model = model.copy()
    shuffle = sub_rng(config.seed, SHUFFLE_OFFSET)
    state = OptimizerState()
    log = TrainLog()
    N = X.shape[0]
    for epoch in range(config.epochs):
        perm = shuffle.permutation(N)
        sums = np.zeros(3)
        correct = 0
        for start in range(0, N, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            grads, (tot, ce, reg), cache = _backward(model, (xb, yb), config)
            if not np.isfinite(tot):
                raise DivergenceError(epoch)
            # accuracy from the pre-update forward pass of this batch
            correct += int(np.sum(np.argmax(cache.f_hat, axis=1) == yb))
            sums += len(idx) * np.array([ce, reg, tot])
            model.params = step(model.params, grads, state, config)
        ce, reg, tot = sums / N
        if not np.isfinite(tot):
            raise DivergenceError(epoch)
        rec = EpochRecord(epoch, float(ce), float(reg), float(tot), correct / N)
        log.records.append(rec)
        if callback is not None:
            callback(rec)
    return model, log


def central_difference(fn, x, eps=1e-5, coords=None):
    """Central-difference gradient of scalar ``fn()`` w.r.t. array ``x``.

    ``x`` is perturbed in place one coordinate at a time and restored.
    Returns the numeric partials for ``coords`` (flat indices, default all).
    """
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + eps
        fp = fn()
        flat[i] = old - eps
        fm = fn()
        flat[i] = old
        out.append((fp - fm) / (2 * eps))
    return np.array(out)


def relative_error(analytic, numeric):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def grad_check(model, batch, config, eps=1e-5, max_coords=None):
    """Maximum relative error per parameter group, analytic vs central differences.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. ``max_coords``
    limits the number of coordinates probed per tensor (all by default).
    """
    grads, _ = backward(model, batch, config)
    probe = model.copy()
    errors = {}
    for name, p in probe.params.items():
        n = p.size if max_coords is None else min(p.size, max_coords)
        num = central_difference(lambda: total_loss(probe, batch, config)[0], p, eps, range(n))
        err = relative_error(grads[name].reshape(-1)[:n], num)
        g = param_group(name)
        errors[g] = max(errors.get(g, 0.0), float(err.max(initial=0.0)))
    return errors


def config_dict(config):
    out = asdict(config)
    out["hidden"] = list(config.hidden)
    return out
