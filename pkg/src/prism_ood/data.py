"""Synthetic ID/OOD data, oracle fixtures, and on-disk formats.

Binary container (datasets, checkpoints, embedding dumps), little endian::

    magic      4 bytes  b"PRSM"
    version    u16      (currently 1)
    count      u32      number of tensors
    count x {
        name_len u16, name utf-8 bytes,
        rank     u8,  dims u32 x rank,
        payload  float64 x prod(dims)
    }

Score files are text, one ``sample_id,split,score`` record per line with
the score written to 12 significant digits.
"""
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InfeasibleConfigError, LengthError, VersionError
from .model import INIT_VARIANTS, PrismModel
from .rng import DATA_OFFSET, FIXTURE_OFFSET, sub_rng

MAGIC = b"PRSM"
VERSION = 1
SPLITS = ("train", "test_id", "test_ood")
OOD_LABEL = -1
MAX_REJECTIONS = 10**6


# ---------------------------------------------------------------- datasets


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (N, D) with one label per row")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite features")

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.split == other.split
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y))


@dataclass
class SynthConfig:
    K: int = 4
    D: int = 16
    n_per_class: int = 500
    id_mean_scale: float = 6.0
    cluster_std: float = 1.0
    n_ood_clusters: int = 4
    ood_shift: float = 4.0
    seed: int = 7

    def __post_init__(self):
        if min(self.K, self.D, self.n_per_class, self.n_ood_clusters) < 1:
            raise ValueError("counts must be positive")
        if self.cluster_std < 0:
            raise ValueError("cluster_std must be non-negative")


REJECTION_CHUNK = 4096


def _on_sphere(rng, n, D, radius):
    v = rng.normal((n, D))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def _candidates(rng, n, D, radius):
    # rows are padded to a whole number of normal pairs, so drawing n rows at
    # once consumes the stream exactly like n single-row draws
    v = rng.normal((n, D + D % 2))[:, :D]
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def _place_ood_means(rng, means, count, radius, shift):
    """Rejection-sample ``count`` means at least ``shift`` from every ID mean.

    Candidates are screened in blocks; once the block holding the last
    needed acceptance is known, the generator is rewound and exactly the
    consumed candidates are redrawn, so the stream matches a
    one-candidate-at-a-time loop.
    """
    D = means.shape[1]
    accepted = []
    tries = 0
    while len(accepted) < count:
        if tries >= MAX_REJECTIONS:
            raise InfeasibleConfigError(f"could not place OOD means {shift} away from ID means")
        state = rng.get_state()
        c = min(REJECTION_CHUNK, MAX_REJECTIONS - tries)
        cand = _candidates(rng, c, D, radius)
        dist = np.linalg.norm(cand[:, None, :] - means[None, :, :], axis=2).min(axis=1)
        ok = np.flatnonzero(dist >= shift)[:count - len(accepted)]
        if len(accepted) + ok.size == count:
            used = int(ok[-1]) + 1
            rng.set_state(state)
            cand = _candidates(rng, used, D, radius)
            accepted.extend(cand[ok])
            tries += used
        else:
            accepted.extend(cand[ok])
            tries += c
    return accepted


def gen_synthetic(config):
    """Gaussian-blob ID classes plus displaced OOD blobs.

    ID class means are drawn uniformly on the sphere of radius
    ``id_mean_scale``. OOD means are drawn on the same sphere and rejected
    until each is at least ``ood_shift`` away from every ID mean. Each
    class is split 80/20 into train and test in generation order; each OOD
    cluster contributes as many samples as one ID class has test samples.

    Returns ``(train, test_id, test_ood)``.
    """
    rng = sub_rng(config.seed, DATA_OFFSET)
    K, D, n = config.K, config.D, config.n_per_class
    means = _on_sphere(rng, K, D, config.id_mean_scale)
    ood_means = _place_ood_means(rng, means, config.n_ood_clusters, config.id_mean_scale, config.ood_shift)
    n_train = (4 * n) // 5
    n_test = n - n_train

    def blob(mu, count):
        if config.cluster_std == 0:
            return np.tile(mu, (count, 1))
        return mu + config.cluster_std * rng.normal((count, D))

    Xtr, ytr, Xte, yte = [], [], [], []
    for k in range(K):
        X = blob(means[k], n)
        Xtr.append(X[:n_train])
        Xte.append(X[n_train:])
        ytr += [k] * n_train
        yte += [k] * n_test
    Xood = [blob(mu, n_test) for mu in ood_means]
    train = Dataset(np.concatenate(Xtr), np.array(ytr), "train")
    test_id = Dataset(np.concatenate(Xte).reshape(-1, D), np.array(yte), "test_id")
    test_ood = Dataset(np.concatenate(Xood).reshape(-1, D), np.full(n_test * len(Xood), OOD_LABEL), "test_ood")
    return train, test_id, test_ood


# ---------------------------------------------------------------- generative fixture


@dataclass
class GenerativeFixture:
    """Confusion matrices ``A_m`` and per-cluster Bayes posteriors ``f``.

    Pseudo-label vectors of this model are ``p = [A_1 f; ...; A_M f]``.
    """
    A_list: np.ndarray                      # (M, K, K)
    f_table: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.A_list.shape[0]

    @property
    def K(self):
        return self.A_list.shape[1]

    def stacked(self, f):
        """``p = W f`` for one posterior ``(K,)`` or a batch ``(N, K)``."""
        f = np.asarray(f, dtype=np.float64)
        return np.einsum("mij,...j->...mi", self.A_list, f).reshape(f.shape[:-1] + (self.M * self.K,))

    def inverses(self):
        from .numerics import exact_inverse
        return np.stack([exact_inverse(A) for A in self.A_list])

    def sample(self, n, seed):
        """Draw ``n`` (cluster, label) pairs; labels follow the cluster posterior.

        Returns ``(p, labels, f)`` with ``p`` the stacked pseudo-label vectors.
        """
        rng = sub_rng(seed, FIXTURE_OFFSET)
        clusters = sorted(self.f_table)
        F = np.stack([self.f_table[c] for c in clusters])
        pick = np.minimum((rng.uniform(n) * len(clusters)).astype(np.int64), len(clusters) - 1)
        f = F[pick]
        u = rng.uniform(n)
        cdf = np.cumsum(f, axis=1)
        labels = np.minimum((u[:, None] >= cdf).sum(axis=1), self.K - 1)
        return self.stacked(f), labels, f


def random_simplex(rng, shape):
    """Uniform points on the simplex along the last axis (normalized exponentials)."""
    e = -np.log1p(-rng.uniform(shape))
    return e / e.sum(axis=-1, keepdims=True)


def gen_fixture(M, K, seed, alpha=0.3, n_clusters=None):
    """``A_m = (1 - alpha) I + alpha S_m`` with random column-stochastic ``S_m``.

    For ``alpha < 0.5`` every column is strictly diagonally dominant, so
    each ``A_m`` is invertible.
    """
    if K < 2 or M < 1:
        raise ValueError("need K >= 2 and M >= 1")
    rng = sub_rng(seed, FIXTURE_OFFSET)
    S = np.swapaxes(random_simplex(rng, (M, K, K)), 1, 2)
    A = (1 - alpha) * np.eye(K) + alpha * S
    for Am in A:
        if np.linalg.cond(Am) >= 1e6:  # pragma: no cover - excluded by construction
            raise InfeasibleConfigError("ill-conditioned confusion matrix")
    n_clusters = n_clusters or K
    f_table = {c: f for c, f in enumerate(random_simplex(rng, (n_clusters, K)))}
    return GenerativeFixture(A, f_table)


# ---------------------------------------------------------------- container


def write_container(path, tensors):
    """Write ``{name: array}`` (converted to float64) in the PRSM format."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise LengthError(f"truncated file: need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        size = math.prod(dims)
        out[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return out


def save_dataset(path, ds):
    write_container(path, {"X": ds.X, "y": ds.y, "split": np.float64(SPLITS.index(ds.split))})


def load_dataset(path):
    t = read_container(path)
    try:
        return Dataset(t["X"], t["y"].astype(np.int64), SPLITS[int(t["split"])])
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc}") from None


def save_checkpoint(path, model, index=None):
    """Model parameters plus shape metadata; optionally the kNN embeddings."""
    tensors = {
        "meta.dims": np.array([model.D, model.L, model.M, model.K], dtype=np.float64),
        "meta.hidden": np.array(model.hidden, dtype=np.float64),
        "meta.init_variant": np.float64(INIT_VARIANTS.index(model.init_variant)),
    }
    for name in sorted(model.params):
        tensors["param." + name] = model.params[name]
    if index is not None:
        tensors["knn.embeddings"] = index.embeddings
    write_container(path, tensors)


def load_checkpoint(path):
    t = read_container(path)
    try:
        D, L, M, K = (int(v) for v in t["meta.dims"])
        hidden = tuple(int(v) for v in t["meta.hidden"])
        variant = INIT_VARIANTS[int(t["meta.init_variant"])]
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: missing or invalid checkpoint metadata ({exc})") from None
    params = {k[len("param."):]: v.copy() for k, v in t.items() if k.startswith("param.")}
    return PrismModel(D, L, M, K, hidden, variant, params)


def load_index(path):
    from .detection import KnnIndex
    t = read_container(path)
    if "knn.embeddings" not in t:
        raise FormatError(f"{path}: checkpoint carries no kNN embeddings")
    U = np.ascontiguousarray(t["knn.embeddings"])
    U.setflags(write=False)
    return KnnIndex(U)


# ---------------------------------------------------------------- scores


@dataclass
class ScoreRecord:
    sample_id: int
    split: str
    score: float


def format_score(x):
    return f"{x:.12g}"


def save_scores(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{int(r.sample_id)},{r.split},{format_score(float(r.score))}\n")


def load_scores(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected sample_id,split,score")
            try:
                out.append(ScoreRecord(int(parts[0]), parts[1], float(parts[2])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out
