"""OOD evaluation metrics and score-histogram export."""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .detection import calibrate_threshold


def _scores(x, what):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{what} is empty")
    return x


def fpr_at_tpr(id_scores, ood_scores, tpr=0.95):
    """Fraction of OOD scores at or above the threshold keeping ``tpr`` of ID."""
    id_s = _scores(id_scores, "id_scores")
    ood_s = _scores(ood_scores, "ood_scores")
    tau = calibrate_threshold(id_s, tpr)
    return float(np.count_nonzero(ood_s >= tau)) / ood_s.size


def auroc(id_scores, ood_scores):
    """Mann-Whitney AUROC: P(id > ood) + 0.5 P(id == ood), exact pair counting."""
    id_s = _scores(id_scores, "id_scores")
    ood_s = np.sort(_scores(ood_scores, "ood_scores"))
    below = np.searchsorted(ood_s, id_s, side="left")
    at_or_below = np.searchsorted(ood_s, id_s, side="right")
    greater = int(below.sum())
    ties = int((at_or_below - below).sum())
    return (greater + 0.5 * ties) / (id_s.size * ood_s.size)


def id_accuracy(predictions, labels):
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in length")
    if pred.size == 0:
        raise ValueError("empty prediction list")
    return float(np.mean(pred == lab))


def histogram(scores, n_bins=20, range=None):
    """``[(lower, upper, count), ...]``; bins half-open except the last.

    ``range=None`` uses ``[min, max]`` of the scores (``(0, 1)`` if empty).
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    s = np.asarray(scores, dtype=np.float64).ravel()
    if range is None:
        range = (float(s.min()), float(s.max())) if s.size else (0.0, 1.0)
        if range[0] == range[1]:
            range = (range[0] - 0.5, range[1] + 0.5)
    lo, hi = range
    if not lo < hi:
        raise ValueError("histogram range needs lo < hi")
    counts, edges = np.histogram(s, bins=n_bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in np.arange(n_bins)]


def histogram_csv(bins):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lower", "bin_upper", "count"])
    for lo, hi, c in bins:
        w.writerow([f"{lo:.12g}", f"{hi:.12g}", c])
    return buf.getvalue()


@dataclass
class OODResult:
    name: str
    fpr_at_tpr: float
    auroc: float


@dataclass
class EvalReport:
    tpr_level: float = 0.95
    entries: list = field(default_factory=list)
    id_accuracy: float | None = None
    histograms: dict = field(default_factory=dict)

    @property
    def fpr_column(self):
        return f"fpr_at_{round(self.tpr_level * 100):d}"

    def mean_fpr(self):
        return float(np.mean([e.fpr_at_tpr for e in self.entries]))

    def mean_auroc(self):
        return float(np.mean([e.auroc for e in self.entries]))

    def to_csv(self):
        """Table of ``dataset, fpr_at_95, auroc`` rows followed by a summary line."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", self.fpr_column, "auroc"])
        for e in self.entries:
            w.writerow([e.name, f"{e.fpr_at_tpr:.6f}", f"{e.auroc:.6f}"])
        summary = f"# average {self.fpr_column}={self.mean_fpr():.6f} auroc={self.mean_auroc():.6f}"
        if self.id_accuracy is not None:
            summary += f" id_acc={self.id_accuracy:.6f}"
        return buf.getvalue() + summary + "\n"


def evaluate(id_scores, ood_sets, tpr=0.95, id_acc=None, n_bins=None):
    """Build an :class:`EvalReport` from ID scores and ``{name: ood_scores}``."""
    rep = EvalReport(tpr_level=tpr, id_accuracy=id_acc)
    for name, ood in ood_sets.items():
        rep.entries.append(OODResult(name, fpr_at_tpr(id_scores, ood, tpr), auroc(id_scores, ood)))
        if n_bins:
            rep.histograms[name] = histogram(ood, n_bins)
    if n_bins:
        rep.histograms["id"] = histogram(id_scores, n_bins)
    return rep
