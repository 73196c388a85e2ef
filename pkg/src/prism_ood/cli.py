"""Command line interface: ``prism-ood {gen-data,train,score,eval,grad-check,ablate}``.

Run configuration is a flat ``key = value`` text file; ``#`` starts a
comment. Command-line flags override the file. Exit codes:

0 success, 1 missing file, 2 parse/format error, 3 dimension mismatch,
4 failed check or numerical failure.
"""
import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import data as data_mod
from .detection import DEFAULT_K, build_index, knn_scores
from .errors import ConfigError, DimensionError, FormatError, PrismError
from .metrics import evaluate, histogram_csv, id_accuracy
from .model import encode, init_model, predict
from .pipeline import per_sample_reg, run_benchmark
from .rng import Rng
from .training import TrainConfig, fit, grad_check

log = logging.getLogger("prism_ood")

EXIT_MISSING, EXIT_PARSE, EXIT_DIM, EXIT_CHECK = 1, 2, 3, 4
GRADCHECK_TOL = 1e-4

_SYNTH_KEYS = {f.name: f.type for f in fields(data_mod.SynthConfig)}
_TRAIN_KEYS = {("lambda" if f.name == "lam" else f.name): f.type for f in fields(TrainConfig)}
_OTHER_KEYS = {"k": int, "tpr": float, "data_dir": str, "out_dir": str}
KNOWN_KEYS = set(_SYNTH_KEYS) | set(_TRAIN_KEYS) | set(_OTHER_KEYS)


def _convert(key, raw):
    typ = {**_SYNTH_KEYS, **_TRAIN_KEYS, **_OTHER_KEYS}[key]
    typ = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}.get(typ, typ)
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _fmt(v):
    return ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)


def parse_run_config(text):
    """Parse ``key = value`` lines; unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, raw)
    return out


class RunConfig:
    """Resolved settings: file values, then flag overrides, then defaults."""

    def __init__(self, values):
        self.values = dict(values)

    @classmethod
    def load(cls, path, overrides=None):
        values = {}
        if path is not None:
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            with open(path) as fh:
                values = parse_run_config(fh.read())
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = v
        return cls(values)

    def _pick(self, keys):
        return {k: self.values[k] for k in keys if k in self.values}

    def synth(self):
        try:
            return data_mod.SynthConfig(**self._pick(_SYNTH_KEYS))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train(self, K=None):
        kw = self._pick(_TRAIN_KEYS)
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        if K is not None:
            kw["K"] = K
        try:
            return TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def seed(self):
        return self.values.get("seed", data_mod.SynthConfig.seed)

    def get(self, key, default):
        return self.values.get(key, default)

    def report(self, stream=None):
        """Print the resolved settings and seed (stderr keeps stdout artifacts clean)."""
        missing = sorted(KNOWN_KEYS - set(self.values))
        if missing:
            log.info("defaulted keys: %s", ", ".join(missing))
        items = " ".join(f"{k}={_fmt(self.values[k])}" for k in sorted(self.values))
        print(f"# resolved config: {items}", file=stream or sys.stderr)
        print(f"# seed: {self.seed}", file=stream or sys.stderr)


def _overrides(args):
    ov = {}
    for flag, key in (("seed", "seed"), ("k", "k"), ("tpr", "tpr"), ("lam", "lambda"), ("m", "M")):
        ov[key] = getattr(args, flag, None)
    return ov


def _resolve(args, defaults=None):
    cfg = RunConfig.load(getattr(args, "config", None), _overrides(args))
    for key, v in (defaults or {}).items():
        cfg.values.setdefault(key, v)
    # one seed drives both data and training
    cfg.values.setdefault("seed", cfg.seed)
    cfg.report()
    return cfg


def _need(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    cfg = _resolve(args)
    out = args.out or cfg.get("data_dir", "data")
    os.makedirs(out, exist_ok=True)
    for ds in data_mod.gen_synthetic(cfg.synth()):
        path = os.path.join(out, f"{ds.split}.prsm")
        data_mod.save_dataset(path, ds)
        print(f"wrote {path} ({len(ds)} samples)")
    return 0


def cmd_train(args):
    cfg = _resolve(args)
    data_dir = args.data or cfg.get("data_dir", "data")
    train = data_mod.load_dataset(_need(os.path.join(data_dir, "train.prsm")))
    tcfg = cfg.train(K=cfg.get("K", int(train.y.max()) + 1))
    model, tlog = fit(train, tcfg, callback=lambda r: log.info(
        "epoch %d ce=%.6f reg=%.6f total=%.6f acc=%.4f", r.epoch, r.ce, r.reg, r.total, r.acc))
    out = args.out or os.path.join(cfg.get("out_dir", "run"), "model.prsm")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    index = build_index(encode(model, train.X))
    data_mod.save_checkpoint(out, model, index)
    log_path = os.path.splitext(out)[0] + ".log.csv"
    tlog.to_csv(log_path)
    print(f"wrote {out} and {log_path}")
    return 0


def cmd_score(args):
    cfg = _resolve(args)
    model = data_mod.load_checkpoint(_need(args.checkpoint))
    index = data_mod.load_index(args.checkpoint)
    ds = data_mod.load_dataset(_need(args.data))
    if ds.X.shape[1] != model.D:
        raise DimensionError(f"dataset has D={ds.X.shape[1]}, checkpoint expects D={model.D}")
    k = cfg.get("k", DEFAULT_K)
    scores = knn_scores(index, encode(model, ds.X), k)
    out = args.out or os.path.splitext(args.data)[0] + ".scores"
    data_mod.save_scores(out, [data_mod.ScoreRecord(i, ds.split, s) for i, s in enumerate(scores)])
    reg = per_sample_reg(model, ds.X)
    data_mod.save_scores(out + ".reg", [data_mod.ScoreRecord(i, ds.split, r) for i, r in enumerate(reg)])
    msg = f"wrote {out} and {out}.reg ({len(ds)} samples, k={k})"
    if ds.split != "test_ood":
        msg += f" id_accuracy={id_accuracy(predict(model, ds.X), ds.y):.6f}"
    print(msg)
    return 0


def _score_values(path):
    return np.array([r.score for r in data_mod.load_scores(_need(path))])


def cmd_eval(args):
    tpr = args.tpr if args.tpr is not None else 0.95
    id_s = _score_values(args.id_scores)
    oods = {}
    for p in args.ood_scores:
        name = os.path.basename(p).split(".")[0]
        oods[name if name not in oods else p] = _score_values(p)
    rep = evaluate(id_s, oods, tpr=tpr, n_bins=args.bins)
    text = rep.to_csv()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        if args.bins:
            base = os.path.splitext(args.out)[0]
            for name, bins in rep.histograms.items():
                with open(f"{base}.hist.{name}.csv", "w") as fh:
                    fh.write(histogram_csv(bins))
    return 0


GRADCHECK_SIZES = {"D": 3, "L": 4, "hidden": (8,), "M": 2, "K": 2}


def cmd_grad_check(args):
    """Check on a small model; size keys absent from the config take GRADCHECK_SIZES.

    Central differences lose accuracy on coordinates whose gradient is near
    the 1e-8 relative-error floor, which large default models have plenty of.
    """
    cfg = _resolve(args, GRADCHECK_SIZES)
    tcfg = cfg.train()
    D = cfg.get("D", 3)
    model = init_model(D, tcfg.K, tcfg.M, L=tcfg.L, hidden=tcfg.hidden, seed=tcfg.seed,
                       init_variant=tcfg.init_variant)
    rng = Rng(tcfg.seed + 100)
    n = min(tcfg.batch_size, 32)
    X = rng.normal((n, D))
    y = np.minimum((rng.uniform(n) * tcfg.K).astype(np.int64), tcfg.K - 1)
    errs = grad_check(model, (X, y), tcfg, eps=1e-5, max_coords=args.max_coords)
    ok = True
    for group, err in errs.items():
        status = "PASS" if err < GRADCHECK_TOL else "FAIL"
        ok &= status == "PASS"
        print(f"{group},{err:.3e},{status}")
    print("grad-check " + ("passed" if ok else "failed"))
    return 0 if ok else EXIT_CHECK


def cmd_ablate(args):
    cfg = _resolve(args)
    key = {"lambda": "lambda", "m": "M", "M": "M"}[args.sweep]
    try:
        values = [float(v) if key == "lambda" else int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep values {args.values!r}") from None
    synth = cfg.synth()
    datasets = data_mod.gen_synthetic(synth)
    k, tpr = cfg.get("k", DEFAULT_K), cfg.get("tpr", 0.95)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fpr_col = f"fpr_at_{round(tpr * 100):d}"
    w.writerow(["sweep", "value", "id_accuracy", fpr_col, "auroc", "final_train_reg", "mean_reg_id", "mean_reg_ood"])
    for v in values:
        run = RunConfig({**cfg.values, key: v})
        res = run_benchmark(synth, run.train(K=synth.K), k=k, tpr=tpr, datasets=datasets)
        w.writerow([key, v, f"{res.id_accuracy:.6f}", f"{res.fpr:.6f}", f"{res.auroc:.6f}",
                    f"{res.log.records[-1].reg:.9g}" if res.log.records else "nan",
                    f"{res.reg_id.mean():.9g}", f"{res.reg_ood.mean():.9g}"])
    text = buf.getvalue()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="prism-ood", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key=value run configuration")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", help="data directory or dataset file")

    sp = sub.add_parser("gen-data", help="generate the synthetic ID/OOD splits")
    common(sp, data=False)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model on <data>/train.prsm")
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--m", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="kNN scores (and per-sample reg terms) for a dataset")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--k", type=int)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="FPR@TPR and AUROC from score files")
    sp.add_argument("id_scores")
    sp.add_argument("ood_scores", nargs="+")
    sp.add_argument("--tpr", type=float)
    sp.add_argument("--out")
    sp.add_argument("--bins", type=int, default=0, help="also export score histograms")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check", help="finite-difference check of the analytic gradients")
    common(sp, data=False)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--m", type=int)
    sp.add_argument("--max-coords", type=int, default=None)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("ablate", help="sweep lambda or M on the synthetic benchmark")
    common(sp, data=False)
    sp.add_argument("--sweep", choices=("lambda", "m", "M"), required=True)
    sp.add_argument("--values", required=True, help="comma separated values")
    sp.add_argument("--k", type=int)
    sp.add_argument("--tpr", type=float)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except DimensionError as exc:
        print(f"error: dimension-mismatch: {exc}", file=sys.stderr)
        return EXIT_DIM
    except (ConfigError, FormatError) as exc:
        print(f"error: parse: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PrismError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
