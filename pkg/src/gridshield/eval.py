"""Metrics, sliding cross-validation, method comparison and the window sweep.

Anomalous samples are the positive class.  Fold ``f`` trains on
``[offset*f, offset*f + k1)`` and tests on the ``k2`` samples after it.
Reported wall times are zero unless timing is requested, so that report
files from two identical runs compare equal byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .attackgen import LabeledDataset
from .detector import CrossLayerEnsemble, EnsembleConfig, run_global_corrdet
from .gridmodel import GridCase
from .sestimator import detect_stream
from .traceio import atomic_write_text, header_line

__all__ = [
    "Scores",
    "FoldPlan",
    "FoldResult",
    "EvalReport",
    "Method",
    "score",
    "confusion",
    "max_workers",
    "cross_validate",
    "ensemble_predictor",
    "global_predictor",
    "se_predictor",
    "standard_methods",
    "compare_methods",
    "SweepRow",
    "SweepResult",
    "sweep_beta",
    "find_knee",
    "write_reports",
    "reports_to_csv",
    "reports_summary",
]

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "recall", "f1")
REPORT_FIELDS = ("method", "layer", "information", "fold", *METRICS, "tp", "fp", "tn", "fn", "wall_ms")


@dataclass(frozen=True)
class Scores:
    """Percentages plus the confusion counts they came from.

    ``flags`` names every metric whose denominator was zero (reported as 0).
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    flags: tuple[str, ...] = ()

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Scores":
        flags = []

        def ratio(num, den, name):
            if den == 0:
                flags.append(name)
                return 0.0
            return num / den

        total = tp + fp + tn + fn
        acc = ratio(tp + tn, total, "accuracy")
        p = ratio(tp, tp + fp, "precision")
        r = ratio(tp, tp + fn, "recall")
        f = ratio(2 * p * r, p + r, "f1")
        return cls(100 * acc, 100 * p, 100 * r, 100 * f, int(tp), int(fp), int(tn), int(fn), tuple(flags))

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    """``(tp, fp, tn, fn)`` with label 1 as the positive class."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in length")
    if not (np.isin(y, (0, 1)).all() and np.isin(p, (0, 1)).all()):
        raise ValueError("predictions and labels must be binary")
    p = p.astype(bool)
    y = y.astype(bool)
    return (int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y)))


def score(predictions, labels) -> Scores:
    return Scores.from_counts(*confusion(predictions, labels))


@dataclass(frozen=True)
class FoldPlan:
    folds: int = 10
    k1: int = 1800
    k2: int = 10800
    offset: int = 1000

    def __post_init__(self):
        if self.folds < 1 or self.k1 < 1 or self.k2 < 1 or self.offset < 0:
            raise ValueError(f"invalid fold plan {self}")

    @property
    def required(self) -> int:
        return self.offset * (self.folds - 1) + self.k1 + self.k2

    def ranges(self, n: int) -> list[tuple[slice, slice]]:
        if n < self.required:
            raise ValueError(f"dataset has {n} samples; {self.folds} folds need {self.required}")
        out = []
        for f in range(self.folds):
            a = self.offset * f
            out.append((slice(a, a + self.k1), slice(a + self.k1, a + self.k1 + self.k2)))
        return out


@dataclass
class FoldResult:
    fold: int
    scores: Scores
    wall_ms: float = 0.0


@dataclass
class EvalReport:
    method: str
    layer: str
    information: str
    folds: list[FoldResult] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f.scores, metric) for f in self.folds])

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean())

    def std(self, metric: str) -> float:
        """Population standard deviation over folds."""
        return float(self.values(metric).std())

    @property
    def totals(self) -> tuple[int, int, int, int]:
        s = [f.scores for f in self.folds]
        return (sum(x.tp for x in s), sum(x.fp for x in s), sum(x.tn for x in s), sum(x.fn for x in s))

    def summary(self) -> dict:
        return {
            "method": self.method,
            "layer": self.layer,
            "information": self.information,
            "folds": len(self.folds),
            **{m: {"mean": self.mean(m), "std": self.std(m)} for m in METRICS},
        }


@dataclass(frozen=True)
class Method:
    """A named detector applied to some channels of a dataset.

    ``predict(dataset, train, test)`` gets the channel-restricted dataset and
    the two index slices and returns 0/1 predictions for the test rows.
    """

    name: str
    layer: str
    information: str
    channels: tuple[str, ...]
    predict: Callable[[LabeledDataset, slice, slice], np.ndarray] = field(compare=False, repr=False)


def max_workers(limit: int | None = None) -> int:
    """Worker cap from ``GRIDSHIELD_THREADS`` (default: CPU count)."""
    env = os.environ.get("GRIDSHIELD_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ValueError("GRIDSHIELD_THREADS must be >= 1")
    return n if limit is None else max(1, min(n, limit))


def cross_validate(
    dataset: LabeledDataset,
    method: Method,
    plan: FoldPlan = FoldPlan(),
    record_timing: bool = False,
    workers: int | None = None,
) -> EvalReport:
    """Run ``method`` on every fold.  Folds are independent and may run on
    threads; results are assembled in fold order."""
    ranges = plan.ranges(len(dataset))
    ds = dataset.select(method.channels)

    def one(f: int) -> FoldResult:
        train, test = ranges[f]
        t0 = time.perf_counter()
        pred = method.predict(ds, train, test)
        ms = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0
        return FoldResult(f + 1, score(pred, ds.labels[test]), ms)

    n_workers = 1 if record_timing else max_workers(plan.folds) if workers is None else workers
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(one, range(plan.folds)))
    else:
        results = [one(f) for f in range(plan.folds)]
    return EvalReport(method.name, method.layer, method.information, results)


def ensemble_predictor(config: EnsembleConfig):
    def predict(ds: LabeledDataset, train: slice, test: slice) -> np.ndarray:
        ens = CrossLayerEnsemble(config, ds.bus_groups()).fit(ds.features[train], ds.labels[train])
        return ens.run(ds.features[test], start=test.start).predicted
    return predict


def global_predictor(config: EnsembleConfig):
    def predict(ds: LabeledDataset, train: slice, test: slice) -> np.ndarray:
        return run_global_corrdet(ds.features[train], ds.labels[train], ds.features[test], config).predicted
    return predict


def se_predictor(case: GridCase, p: float = 0.95):
    def predict(ds: LabeledDataset, train: slice, test: slice) -> np.ndarray:
        return detect_stream(case, ds.features[test], p)[0].astype(np.int8)
    return predict


_CHANNEL_LAYER = {"sg": "smart grid", "iat": "network", "td": "network", "pc": "network"}


def standard_methods(case: GridCase, config: EnsembleConfig, layout: str = "cross") -> list[Method]:
    """Comparison rows: SE, per-channel ECD-AS and cross-layer CECD-AS,
    or ECD-AS on packet counts for the PC layout."""
    if layout == "pc":
        return [Method("ECD-AS", "network", "PC", ("pc",), ensemble_predictor(config))]
    ens = ensemble_predictor(config)
    rows = [Method("SE", "smart grid", "SG", ("sg",), se_predictor(case))]
    for ch in ("sg", "iat", "td"):
        rows.append(Method("ECD-AS", _CHANNEL_LAYER[ch], ch.upper(), (ch,), ens))
    rows.append(Method("CECD-AS", "cross-layer", "[SG, IAT, TD]", ("sg", "iat", "td"), ens))
    return rows


def compare_methods(
    dataset: LabeledDataset,
    case: GridCase,
    config: EnsembleConfig,
    plan: FoldPlan = FoldPlan(),
    methods: Sequence[Method] | None = None,
    record_timing: bool = False,
) -> list[EvalReport]:
    """Cross-validate every method whose channels the dataset carries."""
    methods = standard_methods(case, config, dataset.layout) if methods is None else methods
    have = set(dataset.channels)
    out = []
    for m in methods:
        if not set(m.channels) <= have:
            warnings.warn(f"skipping {m.name}/{m.information}: dataset lacks {sorted(set(m.channels) - have)}")
            continue
        out.append(cross_validate(dataset, m, plan, record_timing))
    return out


@dataclass
class SweepRow:
    beta: int
    f1: float
    f1_std: float
    wall_ms: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    knee: int | None
    tolerance: float = 0.5

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["beta", "f1", "f1_std", "wall_ms", "knee"])
        for r in self.rows:
            w.writerow([r.beta, f"{r.f1:.6f}", f"{r.f1_std:.6f}", f"{r.wall_ms:.3f}", int(r.beta == self.knee)])
        return buf.getvalue()


def find_knee(betas: Sequence[int], f1: Sequence[float], tolerance: float = 0.5) -> int | None:
    """First window size whose F1 gain over the previous one is below ``tolerance``."""
    for i in range(1, len(betas)):
        if f1[i] - f1[i - 1] < tolerance:
            return int(betas[i])
    return None


def sweep_beta(
    dataset: LabeledDataset,
    config: EnsembleConfig,
    beta_values: Sequence[int],
    plan: FoldPlan = FoldPlan(),
    channels: Sequence[str] = ("sg", "iat", "td"),
    repeats: int = 5,
    tolerance: float = 0.5,
) -> SweepResult:
    """F1 and wall time of the ensemble for each window size.

    Timing runs are interleaved (every size once per round) and each fold
    keeps its fastest round, so a slow stretch on a shared machine does not
    single out one window size.  Scores are deterministic and taken from the
    first round.
    """
    if len(beta_values) == 0:
        raise ValueError("beta_values must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    methods = [
        Method("CECD-AS", "cross-layer", "+".join(channels), tuple(channels),
               ensemble_predictor(replace(config, beta=int(b))))
        for b in beta_values
    ]
    reports: list[EvalReport | None] = [None] * len(methods)
    times = np.full((repeats, len(methods), plan.folds), np.inf)
    for r in range(repeats):
        for i, m in enumerate(methods):
            rep = cross_validate(dataset, m, plan, record_timing=True)
            times[r, i] = [f.wall_ms for f in rep.folds]
            if reports[i] is None:
                reports[i] = rep
    rows = [
        SweepRow(int(b), rep.mean("f1"), rep.std("f1"), float(times[:, i].min(axis=0).sum()))
        for i, (b, rep) in enumerate(zip(beta_values, reports))
    ]
    knee = find_knee([r.beta for r in rows], [r.f1 for r in rows], tolerance)
    return SweepResult(rows, knee, tolerance)


def reports_to_csv(reports: Sequence[EvalReport], header: str = "") -> str:
    """Per-fold rows in the report schema."""
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for rep in reports:
        for f in rep.folds:
            s = f.scores
            w.writerow([
                rep.method, rep.layer, rep.information, f.fold,
                *(f"{getattr(s, m):.6f}" for m in METRICS),
                s.tp, s.fp, s.tn, s.fn, f"{f.wall_ms:.3f}",
            ])
    return buf.getvalue()


def reports_summary(reports: Sequence[EvalReport], config_sha: str = "", extra: dict | None = None) -> str:
    doc = {
        "generator": header_line(config_sha),
        **(extra or {}),
        "methods": [r.summary() for r in reports],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_reports(path_csv, path_json, reports, config_sha: str = "", extra: dict | None = None) -> None:
    atomic_write_text(path_csv, reports_to_csv(reports, header_line(config_sha)))
    atomic_write_text(path_json, reports_summary(reports, config_sha, extra))
