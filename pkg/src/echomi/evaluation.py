"""Stratified cross-validation with inner grid search, metrics and multi-view fusion."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import A2C, A4C, MI, VIEW_SEGMENTS, VIEWS, fuse_view_labels
from .errors import EchomiError, TrainingError, ValidationError
from .ml import ModelSpec, expand_grid, predict_batch, train
from .ml.spec import GRIDS, canonical_kind, rng_stream

MODES = ("A4C", "A2C", "multiview_concat", "multiview_or")
METRICS = ("sensitivity", "specificity", "precision", "accuracy", "f1", "f2")
_MODE_ALIASES = {m.lower(): m for m in MODES}


def canonical_mode(mode):
    try:
        return _MODE_ALIASES[str(mode).lower()]
    except KeyError:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}") from None


# ----------------------------------------------------------------------------- folds

@dataclass
class FoldPlan:
    k: int
    folds: list  # (train_idx, test_idx) per fold
    seed: int

    def test_fold_of(self, n):
        out = np.full(n, -1)
        for i, (_, test) in enumerate(self.folds):
            out[test] = i
        return out


def stratified_kfold(labels, k=5, seed=0) -> FoldPlan:
    """Seeded shuffle within each class, then deal members to folds round-robin.

    The dealing position carries over from one class to the next so fold
    sizes stay within one sample of each other.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ValidationError("need at least 2 folds")
    classes, counts = np.unique(y, return_counts=True)
    small = [(c.item(), int(n)) for c, n in zip(classes, counts) if n < k]
    if small:
        raise ValidationError(f"every class needs >= {k} members for {k}-fold CV; got {small}")
    assign = np.empty(len(y), dtype=int)
    start = 0
    for c in classes:
        members = np.flatnonzero(y == c)
        members = members[rng_stream(seed, f"folds/{c.item()}").permutation(len(members))]
        assign[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    folds = []
    for f in range(k):
        test = np.flatnonzero(assign == f)
        train_idx = np.flatnonzero(assign != f)
        folds.append((train_idx, test))
    return FoldPlan(k, folds, int(seed))


# ----------------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValidationError("confusion-matrix counts must be non-negative")

    @classmethod
    def from_labels(cls, truth, pred):
        t = np.asarray(truth) == MI
        p = np.asarray(pred) == MI
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)),
                   int(np.sum(t & ~p)))

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp,
                               self.fn + other.fn)

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    """Percentages; None marks a metric whose denominator is zero."""
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    accuracy: float | None
    f1: float | None
    f2: float | None

    def to_dict(self, digits=2):
        return {m: (None if getattr(self, m) is None else round(getattr(self, m), digits))
                for m in METRICS}


def _ratio(num, den):
    return 100.0 * num / den if den > 0 else None


def f_beta(precision, sensitivity, beta):
    if precision is None or sensitivity is None:
        return None
    b2 = beta * beta
    den = b2 * precision + sensitivity
    return (1 + b2) * precision * sensitivity / den if den > 0 else 0.0


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    acc = _ratio(cm.tp + cm.tn, cm.total)
    return MetricsReport(sens, spec, prec, acc, f_beta(prec, sens, 1.0), f_beta(prec, sens, 2.0))


def or_fuse(pred_a4c, pred_a2c):
    """MI iff either view says MI; works elementwise on arrays."""
    if np.ndim(pred_a4c) == 0 and np.ndim(pred_a2c) == 0:
        return fuse_view_labels(int(pred_a4c), int(pred_a2c))
    return ((np.asarray(pred_a4c) == MI) | (np.asarray(pred_a2c) == MI)).astype(int)


# ----------------------------------------------------------------------------- data

@dataclass
class FeatureTable:
    """One row per subject: per-view feature vectors (NaN when the view is absent)."""
    subjects: list
    phi: dict  # view -> (n, 6)
    labels: dict  # view -> (n,) int, -1 when absent
    fused: np.ndarray

    def __post_init__(self):
        n = len(self.subjects)
        for v in VIEWS:
            self.phi.setdefault(v, np.full((n, len(VIEW_SEGMENTS[v])), np.nan))
            self.labels.setdefault(v, np.full(n, -1))
            self.phi[v] = np.asarray(self.phi[v], dtype=float).reshape(n, len(VIEW_SEGMENTS[v]))
            self.labels[v] = np.asarray(self.labels[v], dtype=int)
        self.fused = np.asarray(self.fused, dtype=int)

    def __len__(self):
        return len(self.subjects)

    def has(self, view):
        return np.isfinite(self.phi[view]).all(axis=1) & (self.labels[view] >= 0)

    @classmethod
    def from_rows(cls, rows):
        """rows: iterable of (subject, view, phi, view_label, fused_label)."""
        subjects, data = [], {}
        for sid, view, phi, lab, fused in rows:
            if sid not in data:
                subjects.append(sid)
                data[sid] = {"fused": int(fused)}
            data[sid][view] = (np.asarray(phi, dtype=float), int(lab))
        n = len(subjects)
        phi = {v: np.full((n, len(VIEW_SEGMENTS[v])), np.nan) for v in VIEWS}
        labels = {v: np.full(n, -1) for v in VIEWS}
        for i, sid in enumerate(subjects):
            for v in VIEWS:
                if v in data[sid]:
                    phi[v][i], labels[v][i] = data[sid][v]
        fused = np.array([data[s]["fused"] for s in subjects], dtype=int)
        return cls(subjects, phi, labels, fused)

    @staticmethod
    def columns():
        cols = ["subject", "label_fused"]
        for v in VIEWS:
            cols.append(f"label_{v}")
            cols += [f"{v}_s{k}" for k in VIEW_SEGMENTS[v]]
        return cols

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for i, sid in enumerate(self.subjects):
            row = [sid, int(self.fused[i])]
            for v in VIEWS:
                row.append(int(self.labels[v][i]) if self.labels[v][i] >= 0 else "")
                row += ["" if not np.isfinite(x) else repr(float(x)) for x in self.phi[v][i]]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, source="features.csv"):
        reader = csv.DictReader(io.StringIO(text))
        need = set(cls.columns())
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            missing = sorted(need - set(reader.fieldnames or []))
            raise ValidationError(f"{source}: missing columns {missing}")
        rows = list(reader)
        n = len(rows)
        phi = {v: np.full((n, 6), np.nan) for v in VIEWS}
        labels = {v: np.full(n, -1) for v in VIEWS}
        fused = np.zeros(n, dtype=int)
        subjects = []
        for i, r in enumerate(rows):
            try:
                subjects.append(r["subject"])
                fused[i] = int(r["label_fused"])
                for v in VIEWS:
                    if r[f"label_{v}"] != "":
                        labels[v][i] = int(r[f"label_{v}"])
                    for j, k in enumerate(VIEW_SEGMENTS[v]):
                        cell = r[f"{v}_s{k}"]
                        phi[v][i, j] = float(cell) if cell != "" else np.nan
            except ValueError as exc:
                raise ValidationError(f"{source}: line {i + 2}: {exc}") from None
        return cls(subjects, phi, labels, fused)


def mode_data(table: FeatureTable, mode):
    """(row indices, X, y) for a single-view or concatenated mode."""
    mode = canonical_mode(mode)
    if mode in VIEWS:
        rows = np.flatnonzero(table.has(mode))
        return rows, table.phi[mode][rows], table.labels[mode][rows]
    rows = np.flatnonzero(table.has(A4C) & table.has(A2C))
    X = np.hstack([table.phi[A4C][rows], table.phi[A2C][rows]])
    return rows, X, table.fused[rows]


# ----------------------------------------------------------------------------- search

@dataclass
class GridSpec:
    kind: str
    grid: dict = None
    metric: str = "f1"

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.grid is None:
            self.grid = GRIDS[self.kind]
        if self.metric not in METRICS:
            raise ValidationError(f"selection metric must be one of {METRICS}")
        if not self.grid:
            raise ValidationError("empty grid")

    def cells(self, n_features, seed):
        return expand_grid(self.kind, self.grid, n_features, seed)


class AccessLog:
    """Records which rows each stage of an experiment was handed."""

    def __init__(self):
        self.events = []

    def record(self, fold, stage, rows):
        self.events.append((fold, stage, np.asarray(rows).copy()))


def _score_cell(spec, X, y, plan, metric):
    values = []
    for tr, te in plan.folds:
        try:
            model = train(spec, X[tr], y[tr])
        except (TrainingError, ValidationError):
            return None
        pred, _ = predict_batch(model, X[te])
        value = getattr(compute_metrics(ConfusionMatrix.from_labels(y[te], pred)), metric)
        values.append(0.0 if value is None else value)
    return float(np.mean(values))


def grid_search(grid: GridSpec, X, y, inner_k=5, seed=0, jobs=1):
    """Best spec by mean inner-fold metric (undefined counts as 0); first cell wins ties.

    Returns (best spec, [(spec, score or None), ...]).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    plan = stratified_kfold(y, inner_k, seed)
    specs = grid.cells(X.shape[1], seed)
    if jobs == 1 or len(specs) == 1:
        scores = [_score_cell(s, X, y, plan, grid.metric) for s in specs]
    else:
        from joblib import Parallel, delayed
        scores = Parallel(n_jobs=jobs)(delayed(_score_cell)(s, X, y, plan, grid.metric)
                                       for s in specs)
    table = list(zip(specs, scores))
    valid = [(i, s) for i, s in enumerate(scores) if s is not None]
    if not valid:
        raise TrainingError(f"{grid.kind}: no grid cell could be trained")
    best_i = max(valid, key=lambda t: (t[1], -t[0]))[0]
    return specs[best_i], table


# ----------------------------------------------------------------------------- experiments

@dataclass
class FoldResult:
    fold: int
    cm: ConfusionMatrix
    metrics: MetricsReport
    selected: dict  # view or "model" -> ModelSpec
    n_train: int
    n_test: int

    def to_dict(self):
        return {"fold": self.fold, "confusion": self.cm.to_dict(),
                "metrics": self.metrics.to_dict(), "n_train": self.n_train,
                "n_test": self.n_test,
                "selected": {k: v.to_dict() for k, v in sorted(self.selected.items())}}


@dataclass
class ExperimentResult:
    mode: str
    kind: str
    seed: int
    folds: list
    pooled_cm: ConfusionMatrix
    pooled: MetricsReport
    predictions: list = field(default_factory=list)  # dict per subject

    def to_dict(self):
        return {"mode": self.mode, "model": self.kind, "seed": self.seed,
                "pooled": {"confusion": self.pooled_cm.to_dict(),
                           "metrics": self.pooled.to_dict()},
                "folds": [f.to_dict() for f in self.folds],
                "predictions": self.predictions}


def _inner_seed(seed, fold, view):
    return int(rng_stream(seed, f"inner/{fold}/{view}").integers(2 ** 31))


def run_experiment(table: FeatureTable, mode, grid, seed=0, k=5, inner_k=5, jobs=1,
                   access_log: AccessLog | None = None) -> ExperimentResult:
    """Outer stratified k-fold; per fold grid search + refit on the training split only."""
    mode = canonical_mode(mode)
    grid = grid if isinstance(grid, GridSpec) else GridSpec(grid)
    if mode == "multiview_or":
        rows = np.flatnonzero(table.has(A4C) & table.has(A2C))
        y = table.fused[rows]
        views = {v: (table.phi[v][rows], table.labels[v][rows]) for v in VIEWS}
    else:
        rows, X, y = mode_data(table, mode)
        views = {"model": (X, y)}
    if len(rows) == 0:
        raise ValidationError(f"{mode}: no subject has the required view(s)")
    plan = stratified_kfold(y, k, seed)
    folds, pooled = [], ConfusionMatrix()
    pred_all = np.zeros(len(rows), dtype=int)
    score_all = {v: np.zeros(len(rows)) for v in views}
    label_all = {v: np.zeros(len(rows), dtype=int) for v in views}
    fold_of = plan.test_fold_of(len(rows))
    for f, (tr, te) in enumerate(plan.folds):
        selected, preds = {}, {}
        for v, (Xv, yv) in views.items():
            if access_log is not None:
                access_log.record(f, f"search/{v}", rows[tr])
            try:
                best, _ = grid_search(grid, Xv[tr], yv[tr], inner_k, _inner_seed(seed, f, v), jobs)
            except EchomiError as exc:
                raise type(exc)(f"{mode}, fold {f + 1}, {v}: {exc}") from None
            if access_log is not None:
                access_log.record(f, f"fit/{v}", rows[tr])
            model = train(best, Xv[tr], yv[tr])
            if access_log is not None:
                access_log.record(f, f"predict/{v}", rows[te])
            lab, sc = predict_batch(model, Xv[te])
            selected[v], preds[v] = best, lab
            label_all[v][te], score_all[v][te] = lab, sc
        pred = or_fuse(preds[A4C], preds[A2C]) if mode == "multiview_or" else preds["model"]
        pred_all[te] = pred
        cm = ConfusionMatrix.from_labels(y[te], pred)
        pooled = pooled + cm
        folds.append(FoldResult(f + 1, cm, compute_metrics(cm), selected, len(tr), len(te)))
    predictions = []
    for i, r in enumerate(rows):
        rec = {"subject": table.subjects[r], "fold": int(fold_of[i]) + 1, "truth": int(y[i]),
               "pred": int(pred_all[i])}
        for v in views:
            key = "" if v == "model" else f"_{v}"
            rec[f"score{key}"] = round(float(score_all[v][i]), 6)
            if v != "model":
                rec[f"pred_{v}"] = int(label_all[v][i])
                rec[f"truth_{v}"] = int(views[v][1][i])
        predictions.append(rec)
    return ExperimentResult(mode, grid.kind, int(seed), folds, pooled, compute_metrics(pooled),
                            predictions)


# ----------------------------------------------------------------------------- reports

def report_json(results):
    return json.dumps([r.to_dict() for r in results], sort_keys=True, indent=1) + "\n"


def metrics_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "model", "scope", "tp", "tn", "fp", "fn"] + list(METRICS))
    for r in results:
        scopes = [("pooled", r.pooled_cm, r.pooled)] + [(f"fold{f.fold}", f.cm, f.metrics)
                                                        for f in r.folds]
        for scope, cm, m in scopes:
            d = m.to_dict()
            w.writerow([r.mode, r.kind, scope, cm.tp, cm.tn, cm.fp, cm.fn]
                       + ["" if d[k] is None else f"{d[k]:.2f}" for k in METRICS])
    return buf.getvalue()


def selected_params_json(results):
    out = {}
    for r in results:
        out.setdefault(r.mode, {})[r.kind] = [
            {"fold": f.fold, **{k: v.to_dict() for k, v in sorted(f.selected.items())}}
            for f in r.folds]
    return json.dumps(out, sort_keys=True, indent=1) + "\n"


def f1_chart_svg(results, path):
    """Grouped bar chart of pooled F1 per model and mode."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    modes = [m for m in MODES if any(r.mode == m for r in results)]
    kinds = []
    for r in results:
        if r.kind not in kinds:
            kinds.append(r.kind)
    value = {(r.mode, r.kind): r.pooled.f1 for r in results}
    with matplotlib.rc_context({"svg.hashsalt": "echomi", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(modes) * max(1, len(kinds)) / 2, 3.2))
        width = 0.8 / max(1, len(kinds))
        x = np.arange(len(modes))
        for j, kind in enumerate(kinds):
            heights = [value.get((m, kind)) or 0.0 for m in modes]
            ax.bar(x + (j - (len(kinds) - 1) / 2) * width, heights, width, label=kind)
        ax.set_xticks(x)
        ax.set_xticklabels(modes)
        ax.set_ylabel("F1 (%)")
        ax.set_ylim(0, 100)
        ax.legend(loc="lower right", fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
