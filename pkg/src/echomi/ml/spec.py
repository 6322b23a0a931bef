"""Model specifications, hyperparameter domains and search grids."""

from __future__ import annotations

import itertools
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

KINDS = ("DT", "RF", "SVM", "KNN", "CNN1D")
KIND_ALIASES = {"dt": "DT", "rf": "RF", "svm": "SVM", "knn": "KNN", "cnn": "CNN1D",
                "cnn1d": "CNN1D"}

_BOOL = (False, True)
_MAX_FEATURES = ("auto", "log2", "sqrt", "all")

# Search grids, in enumeration order (ties go to the first cell).
GRIDS = {
    "DT": {
        "criterion": ["gini", "entropy"],
        "max_features": ["auto", "log2", "sqrt"],
        "splitter": ["random", "best"],
    },
    "RF": {
        "bootstrap": [True, False],
        "class_weight": ["balanced", "balanced_subsample"],
        "criterion": ["gini", "entropy"],
        "max_features": ["auto", "log2", "sqrt"],
        "warm_start": [True, False],
        "n_trees": list(range(5, 51, 5)),
    },
    "SVM": {
        "kernel": ["rbf", "linear"],
        "C": [1.0, 10.0, 100.0, 1000.0],
        "gamma": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
    },
    "KNN": {
        "algorithm": ["auto", "brute", "balltree", "kdtree"],
        "weights": ["uniform", "distance"],
        "k": list(range(5, 31, 5)),
        "metric": ["manhattan", "euclidean"],
    },
    "CNN1D": {
        "lr": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
        "filters": [4, 8, 12, 16, 24, 32],
        "kernel": list(range(3, 16, 2)),
        "epochs": [25, 50, 75, 100],
    },
}

DEFAULTS = {
    "DT": {"criterion": "gini", "max_features": "auto", "splitter": "best"},
    "RF": {"bootstrap": True, "class_weight": None, "criterion": "gini",
           "max_features": "auto", "warm_start": False, "n_trees": 10},
    "SVM": {"kernel": "rbf", "C": 1.0, "gamma": 1e-1},
    "KNN": {"algorithm": "auto", "weights": "uniform", "k": 5, "metric": "euclidean"},
    "CNN1D": {"lr": 1e-3, "filters": 8, "kernel": 3, "epochs": 50, "dense": 16,
              "padding": "valid"},
}


def _choice(*values):
    def check(v):
        return v in values
    check.desc = "one of " + ", ".join(json.dumps(v) for v in values)
    return check


def _int_range(lo, hi, odd=False):
    def check(v):
        ok = isinstance(v, (int, np.integer)) and not isinstance(v, bool) and lo <= v <= hi
        return ok and (not odd or v % 2 == 1)
    check.desc = f"{'odd ' if odd else ''}integer in [{lo}, {hi}]"
    return check


def _float_range(lo, hi):
    def check(v):
        return (isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)
                and lo <= float(v) <= hi)
    check.desc = f"number in [{lo:g}, {hi:g}]"
    return check


# Admissible values: the grid lists, their numeric ranges, plus "all" features,
# no class weighting, k >= 1 and single-tree forests.
DOMAINS = {
    "DT": {"criterion": _choice("gini", "entropy"), "max_features": _choice(*_MAX_FEATURES),
           "splitter": _choice("random", "best")},
    "RF": {"bootstrap": _choice(*_BOOL),
           "class_weight": _choice("balanced", "balanced_subsample", None),
           "criterion": _choice("gini", "entropy"), "max_features": _choice(*_MAX_FEATURES),
           "warm_start": _choice(*_BOOL), "n_trees": _int_range(1, 50)},
    "SVM": {"kernel": _choice("rbf", "linear"), "C": _float_range(1.0, 1000.0),
            "gamma": _float_range(1e-6, 1e-1)},
    "KNN": {"algorithm": _choice("auto", "brute", "balltree", "kdtree"),
            "weights": _choice("uniform", "distance"), "k": _int_range(1, 30),
            "metric": _choice("manhattan", "euclidean")},
    "CNN1D": {"lr": _float_range(1e-7, 1e-1), "filters": _int_range(1, 32),
              "kernel": _int_range(1, 15, odd=True), "epochs": _int_range(1, 100),
              "dense": _int_range(1, 64), "padding": _choice("valid", "same")},
}


def canonical_kind(kind):
    if kind in KINDS:
        return kind
    if isinstance(kind, str) and kind.lower() in KIND_ALIASES:
        return KIND_ALIASES[kind.lower()]
    raise ValidationError(f"unknown model kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        domain = DOMAINS[kind]
        unknown = sorted(set(self.params) - set(domain))
        if unknown:
            raise ValidationError(f"{kind}: unknown hyperparameters {unknown}")
        merged = dict(DEFAULTS[kind])
        merged.update(self.params)
        for key, value in merged.items():
            if not domain[key](value):
                raise ValidationError(f"{kind}: {key}={value!r} outside domain ({domain[key].desc})")
        for key in ("C", "gamma", "lr"):
            if key in merged:
                merged[key] = float(merged[key])
        object.__setattr__(self, "params", merged)
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self):
        return {"kind": self.kind, "params": dict(sorted(self.params.items())), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))


def rng_stream(seed, name):
    """Independent generator for one named consumer of a spec's seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def resolve_max_features(rule, n_features):
    if rule in ("auto", "sqrt"):
        return max(1, int(np.sqrt(n_features)))
    if rule == "log2":
        return max(1, int(np.log2(n_features)))
    return n_features


def canonical_params(kind, params, n_features=None):
    """Key under which two cells provably train the same model.

    Options with no effect on the fitted model (warm_start, the k-NN search
    algorithm, gamma for a linear kernel) are dropped, and max_features is
    resolved to a count when the feature length is known.
    """
    p = dict(params)
    if kind == "RF":
        p.pop("warm_start", None)
    if kind == "KNN":
        p.pop("algorithm", None)
    if kind == "SVM" and p.get("kernel") == "linear":
        p.pop("gamma", None)
    if kind in ("DT", "RF") and "max_features" in p:
        mf = p["max_features"]
        p["max_features"] = (resolve_max_features(mf, n_features) if n_features
                             else ("sqrt" if mf == "auto" else mf))
    return json.dumps(p, sort_keys=True)


def cnn_arch_ok(n_features, params):
    from .cnn import output_lengths
    try:
        return output_lengths(n_features, params["kernel"], params.get("padding", "valid"))[-1] >= 1
    except ValidationError:
        return False


def expand_grid(kind, grid=None, n_features=None, seed=0):
    """Enumerate a grid into ModelSpecs; equivalent cells keep their first instance.

    For the CNN, cells whose kernel collapses the signal under valid padding
    are dropped; if none survive (6-feature views), same padding is used.
    """
    kind = canonical_kind(kind)
    grid = GRIDS[kind] if grid is None else grid
    if not grid:
        raise ValidationError(f"{kind}: empty grid")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or not grid[k]:
            raise ValidationError(f"{kind}: grid entry {k!r} must be a non-empty list")
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    if kind == "CNN1D" and n_features is not None:
        kept = [c for c in cells if cnn_arch_ok(n_features, {**DEFAULTS["CNN1D"], **c})]
        if not kept and "padding" not in grid:
            cells = [{**c, "padding": "same"} for c in cells]
            kept = [c for c in cells if cnn_arch_ok(n_features, {**DEFAULTS["CNN1D"], **c})]
        cells = kept
    specs, seen = [], set()
    for cell in cells:
        spec = ModelSpec(kind, cell, seed)
        key = canonical_params(kind, spec.params, n_features)
        if key in seen:
            continue
        seen.add(key)
        specs.append(spec)
    if not specs:
        raise ValidationError(f"{kind}: grid has no admissible cell")
    return specs
