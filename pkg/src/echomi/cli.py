"""Command-line entry point: one subcommand per pipeline stage.

Exit status: 0 success, 1 invalid input (bad flags, manifest, config), 2 runtime failure.
Every run writes ``run.json`` (inputs, seed, versions, timings) into its output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EchomiError, ValidationError

MODE_CHOICES = ("a4c", "a2c", "multiview_concat", "multiview_or")
MODEL_CHOICES = ("dt", "rf", "svm", "knn", "cnn", "all")
CONFIG_KEYS = {"chan_vese", "grids", "synth", "mode", "model", "seed", "out", "init_scale"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


# ----------------------------------------------------------------------------- helpers

def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"{p}: top level must be an object")
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"{p}: unknown config keys {unknown}; allowed {sorted(CONFIG_KEYS)}")
    return cfg


def _resolve(args, cfg, name, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _chan_vese(cfg):
    from .contour import ChanVeseParams
    return ChanVeseParams.from_dict(cfg.get("chan_vese", {}))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import importlib.metadata as md
    out = {"echomi": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "scikit-image", "Pillow", "matplotlib", "joblib", "scikit-fmm"):
        try:
            out[dist] = md.version(dist)
        except md.PackageNotFoundError:
            out[dist] = None
    return out


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _modes(value):
    from .evaluation import MODES, canonical_mode
    if value in (None, "all"):
        return list(MODES)
    return [canonical_mode(value)]


def _kinds(value):
    from .ml import KINDS, canonical_kind
    if value in (None, "all"):
        return list(KINDS)
    return [canonical_kind(value)]


def _grid(cfg, kind):
    from .evaluation import GridSpec
    from .ml import canonical_kind
    grids = cfg.get("grids", {})
    if not isinstance(grids, dict):
        raise ValidationError("config 'grids' must map model kinds to grids")
    override = {canonical_kind(k): v for k, v in grids.items()}.get(kind)
    return GridSpec(kind, override)


# ----------------------------------------------------------------------------- recordings

def _load_manifest(args):
    from .dataio import load_manifest
    if not args.manifest:
        raise ValidationError("--manifest is required")
    return load_manifest(args.manifest)


def _segment_points(manifest, boundaries_dir, cfg, jobs, overlays_dir=None):
    """kappa tracks per manifest entry, reusing boundary files already on disk."""
    from .dataio import load_recording
    from .pipeline import manifest_items, process_items
    from .render import (segment_points_from_record, write_boundaries, write_overlays)

    items = manifest_items(manifest)
    boundaries_dir = Path(boundaries_dir)
    cached, todo = {}, []
    for i, it in enumerate(items):
        path = boundaries_dir / f"{it[0]}_{it[1]}.json"
        if path.is_file() and overlays_dir is None:
            cached[i] = segment_points_from_record(json.loads(path.read_text()))
        else:
            todo.append(i)
    params = _chan_vese(cfg)
    init_scale = float(cfg.get("init_scale", 0.5))
    results = process_items([items[i] for i in todo], params, jobs, init_scale)
    notes = []
    for i, res in zip(todo, results):
        write_boundaries(res, boundaries_dir)
        if overlays_dir is not None:
            write_overlays(load_recording(items[i][2]), res,
                           Path(overlays_dir) / f"{items[i][0]}_{items[i][1]}")
        cached[i] = res.segment_points()
        notes += [f"{items[i][0]}/{items[i][1]}: {w}" for w in res.warnings]
    return items, [cached[i] for i in range(len(items))], notes


def _feature_rows(items, tracks):
    from .kinematics import features_from_points
    return [(it[0], it[1], features_from_points(pts, it[1]).phi, it[3], it[4])
            for it, pts in zip(items, tracks)]


def _feature_table(args, cfg, out, jobs):
    """FeatureTable from --features CSV or by running the pipeline on --manifest."""
    from .evaluation import FeatureTable
    from .render import write_phi_csv

    if getattr(args, "features", None):
        p = Path(args.features)
        if not p.is_file():
            raise ValidationError(f"features file not found: {p}")
        return FeatureTable.from_csv(p.read_text(encoding="utf-8"), str(p)), [str(p)]
    manifest = _load_manifest(args)
    items, tracks, _ = _segment_points(manifest, out / "boundaries", cfg, jobs)
    rows = _feature_rows(items, tracks)
    table = FeatureTable.from_rows(rows)
    _write_text(out / "features.csv", table.to_csv())
    write_phi_csv([(r[0], r[1], r[2]) for r in rows], out / "phi.csv")
    return table, [str(manifest.path)]


# ----------------------------------------------------------------------------- subcommands

def cmd_synth(args, cfg, out, seed, jobs, info):
    from .synth import SynthConfig, generate_cohort
    base = SynthConfig()
    overrides = dict(cfg.get("synth", {}))
    if "size" in overrides:
        overrides["size"] = tuple(overrides["size"])
    if args.noise is not None:
        overrides["noise"] = args.noise
    unknown = sorted(set(overrides) - set(SynthConfig.__dataclass_fields__))
    if "hypokinesis" in overrides:
        raise ValidationError("hypokinesis is assigned per subject by the cohort generator")
    if unknown:
        raise ValidationError(f"unknown synth parameters {unknown}")
    try:
        base = replace(base, **overrides)
    except TypeError as exc:
        raise ValidationError(f"synth config: {exc}") from None
    cohort = generate_cohort(args.n_healthy, args.n_mi, base, seed, out_dir=out,
                             attenuation=args.attenuation, fmt=args.format)
    info["outputs"] = [str(cohort.manifest_path)]
    print(f"wrote {len(cohort.items)} recordings; manifest {cohort.manifest_path}")
    return 0


def cmd_segment(args, cfg, out, seed, jobs, info):
    manifest = _load_manifest(args)
    info["inputs"] = {str(manifest.path): _sha256(manifest.path)}
    overlays = None if args.no_overlays else out / "overlays"
    items, _, notes = _segment_points(manifest, out / "boundaries", cfg, jobs, overlays)
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    info["warnings"] = notes
    print(f"segmented {len(items)} recordings into {out / 'boundaries'}")
    return 0


def cmd_trace(args, cfg, out, seed, jobs, info):
    from .kinematics import view_traces
    from .render import displacement_svg, write_displacement_csv

    manifest = _load_manifest(args)
    info["inputs"] = {str(manifest.path): _sha256(manifest.path)}
    boundaries = Path(args.boundaries) if args.boundaries else out / "boundaries"
    items, tracks, _ = _segment_points(manifest, boundaries, cfg, jobs)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    by_subject = {}
    for it, pts in zip(items, tracks):
        traces, _ = view_traces(pts, it[1])
        write_displacement_csv(traces, out / "traces" / f"{it[0]}_{it[1]}.csv")
        by_subject.setdefault(it[0], {})[it[1]] = traces
    for sid, views in by_subject.items():
        displacement_svg(views, out / "traces" / f"{sid}.svg")
    print(f"wrote displacement curves for {len(items)} recordings to {out / 'traces'}")
    return 0


def cmd_features(args, cfg, out, seed, jobs, info):
    table, inputs = _feature_table(args, cfg, out, jobs)
    info["inputs"] = {p: _sha256(p) for p in inputs}
    print(f"wrote features for {len(table)} subjects to {out / 'features.csv'}")
    return 0


def cmd_train(args, cfg, out, seed, jobs, info):
    from .dataio import VIEWS
    from .evaluation import grid_search, mode_data
    from .ml import model_to_json, train

    table, inputs = _feature_table(args, cfg, out, jobs)
    info["inputs"] = {p: _sha256(p) for p in inputs}
    modes = _modes(_resolve(args, cfg, "mode", "multiview_concat"))
    written = []
    for mode in modes:
        for kind in _kinds(_resolve(args, cfg, "model", "rf")):
            grid = _grid(cfg, kind)
            if mode == "multiview_or":
                targets = [(v, table.phi[v][table.has(v)], table.labels[v][table.has(v)])
                           for v in VIEWS]
            else:
                _, X, y = mode_data(table, mode)
                targets = [(None, X, y)]
            for view, X, y in targets:
                best, _ = grid_search(grid, X, y, 5, seed, jobs)
                model = train(best, X, y)
                name = f"{mode}_{kind}" + (f"_{view}" if view else "") + ".json"
                _write_text(out / "models" / name, model_to_json(model))
                written.append(str(out / "models" / name))
    info["outputs"] = written
    print("\n".join(f"wrote {w}" for w in written))
    return 0


def cmd_evaluate(args, cfg, out, seed, jobs, info):
    from .evaluation import (f1_chart_svg, metrics_csv, report_json, run_experiment,
                             selected_params_json)

    table, inputs = _feature_table(args, cfg, out, jobs)
    info["inputs"] = {p: _sha256(p) for p in inputs}
    results = []
    for mode in _modes(_resolve(args, cfg, "mode", "all")):
        for kind in _kinds(_resolve(args, cfg, "model", "all")):
            r = run_experiment(table, mode, _grid(cfg, kind), seed, jobs=jobs)
            results.append(r)
            m = r.pooled.to_dict()
            print(f"{mode:17s} {kind:6s} " + " ".join(
                f"{k}={'n/a' if m[k] is None else format(m[k], '.2f')}" for k in m))
            _write_predictions(r, out / "predictions" / f"{mode}_{kind}.csv")
    _write_text(out / "metrics.json", report_json(results))
    _write_text(out / "metrics.csv", metrics_csv(results))
    _write_text(out / "selected_params.json", selected_params_json(results))
    f1_chart_svg(results, out / "f1_chart.svg")
    return 0


def _write_predictions(result, path):
    if not result.predictions:
        return
    keys = sorted({k for p in result.predictions for k in p} - {"subject"})
    _write_csv(path, ["subject"] + keys,
               [[p["subject"]] + [p.get(k, "") for k in keys] for p in result.predictions])


def _read_predictions(path):
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"prediction file not found: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"subject", "pred"} <= set(reader.fieldnames):
            raise ValidationError(f"{p}: needs 'subject' and 'pred' columns")
        rows = {}
        for i, r in enumerate(reader, start=2):
            try:
                pred = int(r["pred"])
                truth = int(r["truth"]) if r.get("truth", "") not in ("", None) else None
            except ValueError:
                raise ValidationError(f"{p}:{i}: labels must be 0 or 1") from None
            if pred not in (0, 1) or truth not in (None, 0, 1):
                raise ValidationError(f"{p}:{i}: labels must be 0 or 1")
            rows[r["subject"]] = (pred, truth)
    return rows


def cmd_fuse(args, cfg, out, seed, jobs, info):
    from .evaluation import ConfusionMatrix, compute_metrics, or_fuse

    a = _read_predictions(args.a4c)
    b = _read_predictions(args.a2c)
    info["inputs"] = {args.a4c: _sha256(args.a4c), args.a2c: _sha256(args.a2c)}
    common = [s for s in a if s in b]
    missing = sorted(set(a) ^ set(b))
    if not common:
        raise ValidationError("the two prediction files share no subject")
    rows, truth, pred = [], [], []
    for s in common:
        fused = or_fuse(a[s][0], b[s][0])
        t = None
        if a[s][1] is not None and b[s][1] is not None:
            t = or_fuse(a[s][1], b[s][1])
        rows.append([s, a[s][0], b[s][0], fused, "" if t is None else t])
        pred.append(fused)
        truth.append(t)
    _write_csv(out / "fused_predictions.csv", ["subject", "pred_A4C", "pred_A2C", "pred", "truth"],
               rows)
    report = {"n_subjects": len(common), "unmatched_subjects": missing}
    if all(t is not None for t in truth):
        cm = ConfusionMatrix.from_labels(truth, pred)
        report["confusion"] = cm.to_dict()
        report["metrics"] = compute_metrics(cm).to_dict()
        print(" ".join(f"{k}={v}" for k, v in report["metrics"].items()))
    _write_text(out / "fused_report.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(f"fused {len(common)} subjects -> {out / 'fused_predictions.csv'}")
    return 0


def _int_list(text, name):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--{name} expects comma-separated integers") from None


def cmd_complexity(args, cfg, out, seed, jobs, info):
    from .ml import Cnn1dArch, cnn_complexity

    if args.inputs is not None:
        arch = Cnn1dArch(args.inputs, args.filters, args.kernel, 16, args.padding)
        L, N, K, V = arch.complexity_terms()
    else:
        if args.layers is None:
            raise ValidationError("give either --inputs/--filters/--kernel or --layers")
        L = args.layers
        if L < 0:
            raise ValidationError("--layers must be >= 0")

        def expand(text, n, name):
            vals = _int_list(text, name)
            if len(vals) == 1:
                vals = vals * n
            if len(vals) != n:
                raise ValidationError(f"--{name} needs 1 or {n} values")
            return vals

        N = expand(args.connections, L + 1, "connections")
        K = expand(args.kernels, L, "kernels") if L else []
        V = expand(args.lengths, L, "lengths") if L else []
    c = cnn_complexity(L, N, K, V)
    _write_text(out / "complexity.json",
                json.dumps({"L": L, "N": N, "K": K, "V": V, "C": c}, sort_keys=True) + "\n")
    print(f"C = {c}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "segment": cmd_segment, "trace": cmd_trace, "features": cmd_features,
    "train": cmd_train, "evaluate": cmd_evaluate, "fuse": cmd_fuse, "complexity": cmd_complexity,
}


def build_parser():
    parser = _Parser(prog="echomi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"echomi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, manifest=False, mode=False, model=False):
        p.add_argument("--out", help="output directory (default: echomi-out)")
        p.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
        p.add_argument("--jobs", type=int, help="worker processes (default 1)")
        p.add_argument("--config", help="JSON config overriding Chan-Vese parameters / grids")
        if manifest:
            p.add_argument("--manifest", help="dataset manifest (TSV)")
        if mode:
            p.add_argument("--mode", choices=MODE_CHOICES + ("all",))
        if model:
            p.add_argument("--model", choices=MODEL_CHOICES)
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic cohort with manifest"))
    p.add_argument("--n-healthy", type=int, default=20)
    p.add_argument("--n-mi", type=int, default=20)
    p.add_argument("--noise", type=float, help="Gaussian noise sigma (default 0)")
    p.add_argument("--attenuation", type=float, default=0.3)
    p.add_argument("--format", choices=("pgm", "png"), default="pgm")

    p = common(sub.add_parser("segment", help="frames -> boundaries + overlays"), manifest=True)
    p.add_argument("--no-overlays", action="store_true", help="skip overlay PNGs")

    p = common(sub.add_parser("trace", help="boundaries -> displacement CSV/SVG"), manifest=True)
    p.add_argument("--boundaries", help="boundary directory (default: OUT/boundaries)")

    common(sub.add_parser("features", help="boundaries -> per-subject feature CSV"),
           manifest=True)

    for name, helptext in (("train", "features + labels -> model files"),
                           ("evaluate", "cross-validated experiment -> reports")):
        p = common(sub.add_parser(name, help=helptext), manifest=True, mode=True, model=True)
        p.add_argument("--features", help="features.csv instead of --manifest")

    p = common(sub.add_parser("fuse", help="OR-fuse two prediction files"))
    p.add_argument("--a4c", required=True, help="A4C predictions CSV (subject, pred[, truth])")
    p.add_argument("--a2c", required=True, help="A2C predictions CSV (subject, pred[, truth])")

    p = common(sub.add_parser("complexity", help="convolution multiplication count"))
    p.add_argument("--layers", type=int, help="L")
    p.add_argument("--connections", default="1", help="N_0..N_L (one value broadcasts)")
    p.add_argument("--kernels", default="1", help="K_0..K_{L-1}")
    p.add_argument("--lengths", default="1", help="V_0..V_{L-1}")
    p.add_argument("--inputs", type=int, help="CNN input length A (derive terms from a config)")
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--padding", choices=("valid", "same"), default="valid")
    return parser


def run(argv=None):
    started = time.time()
    info = {"argv": list(sys.argv[1:] if argv is None else argv), "status": "error"}
    out = None
    code = 2
    try:
        args = build_parser().parse_args(argv)
        info["command"] = args.command
        cfg = _load_config(args.config)
        out = Path(_resolve(args, cfg, "out", "echomi-out"))
        seed = int(_resolve(args, cfg, "seed", 0))
        jobs = int(args.jobs or 1)
        if seed < 0:
            raise ValidationError("--seed must be >= 0")
        if jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        info.update(seed=seed, jobs=jobs, out=str(out), config=cfg)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code = COMMANDS[args.command](args, cfg, out, seed, jobs, info)
        info["status"] = "ok"
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        info["error"] = str(exc)
        code = 1
    except (EchomiError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        info["error"] = f"{type(exc).__name__}: {exc}"
        code = 2
    info["exit_code"] = code
    info["versions"] = _versions()
    info["started"] = time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started))
    info["elapsed_s"] = round(time.time() - started, 3)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "run.json").write_text(json.dumps(info, sort_keys=True, indent=1, default=str)
                                          + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
