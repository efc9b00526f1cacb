"""Command-line entry point: ``aeforce <subcommand> ...``.

Every subcommand writes its outputs plus ``run_config.json`` and ``log.txt``
to ``--out``. Exit codes: 0 success, 2 usage, 3 data error, 4 compute error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_value
from .errors import AeForceError, UsageError
from .features import detect_ae_events
from .forest import ForestModel
from .pipeline.combine import combine as combine_curves
from .pipeline.importance import feature_correlations, importance_single, importance_subsets
from .pipeline.scales import (
    CoarseScaleConfig,
    FeatureMatrix,
    FineScaleConfig,
    coarse_matrix,
    fine_matrix,
    leave_one_out_fine,
    predict_experiment,
    train_coarse_from_matrices,
    train_fine_from_matrices,
)
from .pipeline.transfer import summarize, transfer_matrix
from .signal import import_raw, manifest_entry, read_experiment, write_experiment
from .stats import detect_force_drops, drop_stats_summary, mean_power_spectrum
from .synth import write_synthetic

log = logging.getLogger("aeforce")


# --- output helpers ----------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def write_feature_csv(path: Path, mats: list[FeatureMatrix], target: str) -> None:
    keys = mats[0].keys
    rows = (
        [m.experiment, float(m.t_start[i]), float(m.t_end[i]), *m.X[i].tolist(), float(m.y[i])]
        for m in mats
        for i in range(len(m))
    )
    _write_csv(path, ["experiment", "t_start_s", "t_end_s", *keys, target], rows)


def _load(paths) -> list:
    recs = [read_experiment(p) for p in paths]
    ids = [r.id for r in recs]
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate experiment ids: {ids}")
    return recs


# --- subcommands -------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig, out: Path) -> None:
    if args.from_raw:
        if not (args.id and args.diameter and args.dest):
            raise UsageError("--from-raw needs --id, --diameter and --dest")
        rec = import_raw(
            args.from_raw[0], args.from_raw[1], id=args.id, diameter=args.diameter,
            ae_rate=args.ae_rate, unseen_size=args.unseen_size,
        )
        write_experiment(rec, args.dest)
        args.experiments = list(args.experiments) + [args.dest]
    recs = _load(args.experiments)
    for r in recs:
        r.normalized()  # raises on an all-zero AE trace
    manifest = [manifest_entry(r) for r in recs]
    _write_json(out / "manifest.json", manifest)
    for m in manifest:
        log.info("%s: %g um, %.3f s, %d AE samples", m["id"], m["diameter_um"], m["duration_s"], m["ae_samples"])


def cmd_stats(args, cfg: RunConfig, out: Path) -> None:
    recs = _load(args.experiments)
    eps = cfg["stats.eps_mN"]
    rep = drop_stats_summary(recs, None if eps is None else float(eps), float(cfg["fine.dt_s"]),
                             int(cfg["stats.bins"]))
    _write_csv(out / "drops.csv", ["experiment", "t_start", "t_d_s", "dF_mN"],
               ([d["experiment"], d["t_start"], d["t_d_s"], d["dF_mN"]] for d in rep["drops"]))
    _write_csv(out / "stress.csv", ["experiment", "t_s", "F_mN", "sigma_GPa"],
               ([s["experiment"], s["t_s"], s["F_mN"], s["sigma_GPa"]] for s in rep["stress"]))
    for group, g in rep["groups"].items():
        for name, p in g["pdf"].items():
            _write_csv(out / f"pdf_{name}_{group}.csv", ["center", "density"],
                       zip(p["centers"], p["density"]))
    spectra = []
    for r in recs:
        nr = r.normalized()
        events = detect_ae_events(nr.ae, cfg.threshold())
        try:
            f, c = mean_power_spectrum(nr.ae, events, float(cfg["stats.spectrum_window_s"]),
                                       cfg["stats.taper"])
        except AeForceError as exc:
            log.warning("%s: no spectrum (%s)", r.id, exc)
            continue
        spectra.extend([r.id, fi, ci] for fi, ci in zip(f, c))
    _write_csv(out / "spectrum.csv", ["experiment", "f_hz", "C_F"], spectra)
    summary = {k: {kk: vv for kk, vv in g.items() if kk != "pdf"} for k, g in rep["groups"].items()}
    _write_json(out / "summary.json", summary)
    for k, g in summary.items():
        log.info("%s: %d drops, Pearson(dF, t_d) = %.3f", k, g["n_drops"], g["pearson_magnitude_duration"])


def _fine_cfg(cfg: RunConfig, args, out: Path, **kw) -> FineScaleConfig:
    cache = str(out / "spectrograms") if getattr(args, "cache_spectrograms", False) else None
    return cfg.fine(cache_dir=cache, **kw)


def cmd_train_fine(args, cfg: RunConfig, out: Path) -> None:
    recs = _load(args.experiments)
    fcfg = _fine_cfg(cfg, args, out)
    mats = [fine_matrix(r, fcfg) for r in recs]
    write_feature_csv(out / "features_fine.csv", mats, "target_dF_mN")
    model = train_fine_from_matrices(mats, fcfg)
    model.save(out / "model_fine.json")
    log.info("fine model: %d features, config %s", model.n_features, model.config)


def cmd_train_coarse(args, cfg: RunConfig, out: Path) -> None:
    recs = _load(args.experiments)
    ccfg = cfg.coarse()
    mats = []
    for r in recs:
        t0, t1 = r.span
        if t1 - t0 < ccfg.width:
            log.warning("%s: shorter than the coarse window, skipped", r.id)
            continue
        mats.append(coarse_matrix(r, ccfg))
    model = train_coarse_from_matrices(mats, ccfg)
    write_feature_csv(out / "features_coarse.csv", mats, "target_F_mN")
    model.save(out / "model_coarse.json")
    log.info("coarse model: %d features, config %s", model.n_features, model.config)


def cmd_predict(args, cfg: RunConfig, out: Path) -> None:
    fine = ForestModel.load(args.fine_model)
    coarse = ForestModel.load(args.coarse_model) if args.coarse_model else None
    rec = read_experiment(args.experiment)
    fcfg = FineScaleConfig.from_meta(fine.meta, cache_dir=str(out / "spectrograms") if args.cache_spectrograms else None)
    ccfg = CoarseScaleConfig.from_meta(coarse.meta) if coarse else None
    series = predict_experiment(fine, coarse, rec, fcfg, ccfg)
    _write_csv(out / "prediction.csv", ["t_s", "F_ground_mN", "F_pred_mN"],
               zip(series.t, series.ground, series.combined))
    fp = series.fine
    _write_csv(out / "fine_increments.csv",
               ["t_start_s", "t_end_s", "dF_ground_mN", "dF_pred_mN", "f_pred_mN"],
               zip(fp.edges[:-1], fp.edges[1:], fp.increments_true, fp.increments, fp.curve[1:]))
    _write_csv(out / "coarse_anchors.csv", ["t_s", "F_pred_mN", "delta_mN_s"],
               zip(series.anchor_times, series.anchors, series.deltas))
    summary = {"experiment": rec.id, "r2_fine_increments": _safe(lambda: series.r2_fine),
               "r2_force_curve": _safe(lambda: series.r2_combined),
               "n_windows": int(len(fp.increments)), "n_anchors": int(len(series.anchors))}
    _write_json(out / "summary.json", summary)
    log.info("%s: fine R2 %s, curve R2 %s", rec.id, summary["r2_fine_increments"], summary["r2_force_curve"])


def _safe(fn):
    try:
        return fn()
    except AeForceError:
        return None


def _read_two_columns(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return a[:, 0], a[:, 1]


def cmd_combine(args, cfg: RunConfig, out: Path) -> None:
    t, f = _read_two_columns(args.fine)
    _, F = _read_two_columns(args.anchors)
    width = args.width if args.width is not None else float(cfg["coarse.width_s"])
    t_out, f_out, deltas = combine_curves(t, f, F, width, t0=args.t0)
    _write_csv(out / "combined.csv", ["t_s", "F_pred_mN"], zip(t_out, f_out))
    log.info("combined %d samples through %d anchors", len(t_out), len(F))


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    recs = [r.normalized() for r in _load(args.experiments)]
    dts = [float(v) for v in cfg["evaluate.dt_sweep_s"]] or [float(cfg["fine.dt_s"])]
    report = []
    for mode in cfg["evaluate.modes"]:
        for dt in dts:
            fcfg = replace(_fine_cfg(cfg, args, out), feature_mode=mode, dt=dt)
            mats = [fine_matrix(r, fcfg, normalized=True) for r in recs]
            per = leave_one_out_fine(mats, fcfg)
            scores = [p["r2"] for p in per]
            report.append({"feature_mode": mode, "dt_s": dt, "mean_r2": float(np.mean(scores)),
                           "std_r2": float(np.std(scores)), "per_experiment": per})
            log.info("%s dt=%g: mean R2 %.3f", mode, dt, float(np.mean(scores)))
    _write_json(out / "evaluate.json", report)


def cmd_importance(args, cfg: RunConfig, out: Path) -> None:
    recs = [r.normalized() for r in _load(args.experiments)]
    fcfg = _fine_cfg(cfg, args, out)
    mats = [fine_matrix(r, fcfg, normalized=True) for r in recs]
    fc = cfg.importance_forest()
    single = importance_single(mats, fc, jobs=cfg.jobs)
    corr = feature_correlations(mats)
    subsets = importance_subsets(mats, int(cfg["importance.n_max"]), fc,
                                 cap=int(cfg["importance.cap"]), jobs=cfg.jobs)
    _write_json(out / "importance.json", {
        "feature_mode": fcfg.feature_mode,
        "features": mats[0].keys,
        "single": single,
        "correlation": [[None if math.isnan(v) else v for v in row] for row in corr],
        "subsets": subsets,
    })
    for b in subsets["best"]:
        log.info("best n=%d: %s (R2 %.3f)", b["n"], ",".join(b["features"]), b["r2"])


def cmd_transfer(args, cfg: RunConfig, out: Path) -> None:
    recs = _load(args.experiments)
    limit = cfg["transfer.limit"]
    fcfg = _fine_cfg(cfg, args, out)
    rows = transfer_matrix(recs, fcfg, size=int(cfg["transfer.size"]),
                           limit=None if limit is None else int(limit), f_set=fcfg.f_set)
    header = list(rows[0].keys())
    _write_csv(out / "transfer.csv", header, ([r[h] for h in header] for r in rows))
    summary = {m: summarize(rows, m) for m in ("freq_independent", "freq_dependent")}
    _write_json(out / "transfer_summary.json", summary)
    log.info("transfer: %s", summary)


def cmd_synth(args, cfg: RunConfig, out: Path) -> None:
    n = int(args.n if args.n is not None else cfg["synth.n"])
    for i in range(n):
        sc = cfg.synth(i)
        d = write_synthetic(sc, out / sc.id, float(cfg["fine.dt_s"]))
        log.info("wrote %s", d.name)


COMMANDS = {
    "ingest": (cmd_ingest, "validate experiment directories and write a manifest"),
    "stats": (cmd_stats, "force-drop statistics, PDFs and mean AE spectra"),
    "train-fine": (cmd_train_fine, "train the fine-scale (force increment) model"),
    "train-coarse": (cmd_train_coarse, "train the coarse-scale (force value) model"),
    "predict": (cmd_predict, "predict and combine the force-time curve of one experiment"),
    "combine": (cmd_combine, "combine a fine curve CSV with coarse anchors CSV"),
    "evaluate": (cmd_evaluate, "leave-one-experiment-out fine-scale R2"),
    "importance": (cmd_importance, "single-feature and subset feature importance"),
    "transfer": (cmd_transfer, "transferability matrix across pillar sizes"),
    "synth": (cmd_synth, "write synthetic experiments with ground truth"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flat dotted or nested keys)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--jobs", type=int, help="parallel jobs (results do not depend on it)")
    common.add_argument("--cache-spectrograms", action="store_true",
                        help="cache per-window spectrograms under OUT/spectrograms")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. fine.dt_s=0.25")
    common.add_argument("--out", default=".", help="output directory")

    p = argparse.ArgumentParser(prog="aeforce", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sp = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}

    for name in ("ingest", "stats", "train-fine", "train-coarse", "evaluate", "importance", "transfer"):
        sp[name].add_argument("experiments", nargs="*" if name == "ingest" else "+",
                              help="canonical experiment directories")
    g = sp["ingest"]
    g.add_argument("--from-raw", nargs=2, metavar=("AE", "FORCE"), help="import loose AE and force files")
    g.add_argument("--id")
    g.add_argument("--diameter", type=float)
    g.add_argument("--ae-rate", type=float, default=2.5e6)
    g.add_argument("--unseen-size", action="store_true")
    g.add_argument("--dest", help="canonical directory to create from --from-raw")

    g = sp["predict"]
    g.add_argument("experiment")
    g.add_argument("--fine-model", required=True)
    g.add_argument("--coarse-model")

    g = sp["combine"]
    g.add_argument("--fine", required=True, help="CSV t_s,f_mN (integrated fine curve)")
    g.add_argument("--anchors", required=True, help="CSV t_s,F_mN (coarse predictions at n*width)")
    g.add_argument("--width", type=float, help="coarse window width in s")
    g.add_argument("--t0", type=float, help="time origin (default: first fine sample)")

    sp["synth"].add_argument("--n", type=int, help="number of experiments")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        out["seed"] = args.seed
    if args.jobs is not None:
        out["jobs"] = args.jobs
    return out


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    out = Path(args.out)
    handler = None
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.json").write_text(cfg.to_json())
        handler = logging.FileHandler(out / "log.txt", mode="w")
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        log.info("aeforce %s %s", __version__, args.command)
        COMMANDS[args.command][0](args, cfg, out)
        return 0
    except AeForceError as exc:
        log.error("%s", exc)
        print(f"aeforce: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        log.error("%s", exc)
        print(f"aeforce: error: {exc}", file=sys.stderr)
        return 2
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
