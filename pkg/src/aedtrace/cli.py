"""Command-line entry point: ``aedtrace <command> [options]``.

Every command accepts ``--config FILE`` (JSON).  Keys at the top level of
the file apply to any command that knows them; a section named after the
command overrides them; explicit flags override both.  The resolved
settings are written to ``run_config.json`` in the output directory.

Exit codes: 0 success, 1 validation or input error, 2 warnings under
``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, dsp, metrics, pausenet, report, session, simtrip, tripseg
from .sensorlog import (
    RegistryError, SensorLogError, SurveyError, atomic_write_text, dump_json, load_registry, load_trip,
    registry_to_dict, parse_registry,
)

logger = logging.getLogger("aedtrace")

STAT_REPORT_FORMAT = "aedtrace.stat-report/1"

DEFAULTS: dict[str, dict] = {
    "simulate": {
        "cohort": 20, "factor": 0.6, "seed": 0, "jitter": 0.1, "target_aed": "AED1",
        "corpus_windows": 1312, "jobs": 1, "sim": {},
    },
    "train": {
        "windows": None, "seed": 0, "C": 1.0, "gamma": None, "smote_k": 5, "train_frac": 0.7,
        "tol": 1e-3, "max_iter": 1_000_000,
    },
    "evaluate": {"model": None, "windows": None},
    "segment": {
        "data": None, "registry": None, "model": None, "beacon_rssi_dbm": -70.0, "dwell_s": 3,
        "wifi_rssi_dbm": -75.0, "confirm_s": 3, "jobs": 1,
    },
    "metrics": {"segments": None},
    "stats": {
        "segments": None, "surveys": None, "sus": None, "seed": 0, "n_boot": 10_000,
        "ci_method": "bootstrap_percentile", "hl_estimator": "walsh", "level": 0.95,
    },
    "session-replay": {
        "events": None, "registry": None, "countdown_s": 3, "ready_radius_m": 15.0,
        "beacon_rssi_dbm": -70.0, "dwell_s": 3, "start_lat": None, "start_lon": None,
    },
    "report": {"input": None, "format": "txt", "seed": 0, "n_boot": 10_000, "ci_method": "bootstrap_percentile"},
}


class CliError(Exception):
    """Validation problem reported to the user with exit code 1."""


# ------------------------------------------------------------------- config


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError(f"{args.config}: top level must be an object")
        for k, v in doc.items():
            if k in cfg:
                cfg[k] = v
        section = doc.get(command, {})
        if not isinstance(section, dict):
            raise CliError(f"{args.config}: section {command!r} must be an object")
        unknown = set(section) - set(cfg)
        if unknown:
            raise CliError(f"{args.config}: unknown keys for {command}: {sorted(unknown)}")
        cfg.update(section)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, command: str, cfg: dict) -> None:
    atomic_write_text(out / "run_config.json", dump_json({"command": command, "version": __version__, **cfg}))


def _need(cfg: dict, key: str, flag: str | None = None) -> str:
    if cfg.get(key) in (None, ""):
        raise CliError(f"missing required input --{flag or key.replace('_', '-')}")
    return cfg[key]


# ----------------------------------------------------------------- commands


def _simulate_one(job):
    script_doc, sim_doc, reg_doc, trip_dir = job
    script = simtrip.TripScript.from_dict(script_doc)
    log, truth = simtrip.synthesize(script, simtrip.SimConfig.from_dict(sim_doc), reg_doc)
    simtrip.write_simulated_trip(log, truth, trip_dir)
    events = simtrip.session_events(log, reg_doc, truth)
    return script.trip_id, truth, events


def cmd_simulate(args, cfg) -> int:
    out = _out_dir(args)
    sim_cfg = simtrip.SimConfig.from_dict(cfg["sim"] or {})
    reg_doc = simtrip.default_registry_doc()
    atomic_write_text(out / "registry.json", dump_json(reg_doc))
    try:
        cohort = simtrip.synthesize_cohort(
            int(cfg["cohort"]), float(cfg["factor"]), int(cfg["seed"]), float(cfg["jitter"]), cfg["target_aed"]
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None

    jobs = [
        (s.to_dict(), sim_cfg.to_dict(), reg_doc, str(out / "trips" / s.trip_id))
        for s in cohort.scripts()
    ]
    if int(cfg["jobs"]) > 1:
        with ProcessPoolExecutor(int(cfg["jobs"])) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]

    truths = {tid: truth for tid, truth, _ in results}
    events = {tid: ev for tid, _, ev in results}
    members = []
    for m in cohort.members:
        atomic_write_text(
            out / "events" / f"{m.participant_id}.jsonl",
            session.events_jsonl(events[m.pre.trip_id] + events[m.post.trip_id]),
        )
        members.append({
            "participant_id": m.participant_id,
            "group": m.group,
            "jitter": m.jitter,
            "pre_trip": m.pre.trip_id,
            "post_trip": m.post.trip_id,
            "truth_delta_D_T": m.truth_delta_D_T,
        })
    atomic_write_text(out / "cohort.json", dump_json({
        "n_participants": len(members),
        "improvement_factor": cohort.factor,
        "seed": cohort.seed,
        "truth_median_delta_D_T": cohort.truth_median_delta_D_T(),
        "members": members,
    }))

    truth_cols = ["trip_id", "participant_id", "session_kind", "guidance", "start_t", "prep_end",
                  "entry_t", "arrival_t", "D_T", "D_P"]
    lines = [",".join(truth_cols)]
    for s in cohort.scripts():
        t = truths[s.trip_id]
        lines.append(",".join(str(t[c]) for c in truth_cols))
    atomic_write_text(out / "truth.csv", "\n".join(lines) + "\n")

    _write_dict_csv(out / "surveys.csv", simtrip.survey_rows(cohort, int(cfg["seed"])))
    _write_dict_csv(out / "sus.csv", simtrip.sus_rows(cohort, int(cfg["seed"])))
    if int(cfg["corpus_windows"]) > 0:
        windows = simtrip.labelled_corpus(int(cfg["corpus_windows"]), int(cfg["seed"]), sim_cfg)
        dsp.write_windows_csv(windows, out / "windows.csv")
    _write_run_config(out, "simulate", cfg)
    print(f"simulated {len(members)} participants ({len(results)} trips) into {out}")
    return 0


def _write_dict_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        atomic_write_text(path, "")
        return
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_dict_csv(path) -> list[dict]:
    import csv

    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise CliError(f"input not found: {path}") from None


def cmd_train(args, cfg) -> int:
    out = _out_dir(args)
    windows = _load_windows(_need(cfg, "windows"))
    try:
        res = pausenet.fit_pipeline(
            windows, train_frac=float(cfg["train_frac"]), smote_k=int(cfg["smote_k"]), C=float(cfg["C"]),
            gamma=None if cfg["gamma"] is None else float(cfg["gamma"]), seed=int(cfg["seed"]),
            tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]),
        )
    except (pausenet.TrainingError, ValueError) as exc:
        raise CliError(str(exc)) from None
    pausenet.save_model(res.model, out / "model.json")
    summary = {
        "n_windows": len(windows),
        "n_train": len(res.train_windows),
        "n_train_augmented": res.n_train_augmented,
        "n_eval": len(res.eval_windows),
        "eval": res.metrics.to_dict(),
    }
    atomic_write_text(out / "train_metrics.json", dump_json(summary))
    _write_run_config(out, "train", cfg)
    m = res.metrics
    print(f"weighted F1 {m.weighted_f1:.3f}; pausing F1 {m.per_class['pausing'].f1:.3f} "
          f"on {len(res.eval_windows)} held-out windows")
    return 0


def _load_windows(path) -> list:
    try:
        return dsp.read_windows_csv(path)
    except FileNotFoundError:
        raise CliError(f"windows file not found: {path}") from None


def _load_model(path) -> pausenet.PausingModel:
    try:
        return pausenet.load_model(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from None


def cmd_evaluate(args, cfg) -> int:
    out = _out_dir(args)
    model = _load_model(_need(cfg, "model"))
    windows = [w for w in _load_windows(_need(cfg, "windows")) if w.label is not None]
    m = pausenet.evaluate(model, windows)
    atomic_write_text(out / "eval_metrics.json", dump_json({"n_windows": len(windows), **m.to_dict()}))
    _write_run_config(out, "evaluate", cfg)
    print(f"weighted F1 {m.weighted_f1:.3f}; pausing F1 {m.per_class['pausing'].f1:.3f} on {len(windows)} windows")
    return 0


def _segment_one(job):
    manifest_path, reg_doc, model_doc, seg_cfg = job
    registry = parse_registry(reg_doc)
    model = pausenet.PausingModel.from_dict(model_doc)
    log = load_trip(manifest_path, registry=registry)
    phases = tripseg.segment(log, registry, model, tripseg.SegmentConfig(**seg_cfg))
    return phases


def _find_manifests(data: Path) -> list[Path]:
    if (data / "manifest.json").exists():
        return [data / "manifest.json"]
    found = sorted(data.glob("trips/*/manifest.json")) or sorted(data.glob("*/manifest.json"))
    if not found:
        raise CliError(f"no trip manifests under {data}")
    return found


def cmd_segment(args, cfg) -> int:
    out = _out_dir(args)
    data = Path(_need(cfg, "data"))
    reg_path = cfg["registry"] or str(data / "registry.json")
    registry = load_registry(reg_path)
    model = _load_model(_need(cfg, "model"))
    try:
        seg_cfg = tripseg.SegmentConfig(
            beacon_rssi_dbm=float(cfg["beacon_rssi_dbm"]), dwell_s=int(cfg["dwell_s"]),
            wifi_rssi_dbm=float(cfg["wifi_rssi_dbm"]), confirm_s=int(cfg["confirm_s"]),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    jobs = [(str(p), registry_to_dict(registry), model.to_dict(), vars(seg_cfg)) for p in _find_manifests(data)]
    if int(cfg["jobs"]) > 1:
        with ProcessPoolExecutor(int(cfg["jobs"])) as pool:
            phases = list(pool.map(_segment_one, jobs))
    else:
        phases = [_segment_one(j) for j in jobs]
    for p in phases:
        atomic_write_text(out / "segments" / f"{p.trip_id}.json", dump_json(p.to_dict()))
    tripseg.write_batch_csv(phases, out / "segments.csv")
    _write_run_config(out, "segment", cfg)
    n_incomplete = sum(not p.complete for p in phases)
    n_warn = sum(len(p.warnings) for p in phases)
    print(f"segmented {len(phases)} trips ({n_incomplete} incomplete, {n_warn} warnings)")
    for p in phases:
        for w in p.warnings:
            print(f"warning: {p.trip_id}: {w}", file=sys.stderr)
    return 2 if args.strict and (n_incomplete or n_warn) else 0


def _load_phases(path) -> list[tripseg.TripPhases]:
    try:
        return tripseg.read_batch_csv(path)
    except FileNotFoundError:
        raise CliError(f"segments file not found: {path}") from None


def cmd_metrics(args, cfg) -> int:
    out = _out_dir(args)
    outcomes, warns = metrics.pair_outcomes(_load_phases(_need(cfg, "segments")))
    metrics.write_outcomes_csv(outcomes, out / "outcomes.csv")
    _write_run_config(out, "metrics", cfg)
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(outcomes)} participants paired")
    if not outcomes:
        raise CliError("no complete trips")
    return 2 if args.strict and warns else 0


def _report_config(cfg) -> report.ReportConfig:
    return report.ReportConfig(
        ci_method=cfg["ci_method"], n_boot=int(cfg["n_boot"]), seed=int(cfg["seed"]),
        level=float(cfg.get("level", 0.95)), hl_estimator=cfg.get("hl_estimator", "walsh"),
    )


def _report_doc(rep: report.StatReport) -> dict:
    return {"format": STAT_REPORT_FORMAT, "tables": rep.tables, "notes": rep.notes}


def cmd_stats(args, cfg) -> int:
    out = _out_dir(args)
    outcomes, warns = metrics.pair_outcomes(_load_phases(_need(cfg, "segments")))
    surveys = _read_dict_csv(cfg["surveys"]) if cfg["surveys"] else []
    sus = _read_dict_csv(cfg["sus"]) if cfg["sus"] else []
    rep = report.build_report(outcomes, _report_config(cfg), surveys, sus, notes=warns)
    atomic_write_text(out / "stat_report.json", dump_json(_report_doc(rep)))
    metrics.write_outcomes_csv(outcomes, out / "outcomes.csv")
    _write_run_config(out, "stats", cfg)
    rel = rep.tables["relative_change"][0]
    print(f"{len(outcomes)} participants; median delta_D_T {rel['delta_D_T_median']:.3f}")
    return 2 if args.strict and warns else 0


def cmd_report(args, cfg) -> int:
    src = Path(_need(cfg, "input"))
    if not src.exists():
        raise CliError(f"input not found: {src}")
    if src.suffix == ".json":
        doc = json.loads(src.read_text(encoding="utf-8"))
        if doc.get("format") != STAT_REPORT_FORMAT:
            raise CliError(f"{src}: not a stat report")
        if not doc.get("tables", {}).get("retrieval_times"):
            raise CliError("no complete trips")
        rep = report.StatReport(doc["tables"], doc.get("notes", []))
    else:
        outcomes = metrics.read_outcomes_csv(src)
        rep = report.build_report(outcomes, _report_config(cfg))
    fmt = cfg["format"]
    if fmt not in ("txt", "csv"):
        raise CliError(f"unknown format {fmt!r}")
    text = rep.to_text() if fmt == "txt" else rep.to_csv()
    if args.out:
        out = _out_dir(args)
        atomic_write_text(out / f"report.{fmt}", text)
        _write_run_config(out, "report", cfg)
    sys.stdout.write(text)
    return 0


def cmd_session_replay(args, cfg) -> int:
    out = _out_dir(args)
    events = session.read_events(_need(cfg, "events"))
    reg_path = Path(_need(cfg, "registry"))
    try:
        reg_doc = json.loads(reg_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"registry not found: {reg_path}") from None
    registry = parse_registry(reg_doc)
    start = reg_doc.get("exam_start", {})
    lat = cfg["start_lat"] if cfg["start_lat"] is not None else start.get("lat")
    lon = cfg["start_lon"] if cfg["start_lon"] is not None else start.get("lon")
    if lat is None or lon is None:
        raise CliError("exam start point unknown: set --start-lat/--start-lon or registry exam_start")
    scfg = session.SessionConfig(
        float(lat), float(lon), ready_radius_m=float(cfg["ready_radius_m"]), countdown_s=int(cfg["countdown_s"]),
        beacon_rssi_dbm=float(cfg["beacon_rssi_dbm"]), dwell_s=int(cfg["dwell_s"]),
    )
    res = session.replay(events, registry, scfg)
    atomic_write_text(out / "session_record.json", dump_json(res.record))
    atomic_write_text(
        out / "trajectory.jsonl",
        "".join(json.dumps({"t": t, "event": e, "state": s}) + "\n" for t, e, s in res.trajectory),
    )
    _write_run_config(out, "session-replay", cfg)
    print(f"final state {res.record['state']}; points {res.record['points']}; {len(res.rejections)} rejected events")
    for r in res.rejections:
        print(f"rejected: t={r['t']} {r['type']} in {r['state']}: {r['reason']}", file=sys.stderr)
    return 2 if args.strict and res.rejections else 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "segment": cmd_segment,
    "metrics": cmd_metrics,
    "stats": cmd_stats,
    "session-replay": cmd_session_replay,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aedtrace", description="AED retrieval trace analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--strict", action="store_true", help="exit 2 when warnings occur")

    sp = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(sp)
    sp.add_argument("--cohort", type=int)
    sp.add_argument("--factor", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jitter", type=float)
    sp.add_argument("--target-aed", dest="target_aed")
    sp.add_argument("--corpus-windows", dest="corpus_windows", type=int)
    sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("train", help="train the pausing classifier")
    common(sp)
    sp.add_argument("--windows")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--C", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--smote-k", dest="smote_k", type=int)
    sp.add_argument("--train-frac", dest="train_frac", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)

    sp = sub.add_parser("evaluate", help="score a model on labelled windows")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--windows")

    sp = sub.add_parser("segment", help="segment trips into phases")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--registry")
    sp.add_argument("--model")
    sp.add_argument("--beacon-rssi-dbm", dest="beacon_rssi_dbm", type=float)
    sp.add_argument("--dwell-s", dest="dwell_s", type=int)
    sp.add_argument("--wifi-rssi-dbm", dest="wifi_rssi_dbm", type=float)
    sp.add_argument("--confirm-s", dest="confirm_s", type=int)
    sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("metrics", help="pair pre/post trips into outcomes")
    common(sp)
    sp.add_argument("--segments")

    sp = sub.add_parser("stats", help="run the statistical analysis")
    common(sp)
    sp.add_argument("--segments")
    sp.add_argument("--surveys")
    sp.add_argument("--sus")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-boot", dest="n_boot", type=int)
    sp.add_argument("--ci-method", dest="ci_method", choices=["bootstrap_percentile", "walsh_exact"])
    sp.add_argument("--hl-estimator", dest="hl_estimator", choices=["walsh", "median"])

    sp = sub.add_parser("session-replay", help="replay app events through the session state machine")
    common(sp)
    sp.add_argument("--events")
    sp.add_argument("--registry")
    sp.add_argument("--countdown-s", dest="countdown_s", type=int)
    sp.add_argument("--ready-radius-m", dest="ready_radius_m", type=float)
    sp.add_argument("--beacon-rssi-dbm", dest="beacon_rssi_dbm", type=float)
    sp.add_argument("--dwell-s", dest="dwell_s", type=int)
    sp.add_argument("--start-lat", dest="start_lat", type=float)
    sp.add_argument("--start-lon", dest="start_lon", type=float)

    sp = sub.add_parser("report", help="render a stat report or outcomes CSV as tables")
    common(sp, out_required=False)
    sp.add_argument("--input")
    sp.add_argument("--format", choices=["txt", "csv"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-boot", dest="n_boot", type=int)
    sp.add_argument("--ci-method", dest="ci_method", choices=["bootstrap_percentile", "walsh_exact"])
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](args, cfg)
    except (CliError, SensorLogError, RegistryError, SurveyError, report.ReportError, pausenet.ModelError,
            dsp.SignalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
