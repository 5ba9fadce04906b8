"""Command-line interface.

Subcommands::

    simulate   write a synthetic session dataset (frames + CSVs)
    extract    dump the extracted respiratory signals of a session
    train      fit the apnea detector ensemble on session datasets
    evaluate   run the pipeline, emit per-window CSVs, report and figures
    report     rebuild report and figures from an evaluate output directory

Exit codes: 0 success, 2 validation failure, 3 completed in degraded mode.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import apnea as apnea_mod
from . import dataset, pipeline, report as report_mod
from .core import Task
from .errors import DatasetError, PipelineError
from .sim import make_session, synth_frames, synth_signals

log = logging.getLogger("respifusion")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGRADED = 3


def _config_from_args(args) -> pipeline.PipelineConfig:
    if getattr(args, "config", None):
        cfg = pipeline.PipelineConfig.from_file(args.config)
    else:
        cfg = pipeline.PipelineConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    if getattr(args, "stride", None) is not None:
        overrides["stride_s"] = args.stride
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        fields = {f.name: f for f in dataclasses.fields(pipeline.PipelineConfig)}
        d = cfg.to_dict()
        for key, value in overrides.items():
            if key not in fields:
                raise SystemExit(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = json.loads(value) if value != "null" else None
            d[key] = value
        cfg = pipeline.PipelineConfig.from_dict(d)
    return cfg


def _parse_dims(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    return int(w), int(h)


def cmd_simulate(args) -> int:
    spec = make_session(Task(args.task), seed=args.seed, noise=args.noise)
    overrides = {}
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    if args.rr is not None:
        overrides["rr_bpm"] = args.rr
    if args.nir_size:
        overrides["nir_dims"] = _parse_dims(args.nir_size)
    if args.fir_size:
        overrides["fir_dims"] = _parse_dims(args.fir_size)
    if args.frame_noise is not None:
        overrides["frame_noise"] = args.frame_noise
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    sim_signals = synth_signals(spec)
    sim_frames = synth_frames(spec)
    out = dataset.write_session(args.out, sim_frames, sim_signals,
                                subject=args.subject, sex=args.sex)
    log.info("wrote session %s (%s, seed %d)", out, spec.task.value, spec.seed)
    return EXIT_OK


def _load_and_analyze(session_dir: str, cfg_dict: dict):
    cfg = pipeline.PipelineConfig.from_dict(cfg_dict)
    session = dataset.load_session(session_dir)
    signals, _, diagnostics = pipeline.extract_signals(session, cfg)
    records = pipeline.analyze_windows(
        signals, cfg, reference=session.reference.get(
            dataset.SignalSource.REF_THORAX))
    return session_dir, session, signals, records, diagnostics


def _analyze_many(dirs, cfg, workers: int):
    cfg_dict = cfg.to_dict()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_load_and_analyze, dirs,
                                    [cfg_dict] * len(dirs)))
    else:
        results = [_load_and_analyze(d, cfg_dict) for d in dirs]
    return results


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    session = dataset.load_session(args.session)
    signals, _, diagnostics = pipeline.extract_signals(session, cfg)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        fh.write("t_seconds,source,value\n")
        for source in sorted(signals, key=lambda s: s.value):
            sig = signals[source]
            for t, v in zip(sig.times, sig.values):
                fh.write(f"{t:.6f},{source.value},{v:.9f}\n")
    for d in diagnostics:
        log.warning("%s", d)
    log.info("wrote %s", out)
    return EXIT_DEGRADED if session.degraded else EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    analyzed = _analyze_many(args.sessions, cfg, args.workers)
    windows = []
    for _, session, _, records, _ in analyzed:
        ann = session.annotations
        windows.extend(pipeline.labeled_windows(
            records, ann.intervals(), ann.subject, ann.task))
    model = pipeline.train_detector(windows, cfg)
    apnea_mod.save_ensemble(args.out, model)
    n_train = sum(1 for w in windows if w.task in apnea_mod.DETECTOR_TRAIN_TASKS)
    log.info("trained on %d windows from %d sessions -> %s",
             n_train, len(analyzed), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    analyzed = _analyze_many(args.sessions, cfg, args.workers)

    models: dict[str, apnea_mod.SvmEnsemble] = {}
    shared_model = None
    if args.loso:
        windows = []
        for _, session, _, records, _ in analyzed:
            ann = session.annotations
            windows.extend(pipeline.labeled_windows(
                records, ann.intervals(), ann.subject, ann.task))
        for subject, train_idx, _ in apnea_mod.loso_split(windows):
            feats = np.vstack([windows[i].features for i in train_idx])
            labels = np.array([windows[i].label for i in train_idx])
            models[subject] = _fit_fold(feats, labels, cfg)
    elif args.model:
        shared_model = apnea_mod.load_ensemble(args.model)

    tables = []
    degraded = False
    for idx, (session_dir, session, signals, records, diagnostics) in enumerate(analyzed):
        ann = session.annotations
        model = models.get(ann.subject, shared_model)
        rows = pipeline.fuse_windows(records, cfg, model=model, truth=session.truth,
                                     apnea_intervals=ann.intervals())
        result = pipeline.SessionResult(
            subject=ann.subject, task=ann.task, rows=rows,
            diagnostics=diagnostics, degraded=session.degraded, sex=session.sex)
        degraded = degraded or session.degraded
        name = f"{idx:03d}_{ann.subject}_{ann.task.value}"
        tables.append(report_mod.result_table(result, out_dir / f"{name}_windows.csv"))
        for d in diagnostics:
            log.warning("%s: %s", session_dir, d)

    manifest = [{"subject": tb.subject, "task": tb.task.value, "csv": tb.csv_path.name,
                 "sex": tb.sex, "degraded": tb.degraded} for tb in tables]
    (out_dir / "sessions.json").write_text(json.dumps(manifest, indent=1))
    rep = report_mod.build_report(tables, pool_s=cfg.pool_s)
    report_mod.save_report(out_dir / "report.json", rep)
    if not args.no_figures:
        report_mod.render_figures(tables, out_dir, pool_s=cfg.pool_s)
    log.info("evaluation written to %s", out_dir)
    return EXIT_DEGRADED if degraded else EXIT_OK


def _fit_fold(feats: np.ndarray, labels: np.ndarray, cfg: pipeline.PipelineConfig):
    from .svm import SvmConfig

    ens = apnea_mod.SvmEnsemble(
        threshold=cfg.apnea_threshold,
        svm_config=SvmConfig(kernel=cfg.svm_kernel, c=cfg.svm_c, gamma=cfg.svm_gamma))
    return ens.fit(feats, labels, seed=cfg.seed)


def cmd_report(args) -> int:
    src = Path(args.eval_dir)
    manifest_path = src / "sessions.json"
    if not manifest_path.exists():
        raise DatasetError(f"{src}: missing sessions.json (not an evaluate output?)")
    manifest = json.loads(manifest_path.read_text())
    tables = []
    for entry in manifest:
        csv_path = src / entry["csv"]
        tables.append(report_mod.SessionTable(
            subject=entry["subject"], task=Task(entry["task"]), csv_path=csv_path,
            columns=report_mod.read_window_csv(csv_path),
            sex=entry.get("sex"), degraded=entry.get("degraded", False)))
    out_dir = Path(args.out) if args.out else src
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = report_mod.build_report(tables, pool_s=args.pool)
    report_mod.save_report(out_dir / "report.json", rep)
    if not args.no_figures:
        report_mod.render_figures(tables, out_dir, pool_s=args.pool)
    log.info("report written to %s", out_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="respifusion",
        description="Multispectral video fusion for respiratory monitoring")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic session dataset")
    p.add_argument("--task", required=True, choices=[t.value for t in Task])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default="S00")
    p.add_argument("--sex", choices=["f", "m"], default=None)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--frame-noise", type=float, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--rr", type=float, default=None)
    p.add_argument("--nir-size", default=None, help="WxH, default 336x190")
    p.add_argument("--fir-size", default=None, help="WxH, default 160x120")
    p.set_defaults(func=cmd_simulate)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field")
        p.add_argument("--stride", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("extract", help="extract respiratory signals from a session")
    p.add_argument("session")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the apnea detector on sessions")
    p.add_argument("sessions", nargs="+")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the pipeline and emit reports")
    p.add_argument("sessions", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="trained detector (JSON)")
    p.add_argument("--loso", action="store_true",
                   help="train per leave-one-subject-out fold instead of --model")
    p.add_argument("--no-figures", action="store_true")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="rebuild report/figures from evaluate output")
    p.add_argument("eval_dir")
    p.add_argument("--out", default=None)
    p.add_argument("--pool", type=float, default=15.0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DatasetError as exc:
        log.error("dataset validation failed: %s", exc)
        return EXIT_VALIDATION
    except PipelineError as exc:
        log.error("pipeline error: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
