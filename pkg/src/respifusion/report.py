"""Per-window CSV emission, report assembly and figure rendering.

The per-window CSV column order is a compatibility contract::

    timestamp,rr_ta,rr_rm_nir,rr_rm_fir,snr_ta,snr_rm_nir,snr_rm_fir,
    rr_sqb,apnea_posterior,apnea_flag,rr_final,rr_ref,rr_truth,apnea_truth

All report metrics are recomputed from the emitted CSV files (not from
in-memory floats), so re-running the report stage over the same CSVs
reproduces the report exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CAMERA_SOURCES, SignalSource, Task, pool_segments
from .errors import InsufficientData, NoPairs, Undefined
from .metrics import bland_altman_repeated, classification_metrics, pearson_ci, rmse
from .pipeline import SessionResult, WindowRow

CSV_COLUMNS = (
    "timestamp", "rr_ta", "rr_rm_nir", "rr_rm_fir",
    "snr_ta", "snr_rm_nir", "snr_rm_fir",
    "rr_sqb", "apnea_posterior", "apnea_flag", "rr_final",
    "rr_ref", "rr_truth", "apnea_truth",
)

REPORT_FORMAT_VERSION = 1

#: Source column names for the RR comparison table.
_SOURCE_COLS = {"rr_ta": SignalSource.TA_FIR, "rr_rm_nir": SignalSource.RM_NIR,
                "rr_rm_fir": SignalSource.RM_FIR}


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    return f"{x:.6f}"


def write_window_csv(path: str | Path, rows: list[WindowRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                _fmt(r.timestamp),
                _fmt(r.rr[SignalSource.TA_FIR]),
                _fmt(r.rr[SignalSource.RM_NIR]),
                _fmt(r.rr[SignalSource.RM_FIR]),
                _fmt(r.snr[SignalSource.TA_FIR]),
                _fmt(r.snr[SignalSource.RM_NIR]),
                _fmt(r.snr[SignalSource.RM_FIR]),
                _fmt(r.rr_sqb),
                _fmt(r.apnea_posterior),
                int(r.apnea_flag),
                _fmt(r.rr_final),
                _fmt(r.rr_ref),
                _fmt(r.rr_truth),
                "" if r.apnea_truth is None else int(r.apnea_truth),
            ])


@dataclass
class SessionTable:
    """Parsed per-window CSV plus the session metadata needed for scoring."""

    subject: str
    task: Task
    csv_path: Path
    columns: dict
    sex: str | None = None
    degraded: bool = False

    def finite(self, col: str) -> np.ndarray:
        return self.columns[col]


def read_window_csv(path: str | Path) -> dict:
    cols: dict[str, list] = {c: [] for c in CSV_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected column layout")
        for row in reader:
            for c in CSV_COLUMNS:
                v = row[c]
                cols[c].append(math.nan if v == "" else float(v))
    return {c: np.asarray(v, dtype=float) for c, v in cols.items()}


def _pool_pairs(table: SessionTable, est_col: str, ref_col: str, pool_s: float):
    """Median-pooled (estimate, reference) pairs over shared 15 s bins."""
    t = table.columns["timestamp"]
    est = dict(pool_segments(t, table.columns[est_col], pool_s))
    ref = dict(pool_segments(t, table.columns[ref_col], pool_s))
    keys = sorted(set(est) & set(ref))
    return (np.array([est[k] for k in keys]), np.array([ref[k] for k in keys]))


def _agreement(tables: list[SessionTable], est_col: str, ref_col: str, pool_s: float):
    per_subject: dict[str, dict] = {}
    diffs_by_subject: dict[str, np.ndarray] = {}
    all_est, all_ref = [], []
    for tb in tables:
        e, r = _pool_pairs(tb, est_col, ref_col, pool_s)
        if e.size == 0:
            continue
        all_est.append(e)
        all_ref.append(r)
        prev = diffs_by_subject.get(tb.subject)
        d = e - r
        diffs_by_subject[tb.subject] = d if prev is None else np.concatenate([prev, d])
    if not all_est:
        raise NoPairs(f"no pooled segments pair {est_col} with {ref_col}")
    est = np.concatenate(all_est)
    ref = np.concatenate(all_ref)
    out = {"n_segments": int(est.size), "rmse": rmse(est, ref)}
    for subject, d in diffs_by_subject.items():
        per_subject[subject] = {"rmse": float(np.sqrt(np.mean(d**2))),
                                "n_segments": int(d.size)}
    out["per_subject"] = per_subject
    try:
        ba = bland_altman_repeated(diffs_by_subject)
        out["bland_altman"] = {"bias": ba.bias, "loa_low": ba.loa_low,
                               "loa_high": ba.loa_high, "sd": ba.sd}
    except InsufficientData:
        out["bland_altman"] = None
    try:
        r, lo, hi = pearson_ci(est, ref)
        out["pearson"] = {"r": r, "ci_low": lo, "ci_high": hi}
    except (InsufficientData, Undefined):
        out["pearson"] = None
    return out, est, ref


def _group_split(tables: list[SessionTable], est_col: str, ref_col: str, pool_s: float):
    groups: dict[str, list[float]] = {}
    for tb in tables:
        if not tb.sex:
            continue
        e, r = _pool_pairs(tb, est_col, ref_col, pool_s)
        if e.size:
            groups.setdefault(tb.sex, []).append(float(np.sqrt(np.mean((e - r) ** 2))))
    return {g: {"median_rmse": float(np.median(v)), "n_sessions": len(v)}
            for g, v in groups.items()} or None


def build_report(tables: list[SessionTable], pool_s: float = 15.0) -> dict:
    """Assemble the evaluation report from parsed per-window CSVs.

    RR agreement is scored against the thorax-derived reference when present
    and against the simulator ground truth when present; both sections list
    the fused output next to each single-source estimator and the mean and
    median baselines.
    """
    report: dict = {
        "format_version": REPORT_FORMAT_VERSION,
        "pooling_s": pool_s,
        "sessions": [
            {"subject": tb.subject, "task": tb.task.value, "csv": str(tb.csv_path),
             "degraded": tb.degraded, "sex": tb.sex}
            for tb in tables
        ],
        "degraded": any(tb.degraded for tb in tables),
    }

    # derived baseline columns
    for tb in tables:
        src = np.vstack([tb.columns[c] for c in _SOURCE_COLS])
        with np.errstate(invalid="ignore"):
            tb.columns["rr_mean_baseline"] = np.nanmean(src, axis=0)
            tb.columns["rr_median_baseline"] = np.nanmedian(src, axis=0)

    est_cols = ["rr_final", "rr_sqb", "rr_ta", "rr_rm_nir", "rr_rm_fir",
                "rr_mean_baseline", "rr_median_baseline"]
    for ref_col, key in (("rr_ref", "vs_reference"), ("rr_truth", "vs_truth")):
        section = {}
        for est_col in est_cols:
            try:
                agreement, _, _ = _agreement(tables, est_col, ref_col, pool_s)
                section[est_col] = agreement
            except NoPairs:
                section[est_col] = None
        if any(v is not None for v in section.values()):
            for est_col in ("rr_final", "rr_sqb"):
                if section.get(est_col):
                    groups = _group_split(tables, est_col, ref_col, pool_s)
                    if groups:
                        section[est_col]["by_group"] = groups
            report[key] = section

    # apnea classification per task
    per_task: dict[str, dict] = {}
    for task in Task:
        tbs = [tb for tb in tables if tb.task is task]
        pred, truth = [], []
        for tb in tbs:
            flags = tb.columns["apnea_flag"]
            labels = tb.columns["apnea_truth"]
            ok = np.isfinite(labels)
            pred.append(flags[ok])
            truth.append(labels[ok])
        if pred and sum(len(p) for p in pred):
            m = classification_metrics(np.concatenate(pred), np.concatenate(truth))
            per_task[task.value] = {"f1": m.f1, "sensitivity": m.sensitivity,
                                    "specificity": m.specificity,
                                    "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}
    if per_task:
        report["apnea_classification"] = per_task
    return report


def result_table(result: SessionResult, csv_path: str | Path) -> SessionTable:
    """Write a session's rows and return the parsed-back table."""
    write_window_csv(csv_path, result.rows)
    return SessionTable(
        subject=result.subject,
        task=result.task,
        csv_path=Path(csv_path),
        columns=read_window_csv(csv_path),
        sex=result.sex,
        degraded=result.degraded,
    )


def save_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# figures


def render_figures(tables: list[SessionTable], out_dir: str | Path,
                   pool_s: float = 15.0) -> list[Path]:
    """Render the standard report figures next to the delimited output.

    Produces a Bland-Altman plot, an estimate-vs-reference scatter and a
    per-subject RMSE box plot comparing fusion with the single sources.
    Sessions without a usable reference fall back to the ground-truth
    column.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref_col = "rr_ref"
    if all(np.all(~np.isfinite(tb.columns["rr_ref"])) for tb in tables):
        ref_col = "rr_truth"

    for tb in tables:
        if "rr_median_baseline" not in tb.columns:
            src = np.vstack([tb.columns[c] for c in _SOURCE_COLS])
            with np.errstate(invalid="ignore"):
                tb.columns["rr_mean_baseline"] = np.nanmean(src, axis=0)
                tb.columns["rr_median_baseline"] = np.nanmedian(src, axis=0)

    paths = []
    pairs = [_pool_pairs(tb, "rr_final", ref_col, pool_s) for tb in tables]
    est = np.concatenate([p[0] for p in pairs]) if pairs else np.empty(0)
    ref = np.concatenate([p[1] for p in pairs]) if pairs else np.empty(0)

    if est.size:
        diffs = est - ref
        means = (est + ref) / 2.0
        bias = float(diffs.mean())
        sd = float(diffs.std())
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter(means, diffs, s=10, alpha=0.5, color="tab:blue")
        ax.axhline(bias, color="tab:red", label=f"bias {bias:.2f}")
        for lim in (bias - 1.96 * sd, bias + 1.96 * sd):
            ax.axhline(lim, color="tab:blue", linestyle="--")
        ax.set_xlabel("mean of estimate and reference (breaths/min)")
        ax.set_ylabel("difference (breaths/min)")
        ax.set_title("Bland-Altman, fused RR")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        p = out / "bland_altman.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)

        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.scatter(ref, est, s=10, alpha=0.5)
        lims = [min(ref.min(), est.min()) - 1, max(ref.max(), est.max()) + 1]
        ax.plot(lims, lims, color="grey", linewidth=0.8)
        ax.set_xlabel("reference RR (breaths/min)")
        ax.set_ylabel("fused RR (breaths/min)")
        ax.set_title("Fused estimate vs reference")
        fig.tight_layout()
        p = out / "scatter.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)

    cols = ["rr_final", "rr_sqb", "rr_ta", "rr_rm_nir", "rr_rm_fir"]
    per_col = []
    for col in cols:
        vals = []
        for tb in tables:
            e, r = _pool_pairs(tb, col, ref_col, pool_s)
            if e.size:
                vals.append(float(np.sqrt(np.mean((e - r) ** 2))))
        per_col.append(vals)
    if any(per_col):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.boxplot([v or [np.nan] for v in per_col], tick_labels=cols)
        ax.set_ylabel("per-session RMSE (breaths/min)")
        ax.set_title("RMSE by estimator")
        fig.tight_layout()
        p = out / "rmse_by_source.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
