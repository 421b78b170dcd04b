"""Result serialization: per-job CSVs, sweep summaries, Pareto tables,
and the matching figures.

Every CSV starts with a comment line naming its schema so downstream
tooling can detect format drift.  Figures are rendered next to the CSVs
with a non-interactive matplotlib backend.
"""

from __future__ import annotations

import csv
import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .engine import METRICS_SCHEMA, RunMetrics

log = logging.getLogger(__name__)

JOB_COLUMNS = [
    "job_id", "model", "frames", "arrival_s", "admit_s", "scheduled_s",
    "finished_s", "ideal_exec_s", "exec_s", "stall_s", "e2e_s",
    "ideal_energy_j", "stall_energy_j", "energy_j", "edp_js",
    "rejected", "measured",
]

SUMMARY_COLUMNS = [
    "completed", "rejected", "measured", "throughput_jobs_s",
    "mean_exec_s", "mean_e2e_s", "mean_energy_j", "mean_edp_js",
    "mean_stall_s", "mean_stall_energy_j",
    "compute_energy_j", "comm_energy_j", "leakage_energy_j",
    "integrated_energy_j", "ledger_residual_rel",
    "throttle_events", "throttled_chiplet_s", "max_temp_k",
    "max_overshoot_k", "end_time_s", "warmup_s",
]

EVAL_COLUMNS = [
    "scheduler", "omega_time", "omega_energy", "admit_rate", "seed",
] + SUMMARY_COLUMNS

TRAIN_CURVE_SCHEMA = "pimsched-training-v1"


def _atomic_writer(path):
    """Write to a sibling temp file, then rename over the target."""
    tmp = path + ".tmp"

    class _Ctx:
        def __enter__(self):
            self.fh = open(tmp, "w", newline="")
            return self.fh

        def __exit__(self, exc_type, exc, tb):
            self.fh.close()
            if exc_type is None:
                os.replace(tmp, path)
            else:
                os.unlink(tmp)
            return False

    return _Ctx()


def write_job_csv(path: str, metrics: RunMetrics) -> None:
    """One row per job plus a trailing summary row."""
    with _atomic_writer(path) as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(JOB_COLUMNS)
        for r in metrics.records:
            w.writerow([getattr(r, c) for c in JOB_COLUMNS])
        fh.write("# summary\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([getattr(metrics, c) for c in SUMMARY_COLUMNS])


def write_eval_csv(path: str, rows: list[dict]) -> None:
    """Flat sweep table: one row per (scheduler, omega, admit rate, seed)."""
    with _atomic_writer(path) as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in EVAL_COLUMNS})


def summarize_rows(rows: list[dict], keys=("scheduler", "omega_time", "omega_energy", "admit_rate")):
    """Average metric columns across seeds for each key combination.

    Returns rows in first-seen key order with a ``n_seeds`` count column.
    """
    groups: dict[tuple, list[dict]] = {}
    order = []
    for row in rows:
        k = tuple(row[c] for c in keys)
        if k not in groups:
            groups[k] = []
            order.append(k)
        groups[k].append(row)
    out = []
    metric_cols = [c for c in SUMMARY_COLUMNS if c != "warmup_s"]
    for k in order:
        g = groups[k]
        agg = dict(zip(keys, k))
        agg["n_seeds"] = len(g)
        for c in metric_cols:
            vals = [float(r[c]) for r in g]
            agg[c] = sum(vals) / len(vals)
        out.append(agg)
    return out


def write_summary_csv(path: str, summary_rows: list[dict]) -> None:
    cols = ["scheduler", "omega_time", "omega_energy", "admit_rate", "n_seeds"] + [
        c for c in SUMMARY_COLUMNS if c != "warmup_s"
    ]
    with _atomic_writer(path) as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in summary_rows:
            w.writerow({k: row.get(k, "") for k in cols})


def write_pareto_csv(path: str, summary_rows: list[dict], admit_rate: float) -> list[dict]:
    """Exec-time-vs-energy trade-off table at one admit rate."""
    sel = [r for r in summary_rows if float(r["admit_rate"]) == float(admit_rate)]
    cols = ["scheduler", "omega_time", "omega_energy",
            "mean_exec_s", "mean_energy_j", "mean_edp_js", "throughput_jobs_s"]
    with _atomic_writer(path) as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        fh.write(f"# pareto at admit_rate={admit_rate:g}\n")
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in sel:
            w.writerow(row)
    return sel


def write_training_csv(path: str, history: list[dict]) -> None:
    if not history:
        raise ValueError("empty training history")
    cols = list(history[0].keys())
    with _atomic_writer(path) as fh:
        fh.write(f"# schema: {TRAIN_CURVE_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow(row)


class TrainingCsvStream:
    """Streams training-history rows to disk as they are produced."""

    def __init__(self, path: str):
        self.path = path
        self._fh = None
        self._writer = None

    def __call__(self, row: dict) -> None:
        if self._fh is None:
            self._fh = open(self.path, "w", newline="")
            self._fh.write(f"# schema: {TRAIN_CURVE_SCHEMA}\n")
            self._writer = csv.DictWriter(self._fh, fieldnames=list(row.keys()))
            self._writer.writeheader()
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def plot_throughput_curve(path: str, summary_rows: list[dict]) -> None:
    """Throughput vs admit rate, one line per scheduler/preference."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = []
    for row in summary_rows:
        lbl = _label(row)
        if lbl not in labels:
            labels.append(lbl)
    for lbl in labels:
        pts = sorted(
            (float(r["admit_rate"]), float(r["throughput_jobs_s"]))
            for r in summary_rows if _label(r) == lbl
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=lbl)
    ax.set_xlabel("admit rate (jobs/s)")
    ax.set_ylabel("throughput (jobs/s)")
    ax.set_title("Throughput vs admit rate")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pareto(path: str, pareto_rows: list[dict]) -> None:
    """Mean execution time vs mean energy scatter."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for row in pareto_rows:
        x = float(row["mean_exec_s"])
        y = float(row["mean_energy_j"])
        ax.scatter(x, y, s=40)
        ax.annotate(_label(row), (x, y), textcoords="offset points",
                    xytext=(5, 3), fontsize=8)
    ax.set_xlabel("mean execution time (s)")
    ax.set_ylabel("mean energy (J)")
    ax.set_title("Execution time vs energy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curve(path: str, history: list[dict]) -> None:
    """Raw and smoothed value loss over updates."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["update"] for row in history]
    raw = [row["value_loss"] for row in history]
    ax.plot(xs, raw, alpha=0.35, label="value loss")
    ax.plot(xs, smooth(raw, 0.8), label="smoothed (a=0.8)")
    ax.set_xlabel("update")
    ax.set_ylabel("value loss")
    ax.set_yscale("log")
    ax.set_title("Critic convergence")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def smooth(values, alpha: float = 0.8) -> list[float]:
    """Exponential smoothing: y_t = alpha*y_{t-1} + (1-alpha)*x_t."""
    out = []
    acc = None
    for v in values:
        acc = v if acc is None else alpha * acc + (1.0 - alpha) * v
        out.append(acc)
    return out


def _label(row: dict) -> str:
    name = row["scheduler"]
    if name == "thermos":
        return f"thermos[{float(row['omega_time']):g},{float(row['omega_energy']):g}]"
    return name
