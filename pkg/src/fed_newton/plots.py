"""SVG line charts of metrics against global rounds."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trace import CSV_COLUMNS, read_csv  # noqa: E402

LABELS = {
    "train_loss": "Training loss",
    "grad_norm": "Gradient norm",
    "val_accuracy": "Validation accuracy",
    "eta": "Step size",
    "comm_rounds": "Communication rounds",
}


def emit_plots(trace_paths, out_dir, metrics=("train_loss", "val_accuracy"),
               log_scale: bool = False) -> list[Path]:
    """One SVG per metric, one curve per trace (first repeat), legend = run id.

    Output is byte-identical for identical inputs.
    """
    trace_paths = [Path(p) for p in trace_paths]
    if not trace_paths:
        raise ValueError("no traces to plot")
    traces = [read_csv(p) for p in trace_paths]
    for m in metrics:
        if m not in CSV_COLUMNS:
            raise ValueError(f"unknown metric {m!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context({"svg.hashsalt": "fed-newton", "svg.fonttype": "none"}):
        for metric in metrics:
            series = []
            for path, records in zip(trace_paths, traces):
                rows = [r for r in records if r.status == "ok" and r.repeat == records[0].repeat] \
                    if records else []
                values = [getattr(r, metric) for r in rows]
                if any(v is None for v in values):
                    raise ValueError(f"{path}: column {metric!r} is empty (schema mismatch)")
                label = records[0].run_id if records and records[0].run_id else path.stem
                series.append(([r.round for r in rows], values, label))
            fig, ax = plt.subplots(figsize=(6, 4))
            for x, y, label in series:
                ax.plot(x, y, label=label, linewidth=1.2)
            if log_scale and metric != "val_accuracy":
                ax.set_yscale("log")
            ax.set_xlabel("Global rounds")
            ax.set_ylabel(LABELS.get(metric, metric))
            ax.legend(loc="best", fontsize="small")
            ax.grid(True, alpha=0.3)
            target = out_dir / f"{metric}.svg"
            fig.savefig(target, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(target)
    return written
