"""Evaluation reports: delimited outputs plus matplotlib figures.

Every report directory gets the text/CSV artifacts and the rendered PNG
figures side by side. Figure writing strips volatile metadata so repeated
runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import RecallReport

_PNG_META = {"Software": None}  # suppress the default Matplotlib tag


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def write_ar_curve_csv(report: RecallReport, path) -> None:
    lines = ["theta,ar,recall_vsd,recall_mssd,recall_mspd"]
    for i, theta in enumerate(report.theta_levels):
        lines.append(
            f"{theta:.2f},{report.ar_curve[i]:.6f},{report.vsd_recall[i]:.6f},"
            f"{report.mssd_recall[i]:.6f},{report.mspd_recall[i]:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_per_object_csv(report: RecallReport, path) -> None:
    lines = ["obj_id,ar"]
    for obj, ar in sorted(report.per_object.items()):
        lines.append(f"{obj},{ar:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def figure_ar_curve(report: RecallReport, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    theta = report.theta_levels
    ax.plot(theta, report.ar_curve, "o-", label="AR", color="tab:blue")
    ax.plot(theta, report.vsd_recall, "s--", label="VSD recall", color="tab:orange")
    ax.plot(theta, report.mssd_recall, "^--", label="MSSD recall", color="tab:green")
    ax.plot(theta, report.mspd_recall, "v--", label="MSPD recall", color="tab:red")
    ax.set_xlabel("error tolerance threshold upper bound")
    ax.set_ylabel("AR / recall")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def figure_per_object_ar(report: RecallReport, path) -> None:
    objs = sorted(report.per_object)
    values = [report.per_object[o] for o in objs]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(objs) + 2.0), 3.2))
    ax.bar([str(o) for o in objs], values, color="tab:blue", width=0.6)
    ax.set_xlabel("object")
    ax.set_ylabel("AR")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, axis="y", alpha=0.4)
    fig.tight_layout()
    _save(fig, path)


def figure_rotation_errors(errors_deg, path, threshold: float = 5.0) -> None:
    errors = np.asarray(list(errors_deg), dtype=np.float64)
    shown = np.minimum(errors, 60.0)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.3 * len(errors) + 2.0), 3.2))
    colors = ["tab:green" if e < threshold else "tab:red" for e in errors]
    ax.bar(np.arange(len(errors)), shown, color=colors, width=0.7)
    ax.axhline(threshold, color="black", linestyle="--", linewidth=1)
    ax.set_xlabel("query")
    ax.set_ylabel("rotation error [deg]")
    ax.grid(True, axis="y", alpha=0.4)
    fig.tight_layout()
    _save(fig, path)


def format_recall_block(report: RecallReport, acc15_value=None, mean_rot_err=None) -> str:
    lines = [
        f"ar_vsd: {report.ar_vsd:.6f}",
        f"ar_mssd: {report.ar_mssd:.6f}",
        f"ar_mspd: {report.ar_mspd:.6f}",
        f"ar: {report.ar:.6f}",
    ]
    if acc15_value is not None:
        lines.append(f"acc15: {acc15_value:.6f}")
    if mean_rot_err is not None:
        lines.append(f"mean_rotation_error_deg: {mean_rot_err:.6f}")
    return "\n".join(lines)
