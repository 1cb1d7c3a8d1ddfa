"""Matplotlib figure rendering for benchmark reports and training audits."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .bench import ReportTable
from .pipeline import AuditLog


def save_report_figure(table: ReportTable, path: str | Path) -> None:
    """Bar chart of per-scene PSNR and SSIM with the average marked."""
    scenes = [str(row[0]) for row in table.rows]
    psnr_vals = [row[1] for row in table.rows]
    ssim_vals = [row[2] for row in table.rows]

    fig, (ax_psnr, ax_ssim) = plt.subplots(
        1, 2, figsize=(max(7.0, 0.45 * len(scenes) + 3.0), 3.6)
    )
    x = np.arange(len(scenes))
    ax_psnr.bar(x, psnr_vals, color="#4878d0")
    ax_psnr.axhline(table.average[1], color="#d65f5f", linestyle="--", label="average")
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_psnr.legend(frameon=False, fontsize=8)

    ax_ssim.bar(x, ssim_vals, color="#6acc64")
    ax_ssim.axhline(table.average[2], color="#d65f5f", linestyle="--")
    ax_ssim.set_ylabel("SSIM")
    ax_ssim.set_ylim(0, 1)

    for ax in (ax_psnr, ax_ssim):
        ax.set_xticks(x)
        ax.set_xticklabels(scenes, rotation=60, ha="right", fontsize=7)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)

    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_figure(audit: AuditLog, path: str | Path) -> None:
    """Loss trajectory per training phase, with the annealed weight overlaid."""
    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    phases = []
    for entry in audit.loss_history:
        if entry["phase"] not in phases:
            phases.append(entry["phase"])
    offset = 0
    for phase in phases:
        rows = [e for e in audit.loss_history if e["phase"] == phase]
        xs = np.arange(offset, offset + len(rows))
        ax.plot(xs, [e["loss"] for e in rows], lw=0.9, label=phase)
        offset += len(rows)
    ax.set_xlabel("iteration")
    ax.set_ylabel("stochastic loss")
    ax.set_yscale("log")
    if phases:
        ax.legend(frameon=False, fontsize=8, ncol=2)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
