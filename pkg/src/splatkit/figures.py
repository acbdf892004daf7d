"""Matplotlib report figures written next to the delimited output files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curves(trace, path):
    """Per-term loss curves over iterations from a training trace."""
    fig, ax = plt.subplots(figsize=(7, 4))
    iters = [rec["iteration"] for rec in trace]
    for key in ("total", "l1", "dssim", "global_depth", "semantic", "local_depth"):
        values = [rec.get(key, 0.0) for rec in trace]
        ax.plot(iters, values, label=key, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=8, ncol=3)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_bars(report, path):
    """Held-out PSNR per view with the mean overlaid."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(report.view_indices))
    ax.bar(x, report.psnr_values, color="#4878ad", label="per view")
    ax.axhline(report.mean_psnr, color="#d65f5f", linestyle="--",
               label=f"mean {report.mean_psnr:.2f} dB")
    ax.set_xticks(list(x))
    ax.set_xticklabels([str(v) for v in report.view_indices])
    ax.set_xlabel("view index")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_curve(result, path):
    """Mean held-out PSNR against the swept regularizer weight."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = [v for v, _ in result.rows]
    ys = [p for _, p in result.rows]
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(result.axis)
    ax.set_ylabel("mean PSNR (dB)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
