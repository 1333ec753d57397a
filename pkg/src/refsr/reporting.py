"""Delimited reports and the matplotlib figures rendered alongside them.

CSV writing is deterministic: fixed column order and a fixed float format,
so identical runs produce byte-identical files. Figures are best-effort
companions for quick inspection and carry no determinism guarantee.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

LOSS_COLUMNS = ("step", "rec", "per", "adv", "tex", "total")
METRIC_COLUMNS = ("pair_id", "level", "psnr_db", "ssim", "gram_dist")


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_loss_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(LOSS_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in LOSS_COLUMNS) + "\n")


def write_metrics_csv(path, rows, means=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")
        if means:
            fh.write(
                ",".join([
                    "mean", "",
                    _fmt(means.get("psnr_db", "")),
                    _fmt(means.get("ssim", "")),
                    _fmt(means.get("gram_dist", "")),
                ]) + "\n"
            )


def render_loss_curves(rows, path) -> None:
    if not rows:
        return
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in ("total", "rec", "per", "adv", "tex"):
        series = [r[key] for r in rows]
        if any(v != 0 for v in series) or key in ("total", "rec"):
            ax.plot(steps, series, label=key, linewidth=1.2)
    ax.set_xlabel("generator step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_metrics_figure(rows, path) -> None:
    if not rows:
        return
    ids = [r["pair_id"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    for ax, key, title in zip(
        axes, ("psnr_db", "ssim", "gram_dist"), ("PSNR (dB)", "SSIM", "Gram distance")
    ):
        ax.bar(range(len(rows)), [r[key] for r in rows], color="#4878a8")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(ids, rotation=60, fontsize=7, ha="right")
        ax.set_title(title, fontsize=10)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
