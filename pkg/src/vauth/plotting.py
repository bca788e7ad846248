"""PNG renderings of bench results (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 5.0
fig_size = [fig_width, fig_width * golden_mean]

params = {
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "font.size": 8,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": fig_size,
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def match_matrix(matrix: np.ndarray, labels, path, title: str = "") -> Path:
    """Accepted (acc, mic) cells of a batch run; the diagonal holds the true pairs."""
    with plt.rc_context(params):
        n = matrix.shape[0]
        fig, ax = plt.subplots(figsize=(fig_width, fig_width))
        ax.imshow(matrix.astype(float), cmap="Greys", vmin=0, vmax=1, interpolation="nearest")
        ticks = np.arange(n)
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
        ax.set_xticklabels(labels, rotation=90, fontsize=5)
        ax.set_yticklabels(labels, fontsize=5)
        ax.set_xlabel("microphone recording")
        ax.set_ylabel("body-channel recording")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def fp_decay(rows: list[dict], path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        n = [r["n"] for r in rows]
        emp = np.array([r["empirical_fp"] for r in rows])
        err = np.array([3 * r["mc_std_error"] for r in rows])
        ax.errorbar(n, np.maximum(emp, 1e-6), yerr=err, marker="o", capsize=2, label="empirical")
        ax.plot(n, [r["hoeffding_bound"] for r in rows], "k--", label="Hoeffding bound")
        ax.set_yscale("log")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("segments n")
        ax.set_ylabel("P(mean score > th)")
        ax.legend(frameon=False)
        return _save(fig, path)


def injection_curve(details: dict, path) -> Path:
    """``details`` maps a noise kind to rows of {level, trials, accepted}."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for kind, rows in details.items():
            lv = [r["level"] for r in rows]
            ax.plot(lv, [r["accepted"] / r["trials"] for r in rows], marker="o", label=kind)
        ax.set_xlabel("induced body-channel level (rms)")
        ax.set_ylabel("acceptance")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(frameon=False)
        return _save(fig, path)


def rejection_bars(reports: list[dict], path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        names = [r["scenario"] for r in reports]
        rates = [r["rejection_rate"] if r["rejection_rate"] is not None else np.nan for r in reports]
        ax.bar(names, rates, color="0.4")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("rejection rate")
        for i, r in enumerate(reports):
            ax.text(i, 0.02, f"{r['accepted']}/{r['trials']}", ha="center", color="w", fontsize=7)
        return _save(fig, path)


def pair_overview(acc, mic, report, path) -> Path:
    """Both channels with the segment verdicts shaded."""
    with plt.rc_context(params):
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(fig_width * 1.4, fig_width * 0.8))
        for ax, sig, name in zip(axes, (acc, mic), ("body channel", "microphone")):
            t = np.arange(len(sig)) / sig.rate_hz
            ax.plot(t, sig.samples, lw=0.5, color="0.2")
            ax.set_ylabel(name)
        for seg in report.segments:
            color = "tab:green" if seg["verdict"] == "Kept" else "tab:red"
            for ax in axes:
                ax.axvspan(seg["start_sec"], seg["end_sec"], color=color, alpha=0.15)
        axes[-1].set_xlabel("time (s) after alignment")
        axes[0].set_title("match" if report.is_match else f"no match ({report.reason})")
        return _save(fig, path)
