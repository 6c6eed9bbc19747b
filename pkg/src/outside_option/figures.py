"""Matplotlib renderings of the run tables.

Figures are written next to the CSVs they are drawn from. PNG metadata that
would vary between matplotlib builds is stripped so reruns are byte-stable on
one installation.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FP_COLOR = "#c0392b"
REWARD_COLOR = "#27ae60"
BAR_COLORS = {"standard_bon": "#7f8c8d", "guardrail": "#2980b9", "accelerator": "#8e44ad"}

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_bon_failure(curve_rows, path, title="Best-of-N on the evaluation prompts"):
    """False-positive count and mean winner reward against N, on twin axes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.8))
        ns = [r["N"] for r in curve_rows]
        ax.plot(ns, [r["fp_count"] for r in curve_rows], "o-", color=FP_COLOR, label="false positives")
        ax.set_xscale("log", base=2)
        ax.set_xticks(ns, [str(n) for n in ns])
        ax.set_xlabel("N (samples)")
        ax.set_ylabel("false positive count", color=FP_COLOR)
        ax2 = ax.twinx()
        ax2.errorbar(
            ns,
            [r["mean_true_reward"] for r in curve_rows],
            yerr=[2 * r["mean_true_reward_se"] for r in curve_rows],
            fmt="s--",
            color=REWARD_COLOR,
            capsize=2,
            label="mean true reward",
        )
        ax2.set_ylabel("mean true reward of winner", color=REWARD_COLOR)
        ax.set_title(title)
        _save(fig, path)


def plot_mode_comparison(rows, path, metrics, title):
    """One panel per metric, one bar per mode row."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.4), squeeze=False)
        labels = [_label(r) for r in rows]
        colors = [BAR_COLORS.get(r["mode"], "#34495e") for r in rows]
        for ax, (key, ylabel) in zip(axes[0], metrics):
            vals = [float(r[key]) for r in rows]
            bars = ax.bar(range(len(rows)), vals, color=colors)
            ax.set_xticks(range(len(rows)), labels, rotation=0)
            ax.set_ylabel(ylabel)
            for b, v in zip(bars, vals):
                ax.annotate(f"{v:.3g}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
        fig.suptitle(title)
        _save(fig, path)


def _label(row):
    if row["mode"] == "standard_bon":
        return f"BoN-{row['N']}"
    return f"mini-{row['n']} x{row['L']}\n{row['mode']}"
