"""Render PNG figures from the CSVs written by ``safegain eval`` / ``safegain rollout``.

Kept out of the ``safegain`` command itself; run as ``safegain-plots DIR``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _long(path: Path) -> dict[str, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """policy -> series -> (t, value)."""
    raw: dict = defaultdict(lambda: defaultdict(lambda: ([], [])))
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            t, v = raw[row["policy"]][row["series"]]
            t.append(float(row["t"]))
            v.append(float(row["value"]))
    return {p: {s: (np.array(t), np.array(v)) for s, (t, v) in d.items()} for p, d in raw.items()}


def plot_reward_distribution(src: Path, dest: Path) -> Path:
    rewards: dict[str, list[float]] = defaultdict(list)
    switches: dict[str, list[float]] = defaultdict(list)
    with open(src, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rewards[row["policy"]].append(float(row["cumulative_reward"]))
            switches[row["policy"]].append(float(row["switches"]))
    names = list(rewards)
    fig, ax = plt.subplots(figsize=(7, 4))
    pos = np.arange(1, len(names) + 1)
    ax.violinplot([rewards[n] for n in names], positions=pos, showextrema=False)
    means = [np.mean(rewards[n]) for n in names]
    stds = [np.std(rewards[n]) for n in names]
    ax.errorbar(pos, means, yerr=stds, fmt="o", color="k", capsize=3)
    if "greedy" in rewards:
        ax.axhline(np.mean(rewards["greedy"]), ls="--", color="gray", lw=1)
    for x, n in zip(pos, names):
        ax.annotate(f"{np.mean(switches[n]):.1f} sw", (x, max(rewards[n])), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=15)
    ax.set_ylabel("cumulative reward")
    fig.tight_layout()
    fig.savefig(dest, dpi=150)
    plt.close(fig)
    return dest


def plot_series(src: Path, dest: Path, ylabel: str, series: list[str] | None = None,
                policy: str | None = None) -> Path:
    data = _long(src)
    policy = policy or ("greedy" if "greedy" in data else next(iter(data)))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, (t, v) in data[policy].items():
        if series is None or name in series:
            ax.plot(t, v, label=name, lw=1)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, ncol=3)
    ax.set_title(policy, fontsize=9)
    fig.tight_layout()
    fig.savefig(dest, dpi=150)
    plt.close(fig)
    return dest


FIGURES = {
    "gain_schedule": ("gain", ["k_p_x", "k_p_y", "k_p_z"]),
    "error_states": ("error state", None),
    "position": ("position [m]", None),
    "euler_angles": ("angle [rad]", None),
    "controls": ("input", None),
    "step_reward": ("reward per step", None),
}


def render_all(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    out = []
    src = run_dir / "reward_distribution.csv"
    if src.exists():
        out.append(plot_reward_distribution(src, run_dir / "reward_distribution.png"))
    for name, (ylabel, series) in FIGURES.items():
        src = run_dir / f"{name}.csv"
        if src.exists():
            out.append(plot_series(src, run_dir / f"{name}.png", ylabel, series))
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="safegain-plots", description="render figures from a run directory")
    parser.add_argument("run_dir", type=Path)
    args = parser.parse_args(argv)
    written = render_all(args.run_dir)
    for p in written:
        print(p)
    return 0 if written else 1


if __name__ == "__main__":
    sys.exit(main())
