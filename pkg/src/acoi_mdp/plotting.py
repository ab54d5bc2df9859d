"""Figures written next to the CSV reports (opt-in from the CLI)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_vanish(run, probes: Sequence[int], states: Sequence[float], out_dir: Path) -> list[Path]:
    """(1 - alpha) value against 1 - alpha, and h_alpha at the probe states."""
    out_dir = Path(out_dir)
    gap = 1.0 - np.asarray(run.schedule.alphas)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(gap, run.rho_sequence, "o-")
    ax.axhline(run.rho_star, color="grey", lw=0.8, ls="--")
    ax.invert_xaxis()
    ax.set_xlabel("1 - alpha")
    ax.set_ylabel("(1 - alpha) value")
    paths = [_save(fig, out_dir / "vanish_rho.png")]

    fig, ax = plt.subplots(figsize=(6, 4))
    for p in probes:
        ax.semilogx(gap, run.h_per_alpha[:, p], ".-", label=f"x={states[p]:.3g}")
    ax.invert_xaxis()
    ax.set_xlabel("1 - alpha")
    ax.set_ylabel("relative value")
    if len(probes) <= 12:
        ax.legend(fontsize=7, ncol=2)
    paths.append(_save(fig, out_dir / "vanish_h.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(states, run.h_lower, label="lower envelope")
    ax.plot(states, run.h_upper, ls="--", label="upper envelope")
    ax.set_xlabel("state")
    ax.legend()
    paths.append(_save(fig, out_dir / "vanish_envelopes.png"))
    return paths


def plot_h_bound(rows: list[dict], out_dir: Path) -> Path:
    """Largest h_alpha over the schedule against eps_bar + H at each probe."""
    xs = sorted({r["x"] for r in rows})
    h = [max(r["h"] for r in rows if r["x"] == x) for x in xs]
    bound = [min(r["bound"] for r in rows if r["x"] == x) for x in xs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, h, "o-", label="max relative value")
    ax.plot(xs, bound, "s--", label="bound")
    ax.set_yscale("log")
    ax.set_xlabel("state")
    ax.legend()
    return _save(fig, Path(out_dir) / "h_bound.png")


def plot_hitting(reports: list, out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x0 = [r.start_state for r in reports]
    ax.errorbar(x0, [r.mean_tau for r in reports], yerr=[r.ci_halfwidth for r in reports],
                fmt="o", capsize=3, label="mean hitting time")
    ax.plot(x0, [r.bound_rhs for r in reports], "s", label="bound")
    ax.set_xlabel("start state")
    ax.legend()
    return _save(fig, Path(out_dir) / "hitting_time.png")
