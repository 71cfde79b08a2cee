"""The six figure families.

Each builder returns a matplotlib Figure whose line/scatter data come
straight from the CSVs (the only transforms are running means over slots
and means across seeds, both of which the golden tests replicate). Saving
and backend choice live in plot_family.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import io
from .io import PlotDataError


def _by_scheme(cells: list[io.Cell]):
    """Scheme order as first encountered; cells per scheme sorted by seed."""
    order: list[str] = []
    groups: dict[str, list[io.Cell]] = {}
    for cell in cells:
        if cell.scheme not in groups:
            order.append(cell.scheme)
            groups[cell.scheme] = []
        groups[cell.scheme].append(cell)
    for group in groups.values():
        group.sort(key=lambda c: c.seed)
    return order, groups


def fig_convergence(in_dir: str):
    """Running mean of the per-slot reward, seed-averaged, per scheme."""
    _, cells = io.discover(in_dir)
    order, groups = _by_scheme(cells)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for scheme in order:
        slots = None
        rewards = []
        for cell in groups[scheme]:
            cols = io.load_episode(cell.path)
            io.require_columns(cols, ("slot", "reward"), cell.path)
            if slots is not None and len(cols["slot"]) != len(slots):
                raise PlotDataError(f"{cell.path}: horizon differs from the "
                                    f"other '{scheme}' logs")
            slots = cols["slot"]
            rewards.append(cols["reward"])
        mean_reward = np.mean(rewards, axis=0)
        running = np.cumsum(mean_reward) / (np.arange(len(mean_reward)) + 1.0)
        ax.plot(slots, running, label=scheme)
    ax.set_xlabel("slot")
    ax.set_ylabel("running mean reward")
    ax.set_title("Reward convergence within the episode")
    ax.legend()
    fig.tight_layout()
    return fig


def fig_trajectory(in_dir: str):
    """Lowest-seed UAV traces per scheme with GU and BS markers."""
    manifest, cells = io.discover(in_dir)
    order, groups = _by_scheme(cells)
    picked = [groups[scheme][0] for scheme in order]
    fig, ax = plt.subplots(figsize=(6.5, 6.0))
    for cell in picked:
        cols = io.load_episode(cell.path)
        io.require_columns(cols, ("uav_x_0", "uav_y_0"), cell.path)
        xs = io.indexed_columns(cols, "uav_x_")
        ys = io.indexed_columns(cols, "uav_y_")
        for m, (x, y) in enumerate(zip(xs, ys)):
            ax.plot(x, y, marker=".", markersize=3, linewidth=1.0,
                    label=cell.scheme if m == 0 else None)

    gu_pos = next((c.gu_pos for c in picked if c.gu_pos), None)
    if gu_pos is None:
        raise PlotDataError(f"{in_dir}: no 'gu_pos' entries in manifest.json "
                            f"cells; regenerate the run with saoi-sim")
    config = (manifest or {}).get("config", {})
    if "bs_pos" not in config:
        raise PlotDataError(f"{in_dir}/manifest.json: missing 'bs_pos' in "
                            f"config")
    ax.scatter([p[0] for p in gu_pos], [p[1] for p in gu_pos],
               marker="^", s=70, color="black", zorder=3, label="GU")
    ax.scatter([config["bs_pos"][0]], [config["bs_pos"][1]],
               marker="s", s=90, color="tab:red", zorder=3, label="BS")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("UAV trajectories")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def fig_realtime(in_dir: str):
    """Per-slot mean AoI, mean value, and mean SAoI (lowest seed per scheme)."""
    _, cells = io.discover(in_dir)
    order, groups = _by_scheme(cells)
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 8.0), sharex=True)
    for scheme in order:
        cell = groups[scheme][0]
        cols = io.load_episode(cell.path)
        io.require_columns(cols, ("slot", "saoi", "aoi_0", "value_0"),
                           cell.path)
        slots = cols["slot"]
        aoi = np.mean(io.indexed_columns(cols, "aoi_"), axis=0)
        value = np.mean(io.indexed_columns(cols, "value_"), axis=0)
        axes[0].plot(slots, aoi, label=scheme)
        axes[1].plot(slots, value, label=scheme)
        axes[2].plot(slots, cols["saoi"], label=scheme)
    axes[0].set_ylabel("mean AoI (s)")
    axes[1].set_ylabel("mean value")
    axes[2].set_ylabel("mean SAoI")
    axes[2].set_xlabel("slot")
    axes[0].set_title("Real-time freshness and value")
    axes[0].legend(ncol=2, fontsize=8)
    fig.tight_layout()
    return fig


def _fig_sweep(in_dir: str, sweep_field: str, value_col: str,
               value_label: str, xlabel: str, title: str):
    """Two panels (mean AoI, chosen value metric) vs the swept field,
    one seed-averaged line per scheme."""
    rows, path = io.load_summary(
        in_dir, ("scheme", "seed", "sweep_key", "sweep_value",
                 "aoi_mean", value_col))
    rows = [r for r in rows if r["sweep_key"] == sweep_field]
    if not rows:
        raise PlotDataError(
            f"{path}: no rows with sweep_key '{sweep_field}'; generate them "
            f"with saoi-sim --sweep {sweep_field}=V1,V2,...")

    order: list[str] = []
    groups: dict[str, dict[float, list[dict]]] = {}
    for r in rows:
        scheme = r["scheme"]
        if scheme not in groups:
            order.append(scheme)
            groups[scheme] = {}
        groups[scheme].setdefault(float(r["sweep_value"]), []).append(r)

    fig, (ax_aoi, ax_val) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for scheme in order:
        xs = sorted(groups[scheme])
        aoi = [float(np.mean([float(r["aoi_mean"]) for r in groups[scheme][x]]))
               for x in xs]
        val = [float(np.mean([float(r[value_col]) for r in groups[scheme][x]]))
               for x in xs]
        ax_aoi.plot(xs, aoi, marker="o", label=scheme)
        ax_val.plot(xs, val, marker="o", label=scheme)
    for ax, ylabel in ((ax_aoi, "mean AoI (s)"), (ax_val, value_label)):
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
    ax_aoi.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    return fig


def fig_depth(in_dir: str):
    return _fig_sweep(in_dir, "forced_rho", "value_mean",
                      "mean value per delivery", "extraction depth",
                      "Sweep over forced extraction depth")


def fig_datasize(in_dir: str):
    return _fig_sweep(in_dir, "size_max_bits", "value_mean",
                      "mean value per delivery", "max packet size (bits)",
                      "Sweep over packet size")


def fig_gus(in_dir: str):
    return _fig_sweep(in_dir, "num_gus", "value_slot_mean",
                      "mean value per GU-slot", "number of GUs",
                      "Sweep over GU count")


KINDS = {
    "convergence": fig_convergence,
    "trajectory": fig_trajectory,
    "realtime": fig_realtime,
    "depth": fig_depth,
    "datasize": fig_datasize,
    "gus": fig_gus,
}


def build_figure(kind: str, in_dir: str):
    if kind not in KINDS:
        raise PlotDataError(f"unknown plot kind {kind!r}; choose from "
                            f"{', '.join(KINDS)}")
    return KINDS[kind](in_dir)


def plot_family(kind: str, in_dir: str, out_path: str) -> str:
    """Render one figure family from a saoi-sim output directory."""
    fig = build_figure(kind, in_dir)
    try:
        fig.savefig(out_path, dpi=150)
    finally:
        plt.close(fig)
    return out_path
