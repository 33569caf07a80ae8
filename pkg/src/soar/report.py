"""Figures and a tab-delimited table from an exported results directory."""
from __future__ import annotations

import glob
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_poses(path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    return np.atleast_1d(data)


def render_report(out_dir) -> tuple[list[list], list[str]]:
    """Return table rows (header first) and the paths of the written PNGs."""
    with open(os.path.join(out_dir, "metrics.json")) as fh:
        m = json.load(fh)
    cycles = []
    cyc_path = os.path.join(out_dir, "cycles.jsonl")
    if os.path.exists(cyc_path):
        with open(cyc_path) as fh:
            cycles = [json.loads(line) for line in fh if line.strip()]
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    figs = []

    fig, ax = plt.subplots(figsize=(6, 6))
    for path in sorted(glob.glob(os.path.join(out_dir, "poses_*.csv"))):
        d = _read_poses(path)
        name = os.path.basename(path)[6:-4]
        ax.plot(d["x"], d["y"], lw=1.2 if name == "explorer" else 0.9,
                ls="--" if name == "explorer" else "-", label=name)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(fontsize=8)
    ax.set_title("Top view of flown paths")
    figs.append(os.path.join(fig_dir, "paths_xy.png"))
    fig.savefig(figs[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)

    cov = [c for c in cycles if c.get("kind") == "coverage"]
    asg = [c for c in cycles if c.get("kind") == "assignment"]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    if cov:
        t = [c["t"] for c in cov]
        axes[0].step(t, np.cumsum([c["new_viewpoints"] for c in cov]), where="post", label="viewpoints")
        axes[0].step(t, np.cumsum([c["new_points"] for c in cov]) / 100.0, where="post", label="points / 100")
        axes[0].legend(fontsize=8)
    axes[0].set_xlabel("t (s)")
    axes[0].set_title("Incremental coverage")
    if asg:
        axes[1].plot([c["t"] for c in asg], [np.mean(c["k_same"]) for c in asg], marker=".")
    axes[1].set_xlabel("t (s)")
    axes[1].set_ylabel("mean K_same")
    axes[1].set_title("Assignment consistency")
    figs.append(os.path.join(fig_dir, "cycles.png"))
    fig.savefig(figs[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)

    rows = [["agent", "role", "time_s", "path_length_m", "visited"]]
    for name, a in m["agents"].items():
        rows.append([name, a["role"], f"{a['flight_time']:.1f}", f"{a['path_length']:.1f}", a["visited"]])
    rows.append(["viewpoints", m["viewpoint_count"], "coverage", f"{m['coverage_rate']:.4f}",
                 "complete" if m["complete"] else "incomplete"])
    return rows, figs
