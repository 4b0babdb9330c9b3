"""PNG figures for experiment outputs (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_summary", "plot_convergence"]

_LABELS = {
    "gbd": "GBD (optimal)",
    "sca": "SCA (suboptimal)",
    "full_coop": "full cooperation",
    "full_coop_no_energy_share": "no energy sharing",
    "colocated": "co-located antennas",
}
_XLABEL = {"total_antennas": r"total transmit antennas $N_T L$", "sigma_est_sq": r"CSI error $\sigma^2_{est}$"}
_MARKERS = "osd^v"


def _style(ax):
    ax.grid(True, alpha=0.3)
    ax.spines[["top", "right"]].set_visible(False)


def plot_summary(summary: list[dict], experiment: str, out_dir) -> str:
    """Seed-averaged dBm curve per algorithm; returns the file name."""
    harvested = experiment.startswith("harvested")
    key = "harvested_total_dbm" if harvested else "objective_dbm"
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, algo in enumerate(dict.fromkeys(r["algorithm"] for r in summary)):
        rows = [r for r in summary if r["algorithm"] == algo]
        x = np.array([r["sweep_value"] for r in rows])
        y = np.array([r[key] for r in rows])
        ax.plot(x, y, marker=_MARKERS[i % len(_MARKERS)], label=_LABELS.get(algo, algo))
    param = summary[0]["sweep_param"] if summary else ""
    ax.set_xlabel(_XLABEL.get(param, param))
    ax.set_ylabel("average harvested power (dBm)" if harvested else "average transmit power (dBm)")
    _style(ax)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    name = f"{experiment}.png"
    fig.savefig(Path(out_dir) / name, dpi=150)
    plt.close(fig)
    return name


def plot_convergence(traces: dict, out_dir) -> list[str]:
    """Upper and lower bounds against iteration, one figure per seed."""
    names = []
    for seed in sorted({s for _, s in traces}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for (algo, s), tr in sorted(traces.items()):
            if s != seed:
                continue
            it = [r.iter for r in tr.records]
            ub = np.array([r.UB for r in tr.records], float)
            ub[~np.isfinite(ub)] = np.nan
            if algo == "gbd":
                lb = np.array([r.LB for r in tr.records], float)
                lb[~np.isfinite(lb)] = np.nan
                ax.step(it, ub, where="post", label="GBD upper bound")
                ax.step(it, lb, where="post", linestyle="--", label="GBD lower bound")
            else:
                ax.plot(it, ub, marker="o", label=f"{_LABELS.get(algo, algo)}, penalized objective")
        ax.set_xlabel("iteration")
        ax.set_ylabel("objective (W)")
        _style(ax)
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        name = f"convergence_seed{seed}.png"
        fig.savefig(Path(out_dir) / name, dpi=150)
        plt.close(fig)
        names.append(name)
    return names
