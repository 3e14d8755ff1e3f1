"""Figure rendering for the plot-data export path.

Every renderer takes already-parsed series, writes one PNG, and stays
deterministic (fixed size, dpi, and no timestamps) so re-running a command
reproduces the file byte for byte.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (7.0, 4.5)
DPI = 120


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=DPI, metadata={"Software": "varimp"})
    plt.close(fig)


def plot_path3d(series: dict, path: str) -> None:
    """3D translational paths, one line per labelled trajectory."""
    fig = plt.figure(figsize=FIGSIZE)
    ax = fig.add_subplot(projection="3d")
    for label, pos in series.items():
        ax.plot(pos[:, 0], pos[:, 1], pos[:, 2], label=label, linewidth=1.2)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_force(series: dict, path: str, ylabel: str = "force [N]") -> None:
    """Force channels over time; series maps label -> (t, values)."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, (t, vals) in series.items():
        ax.plot(t, vals, label=label, linewidth=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_curve(rows, path: str) -> None:
    """Learning curve: mean return and success rate against training steps."""
    steps = [r[0] for r in rows]
    rets = [r[1] for r in rows]
    rates = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(steps, rets, color="tab:blue", linewidth=1.4, label="mean return")
    ax.set_xlabel("training steps")
    ax.set_ylabel("mean return", color="tab:blue")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(steps, rates, color="tab:orange", linewidth=1.0, label="success rate")
    ax2.set_ylabel("success rate", color="tab:orange")
    ax2.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    _save(fig, path)


def plot_stiffness(series: dict, path: str) -> None:
    """Stiffness traces (top) and force tracking error (bottom)."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    for label, data in series.items():
        ax1.plot(data["t"], data["k"], linewidth=1.2, label=label)
        ax2.plot(data["t"], data["force_err"], linewidth=1.0, label=label)
    ax1.set_ylabel("stiffness [N/m]")
    ax1.grid(True, alpha=0.3)
    ax1.legend(fontsize=8)
    ax2.set_ylabel("|F_ext - F_d| [N]")
    ax2.set_xlabel("t [s]")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
