"""Figure renderers over the simulation CSV outputs.

All rendering is deterministic: fixed figure geometry, the Agg backend,
and stripped PNG metadata, so regenerating a figure from the same CSV is
byte-stable under a pinned matplotlib.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schemas import SchemaError, Table, load_table  # noqa: E402

#: Fig-10 style action colors: action 1 blue, action 2 yellow.
ACTION_COLORS = {1: "#1f77b4", 2: "#ffcc00"}

KINDS = ("curve", "scatter", "heatmap", "boxplot")

#: default input schema per figure kind
KIND_SCHEMA = {
    "curve": "sherwood",
    "scatter": "experience",
    "heatmap": "heatmap",
    "boxplot": "boxplot",
}


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    schema: str | None = None  # curve also accepts the transient schema
    log_x: bool = True
    state_filter: int | None = None  # scatter: keep experiences starting here
    channel: str = "r_diff"  # scatter reward column
    title: str | None = None
    dpi: int = 130

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("no input CSVs")
        if self.schema is None:
            self.schema = KIND_SCHEMA[self.kind]


def _new_figure():
    return plt.subplots(figsize=(6.4, 4.2))


def _save(fig, spec: FigureSpec):
    fig.savefig(
        spec.output,
        dpi=spec.dpi,
        metadata={"Software": None},  # strip the version stamp: byte-stable
    )
    plt.close(fig)


def render(spec: FigureSpec) -> str:
    """Render the figure described by ``spec``; returns the output path."""
    tables = [load_table(p, spec.schema) for p in spec.inputs]
    fig, ax = _new_figure()
    if spec.kind == "curve":
        _render_curve(ax, tables, spec)
    elif spec.kind == "scatter":
        _render_scatter(ax, tables, spec)
    elif spec.kind == "heatmap":
        _render_heatmap(fig, ax, tables, spec)
    else:
        _render_boxplot(ax, tables, spec)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    _save(fig, spec)
    return spec.output


def _render_curve(ax, tables, spec):
    """Sherwood-versus-Peclet curves (one line per stroke w/R), or
    transient flux histories when fed the transient schema."""
    for table in tables:
        if spec.schema == "sherwood":
            groups = sorted(set(table.strings("wR")), key=float)
            for wr in groups:
                rows = [r for r in table.rows if r["wR"] == wr]
                pe = np.array([float(r["pe"]) for r in rows])
                sh = np.array([float(r["Sh"]) for r in rows])
                order = np.argsort(pe)
                ax.plot(pe[order], sh[order], "o-", label=f"w/R = {float(wr):g}")
            ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
            ax.set_ylabel("Sh")
        else:  # transient
            groups = sorted(set(table.strings("pe")), key=float)
            for pe in groups:
                rows = [r for r in table.rows if r["pe"] == pe]
                t = np.array([float(r["t"]) for r in rows])
                j = np.array([float(r[table.columns[2]]) for r in rows])
                order = np.argsort(t)
                ax.plot(t[order], j[order], label=f"Pe = {float(pe):g}")
            ax.set_ylabel("J / J0")
    if spec.schema == "sherwood":
        ax.set_xlabel("Pe")
        if spec.log_x:
            ax.set_xscale("log")
    else:
        ax.set_xlabel("t S / w")
    ax.legend()


def _render_scatter(ax, tables, spec):
    """Instantaneous rewards versus center-of-mass position, split by
    action: a = 1 blue, a = 2 yellow."""
    for table in tables:
        rows = table.rows
        if spec.state_filter is not None:
            rows = [r for r in rows if int(r["s"]) == spec.state_filter]
        if not rows:
            raise SchemaError("state filter removed every experience")
        for action in (1, 2):
            sel = [r for r in rows if int(r["a"]) == action]
            x = [float(r["X_before"]) for r in sel]
            y = [float(r[spec.channel]) for r in sel]
            ax.scatter(x, y, s=9, color=ACTION_COLORS[action],
                       label=f"a = {action}", alpha=0.8, linewidths=0)
    ax.set_xlabel("X")
    ax.set_ylabel(spec.channel)
    ax.legend()


def _render_heatmap(fig, ax, tables, spec):
    """Success-rate maps over (gamma, alpha), cell values annotated;
    missing cells are grayed out rather than drawn as zero."""
    table = tables[0]
    rewards = sorted(set(table.strings("reward")))
    if len(rewards) > 1:
        # one panel per reward channel
        plt.close(fig)
        fig, axes = plt.subplots(1, len(rewards), figsize=(5.2 * len(rewards), 4.2))
        for ax_i, reward in zip(np.atleast_1d(axes), rewards):
            _heatmap_panel(fig, ax_i, table, reward)
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        _save(fig, spec)
        return
    _heatmap_panel(fig, ax, table, rewards[0])


def _heatmap_panel(fig, ax, table: Table, reward: str):
    rows = [r for r in table.rows if r["reward"] == reward]
    gammas = sorted({float(r["gamma"]) for r in rows})
    alphas = sorted({float(r["alpha"]) for r in rows})
    grid = np.full((len(gammas), len(alphas)), np.nan)
    for r in rows:
        i = gammas.index(float(r["gamma"]))
        j = alphas.index(float(r["alpha"]))
        grid[i, j] = float(r["success_rate"])
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("0.8")
    im = ax.imshow(
        np.ma.masked_invalid(grid), origin="lower", aspect="auto",
        cmap=cmap, vmin=0.0, vmax=1.0,
    )
    ax.set_xticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_yticks(range(len(gammas)), [f"{g:g}" for g in gammas])
    ax.set_xlabel("alpha")
    ax.set_ylabel("gamma")
    ax.set_title(reward)
    for i in range(len(gammas)):
        for j in range(len(alphas)):
            if np.isnan(grid[i, j]):
                continue
            val = grid[i, j]
            color = "white" if val < 0.55 else "black"
            ax.text(j, i, f"{val:g}", ha="center", va="center",
                    fontsize=7, color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)


def _render_boxplot(ax, tables, spec):
    """Total success rate per batch, grouped by reward and Peclet."""
    table = tables[0]
    rewards = sorted(set(table.strings("reward")))
    pes = sorted({float(p) for p in table.strings("pe")})
    width = 0.8 / len(rewards)
    for k, reward in enumerate(rewards):
        data = []
        for pe in pes:
            vals = [
                float(r["total_success"])
                for r in table.rows
                if r["reward"] == reward and float(r["pe"]) == pe
            ]
            data.append(vals if vals else [np.nan])
        positions = np.arange(len(pes)) + (k - (len(rewards) - 1) / 2) * width
        bp = ax.boxplot(
            data, positions=positions, widths=0.9 * width, patch_artist=True,
            medianprops={"color": "black"},
        )
        color = plt.get_cmap("tab10")(k)
        for box in bp["boxes"]:
            box.set_facecolor(color)
            box.set_alpha(0.7)
        ax.plot([], [], color=color, lw=6, alpha=0.7, label=reward)
    ax.set_xticks(range(len(pes)), [f"{p:g}" for p in pes])
    ax.set_xlabel("Pe")
    ax.set_ylabel("total success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
