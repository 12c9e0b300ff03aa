"""Dependency-free SVG and CSV figure emission.

Every writer formats numbers with fixed precision so that the same inputs
give byte-identical files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import HEIGHT, MOVES, WALLS, WIDTH

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


class FigureError(RuntimeError):
    pass


def _fmt(x):
    return f"{float(x):.3f}"


class Svg:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def add(self, tag, **attrs):
        parts = " ".join(f'{k.rstrip("_").replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.items.append(f"<{tag} {parts}/>")

    def text(self, x, y, s, size=12, anchor="start"):
        self.items.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'text-anchor="{anchor}" font-family="sans-serif">{s}</text>')

    def polyline(self, pts, color, width=1.5):
        path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.items.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        return "\n".join([head, f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
                          *self.items, "</svg>", ""])

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.render())


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def arrow_map_svg(arrows: dict, goal=None, title="", cell=28) -> Svg:
    """Grid with one arrow per free cell; ``arrows`` maps (row, col) -> action."""
    svg = Svg(WIDTH * cell, HEIGHT * cell + 20)
    if title:
        svg.text(4, 14, title)
    for r in range(HEIGHT):
        for c in range(WIDTH):
            fill = "#444444" if WALLS[r, c] else "#f4f4f4"
            svg.add("rect", x=c * cell, y=20 + r * cell, width=cell, height=cell, fill=fill, stroke="#cccccc")
    if goal is not None:
        gr, gc = goal
        svg.add("circle", cx=_fmt((gc + 0.5) * cell), cy=_fmt(20 + (gr + 0.5) * cell), r=_fmt(cell * 0.3),
                fill="#d62728")
    for (r, c), a in sorted(arrows.items()):
        dr, dc = MOVES[int(a)]
        cx, cy = (c + 0.5) * cell, 20 + (r + 0.5) * cell
        ex, ey = cx + dc * cell * 0.35, cy + dr * cell * 0.35
        svg.add("line", x1=_fmt(cx - dc * cell * 0.3), y1=_fmt(cy - dr * cell * 0.3), x2=_fmt(ex), y2=_fmt(ey),
                stroke="#1f77b4", stroke_width="2")
        svg.add("circle", cx=_fmt(ex), cy=_fmt(ey), r="2.5", fill="#1f77b4")
    return svg


def _scale(points, width, height, pad=20):
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    s = min((width - 2 * pad) / span[0], (height - 2 * pad) / span[1])
    return lambda p: (pad + (p[0] - lo[0]) * s, height - pad - (p[1] - lo[1]) * s)


def trajectory_svg(paths, title="", size=400) -> Svg:
    """``paths``: list of (points (T, 2), codes (T,)); segments colored by code."""
    if not paths:
        raise FigureError("trajectory figure: no trajectories")
    allpts = np.concatenate([np.asarray(p, dtype=float) for p, _ in paths])
    tr = _scale(allpts, size, size)
    svg = Svg(size, size + 20)
    if title:
        svg.text(4, 14, title)
    for pts, codes in paths:
        pts = np.asarray(pts, dtype=float)
        start = 0
        for t in range(1, len(pts) + 1):
            if t == len(pts) or codes[t] != codes[start]:
                seg = pts[start:min(t + 1, len(pts))]
                color = PALETTE[int(codes[start]) % len(PALETTE)] if codes[start] >= 0 else "#333333"
                svg.polyline([(x, y + 20) for x, y in map(tr, seg)], color)
                start = t
    return svg


def grid_trajectory_svg(cells, codes, goal=None, title="", cell=28) -> Svg:
    svg = arrow_map_svg({}, goal, title, cell)
    pts = [((c + 0.5) * cell, 20 + (r + 0.5) * cell) for r, c in cells]
    for t in range(len(pts) - 1):
        color = PALETTE[int(codes[t]) % len(PALETTE)]
        svg.add("line", x1=_fmt(pts[t][0]), y1=_fmt(pts[t][1]), x2=_fmt(pts[t + 1][0]), y2=_fmt(pts[t + 1][1]),
                stroke=color, stroke_width="3")
    return svg


def code_time_svg(codes, k, title="", width=500, height=160) -> Svg:
    """Step plot of the hardened code against time."""
    codes = np.asarray(codes, dtype=int)
    if len(codes) == 0:
        raise FigureError("code-vs-time figure: empty code sequence")
    svg = Svg(width, height + 20)
    if title:
        svg.text(4, 14, title)
    pad = 20
    xs = lambda t: pad + t * (width - 2 * pad) / max(len(codes), 1)
    ys = lambda c: 20 + height - pad - c * (height - 2 * pad) / max(k - 1, 1)
    pts = []
    for t, c in enumerate(codes):
        pts += [(xs(t), ys(c)), (xs(t + 1), ys(c))]
    svg.polyline(pts, PALETTE[0], 2)
    for c in range(k):
        svg.text(2, ys(c) + 4, str(c), size=10)
    return svg


def pca_svg(points, codes, dims=(0, 1), title="", size=400) -> Svg:
    pts = np.asarray(points, dtype=float)
    if pts.shape[1] <= max(dims):
        pts = np.concatenate([pts, np.zeros((len(pts), max(dims) + 1 - pts.shape[1]))], axis=1)
    pts = pts[:, list(dims)]
    tr = _scale(pts, size, size)
    svg = Svg(size, size + 20)
    if title:
        svg.text(4, 14, title)
    for p, c in zip(pts, codes):
        x, y = tr(p)
        svg.add("circle", cx=_fmt(x), cy=_fmt(y + 20), r="2", fill=PALETTE[int(c) % len(PALETTE)])
    return svg


@dataclass
class RunArtifacts:
    """Inputs for :func:`emit_figures`; any field may be left as None."""
    env_id: str
    arrow_maps: dict | None = None           # code -> {(row, col): action}
    goal: tuple | None = None
    rollouts: list | None = None             # list of (points or cells, codes)
    code_sequences: list | None = None       # list of hardened code arrays
    k: int | None = None
    pca: object | None = None                # PcaProjection
    returns: list | None = None              # rows (method, env, mean, std, n)
    segmentation: list | None = None         # rows (trajectory, switches, accuracy)
    extra: dict = field(default_factory=dict)


def emit_figures(art: RunArtifacts, out_dir, require=()) -> list[Path]:
    """Write every figure the artifacts allow; names in ``require`` must be present."""
    out = Path(out_dir)
    figs, tables = out / "figures", out / "tables"
    written = []
    needed = {"arrow_maps": art.arrow_maps, "rollouts": art.rollouts, "code_sequences": art.code_sequences,
              "pca": art.pca, "returns": art.returns, "segmentation": art.segmentation}
    for name in require:
        if needed.get(name) is None:
            raise FigureError(f"{name} figure: missing artifact")
    if art.arrow_maps is not None:
        for code in sorted(art.arrow_maps):
            p = figs / f"arrows_code{code}.svg"
            arrow_map_svg(art.arrow_maps[code], art.goal, f"code {code}").save(p)
            written.append(p)
    if art.rollouts is not None:
        p = figs / "trajectories.svg"
        if art.env_id == "fourrooms":
            cells, codes = art.rollouts[0]
            svg = grid_trajectory_svg(cells, codes, art.goal, "rollout colored by code")
        else:
            svg = trajectory_svg(art.rollouts, "rollouts colored by code")
        svg.save(p)
        written.append(p)
    if art.code_sequences is not None:
        if art.k is None:
            raise FigureError("code-vs-time figure: missing latent size")
        for i, codes in enumerate(art.code_sequences):
            p = figs / f"codes_vs_time_{i}.svg"
            code_time_svg(codes, art.k, f"trajectory {i}").save(p)
            c = tables / f"codes_vs_time_{i}.csv"
            write_csv(c, ["t", "code"], [(t, int(v)) for t, v in enumerate(codes)])
            written += [p, c]
    if art.pca is not None:
        pr = art.pca
        views = [(0, 1), (0, 2)] if pr.points.shape[1] >= 3 else [(0, 1)]
        for a, b in views:
            p = figs / f"pca_{a}{b}.svg"
            pca_svg(pr.points, pr.codes, (a, b), f"PCA components {a + 1} and {b + 1}").save(p)
            written.append(p)
        c = tables / "pca.csv"
        d = pr.points.shape[1]
        write_csv(c, [f"pc{i + 1}" for i in range(d)] + ["code"],
                  [tuple(float(v) for v in row) + (int(code),) for row, code in zip(pr.points, pr.codes)])
        written.append(c)
    if art.returns is not None:
        c = tables / "returns.csv"
        write_csv(c, ["method", "env", "mean", "std", "n_episodes"], art.returns)
        written.append(c)
    if art.segmentation is not None:
        c = tables / "segmentation.csv"
        write_csv(c, ["trajectory", "switches", "accuracy"], art.segmentation)
        written.append(c)
    return written
