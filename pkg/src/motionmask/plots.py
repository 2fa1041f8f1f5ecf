"""Dependency-free SVG rendering: mask previews, loss curves, trajectories.

SVG is the only plot format: diffable, testable by element counting, and
byte-deterministic (element order and float formatting are fixed).  Styling
rides on ``class`` attributes so tests can count semantic elements
(``hidden`` cells, ``curve`` polylines, ``pred`` trajectories).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_STYLE = (
    "rect.cell{fill:#e7e6e6;stroke:#afabab;stroke-width:1}"
    "rect.cell.hidden{fill:#b5c6e5}"
    "polyline{fill:none}"
    "polyline.map{stroke:#c9c9c9;stroke-width:1}"
    "polyline.history{stroke:#7f5a24;stroke-width:2}"
    "polyline.ego-history{stroke:#1f3864;stroke-width:2}"
    "polyline.truth{stroke:#c00000;stroke-width:2}"
    "polyline.pred{stroke:#2e7d32;stroke-width:1.5;stroke-dasharray:4 2}"
    "polyline.curve{stroke-width:1.5}"
    "text{font-family:monospace;font-size:12px}"
)

_CURVE_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
            f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">')
    return "\n".join([head, f"<style>{_STYLE}</style>", *body, "</svg>"]) + "\n"


def render_mask_grid(mask_hidden: np.ndarray, t_obs: int | None = None,
                     cell: float = 16.0) -> str:
    """Agents x time grid; hidden cells get class="cell hidden"."""
    n, t = mask_hidden.shape
    margin = 24.0
    body = []
    for i in range(n):
        for ts in range(t):
            cls = "cell hidden" if mask_hidden[i, ts] else "cell"
            body.append(f'<rect class="{cls}" x="{_fmt(margin + ts * cell)}" '
                        f'y="{_fmt(margin + i * cell)}" width="{_fmt(cell)}" '
                        f'height="{_fmt(cell)}"/>')
    if t_obs is not None:
        x = margin + t_obs * cell
        body.append(f'<line x1="{_fmt(x)}" y1="{_fmt(margin)}" x2="{_fmt(x)}" '
                    f'y2="{_fmt(margin + n * cell)}" stroke="#404040" '
                    f'stroke-width="2"/>')
    body.append(f'<text x="{_fmt(margin)}" y="16">time &#8594;</text>')
    return _svg(margin * 2 + t * cell, margin * 2 + n * cell, body)


def _polyline(points, cls: str, extra: str = "") -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f'<polyline class="{cls}"{extra} points="{pts}"/>'


class _Projector:
    """World (x, y) -> viewport pixels, y flipped, isotropic scale."""

    def __init__(self, points: np.ndarray, width: float, height: float, pad: float):
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        self.scale = min((width - 2 * pad) / span[0], (height - 2 * pad) / span[1])
        self.lo = lo
        self.pad = pad
        self.height = height

    def __call__(self, xy) -> list[tuple[float, float]]:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        px = self.pad + (xy[:, 0] - self.lo[0]) * self.scale
        py = self.height - self.pad - (xy[:, 1] - self.lo[1]) * self.scale
        return list(zip(px, py))


def render_loss_curves(labeled_logs, width: float = 860.0, height: float = 320.0) -> str:
    """Two panels: loss vs step (left) and loss vs wall-time (right);
    one class="curve" polyline per log per panel."""
    if not labeled_logs:
        raise DataError("no training logs given")
    for label, rows in labeled_logs:
        if not rows:
            raise DataError(f"training log {label!r} is empty")
    panel_w = (width - 60.0) / 2.0
    pad = 30.0
    body = []
    losses = np.array([row.loss for _, rows in labeled_logs for row in rows])
    lo_loss, hi_loss = float(losses.min()), float(losses.max())
    span_loss = max(hi_loss - lo_loss, 1e-12)
    for panel, x_field in enumerate(("step", "wall_ms")):
        x0 = 20.0 + panel * (panel_w + 20.0)
        xs_all = np.array([getattr(row, x_field)
                           for _, rows in labeled_logs for row in rows], dtype=float)
        lo_x, hi_x = float(xs_all.min()), float(xs_all.max())
        span_x = max(hi_x - lo_x, 1e-12)
        body.append(f'<rect x="{_fmt(x0)}" y="{_fmt(pad)}" width="{_fmt(panel_w)}" '
                    f'height="{_fmt(height - 2 * pad)}" fill="none" stroke="#909090"/>')
        body.append(f'<text x="{_fmt(x0)}" y="{_fmt(pad - 8)}">loss vs {x_field}</text>')
        for li, (label, rows) in enumerate(labeled_logs):
            color = _CURVE_COLORS[li % len(_CURVE_COLORS)]
            pts = []
            for row in rows:
                px = x0 + (getattr(row, x_field) - lo_x) / span_x * panel_w
                py = (height - pad) - (row.loss - lo_loss) / span_loss * (height - 2 * pad)
                pts.append((px, py))
            body.append(_polyline(pts, "curve", extra=f' stroke="{color}"'))
            body.append(f'<text class="legend" x="{_fmt(x0 + 6)}" '
                        f'y="{_fmt(pad + 14 + 14 * li)}" fill="{color}">{label}</text>')
    return _svg(width, height, body)


def render_trajectories(dump: dict, width: float = 640.0, height: float = 640.0) -> str:
    """Map, history, ground truth, and K predicted modes for one scenario.

    ``dump`` is one forecast record as written by the evaluate CLI:
    truth_xy [N][T][2], valid [N][T], map polylines, trajectories
    [K][N][T][2], mode_probs [K], agents (the focal agent indices),
    t_obs, ego_index.
    """
    truth = np.asarray(dump["truth_xy"], dtype=float)
    valid = np.asarray(dump["valid"], dtype=bool)
    traj = np.asarray(dump["trajectories"], dtype=float)
    agents = list(dump["agents"])
    t_obs = int(dump["t_obs"])
    ego = int(dump["ego_index"])
    map_lines = [np.asarray(p["points"], dtype=float)[:int(p["valid_count"])]
                 for p in dump["map"]]

    cloud = [truth[valid]] if valid.any() else []
    cloud += [traj[:, a][:, valid[a]].reshape(-1, 2) for a in agents]
    cloud += [m for m in map_lines if len(m)]
    if not cloud:
        raise DataError("nothing to draw")
    proj = _Projector(np.vstack(cloud), width, height, pad=20.0)

    body = []
    for m in map_lines:
        if len(m) >= 2:
            body.append(_polyline(proj(m), "map"))
    n = truth.shape[0]
    for i in range(n):
        hist = truth[i, :t_obs][valid[i, :t_obs]]
        if len(hist) >= 2:
            body.append(_polyline(proj(hist), "ego-history" if i == ego else "history"))
        fut = truth[i, t_obs:][valid[i, t_obs:]]
        if len(fut) >= 2 and i in agents:
            body.append(_polyline(proj(fut), "truth"))
    for a in agents:
        fmask = valid[a, t_obs:]
        for k in range(traj.shape[0]):
            pts = traj[k, a, t_obs:][fmask]
            if len(pts) >= 1:
                body.append(_polyline(proj(pts), "pred"))
    legend = (("history", "history"), ("ego-history", "ego history"),
              ("truth", "ground truth"), ("pred", "predicted modes"))
    for li, (cls, label) in enumerate(legend):
        body.append(f'<text class="legend legend-{cls}" x="24" '
                    f'y="{_fmt(20 + 14 * li)}">{label}</text>')
    return _svg(width, height, body)
