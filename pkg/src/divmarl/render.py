"""SVG frame rendering of trajectory dumps.

One vector-graphic file per frame: static boxes, entities as team-colored
circles (optionally recolored by per-agent behavioral distance), and
action arrows when the dump recorded them.  Geometry is written with
plain numeric attributes so tests can parse coordinates back out.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DivmarlError
from .sim import read_trajectory

TEAM_COLORS = {0: (59, 111, 212), 1: (212, 59, 59), -1: (90, 90, 90)}
BALL_COLOR = (245, 166, 35)
DISTANCE_COLOR = (255, 225, 77)
SCALE = 200.0  # pixels per meter


def _lerp_color(a, b, t: float) -> str:
    c = tuple(round(x + (y - x) * t) for x, y in zip(a, b))
    return f"rgb({c[0]},{c[1]},{c[2]})"


def _color(entity: dict, value: float | None) -> str:
    base = BALL_COLOR if entity["name"] == "ball" else TEAM_COLORS[entity["team"]]
    if value is None:
        return _lerp_color(base, base, 0.0)
    return _lerp_color(base, DISTANCE_COLOR, float(np.clip(value, 0.0, 1.0)))


def render_frames(dump_path, out_dir, distances=None, draw_arrows: bool = True,
                  margin: float = 0.2) -> list:
    """Write one SVG per frame; returns the list of written paths.

    `distances` optionally maps entity index -> scalar in [0, 1] used to
    shade that agent toward the distance color (its mean behavioral
    distance from teammates, normalized by the caller).
    """
    manifest, frames = read_trajectory(Path(dump_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    boxes = np.asarray(manifest["boxes"], dtype=np.float64).reshape(-1, 4)
    near = boxes[np.all(np.isfinite(boxes), axis=1) & (np.abs(boxes[:, 0]) < 100)]
    ent = manifest["entities"]

    lo = np.array([-1.0, -1.0])
    hi = np.array([1.0, 1.0])
    if len(near):
        lo = np.minimum(lo, (near[:, :2] - near[:, 2:]).min(axis=0))
        hi = np.maximum(hi, (near[:, :2] + near[:, 2:]).max(axis=0))
    lo -= margin
    hi += margin
    size = (hi - lo) * SCALE

    paths = []
    n_frames = int(manifest["frame_count"])
    for k in range(n_frames):
        body = []
        body.append(f'<rect x="0" y="0" width="{size[0]:.1f}" height="{size[1]:.1f}" '
                    f'fill="rgb(240,245,240)"/>')
        for cx, cy, hx, hy in near:
            x = (cx - hx - lo[0]) * SCALE
            y = (hi[1] - cy - hy) * SCALE
            body.append(f'<rect class="box" x="{x:.2f}" y="{y:.2f}" '
                        f'width="{2 * hx * SCALE:.2f}" height="{2 * hy * SCALE:.2f}" '
                        f'fill="rgb(60,60,60)"/>')
        for e, spec in enumerate(ent):
            px, py = frames["pos"][k, e]
            if abs(px) > 100 or abs(py) > 100:
                continue  # parked entity
            cx = (px - lo[0]) * SCALE
            cy = (hi[1] - py) * SCALE
            val = None if distances is None else distances.get(e)
            body.append(f'<circle id="entity-{e}" cx="{cx:.3f}" cy="{cy:.3f}" '
                        f'r="{spec["radius"] * SCALE:.3f}" fill="{_color(spec, val)}" '
                        f'stroke="black" stroke-width="0.5"/>')
            if draw_arrows and "actions" in frames:
                ax, ay = frames["actions"][k, e]
                if ax or ay:
                    x2 = cx + ax * 0.15 * SCALE
                    y2 = cy - ay * 0.15 * SCALE
                    body.append(f'<line class="action" x1="{cx:.2f}" y1="{cy:.2f}" '
                                f'x2="{x2:.2f}" y2="{y2:.2f}" '
                                f'stroke="rgb(20,120,20)" stroke-width="1.5"/>')
        svg = (f'<svg xmlns="http://www.w3.org/2000/svg" '
               f'width="{size[0]:.1f}" height="{size[1]:.1f}">\n'
               + "\n".join(body) + "\n</svg>\n")
        path = out_dir / f"frame_{k:05d}.svg"
        path.write_text(svg)
        paths.append(path)
    return paths


def parse_entity_centers(svg_path, lo, hi) -> dict:
    """Recover world coordinates of entity circles from a rendered frame."""
    text = Path(svg_path).read_text()
    out = {}
    for chunk in text.split("<circle ")[1:]:
        attrs = {}
        for token in chunk.split(">")[0].split():
            if "=" in token:
                k, _, v = token.partition("=")
                attrs[k] = v.strip('"/')
        if "id" not in attrs or not attrs["id"].startswith("entity-"):
            continue
        e = int(attrs["id"].split("-")[1])
        x = float(attrs["cx"]) / SCALE + lo[0]
        y = hi[1] - float(attrs["cy"]) / SCALE
        out[e] = (x, y)
    if not out:
        raise DivmarlError(f"no entity circles found in {svg_path}")
    return out
