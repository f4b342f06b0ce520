"""Grid result aggregation, CSV emission, and the self-contained SVG figure."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

GRID_CSV_COLUMNS = (
    "sampler",
    "n",
    "m",
    "seed",
    "acceptance",
    "iact_rho",
    "iact_s2x",
    "iact_s2y",
    "ess_min",
    "wallclock_s",
)

RECORDS_CSV_COLUMNS = ("iter", "rho", "sigma2_x", "sigma2_y", "accepted", "l", "logz_or_nan")


@dataclass
class GridCell:
    sampler: str
    n: int
    m: int
    seed: int
    acceptance: float
    iact_rho: float
    iact_s2x: float
    iact_s2y: float
    ess_min: float
    wallclock_s: float
    error: str = ""

    def row(self) -> list:
        return [
            self.sampler,
            self.n,
            self.m,
            self.seed,
            _fmt(self.acceptance),
            _fmt(self.iact_rho),
            _fmt(self.iact_s2x),
            _fmt(self.iact_s2y),
            _fmt(self.ess_min),
            _fmt(self.wallclock_s),
        ]


@dataclass
class GridResult:
    cells: list
    failures: list

    def acceptance_by_sampler(self) -> dict:
        """sampler -> {n -> (mean, sd over seeds)}."""
        out: dict = {}
        for cell in self.cells:
            out.setdefault(cell.sampler, {}).setdefault(cell.n, []).append(cell.acceptance)
        return {
            sampler: {n: (float(np.mean(v)), float(np.std(v))) for n, v in sorted(per_n.items())}
            for sampler, per_n in out.items()
        }

    def reference_rate(self, sampler: str) -> float:
        rates = [c.acceptance for c in self.cells if c.sampler == sampler]
        if not rates:
            raise KeyError(f"no cells for {sampler}")
        return float(np.mean(rates))


def _fmt(x: float) -> str:
    if x != x:  # NaN
        return "nan"
    return repr(float(x))


def write_grid_csv(path, cells) -> None:
    ordered = sorted(cells, key=lambda c: (c.sampler, c.n, c.seed))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_CSV_COLUMNS)
        for cell in ordered:
            writer.writerow(cell.row())


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORDS_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [r.iteration, _fmt(r.rho), _fmt(r.sigma2_x), _fmt(r.sigma2_y), int(r.accepted), r.index, _fmt(r.log_lik)]
            )


# ---------------------------------------------------------------------------
# Figure: acceptance rate against particle count, one line per sampler
# ---------------------------------------------------------------------------

_WIDTH, _HEIGHT = 720, 480
_LEFT, _RIGHT, _TOP, _BOTTOM = 80, 30, 30, 60
_COLORS = {"pmmh": "#1f77b4", "mpgibbs": "#d62728", "pgibbs": "#2ca02c"}


def _x_pos(n: int, n_values) -> float:
    lo, hi = math.log2(min(n_values)), math.log2(max(n_values))
    span = hi - lo if hi > lo else 1.0
    return _LEFT + (_WIDTH - _LEFT - _RIGHT) * (math.log2(n) - lo) / span


def _y_pos(acc: float, y_max: float) -> float:
    return _HEIGHT - _BOTTOM - (_HEIGHT - _TOP - _BOTTOM) * (acc / y_max)


def render_figure_svg(by_sampler: dict, ideal_mh: float | None, ideal_barker: float | None) -> str:
    """Acceptance vs N with dashed/dotted reference lines at the idealized rates."""
    n_values = sorted({n for per_n in by_sampler.values() for n in per_n})
    peak = max(
        [mean for per_n in by_sampler.values() for (mean, _) in per_n.values()]
        + [r for r in (ideal_mh, ideal_barker) if r is not None]
        + [0.05]
    )
    y_max = min(1.0, math.ceil(peak * 20.0) / 20.0 + 0.05)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="13">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<line x1="{_LEFT}" y1="{_HEIGHT - _BOTTOM}" x2="{_WIDTH - _RIGHT}" y2="{_HEIGHT - _BOTTOM}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_HEIGHT - _BOTTOM}" stroke="black"/>',
    ]
    for n in n_values:
        x = _x_pos(n, n_values)
        parts.append(f'<line x1="{x:.1f}" y1="{_HEIGHT - _BOTTOM}" x2="{x:.1f}" y2="{_HEIGHT - _BOTTOM + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{_HEIGHT - _BOTTOM + 20}" text-anchor="middle">{n}</text>')
    ticks = 5
    for i in range(ticks + 1):
        val = y_max * i / ticks
        y = _y_pos(val, y_max)
        parts.append(f'<line x1="{_LEFT - 5}" y1="{y:.1f}" x2="{_LEFT}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_LEFT - 10}" y="{y + 4:.1f}" text-anchor="end">{val:.2f}</text>')
    parts.append(
        f'<text x="{(_LEFT + _WIDTH - _RIGHT) / 2}" y="{_HEIGHT - 15}" text-anchor="middle">number of particles N</text>'
    )
    parts.append(
        f'<text x="20" y="{(_TOP + _HEIGHT - _BOTTOM) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 20 {(_TOP + _HEIGHT - _BOTTOM) / 2})">acceptance rate</text>'
    )

    legend_y = _TOP + 10
    for label, rate, dash in (("ideal MH", ideal_mh, "8 4"), ("ideal Barker", ideal_barker, "2 4")):
        if rate is None:
            continue
        y = _y_pos(rate, y_max)
        parts.append(
            f'<line x1="{_LEFT}" y1="{y:.1f}" x2="{_WIDTH - _RIGHT}" y2="{y:.1f}" '
            f'stroke="gray" stroke-dasharray="{dash}"/>'
        )
        parts.append(
            f'<line x1="{_WIDTH - 200}" y1="{legend_y}" x2="{_WIDTH - 170}" y2="{legend_y}" '
            f'stroke="gray" stroke-dasharray="{dash}"/>'
        )
        parts.append(f'<text x="{_WIDTH - 162}" y="{legend_y + 4}">{label} ({rate:.3f})</text>')
        legend_y += 20

    for sampler, per_n in sorted(by_sampler.items()):
        color = _COLORS.get(sampler, "#7f7f7f")
        points = [(_x_pos(n, n_values), _y_pos(mean, y_max)) for n, (mean, _) in sorted(per_n.items())]
        path = " ".join(f"{x:.1f},{y:.1f}" for x, y in points)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in points:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.5" fill="{color}"/>')
        parts.append(
            f'<line x1="{_WIDTH - 200}" y1="{legend_y}" x2="{_WIDTH - 170}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{_WIDTH - 162}" y="{legend_y + 4}">{sampler}</text>')
        legend_y += 20

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
