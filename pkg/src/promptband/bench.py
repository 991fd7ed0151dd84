"""Benchmark harness: normalized anytime curves, aggregation, SVG export.

Test errors are always taken from the scenario's precomputed loss tables, so
reporting never consumes oracle budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .domain import RunTrace
from .errors import DegenerateScenarioError, RangeError, ValidationError
from .oracle import TabularOracle

__all__ = [
    "NormalizationBounds",
    "normalized_error",
    "default_fraction_grid",
    "anytime_curve",
    "aggregate",
    "emit_plot",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizationBounds:
    """Best/worst full-set errors over all prompts, per split."""

    valid_best: float
    valid_worst: float
    test_best: float
    test_worst: float

    @classmethod
    def from_oracle(cls, oracle: TabularOracle) -> "NormalizationBounds":
        vm = oracle.full_valid_means()
        tm = oracle.full_test_means()
        return cls(
            valid_best=float(vm.min()),
            valid_worst=float(vm.max()),
            test_best=float(tm.min()),
            test_worst=float(tm.max()),
        )


def normalized_error(raw: float, best: float, worst: float) -> float:
    """Linear rescale anchored at the scenario's best (0) and worst (1) prompt.

    Not clamped; callers may legitimately see values outside [0, 1].
    """
    if worst <= best:
        raise DegenerateScenarioError(
            f"normalization is undefined: worst ({worst}) must exceed best ({best})"
        )
    return (raw - best) / (worst - best)


def default_fraction_grid(budget: int = 25, points: int = 50) -> np.ndarray:
    """Log-spaced budget fractions from one full-fidelity evaluation up to 1."""
    grid = np.geomspace(1.0 / budget, 1.0, points)
    grid[0] = 1.0 / budget
    grid[-1] = 1.0
    return grid


def anytime_curve(
    trace: RunTrace,
    oracle: TabularOracle,
    bounds: NormalizationBounds,
    fractions,
) -> tuple[list[float | None], list[float | None]]:
    """Normalized validation/test error of the incumbent at each budget fraction.

    At fraction ``f`` the incumbent is the last trace event with
    ``calls_used <= round(f * budget_calls)``; fractions earlier than the
    first event yield None (missing), never zero.
    """
    fractions = list(fractions)
    if not trace.events:
        raise ValidationError("cannot compute a curve from an empty trace")
    if any(f <= 0 or f > 1 for f in fractions):
        raise RangeError("budget fractions must lie in (0, 1]")
    valid_means = oracle.full_valid_means()
    test_means = oracle.full_test_means()
    valid_curve: list[float | None] = []
    test_curve: list[float | None] = []
    for f in fractions:
        cutoff = round(f * trace.budget_calls)
        event = trace.last_at_or_before(cutoff)
        if event is None:
            valid_curve.append(None)
            test_curve.append(None)
            continue
        pid = event.incumbent_prompt_id
        valid_curve.append(normalized_error(float(valid_means[pid]), bounds.valid_best, bounds.valid_worst))
        test_curve.append(normalized_error(float(test_means[pid]), bounds.test_best, bounds.test_worst))
    return valid_curve, test_curve


def aggregate(result_rows: list[dict]) -> list[dict]:
    """Mean and standard error per (method, fraction, metric).

    ``result_rows`` entries carry method, fraction, valid_norm, test_norm
    (the norms may be None for missing points; those are excluded and the
    surviving count reported as ``n``).
    """
    groups: dict[tuple[str, float, str], list[float]] = {}
    dropped = 0
    for row in result_rows:
        for metric in ("valid", "test"):
            value = row[f"{metric}_norm"]
            if value is None:
                dropped += 1
                continue
            groups.setdefault((row["method"], float(row["fraction"]), metric), []).append(float(value))
    if dropped:
        log.info("aggregate: excluded %d missing values", dropped)
    out = []
    for (method, fraction, metric), values in sorted(groups.items()):
        arr = np.asarray(values)
        se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        out.append(
            {
                "method": method,
                "fraction": fraction,
                "metric": metric,
                "mean": float(arr.mean()),
                "se": se,
                "n": int(arr.size),
            }
        )
    return out


_PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d6a9f", "#2e4057", "#c06e52", "#50808e")


def _svg_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_plot(aggregate_rows: list[dict], output_path, metric: str = "valid", log_x: bool = False) -> bool:
    """Write an SVG line chart (one polyline per method, se ribbons).

    Deterministic bytes for identical input.  Returns False (and writes
    nothing) for an empty table.
    """
    rows = [r for r in aggregate_rows if r["metric"] == metric]
    if not rows:
        log.warning("emit_plot: empty aggregate table; nothing written")
        return False
    if log_x and any(r["fraction"] <= 0 for r in rows):
        raise RangeError("log-scale x axis requires strictly positive fractions")

    methods = sorted({r["method"] for r in rows})
    xs_all = sorted({float(r["fraction"]) for r in rows})
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo = 0.0
    y_hi = max(r["mean"] + r["se"] for r in rows)
    y_hi = y_hi if y_hi > 0 else 1.0

    width, height = 640.0, 420.0
    m_left, m_right, m_top, m_bottom = 60.0, 150.0, 20.0, 45.0
    plot_w = width - m_left - m_right
    plot_h = height - m_top - m_bottom

    def x_pos(f: float) -> float:
        if log_x:
            lo, hi = np.log10(x_lo), np.log10(x_hi)
            t = 0.5 if hi == lo else (np.log10(f) - lo) / (hi - lo)
        else:
            t = 0.5 if x_hi == x_lo else (f - x_lo) / (x_hi - x_lo)
        return m_left + t * plot_w

    def y_pos(v: float) -> float:
        return m_top + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<line x1="{m_left:.1f}" y1="{m_top + plot_h:.1f}" x2="{m_left + plot_w:.1f}" '
        f'y2="{m_top + plot_h:.1f}" stroke="black" stroke-width="1"/>',
        f'<line x1="{m_left:.1f}" y1="{m_top:.1f}" x2="{m_left:.1f}" '
        f'y2="{m_top + plot_h:.1f}" stroke="black" stroke-width="1"/>',
    ]
    for k in range(5):
        v = y_lo + (y_hi - y_lo) * k / 4
        parts.append(
            f'<text x="{m_left - 8:.1f}" y="{y_pos(v) + 4:.1f}" font-size="11" '
            f'text-anchor="end" font-family="monospace">{v:.3f}</text>'
        )
    for f in (x_lo, x_hi):
        parts.append(
            f'<text x="{x_pos(f):.1f}" y="{m_top + plot_h + 18:.1f}" font-size="11" '
            f'text-anchor="middle" font-family="monospace">{f:.3g}</text>'
        )
    parts.append(
        f'<text x="{m_left + plot_w / 2:.1f}" y="{height - 8:.1f}" font-size="12" '
        f'text-anchor="middle" font-family="monospace">fraction of call budget</text>'
    )

    for idx, method in enumerate(methods):
        color = _PALETTE[idx % len(_PALETTE)]
        series = sorted((r for r in rows if r["method"] == method), key=lambda r: r["fraction"])
        upper = [(x_pos(r["fraction"]), y_pos(r["mean"] + r["se"])) for r in series]
        lower = [(x_pos(r["fraction"]), y_pos(max(r["mean"] - r["se"], y_lo))) for r in series]
        ribbon = " ".join(f"{x:.2f},{y:.2f}" for x, y in upper + lower[::-1])
        parts.append(f'<path d="M {ribbon} Z" fill="{color}" opacity="0.15" stroke="none"/>')
        line = " ".join(f"{x_pos(r['fraction']):.2f},{y_pos(r['mean']):.2f}" for r in series)
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = m_top + 16 + 18 * idx
        parts.append(
            f'<line x1="{m_left + plot_w + 10:.1f}" y1="{ly - 4:.1f}" x2="{m_left + plot_w + 34:.1f}" '
            f'y2="{ly - 4:.1f}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{m_left + plot_w + 40:.1f}" y="{ly:.1f}" font-size="12" '
            f'font-family="monospace">{_svg_escape(method)}</text>'
        )
    parts.append("</svg>")

    from pathlib import Path

    Path(output_path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    return True
