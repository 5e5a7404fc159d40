"""Hand-rolled SVG scatter plots.

No plotting library is used so that the byte output is fully determined by
the inputs: fixed canvas, fixed styles, and all coordinates formatted with
%.6g. Two figures are produced: the decomposition scatter (Wald-DID against
component weight, one glyph per comparison design) and a 45-degree scatter
for specification comparisons.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .decomposition import DecompositionResult, DesignKind

WIDTH = 720
HEIGHT = 480
MARGIN_LEFT = 70
MARGIN_RIGHT = 30
MARGIN_TOP = 40
MARGIN_BOTTOM = 55

KIND_STYLE = {
    DesignKind.UNEXPOSED_EXPOSED: ("circle", "#1f77b4"),
    DesignKind.EXPOSED_NOT_YET_EXPOSED: ("triangle", "#ff7f0e"),
    DesignKind.EXPOSED_EXPOSED_SHIFT: ("square", "#d62728"),
}


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _axis_range(values: Sequence[float]) -> tuple:
    finite = [v for v in values if v == v]
    if not finite:
        return -1.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.08 * (hi - lo)
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, x_range, y_range, title, x_label, y_label):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="24" font-family="sans-serif" '
            f'font-size="16" text-anchor="middle">{title}</text>',
            f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle">{x_label}</text>',
            f'<text x="18" y="{HEIGHT // 2}" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle" '
            f'transform="rotate(-90 18 {HEIGHT // 2})">{y_label}</text>',
        ]
        self._frame()

    def px(self, x: float) -> float:
        span = self.x1 - self.x0
        return MARGIN_LEFT + (x - self.x0) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def py(self, y: float) -> float:
        span = self.y1 - self.y0
        return HEIGHT - MARGIN_BOTTOM - (y - self.y0) / span * (
            HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
        )

    def _frame(self):
        left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
        top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
        self.parts.append(
            f'<rect x="{left}" y="{top}" width="{right - left}" '
            f'height="{bottom - top}" fill="none" stroke="#333" stroke-width="1"/>'
        )
        for i in range(5):
            fx = self.x0 + (self.x1 - self.x0) * i / 4
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            xp, yp = self.px(fx), self.py(fy)
            self.parts.append(
                f'<line x1="{_fmt(xp)}" y1="{bottom}" x2="{_fmt(xp)}" '
                f'y2="{bottom + 5}" stroke="#333" stroke-width="1"/>'
            )
            self.parts.append(
                f'<text x="{_fmt(xp)}" y="{bottom + 20}" font-family="sans-serif" '
                f'font-size="11" text-anchor="middle">{_fmt(fx)}</text>'
            )
            self.parts.append(
                f'<line x1="{left - 5}" y1="{_fmt(yp)}" x2="{left}" '
                f'y2="{_fmt(yp)}" stroke="#333" stroke-width="1"/>'
            )
            self.parts.append(
                f'<text x="{left - 8}" y="{_fmt(yp + 4)}" font-family="sans-serif" '
                f'font-size="11" text-anchor="end">{_fmt(fy)}</text>'
            )

    def hline(self, y: float, color: str = "#888", dash: str = "4 3"):
        if not (self.y0 <= y <= self.y1):
            return
        yp = _fmt(self.py(y))
        self.parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{yp}" x2="{WIDTH - MARGIN_RIGHT}" '
            f'y2="{yp}" stroke="{color}" stroke-width="1" stroke-dasharray="{dash}"/>'
        )

    def diagonal(self, color: str = "#888", dash: str = "4 3"):
        lo = max(self.x0, self.y0)
        hi = min(self.x1, self.y1)
        if lo >= hi:
            return
        self.parts.append(
            f'<line x1="{_fmt(self.px(lo))}" y1="{_fmt(self.py(lo))}" '
            f'x2="{_fmt(self.px(hi))}" y2="{_fmt(self.py(hi))}" '
            f'stroke="{color}" stroke-width="1" stroke-dasharray="{dash}"/>'
        )

    def glyph(self, x: float, y: float, shape: str, color: str, size: float = 5.0):
        xp, yp = self.px(x), self.py(y)
        if shape == "circle":
            self.parts.append(
                f'<circle cx="{_fmt(xp)}" cy="{_fmt(yp)}" r="{_fmt(size)}" '
                f'fill="{color}" fill-opacity="0.8"/>'
            )
        elif shape == "triangle":
            pts = (
                f"{_fmt(xp)},{_fmt(yp - size)} {_fmt(xp - size)},{_fmt(yp + size)} "
                f"{_fmt(xp + size)},{_fmt(yp + size)}"
            )
            self.parts.append(
                f'<polygon points="{pts}" fill="{color}" fill-opacity="0.8"/>'
            )
        else:
            self.parts.append(
                f'<rect x="{_fmt(xp - size)}" y="{_fmt(yp - size)}" '
                f'width="{_fmt(2 * size)}" height="{_fmt(2 * size)}" '
                f'fill="{color}" fill-opacity="0.8"/>'
            )

    def legend(self, entries):
        x = WIDTH - MARGIN_RIGHT - 230
        y = MARGIN_TOP + 14
        for label, shape, color in entries:
            self.glyph_px(x, y - 4, shape, color)
            self.parts.append(
                f'<text x="{x + 12}" y="{y}" font-family="sans-serif" '
                f'font-size="12">{label}</text>'
            )
            y += 18

    def glyph_px(self, xp: float, yp: float, shape: str, color: str, size: float = 5.0):
        if shape == "circle":
            self.parts.append(
                f'<circle cx="{_fmt(xp)}" cy="{_fmt(yp)}" r="{_fmt(size)}" '
                f'fill="{color}" fill-opacity="0.8"/>'
            )
        elif shape == "triangle":
            pts = (
                f"{_fmt(xp)},{_fmt(yp - size)} {_fmt(xp - size)},{_fmt(yp + size)} "
                f"{_fmt(xp + size)},{_fmt(yp + size)}"
            )
            self.parts.append(
                f'<polygon points="{pts}" fill="{color}" fill-opacity="0.8"/>'
            )
        else:
            self.parts.append(
                f'<rect x="{_fmt(xp - size)}" y="{_fmt(yp - size)}" '
                f'width="{_fmt(2 * size)}" height="{_fmt(2 * size)}" '
                f'fill="{color}" fill-opacity="0.8"/>'
            )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def decomposition_scatter(result: DecompositionResult, title: str = "TWFEIV decomposition") -> str:
    """Wald-DID (x) against component weight (y), one glyph per design."""
    points = [
        (c.wald_did, c.iv_weight, c.cell.kind)
        for c in result.components
        if c.wald_did is not None
    ]
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    canvas = _Canvas(
        _axis_range(xs),
        _axis_range(ys + [0.0]),
        title,
        "Wald-DID",
        "IV weight",
    )
    canvas.hline(0.0)
    for x, y, kind in points:
        shape, color = KIND_STYLE[kind]
        canvas.glyph(x, y, shape, color)
    canvas.legend(
        [
            ("unexposed vs exposed", *KIND_STYLE[DesignKind.UNEXPOSED_EXPOSED]),
            ("exposed vs not-yet-exposed", *KIND_STYLE[DesignKind.EXPOSED_NOT_YET_EXPOSED]),
            ("exposed vs exposed shift", *KIND_STYLE[DesignKind.EXPOSED_EXPOSED_SHIFT]),
        ]
    )
    return canvas.render()


def comparison_scatter(
    pairs: Iterable,
    title: str = "Specification comparison",
    value_axis: bool = False,
) -> str:
    """45-degree scatter of paired component weights or values.

    pairs is an iterable of PairedComponent; with value_axis the effective
    values are plotted, otherwise the weights.
    """
    pts = []
    for p in pairs:
        if value_axis:
            if p.base_value is None or p.alt_value is None:
                continue
            pts.append((p.base_value, p.alt_value))
        else:
            pts.append((p.base_weight, p.alt_weight))
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    lo, hi = _axis_range(xs + ys)
    which = "value" if value_axis else "weight"
    canvas = _Canvas((lo, hi), (lo, hi), title, f"base {which}", f"alternative {which}")
    canvas.diagonal()
    for x, y in pts:
        canvas.glyph(x, y, "circle", "#1f77b4")
    return canvas.render()
