"""CSV tables and small hand-written SVG charts for experiment reports."""

import csv
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_csv(path, columns, rows):
    """Write rows under a fixed header; the column order is part of the file format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
            writer.writerow(row)
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class _Axes:
    """Linear map from data coordinates to the plot area."""

    def __init__(self, xs, ys, y_floor=None):
        xs = [float(x) for x in xs] or [0.0]
        ys = [float(y) for y in ys] or [0.0]
        self.x0, self.x1 = min(xs), max(xs)
        self.y0, self.y1 = min(ys), max(ys)
        if y_floor is not None:
            self.y0 = min(self.y0, y_floor)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5

    def px(self, x):
        return MARGIN + (float(x) - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        return HEIGHT - MARGIN - (float(y) - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _frame(title, xlabel, ylabel, axes):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
        f"{escape(title)}</text>",
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    if xlabel:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" '
                     f'font-size="11">{escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="12" y="{HEIGHT / 2:.1f}" font-size="11" '
                     f'transform="rotate(-90 12 {HEIGHT / 2:.1f})" text-anchor="middle">'
                     f"{escape(ylabel)}</text>")
    if axes is not None:
        for x, anchor in ((axes.x0, "start"), (axes.x1, "end")):
            parts.append(f'<text x="{axes.px(x):.1f}" y="{HEIGHT - MARGIN + 14}" '
                         f'text-anchor="{anchor}" font-size="10">{x:.4g}</text>')
        for y in (axes.y0, axes.y1):
            parts.append(f'<text x="{MARGIN - 4}" y="{axes.py(y):.1f}" text-anchor="end" '
                         f'font-size="10">{y:.4g}</text>')
    return parts


def _legend(labels):
    parts = []
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        y = MARGIN + 14 * i
        parts.append(f'<rect x="{WIDTH - MARGIN - 90}" y="{y - 8}" width="8" height="8" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN - 78}" y="{y}" font-size="10">'
                     f"{escape(str(label))}</text>")
    return parts


def _save(path, parts):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([*parts, "</svg>"]) + "\n")
    return path


def svg_line_chart(path, series, title, xlabel="", ylabel=""):
    """``series`` maps a label to ``(xs, ys)``; each becomes one polyline."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    axes = _Axes(all_x, all_y)
    parts = _frame(title, xlabel, ylabel, axes)
    for i, (xs, ys) in enumerate(series.values()):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{axes.px(x):.1f},{axes.py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{axes.px(x):.1f}" cy="{axes.py(y):.1f}" r="2" '
                         f'fill="{color}"/>')
    parts += _legend(series)
    return _save(path, parts)


def svg_bar_chart(path, labels, values, errors=None, title=""):
    """One bar per label with an optional symmetric error whisker."""
    errors = errors or [0.0] * len(values)
    top = max([v + e for v, e in zip(values, errors)] + [1e-9])
    axes = _Axes([0, max(len(values), 1)], [0.0, top], y_floor=0.0)
    parts = _frame(title, "", "", None)
    slot = (WIDTH - 2 * MARGIN) / max(len(values), 1)
    for i, (label, v, e) in enumerate(zip(labels, values, errors)):
        color = PALETTE[i % len(PALETTE)]
        x = MARGIN + slot * i + slot * 0.15
        w = slot * 0.7
        y = axes.py(v)
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" '
                     f'height="{HEIGHT - MARGIN - y:.1f}" fill="{color}"/>')
        if e > 0:
            cx = x + w / 2
            parts.append(f'<line x1="{cx:.1f}" y1="{axes.py(v + e):.1f}" x2="{cx:.1f}" '
                         f'y2="{axes.py(max(v - e, 0.0)):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x + w / 2:.1f}" y="{HEIGHT - MARGIN + 14}" '
                     f'text-anchor="middle" font-size="10">{escape(str(label))}</text>')
        parts.append(f'<text x="{x + w / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                     f'font-size="10">{v:.2f}</text>')
    return _save(path, parts)


def svg_scatter(path, groups, title, xlabel="", ylabel=""):
    """``groups`` maps a label to a list of (x, y) points."""
    pts = [p for points in groups.values() for p in points]
    axes = _Axes([p[0] for p in pts], [p[1] for p in pts])
    parts = _frame(title, xlabel, ylabel, axes)
    for i, points in enumerate(groups.values()):
        color = PALETTE[i % len(PALETTE)]
        for x, y in points:
            parts.append(f'<circle cx="{axes.px(x):.1f}" cy="{axes.py(y):.1f}" r="1.5" '
                         f'fill="{color}" fill-opacity="0.6"/>')
    parts += _legend(groups)
    return _save(path, parts)
