"""Deterministic SVG charts of sweep aggregates, written without a plotting library."""

import math
import os

from tools.errors import InputError

COLORS = [
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
]

COST_AXES = {"queries": ("query_size", "Initial queries"), "api-calls": ("mean_api_calls", "API calls")}

PANEL_WIDTH = 520
PANEL_HEIGHT = 420
MARGIN_LEFT = 80
MARGIN_RIGHT = 30
MARGIN_TOP = 70
MARGIN_BOTTOM = 80
LEGEND_WIDTH = 200


def _escape(text):
    return (
        str(text).replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&#39;")
    )


def _series(frame, x_column, y_column, group_column):
    """group -> sorted [(x, y)] in first-seen group order."""
    series = {}
    for row in frame.itertuples(index=False):
        series.setdefault(str(getattr(row, group_column)), []).append((float(getattr(row, x_column)), float(getattr(row, y_column))))
    return [(name, sorted(points)) for name, points in series.items()]


def _panel(lines, left, title, y_label, x_label, series, x_range, y_range):
    plot_left = left + MARGIN_LEFT
    plot_right = left + PANEL_WIDTH - MARGIN_RIGHT
    plot_top = MARGIN_TOP
    plot_bottom = PANEL_HEIGHT + MARGIN_TOP - MARGIN_BOTTOM
    lo_exp, hi_exp = x_range
    y_min, y_max = y_range

    def x_to_px(x):
        if hi_exp == lo_exp:
            return (plot_left + plot_right) / 2
        return plot_left + (math.log2(max(x, 1.0)) - lo_exp) / (hi_exp - lo_exp) * (plot_right - plot_left)

    def y_to_px(y):
        return plot_bottom - (y - y_min) / (y_max - y_min) * (plot_bottom - plot_top)

    lines.append(f'<text x="{(plot_left + plot_right) / 2:.1f}" y="{plot_top - 20}" text-anchor="middle" '
                 f'font-size="18" font-family="Arial">{_escape(title)}</text>')
    for i in range(6):
        value = y_min + (y_max - y_min) * i / 5
        y = y_to_px(value)
        lines.append(f'<line x1="{plot_left}" y1="{y:.2f}" x2="{plot_right}" y2="{y:.2f}" stroke="#d9d9d9" stroke-width="1"/>')
        lines.append(f'<text x="{plot_left - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12" '
                     f'font-family="Arial">{value:.3f}</text>')
    lines.append(f'<line x1="{plot_left}" y1="{plot_bottom}" x2="{plot_right}" y2="{plot_bottom}" stroke="#000000" stroke-width="2"/>')
    lines.append(f'<line x1="{plot_left}" y1="{plot_top}" x2="{plot_left}" y2="{plot_bottom}" stroke="#000000" stroke-width="2"/>')

    # log2 ticks
    for exponent in range(lo_exp, hi_exp + 1):
        x = x_to_px(2.0 ** exponent)
        lines.append(f'<line x1="{x:.2f}" y1="{plot_bottom}" x2="{x:.2f}" y2="{plot_bottom + 6}" stroke="#000000" stroke-width="1"/>')
        lines.append(f'<text x="{x:.2f}" y="{plot_bottom + 24}" text-anchor="middle" font-size="12" '
                     f'font-family="Arial">{2 ** exponent}</text>')

    for idx, (_, points) in enumerate(series):
        color = COLORS[idx % len(COLORS)]
        poly = " ".join(f"{x_to_px(x):.2f},{y_to_px(y):.2f}" for x, y in points)
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{poly}"/>')
        for x, y in points:
            lines.append(f'<circle cx="{x_to_px(x):.2f}" cy="{y_to_px(y):.2f}" r="3" fill="{color}"/>')

    lines.append(f'<text x="{(plot_left + plot_right) / 2:.1f}" y="{plot_bottom + 50}" text-anchor="middle" '
                 f'font-size="14" font-family="Arial">{_escape(x_label)}</text>')
    mid = (plot_top + plot_bottom) / 2
    lines.append(f'<text x="{left + 22}" y="{mid:.1f}" text-anchor="middle" font-size="14" font-family="Arial" '
                 f'transform="rotate(-90 {left + 22} {mid:.1f})">{_escape(y_label)}</text>')


def _value_range(values, floor_zero):
    low, high = min(values), max(values)
    if floor_zero:
        low = 0.0
    if high <= low:
        high = low + 1.0
    return low, high + 0.05 * (high - low)


def write_agreement_chart(frame, out_path, cost_axis="queries", title=None, group_column="strategy"):
    """
    Render mean and std of agreement against cost, one polyline per strategy.

    Args:
        frame (pd.DataFrame): Aggregates with strategy, query_size, mean_agreement,
            std_agreement and mean_api_calls columns.
        out_path (str): Destination SVG file; nothing is written on error.
        cost_axis (str): "queries" or "api-calls".
        title (str): Optional chart title.
        group_column (str): Column naming the series, e.g. "variant" for ablation summaries.

    Returns:
        str: out_path.
    """
    if cost_axis not in COST_AXES:
        raise InputError(f"cost axis must be one of {sorted(COST_AXES)}, got {cost_axis!r}")
    if frame is None or len(frame) == 0:
        raise InputError("no aggregates to plot")
    x_column, x_label = COST_AXES[cost_axis]
    if group_column not in frame.columns:
        raise InputError(f"aggregates lack the {group_column!r} column")

    mean_series = _series(frame, x_column, "mean_agreement", group_column)
    std_series = _series(frame, x_column, "std_agreement", group_column)
    xs = [x for _, points in mean_series for x, _ in points]
    x_range = (math.floor(math.log2(max(min(xs), 1.0))), math.ceil(math.log2(max(max(xs), 1.0))))
    means = [y for _, points in mean_series for _, y in points]
    stds = [y for _, points in std_series for _, y in points]

    width = 2 * PANEL_WIDTH + LEGEND_WIDTH
    height = PANEL_HEIGHT + MARGIN_TOP
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
             '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>']
    if title:
        lines.append(f'<text x="{width / 2:.1f}" y="28" text-anchor="middle" font-size="22" '
                     f'font-family="Arial">{_escape(title)}</text>')
    _panel(lines, 0, "Average agreement", "Agreement", x_label, mean_series, x_range, _value_range(means, False))
    _panel(lines, PANEL_WIDTH, "Standard deviation", "Std of agreement", x_label, std_series, x_range,
           _value_range(stds, True))

    legend_x = 2 * PANEL_WIDTH + 10
    for idx, (name, _) in enumerate(mean_series):
        color = COLORS[idx % len(COLORS)]
        ly = MARGIN_TOP + 20 + idx * 26
        lines.append(f'<line x1="{legend_x}" y1="{ly}" x2="{legend_x + 26}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        lines.append(f'<text x="{legend_x + 34}" y="{ly + 5}" text-anchor="start" font-size="14" '
                     f'font-family="Arial">{_escape(name)}</text>')
    lines.append("</svg>")

    directory = os.path.dirname(out_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return out_path
