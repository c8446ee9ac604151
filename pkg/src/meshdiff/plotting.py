"""Dependency-free SVG charts of grid results.

Output is a pure function of the inputs: coordinates are rounded to fixed
precision and elements are emitted in a fixed order.  The only line that may
vary between package versions is the leading version comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .results import load_results, read_csv

PLOT_KINDS = ("convergence", "slice", "lengthscales", "losses")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
VERSION_COMMENT = "<!-- meshdiff svg v1 -->"


class PlotError(ValueError):
    pass


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    style: str = "line"  # "line" or "points"
    dashed: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    logx: bool = False
    logy: bool = False
    width: int = 640
    height: int = 420

    def add(self, *args, **kw) -> Chart:
        self.series.append(Series(*args, **kw))
        return self

    def to_svg(self) -> str:
        return render(self)


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    first, last = math.ceil(lo / step - 1e-9), math.floor(hi / step + 1e-9)
    # integer multiples of the step, trimmed of binary round-off
    return [float(f"{k * step:.12g}") for k in range(first, last + 1)]


def _fmt_tick(v, log):
    if log:
        return f"1e{int(round(v))}"
    return f"{v:.4g}"


def _finite(series, logx, logy):
    x, y = np.asarray(series.x, float), np.asarray(series.y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    if logx:
        ok &= x > 0
    if logy:
        ok &= y > 0
    x, y = x[ok], y[ok]
    return (np.log10(x) if logx else x), (np.log10(y) if logy else y)


def render(chart: Chart) -> str:
    W, H = chart.width, chart.height
    left, right, top, bottom = 78, 150, 40, 52
    pw, ph = W - left - right, H - top - bottom
    data = [_finite(s, chart.logx, chart.logy) for s in chart.series]
    xs = np.concatenate([d[0] for d in data]) if data else np.array([])
    ys = np.concatenate([d[1] for d in data]) if data else np.array([])
    if len(xs) == 0:
        raise PlotError(f"nothing to plot in {chart.title!r}")
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.1 or 0.5
        y0, y1 = y0 - pad, y1 + pad
    if chart.logx:
        x0, x1 = math.floor(x0), math.ceil(x1)
    if chart.logy:
        y0, y1 = math.floor(y0), math.ceil(y1)

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        VERSION_COMMENT,
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(chart.title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    xt = [float(v) for v in range(int(x0), int(x1) + 1)] if chart.logx else _nice_ticks(x0, x1)
    yt = [float(v) for v in range(int(y0), int(y1) + 1)] if chart.logy else _nice_ticks(y0, y1)
    for t in xt:
        if x0 - 1e-9 <= t <= x1 + 1e-9:
            out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{px(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt_tick(t, chart.logx)}</text>')
    for t in yt:
        if y0 - 1e-9 <= t <= y1 + 1e-9:
            out.append(f'<line x1="{left - 4}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
            out.append(f'<line x1="{left}" y1="{py(t):.2f}" x2="{left + pw}" y2="{py(t):.2f}" stroke="#e5e5e5"/>')
            out.append(f'<text x="{left - 7}" y="{py(t) + 4:.2f}" text-anchor="end">{_fmt_tick(t, chart.logy)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(chart.ylabel)}</text>')

    for i, (s, (x, y)) in enumerate(zip(chart.series, data)):
        color = PALETTE[i % len(PALETTE)]
        if s.style == "line" and len(x) > 1:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        else:
            for a, b in zip(x, y):
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        ly = top + 10 + 16 * i
        out.append(f'<rect x="{left + pw + 10}" y="{ly - 6}" width="12" height="4" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 27}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# charts built from a results directory


def _floats(col):
    return np.array([float(v) if v not in ("", None) else np.nan for v in col])


def _pick_run(results, run_id):
    if run_id is not None:
        for r in results:
            if r["run_id"] == run_id:
                return r
        raise PlotError(f"run {run_id!r} not found in results")
    diff = [r for r in results if r["method"] == "DIFFUSION"]
    return (diff or results)[0]


def convergence_chart(out_dir, run_id=None) -> Chart:
    run = _pick_run(_require_results(out_dir), run_id)
    path = Path(out_dir) / run["run_id"] / "history.csv"
    if not path.exists():
        raise PlotError(f"missing history file {path}")
    header, rows = read_csv(path)
    cols = {h: [r[i] for r in rows] for i, h in enumerate(header)}
    ev = _floats(cols["eval"])
    diffusion = run["method"] == "DIFFUSION"
    chart = Chart(f"Convergence of {run['run_id']}", "evaluation",
                  "loss" if diffusion else "negative log marginal likelihood", logy=diffusion)
    chart.add("objective", ev, _floats(cols["objective"]))
    if diffusion:
        chart.add("rmse_training", ev, _floats(cols["rmse_training"]), dashed=True)
        chart.add("rmse_diffusion", ev, _floats(cols["rmse_diffusion"]), dashed=True)
    return chart


def slice_chart(out_dir, run_id=None) -> Chart:
    run = _pick_run(_require_results(out_dir), run_id)
    found = sorted((Path(out_dir) / run["run_id"]).glob("slice_*.csv"))
    if not found:
        raise PlotError(f"no slice_*.csv for run {run['run_id']}")
    header, rows = read_csv(found[0])
    cols = {h: _floats([r[i] for r in rows]) for i, h in enumerate(header)}
    sd = np.sqrt(np.maximum(cols["var"], 0.0))
    axis = found[0].stem[len("slice_"):]
    chart = Chart(f"Posterior slice of {run['run_id']}", axis, "normalized value")
    chart.add("mean", cols["coord"], cols["mean"])
    chart.add("mean + 2 sd", cols["coord"], cols["mean"] + 2 * sd, dashed=True)
    chart.add("mean - 2 sd", cols["coord"], cols["mean"] - 2 * sd, dashed=True)
    chart.add("training", cols["coord"], cols["train"], style="points")
    return chart


def lengthscales_chart(out_dir) -> Chart:
    results = _require_results(out_dir)
    chart = Chart("Final lengthscales by initial value", "initial lengthscale", "final lengthscale",
                  logx=True, logy=True)
    for method in ("LML", "DIFFUSION"):
        runs = [r for r in results if r["method"] == method]
        if not runs:
            continue
        d = len(runs[0]["final_params"]["lengthscales"])
        for k in range(d):
            x = [r["initial_params"]["lengthscales"][0] for r in runs]
            y = [r["final_params"]["lengthscales"][k] for r in runs]
            chart.add(f"{method} axis {k + 1}", x, y, style="points")
    return chart


def losses_chart(out_dir) -> Chart:
    results = _require_results(out_dir)
    chart = Chart("Final diffusion loss by initial lengthscale", "initial lengthscale", "rmse_diffusion",
                  logx=True, logy=True)
    for method in ("LML", "DIFFUSION"):
        runs = [r for r in results if r["method"] == method and r.get("final_loss")]
        if runs:
            chart.add(method, [r["initial_params"]["lengthscales"][0] for r in runs],
                      [r["final_loss"]["rmse_diffusion"] for r in runs], style="points")
    return chart


def _require_results(out_dir):
    results = load_results(out_dir)
    if not results:
        raise PlotError(f"no run results (*/result.json) in {out_dir}")
    return results


def plot_results(out_dir, kind: str, out_svg, run_id=None) -> Path:
    """Render one chart kind to ``out_svg``; nothing is written on error."""
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    if kind == "convergence":
        chart = convergence_chart(out_dir, run_id)
    elif kind == "slice":
        chart = slice_chart(out_dir, run_id)
    elif kind == "lengthscales":
        chart = lengthscales_chart(out_dir)
    else:
        chart = losses_chart(out_dir)
    svg = chart.to_svg()
    out = Path(out_svg)
    out.write_text(svg, encoding="utf-8")
    return out
