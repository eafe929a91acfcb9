"""Loss-curve and throughput figures as CSV plus minimal hand-written SVG.

The loss figure gives each run its own y-scale (left axis for the first run,
right axis for the second), since the two validation losses measure
different objectives.  Each run's best validation step is marked.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import ContractError, MeasurementError
from ..train import ConvergenceLog, measure_throughput

W, H = 640, 360
LEFT, RIGHT, TOP, BOTTOM = 70, 70, 40, 50
COLORS = ("#1f5fa8", "#c4501b")


def _csv(rows, header, config_hash) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _svg(body: list[str], config_hash: str, title: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f"<!-- config_hash={config_hash} -->",
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _scale(lo: float, hi: float, a: float, b: float):
    """Map [lo, hi] onto [a, b]; a zero-width range maps to the midpoint."""
    if hi == lo:
        return lambda v: (a + b) / 2
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def loss_rows(logs: dict[str, ConvergenceLog]) -> list[tuple]:
    rows = []
    for name, clog in logs.items():
        val = clog.split("val")
        if not val:
            raise ContractError(f"{name}: log has no validation records")
        best_step, _ = clog.best()
        rows += [(name, r.step, repr(float(r.loss)), int(r.step == best_step)) for r in val]
    return rows


def loss_svg(logs: dict[str, ConvergenceLog], config_hash: str) -> str:
    max_step = max(r.step for clog in logs.values() for r in clog.split("val"))
    x = _scale(0, max_step, LEFT, W - RIGHT)
    body = [
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">step</text>',
    ]
    for s in _ticks(0, max_step):
        body.append(f'<text x="{x(s):.1f}" y="{H - BOTTOM + 16}" text-anchor="middle" font-size="10">{s:.0f}</text>')
    for k, (name, clog) in enumerate(logs.items()):
        val = clog.split("val")
        losses = [r.loss for r in val]
        lo, hi = min(losses), max(losses)
        pad = 0.05 * (hi - lo)
        y = _scale(lo - pad, hi + pad, H - BOTTOM, TOP)
        axis_x = LEFT if k == 0 else W - RIGHT
        anchor, dx = ("end", -6) if k == 0 else ("start", 6)
        color = COLORS[k % len(COLORS)]
        body.append(f'<line x1="{axis_x}" y1="{TOP}" x2="{axis_x}" y2="{H - BOTTOM}" stroke="{color}"/>')
        for v in _ticks(lo, hi):
            body.append(
                f'<text x="{axis_x + dx}" y="{y(v) + 4:.1f}" text-anchor="{anchor}" font-size="10" fill="{color}">{v:.3f}</text>'
            )
        label_x = 14 if k == 0 else W - 14
        body.append(
            f'<text x="{label_x}" y="{H / 2}" font-size="12" fill="{color}" text-anchor="middle" '
            f'transform="rotate(-90 {label_x} {H / 2})">{escape(name)} val loss (nats)</text>'
        )
        pts = " ".join(f"{x(r.step):.1f},{y(r.loss):.1f}" for r in val)
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        best_step, best_loss = clog.best()
        body.append(
            f'<circle class="best" data-run="{escape(name)}" data-step="{best_step}" cx="{x(best_step):.1f}" '
            f'cy="{y(best_loss):.1f}" r="5" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        body.append(
            f'<text x="{x(best_step):.1f}" y="{y(best_loss) - 9:.1f}" text-anchor="middle" font-size="10" '
            f'fill="{color}">best {best_step}</text>'
        )
    return _svg(body, config_hash, "Validation loss (independent y-axes)")


def throughput_rows(logs: dict[str, ConvergenceLog], skip: int = 50) -> list[tuple]:
    rows = []
    for name, clog in logs.items():
        train = clog.split("train")
        try:
            tps = measure_throughput(clog, skip)
            window = "steady_state"
        except MeasurementError:
            # short run: whole-run average instead
            total_ms = train[-1].wall_ms if train else 0.0
            tps = clog.tokens_per_step * len(train) / (total_ms / 1000.0) if total_ms > 0 else 0.0
            window = "whole_run"
        wall_s = train[-1].wall_ms / 1000.0 if train else 0.0
        rows.append((name, f"{tps:.1f}", f"{wall_s:.3f}", window))
    return rows


def throughput_svg(rows: list[tuple], config_hash: str) -> str:
    values = [float(r[1]) for r in rows]
    top = max(values) if values and max(values) > 0 else 1.0
    y = _scale(0, top * 1.1, H - BOTTOM, TOP)
    slot = (W - LEFT - RIGHT) / max(len(rows), 1)
    body = [
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="14" y="{H / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {H / 2})">tokens / second</text>',
    ]
    for k, (name, tps, wall_s, _) in enumerate(rows):
        v = float(tps)
        x0 = LEFT + slot * k + slot * 0.2
        bw = slot * 0.6
        color = COLORS[k % len(COLORS)]
        body.append(f'<rect x="{x0:.1f}" y="{y(v):.1f}" width="{bw:.1f}" height="{H - BOTTOM - y(v):.1f}" fill="{color}"/>')
        cx = x0 + bw / 2
        body.append(f'<text x="{cx:.1f}" y="{y(v) - 6:.1f}" text-anchor="middle" font-size="11">{v:,.0f} tok/s</text>')
        body.append(
            f'<text x="{cx:.1f}" y="{H - BOTTOM + 16}" text-anchor="middle" font-size="12">{escape(name)} ({float(wall_s):.0f} s)</text>'
        )
    return _svg(body, config_hash, "Training throughput and wall-clock time")


def emit_figures(logs: dict[str, ConvergenceLog], out_dir: str | Path, config_hash: str = "", skip: int = 50) -> None:
    """Write loss and throughput CSVs, then their SVG renderings."""
    if not logs:
        raise ContractError("no logs to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lrows = loss_rows(logs)
    (out / "loss.csv").write_text(_csv(lrows, ["run", "step", "val_loss", "is_best"], config_hash))
    trows = throughput_rows(logs, skip)
    (out / "throughput.csv").write_text(
        _csv(trows, ["run", "tokens_per_sec", "train_wall_s", "window"], config_hash)
    )
    (out / "loss.svg").write_text(loss_svg(logs, config_hash))
    (out / "throughput.svg").write_text(throughput_svg(trows, config_hash))
