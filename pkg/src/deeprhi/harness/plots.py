"""Self-rasterized PNG charts. Byte-deterministic for identical inputs.

Charts carry no text; every chart is written next to a CSV holding the
numbers it draws.
"""

from __future__ import annotations

import csv
import logging
import struct
import zlib
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WHITE = (255, 255, 255)
BLACK = (0, 0, 0)
GREY = (170, 170, 170)
MODE_COLORS = {"sync": (40, 90, 200), "async": (230, 140, 30)}
BAND = {"sync": (190, 205, 240), "async": (250, 220, 180)}


def encode_png(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[r].astype(np.uint8).tobytes() for r in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


class Canvas:
    def __init__(self, width: int, height: int, bg=WHITE):
        self.px = np.empty((height, width, 3), dtype=np.uint8)
        self.px[:] = bg
        self.w, self.h = width, height

    def rect(self, x0, y0, x1, y1, color) -> None:
        xa, xb = sorted((int(round(x0)), int(round(x1))))
        ya, yb = sorted((int(round(y0)), int(round(y1))))
        xa, ya = max(xa, 0), max(ya, 0)
        xb, yb = min(xb, self.w - 1), min(yb, self.h - 1)
        if xa <= xb and ya <= yb:
            self.px[ya:yb + 1, xa:xb + 1] = color

    def line(self, x0, y0, x1, y1, color) -> None:
        x0, y0, x1, y1 = (int(round(v)) for v in (x0, y0, x1, y1))
        dx, dy = abs(x1 - x0), -abs(y1 - y0)
        sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
        err = dx + dy
        while True:
            if 0 <= x0 < self.w and 0 <= y0 < self.h:
                self.px[y0, x0] = color
            if x0 == x1 and y0 == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x0 += sx
            if e2 <= dx:
                err += dx
                y0 += sy

    def save(self, path) -> None:
        Path(path).write_bytes(encode_png(self.px))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def drift_bar_chart(cells, out_dir: Path, width=360, height=240) -> Path | None:
    """Grouped bars: one group per condition, one bar per mode, +/- std whiskers."""
    cells = [c for c in cells if c.n_complete > 0]
    if not cells:
        log.warning("no complete cells, drift chart omitted")
        return None
    _write_csv(
        out_dir / "drift_bars.csv",
        ("condition", "mode", "drift_mean_cm", "drift_std_cm"),
        [(c.condition, c.mode, c.drift_mean, c.drift_std) for c in cells],
    )
    conditions = list(dict.fromkeys(c.condition for c in cells))
    modes = list(dict.fromkeys(c.mode for c in cells))
    span = max(max(abs(c.drift_mean) + c.drift_std for c in cells), 1e-9)
    cv = Canvas(width, height)
    mid = height / 2
    scale = (height / 2 - 12) / span
    group_w = width / len(conditions)
    bar_w = group_w / (len(modes) + 1)
    for c in cells:
        gx = conditions.index(c.condition) * group_w
        x0 = gx + bar_w * (modes.index(c.mode) + 0.5)
        top = mid - c.drift_mean * scale
        cv.rect(x0, mid, x0 + bar_w - 2, top, MODE_COLORS.get(c.mode, GREY))
        xc = x0 + bar_w / 2
        cv.line(xc, mid - (c.drift_mean + c.drift_std) * scale, xc, mid - (c.drift_mean - c.drift_std) * scale, BLACK)
    cv.line(0, mid, width - 1, mid, BLACK)
    path = out_dir / "drift_bars.png"
    cv.save(path)
    return path


def force_series_chart(cell, out_dir: Path, dt: float, width=360, height=200) -> Path | None:
    """Mean force proxy over time with the across-trial min/max band."""
    if cell.n_complete == 0 or cell.force_mean.size == 0:
        log.warning("cell %s/%s has no complete trials, force chart omitted", cell.condition, cell.mode)
        return None
    stem = f"force_{cell.condition}_{cell.mode}"
    n = cell.force_mean.size
    _write_csv(
        out_dir / f"{stem}.csv",
        ("iter", "t_s", "force_mean", "force_min", "force_max"),
        [(k, (k + 1) * dt, cell.force_mean[k], cell.force_lo[k], cell.force_hi[k]) for k in range(n)],
    )
    span = max(float(np.max(np.abs(np.concatenate([cell.force_lo, cell.force_hi])))), 1e-9)
    cv = Canvas(width, height)
    mid = height / 2
    scale = (height / 2 - 6) / span
    xs = np.linspace(0, width - 1, n)
    band = BAND.get(cell.mode, GREY)
    for k in range(n):
        cv.line(xs[k], mid - cell.force_hi[k] * scale, xs[k], mid - cell.force_lo[k] * scale, band)
    cv.line(0, mid, width - 1, mid, GREY)
    color = MODE_COLORS.get(cell.mode, BLACK)
    for k in range(1, n):
        cv.line(xs[k - 1], mid - cell.force_mean[k - 1] * scale, xs[k], mid - cell.force_mean[k] * scale, color)
    path = out_dir / f"{stem}.png"
    cv.save(path)
    return path


def emit_plots(cells, out_dir, dt: float) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [drift_bar_chart(cells, out_dir)]
    paths += [force_series_chart(c, out_dir, dt) for c in cells]
    return [p for p in paths if p is not None]
