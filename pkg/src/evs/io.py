"""Binary latent formats, manifests, CSV rows, and SVG plots.

Every binary file starts with a 24-byte header::

    bytes 0..5   magic (6 ASCII bytes)
    bytes 6..7   zero padding
    bytes 8..19  three little-endian uint32 fields (a, b, count)
    bytes 20..23 reserved, zero

followed by little-endian float64 payload.  Field meaning per magic:

* ``EVSLAT`` — video latents: a=frames, b=dim, count=videos; payload is
  count*frames*dim values.
* ``EVSTRJ`` — trajectory dump: a=frames, b=dim, count=steps.
* ``EVSWLD`` — world definition: a=frames, b=dim, count=payload length;
  payload is [kind, modes, sigma, rho] ++ weights ++ means (kind 0 spatial,
  1 temporal).
* ``EVSNET`` — attention-denoiser weights: a=dim, b=embed, count=payload
  length; payload is [blocks, total_steps, n_modes, seed] ++ parameters in
  the model's declared order.
* ``EVSSFI`` — feature-cache debug export: count=entries; each entry is a
  packed (t, layer, kind, rows, cols) uint32 record followed by its array.

SVG plots are written by hand (fixed float formatting, no library metadata)
so outputs are byte-reproducible; each embeds the manifest hash.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .models import SpatialWorld, TemporalWorld, ToyAttentionDenoiser

MAGIC_LATENT = b"EVSLAT"
MAGIC_TRAJECTORY = b"EVSTRJ"
MAGIC_WORLD = b"EVSWLD"
MAGIC_NET = b"EVSNET"
MAGIC_CACHE = b"EVSSFI"

_HEADER = struct.Struct("<6s2xIII4x")
assert _HEADER.size == 24

CSV_COLUMNS = (
    "pipeline", "seed", "ms", "sc", "iq", "psnr", "overall",
    "nfe_t2i", "nfe_t2v", "wall_time",
)

MANIFEST_VERSION = 1
TOOL_VERSION = "0.1.0"


def _write_header(fh, magic: bytes, a: int, b: int, count: int):
    fh.write(_HEADER.pack(magic, a, b, count))


def _read_header(fh, expect_magic: bytes):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ConfigError("truncated binary header")
    magic, a, b, count = _HEADER.unpack(raw)
    if magic != expect_magic:
        raise ConfigError(f"bad magic {magic!r}, expected {expect_magic!r}")
    return a, b, count


def write_latents(path, videos) -> None:
    """Write one or more (frames, dim) videos to an EVSLAT file."""
    if isinstance(videos, np.ndarray) and videos.ndim == 2:
        videos = [videos]
    videos = [np.ascontiguousarray(v, dtype=np.float64) for v in videos]
    if not videos or videos[0].ndim != 2:
        raise ShapeError("expected a sequence of (frames, dim) arrays")
    f, d = videos[0].shape
    if any(v.shape != (f, d) for v in videos):
        raise ShapeError("all videos in one file must share a shape")
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_LATENT, f, d, len(videos))
        for v in videos:
            fh.write(v.astype("<f8").tobytes())


def read_latents(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        f, d, count = _read_header(fh, MAGIC_LATENT)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count * f * d:
        raise ConfigError(f"latent payload has {data.size} values, expected {count * f * d}")
    return [data[i * f * d : (i + 1) * f * d].reshape(f, d).copy() for i in range(count)]


def write_trajectory(path, latents) -> None:
    """Dump per-step latents (debug aid) to an EVSTRJ file."""
    latents = [np.ascontiguousarray(z, dtype=np.float64) for z in latents]
    f, d = latents[0].shape
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_TRAJECTORY, f, d, len(latents))
        for z in latents:
            fh.write(z.astype("<f8").tobytes())


def read_trajectory(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        f, d, count = _read_header(fh, MAGIC_TRAJECTORY)
        data = np.frombuffer(fh.read(), dtype="<f8")
    return [data[i * f * d : (i + 1) * f * d].reshape(f, d).copy() for i in range(count)]


def write_world(path, world) -> None:
    kind = 1.0 if isinstance(world, TemporalWorld) else 0.0
    rho = world.rho if isinstance(world, TemporalWorld) else 0.0
    payload = np.concatenate(
        [
            [kind, float(world.modes), world.sigma, rho],
            world.weights,
            world.means.ravel(),
        ]
    )
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_WORLD, world.frames, world.dim, payload.size)
        fh.write(payload.astype("<f8").tobytes())


def read_world(path):
    with open(path, "rb") as fh:
        frames, dim, count = _read_header(fh, MAGIC_WORLD)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count:
        raise ConfigError("world payload size mismatch")
    kind, modes = int(data[0]), int(data[1])
    sigma, rho = float(data[2]), float(data[3])
    weights = data[4 : 4 + modes].copy()
    means = data[4 + modes :].reshape(modes, dim).copy()
    if kind == 0:
        return SpatialWorld(means=means, weights=weights, sigma=sigma, frames=frames)
    return TemporalWorld(means=means, weights=weights, sigma=sigma, rho=rho, frames=frames)


def write_net(path, model: ToyAttentionDenoiser) -> None:
    parts = [np.array([model.blocks, model.total_steps, model.n_modes, model.seed], dtype=np.float64)]
    parts += [model.params[name].ravel() for name in model.param_names()]
    payload = np.concatenate(parts)
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_NET, model.dim, model.embed, payload.size)
        fh.write(payload.astype("<f8").tobytes())


def read_net(path) -> ToyAttentionDenoiser:
    with open(path, "rb") as fh:
        dim, embed, count = _read_header(fh, MAGIC_NET)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count:
        raise ConfigError("net payload size mismatch")
    blocks, total_steps, n_modes, seed = (int(x) for x in data[:4])
    model = ToyAttentionDenoiser(
        dim=dim, embed=embed, blocks=blocks, total_steps=total_steps,
        n_modes=n_modes, seed=seed,
    )
    offset = 4
    for name in model.param_names():
        shape = model.params[name].shape
        size = int(np.prod(shape))
        model.params[name] = data[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != data.size:
        raise ConfigError("net payload has trailing values")
    return model


_CACHE_KINDS = ("f", "Q", "K", "V")
_CACHE_RECORD = struct.Struct("<IIIII")  # t, layer, kind, rows, cols


def write_feature_cache(path, cache) -> None:
    """Debug export: one record per cache entry (key triple + payload)."""
    keys = sorted(cache.keys())
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_CACHE, 0, 0, len(keys))
        for t, layer, kind in keys:
            arr = np.ascontiguousarray(cache.get(t, layer, kind), dtype=np.float64)
            fh.write(_CACHE_RECORD.pack(t, layer, _CACHE_KINDS.index(kind), *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def read_feature_cache(path):
    from .sfi import FeatureCache

    cache = FeatureCache()
    with open(path, "rb") as fh:
        _, _, count = _read_header(fh, MAGIC_CACHE)
        for _ in range(count):
            raw = fh.read(_CACHE_RECORD.size)
            if len(raw) != _CACHE_RECORD.size:
                raise ConfigError("truncated cache record")
            t, layer, kind_idx, rows, cols = _CACHE_RECORD.unpack(raw)
            payload = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
            if payload.size != rows * cols:
                raise ConfigError("truncated cache payload")
            cache.put(t, layer, _CACHE_KINDS[kind_idx], payload.reshape(rows, cols))
    return cache


# ---------------------------------------------------------------------------
# Manifests and CSV
# ---------------------------------------------------------------------------


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc


def check_manifest_version(manifest: dict, path) -> dict:
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise ConfigError(
            f"{path}: manifest_version {manifest.get('manifest_version')!r} "
            f"not supported (want {MANIFEST_VERSION})"
        )
    return manifest


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_metric_csv(path, rows) -> None:
    """Rows are dicts keyed by CSV_COLUMNS; column order is fixed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[col]) for col in CSV_COLUMNS])


def _format_cell(value):
    if isinstance(value, float):
        return format(value, ".12g")
    return value


def read_metric_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def csv_without_wall_time(path) -> str:
    """CSV content with the wall_time column stripped, for byte comparisons."""
    out = _io.StringIO()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        writer = csv.writer(out)
        header = next(reader)
        keep = [i for i, name in enumerate(header) if name != "wall_time"]
        writer.writerow([header[i] for i in keep])
        for row in reader:
            writer.writerow([row[i] for i in keep])
    return out.getvalue()


# ---------------------------------------------------------------------------
# SVG plots
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 640, 420
_MARGIN = 60


def _fmt(x: float) -> str:
    return format(x, ".2f")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _svg_document(body: list[str], title: str, manifest_hash: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f"<metadata>manifest-sha256:{manifest_hash}</metadata>",
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _axes(x_label: str, y_label: str, xlo, xhi, ylo, yhi) -> list[str]:
    x0, x1 = _MARGIN, _SVG_W - _MARGIN
    y0, y1 = _SVG_H - _MARGIN, _MARGIN
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{_SVG_H - 16}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="18" y="{(y0 + y1) / 2}" font-size="12" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2})" text-anchor="middle">{y_label}</text>',
        f'<text x="{x0}" y="{y0 + 16}" font-size="10" text-anchor="middle">{_fmt(xlo)}</text>',
        f'<text x="{x1}" y="{y0 + 16}" font-size="10" text-anchor="middle">{_fmt(xhi)}</text>',
        f'<text x="{x0 - 6}" y="{y0}" font-size="10" text-anchor="end">{_fmt(ylo)}</text>',
        f'<text x="{x0 - 6}" y="{y1 + 4}" font-size="10" text-anchor="end">{_fmt(yhi)}</text>',
    ]


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def svg_line_plot(path, title, x_label, y_label, series: dict, manifest_hash: str,
                  error_bars: dict | None = None) -> None:
    """Line plot with optional per-point error bars; series maps name -> (xs, ys)."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if error_bars:
        for name, errs in error_bars.items():
            xs, ys = series[name]
            all_y += [y + e for y, e in zip(ys, errs)] + [y - e for y, e in zip(ys, errs)]
    xlo, xhi = min(all_x), max(all_x)
    ylo, yhi = min(all_y), max(all_y)
    if yhi == ylo:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    body = _axes(x_label, y_label, xlo, xhi, ylo, yhi)
    for i, (name, (xs, ys)) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        px = _scale(xs, xlo, xhi, _MARGIN, _SVG_W - _MARGIN)
        py = _scale(ys, ylo, yhi, _SVG_H - _MARGIN, _MARGIN)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(px, py):
            body.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="3" fill="{color}"/>')
        if error_bars and name in error_bars:
            for x, y, e in zip(xs, ys, error_bars[name]):
                sx = _scale([x], xlo, xhi, _MARGIN, _SVG_W - _MARGIN)[0]
                sy0 = _scale([y - e], ylo, yhi, _SVG_H - _MARGIN, _MARGIN)[0]
                sy1 = _scale([y + e], ylo, yhi, _SVG_H - _MARGIN, _MARGIN)[0]
                body.append(
                    f'<line x1="{_fmt(sx)}" y1="{_fmt(sy0)}" x2="{_fmt(sx)}" y2="{_fmt(sy1)}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
        body.append(
            f'<text x="{_SVG_W - _MARGIN}" y="{_MARGIN + 16 * i}" text-anchor="end" '
            f'font-size="12" fill="{color}">{name}</text>'
        )
    Path(path).write_text(_svg_document(body, title, manifest_hash))


def svg_scatter(path, title, x_label, y_label, series: dict, manifest_hash: str) -> None:
    """Scatter plot; series maps name -> list of (x, y) points."""
    all_pts = [p for pts in series.values() for p in pts]
    xlo, xhi = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
    ylo, yhi = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    if xhi == xlo:
        xlo, xhi = xlo - 1.0, xhi + 1.0
    if yhi == ylo:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    body = _axes(x_label, y_label, xlo, xhi, ylo, yhi)
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        for x, y in pts:
            sx = _scale([x], xlo, xhi, _MARGIN, _SVG_W - _MARGIN)[0]
            sy = _scale([y], ylo, yhi, _SVG_H - _MARGIN, _MARGIN)[0]
            body.append(f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="4" fill="{color}" fill-opacity="0.7"/>')
        body.append(
            f'<text x="{_SVG_W - _MARGIN}" y="{_MARGIN + 16 * i}" text-anchor="end" '
            f'font-size="12" fill="{color}">{name}</text>'
        )
    Path(path).write_text(_svg_document(body, title, manifest_hash))


def svg_bar_chart(path, title, y_label, labels, values, manifest_hash: str) -> None:
    ylo = min(0.0, min(values))
    yhi = max(values) if max(values) > ylo else ylo + 1.0
    body = _axes("pipeline", y_label, 0, len(labels), ylo, yhi)
    width = (_SVG_W - 2 * _MARGIN) / max(len(labels), 1)
    for i, (label, value) in enumerate(zip(labels, values)):
        x = _MARGIN + i * width + width * 0.15
        y = _scale([value], ylo, yhi, _SVG_H - _MARGIN, _MARGIN)[0]
        base = _SVG_H - _MARGIN
        body.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(min(y, base))}" width="{_fmt(width * 0.7)}" '
            f'height="{_fmt(abs(base - y))}" fill="{_COLORS[i % len(_COLORS)]}"/>'
        )
        body.append(
            f'<text x="{_fmt(x + width * 0.35)}" y="{base + 14}" text-anchor="middle" '
            f'font-size="11">{label}</text>'
        )
        body.append(
            f'<text x="{_fmt(x + width * 0.35)}" y="{_fmt(min(y, base) - 4)}" '
            f'text-anchor="middle" font-size="10">{format(value, ".4g")}</text>'
        )
    Path(path).write_text(_svg_document(body, title, manifest_hash))
