"""Field files (CSV, binary PGM) and key = value configuration files."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .grid import GridField


def write_field_csv(path, field: GridField, comments=()) -> None:
    """CSV: ``#`` comment lines, header ``d,m,kind``, one row, then one row per point.

    Points are in row-major order; real fields have one column, complex
    fields two (real, imag).
    """
    lines = [f"# {c}" for c in comments]
    lines += ["d,m,kind", f"{field.d},{field.m},{field.kind}"]
    flat = field.data.reshape(-1)
    if field.kind == "real":
        lines += [repr(float(v)) for v in flat]
    else:
        lines += ["real,imag"] + [f"{float(v.real)!r},{float(v.imag)!r}" for v in flat]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> GridField:
    text = Path(path).read_text().splitlines()
    rows = [ln.strip() for ln in text if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) < 2 or rows[0].replace(" ", "") != "d,m,kind":
        raise ValueError(f"{path}: missing 'd,m,kind' header")
    d_s, m_s, kind = (v.strip() for v in rows[1].split(","))
    d, m = int(d_s), int(m_s)
    body = rows[2:]
    if kind == "complex":
        if not body or body[0].replace(" ", "") != "real,imag":
            raise ValueError(f"{path}: complex field needs a 'real,imag' column header")
        vals = np.array([[float(x) for x in r.split(",")] for r in body[1:]])
        if vals.ndim != 2 or vals.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns per point")
        data = vals[:, 0] + 1j * vals[:, 1]
    elif kind == "real":
        data = np.array([float(r) for r in body])
    else:
        raise ValueError(f"{path}: unknown kind {kind!r}")
    if data.size != (m + 1) ** d:
        raise ValueError(f"{path}: expected {(m + 1) ** d} points, found {data.size}")
    return GridField(data.reshape((m + 1,) * d), kind=kind)


def write_pgm(path, values: np.ndarray, bits: int = 8, vmin=None, vmax=None) -> dict:
    """Binary (P5) PGM of a 2-d real array plus a ``.map`` sidecar.

    Gray levels are ``round((value - offset) * scale)`` clipped to
    ``[0, maxval]``; the sidecar records ``offset``, ``scale`` and
    ``maxval`` so values can be recovered as ``gray / scale + offset``.
    """
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM output needs a 2-d field")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    lo = float(np.min(a)) if vmin is None else float(vmin)
    hi = float(np.max(a)) if vmax is None else float(vmax)
    scale = maxval / (hi - lo) if hi > lo else 1.0
    gray = np.clip(np.rint((a - lo) * scale), 0, maxval)
    raw = gray.astype(">u2" if bits == 16 else np.uint8).tobytes()
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + raw)
    mapping = {"offset": lo, "scale": scale, "maxval": maxval}
    Path(str(path) + ".map").write_text(
        "# value = gray / scale + offset\n" + "".join(f"{k} = {v!r}\n" for k, v in mapping.items())
    )
    return mapping


def _pgm_tokens(buf: bytes, count: int):
    """First ``count`` header tokens of a PGM and the offset of the raster."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        tokens.append(buf[i:j].decode("ascii"))
        i = j
    return tokens, i + 1  # a single whitespace byte ends the header


def read_pgm(path) -> tuple:
    """Returns ``(values, mapping)``; without a sidecar values are gray levels."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), start = _pgm_tokens(buf, 4)
    if magic != "P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) - start < n:
        raise ValueError(f"{path}: raster is truncated")
    gray = np.frombuffer(buf, dtype=dtype, count=w * h, offset=start).reshape(h, w).astype(float)
    side = Path(str(path) + ".map")
    if not side.exists():
        return gray, None
    mapping = {k: float(v) for k, v in parse_config(side.read_text(), {"offset": float, "scale": float,
                                                                      "maxval": float}).items()}
    return gray / mapping["scale"] + mapping["offset"], mapping


def _convert(key, raw, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is list:
            return [float(v) for v in raw.replace(",", " ").split()]
        if typ is float and raw.lower() in ("inf", "infinity"):
            return math.inf
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config(text: str, schema: dict) -> dict:
    """Parse ``key = value`` lines (``#`` comments) against ``schema`` (key -> type).

    Unknown keys and unparsable values raise :class:`ConfigError`.
    """
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in schema:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        out[key] = _convert(key, raw, schema[key])
    return out


def load_config(path, schema: dict) -> dict:
    return parse_config(Path(path).read_text(), schema)


def format_config(values: dict) -> str:
    def fmt(v):
        if isinstance(v, (list, tuple)):
            return ", ".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in values.items())
