"""File formats: single-column CSV signals, CSV matrices, PGM images and JSON records.

Every writer is atomic (temporary file in the target directory, then rename).
Floats are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .kmd import DecayFit
from .rdmd import SegmentModes
from .spectral import SpectralSet
from .tv1d import PiecewiseFlow


class ParseError(ValueError):
    """Malformed input file; the message carries the line or byte position."""


def _num(x) -> float:
    return float(x)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- CSV ------------------------------------------------------------------------------


def _parse_float(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"{where}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: non-finite value {tok!r}")
    return v


def read_signal_csv(path) -> np.ndarray:
    """One real per line; blank lines are ignored."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.strip()
            if not tok:
                continue
            if "," in tok or ";" in tok:
                raise ParseError(f"{path}:{lineno}: expected a single column, got {tok!r}")
            values.append(_parse_float(tok, f"{path}:{lineno}"))
    if not values:
        raise ParseError(f"{path}: no values")
    return np.array(values)


def write_signal_csv(path, values) -> None:
    atomic_write_text(path, "".join(f"{_num(v)!r}\n" for v in np.ravel(values)))


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.strip()
            if not tok:
                continue
            rows.append([_parse_float(c.strip(), f"{path}:{lineno}") for c in tok.split(",")])
    if not rows:
        raise ParseError(f"{path}: no values")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(f"{path}: row {i + 1} has {len(r)} columns, expected {width}")
    return np.array(rows)


def write_matrix_csv(path, matrix, header: list[str] | None = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [",".join(header)] if header else []
    lines += [",".join(repr(float(v)) for v in row) for row in matrix]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- PGM ------------------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError(f"byte {start}: truncated PGM header")
        tok = data[start:pos]
        if not tok.isdigit():
            raise ParseError(f"byte {start}: expected an integer in PGM header, got {tok[:16]!r}")
        out.append(int(tok))
    return out, pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P2 or P5 PGM (8 or 16 bit) into floats in [0, 1]."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"byte 0: not a PGM file (magic {magic!r})")
    (width, height, maxval), pos = _pgm_tokens(data, 3, 2)
    if width < 1 or height < 1:
        raise ParseError(f"byte {pos}: empty image {width}x{height}")
    if not 0 < maxval < 65536:
        raise ParseError(f"byte {pos}: maxval {maxval} out of range")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        raw = data[pos : pos + need]
        if len(raw) < need:
            raise ParseError(f"byte {pos + len(raw)}: truncated raster, expected {need} bytes")
        arr = np.frombuffer(raw, dtype=dtype).astype(float)
    else:
        vals, end = [], pos
        try:
            vals, end = _pgm_tokens(data, n, pos)
        except ParseError as err:
            raise ParseError(f"{err} (raster of {n} samples)") from None
        arr = np.array(vals, dtype=float)
    if np.any(arr > maxval):
        raise ParseError(f"sample exceeds maxval {maxval}")
    return arr.reshape(height, width) / maxval


def read_pgm(path) -> np.ndarray:
    try:
        return parse_pgm(Path(path).read_bytes())
    except ParseError as err:
        raise ParseError(f"{path}: {err}") from None


def encode_pgm(img, maxval: int = 255, plain: bool = False) -> bytes:
    """Encode an image with values in [0, 1] (clipped) as P5, or P2 if ``plain``."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    q = np.rint(img * maxval).astype(np.int64)
    h, w = img.shape
    if plain:
        body = "\n".join(" ".join(str(v) for v in row) for row in q)
        return f"P2\n{w} {h}\n{maxval}\n{body}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    return f"P5\n{w} {h}\n{maxval}\n".encode() + q.astype(dtype).tobytes()


def write_pgm(path, img, maxval: int = 255, plain: bool = False) -> None:
    atomic_write_bytes(path, encode_pgm(img, maxval=maxval, plain=plain))


def read_image(path) -> np.ndarray:
    """PGM or CSV matrix, chosen by extension."""
    return read_pgm(path) if str(path).lower().endswith((".pgm", ".pnm")) else read_matrix_csv(path)


# -- JSON records ---------------------------------------------------------------------


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def flow_to_dict(flow: PiecewiseFlow) -> dict:
    return {
        "times": _floats(flow.times),
        "subgradients": _floats(flow.subgradients.reshape(flow.n_events, -1)),
        "initial": _floats(flow.initial),
    }


def flow_from_dict(d: dict) -> PiecewiseFlow:
    try:
        return PiecewiseFlow.from_events(np.asarray(d["initial"], dtype=float), d["times"], d["subgradients"])
    except KeyError as err:
        raise ParseError(f"flow record lacks field {err}") from None


def spectral_to_dict(spec: SpectralSet) -> dict:
    return {"mean": float(spec.mean), "lambdas": _floats(spec.lambdas), "phis": _floats(spec.phis)}


def spectral_from_dict(d: dict) -> SpectralSet:
    lam = np.asarray(d["lambdas"], dtype=float)
    phis = np.asarray(d["phis"], dtype=float).reshape(lam.size, -1)
    return SpectralSet(mean=float(d["mean"]), lambdas=lam, phis=phis)


def _maybe_inf(x: float):
    return None if not math.isfinite(x) else float(x)


def _eigs(values) -> list:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return [[float(v.real), float(v.imag)] for v in values]
    return _floats(values)


def segments_to_list(segs: list[SegmentModes]) -> list[dict]:
    return [
        {
            "segment": s.index,
            "tau_lo": float(s.tau_lo),
            "tau_hi": _maybe_inf(s.tau_hi),
            "dt": float(s.dt),
            "mean": float(s.mean),
            "xi1": _floats(s.xi1),
            "xi2": _floats(s.xi2),
            "eigenvalues": _eigs(s.eigenvalues),
            "coefficients": _floats(s.coefficients),
            "reconstruction_error": float(s.reconstruction_error),
        }
        for s in segs
    ]


def fit_to_dict(fitted: DecayFit) -> dict:
    return {
        "lambdas": _floats(fitted.active_lambdas),
        "modes": _floats(fitted.modes),
        "residual": float(fitted.residual),
    }


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, allow_nan=False) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None


# -- trajectories -----------------------------------------------------------------------


def write_trajectory(directory, times, images, meta: dict | None = None, maxval: int = 65535) -> None:
    """Frames as 16-bit PGM plus ``index.json``; the value range is stored for exact rescaling."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = np.asarray(images, dtype=float)
    lo, hi = float(images.min()), float(images.max())
    span = hi - lo if hi > lo else 1.0
    names = []
    for i, img in enumerate(images):
        name = f"frame_{i:05d}.pgm"
        write_pgm(directory / name, (img - lo) / span, maxval=maxval)
        names.append(name)
    index = {"times": _floats(times), "frames": names, "range": [lo, lo + span]}
    if meta:
        index.update(meta)
    write_json(directory / "index.json", index)


def read_trajectory(directory) -> tuple[np.ndarray, np.ndarray, dict]:
    directory = Path(directory)
    index = read_json(directory / "index.json")
    lo, hi = index.get("range", [0.0, 1.0])
    frames = np.array([lo + (hi - lo) * read_pgm(directory / n) for n in index["frames"]])
    return np.asarray(index["times"], dtype=float), frames, index
