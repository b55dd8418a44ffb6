"""Two-detector quadrature time series: file format, calibration, conditioning.

File layout (UTF-8, LF line endings)::

    # sample_rate_hz=100000
    # trigger_angle_rad=0
    # verify_angle_rad=0
    # shot_noise_variance_raw=1
    # description=free text
    index,q1,q2
    0,0.123...,-0.456...
    1,...

Header lines are ``# key=value``; blank ``#`` lines and unknown keys are
ignored on load. The column line ``index,q1,q2`` is mandatory. Floats are
written with 17 significant digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from .montecarlo import DEFAULT_BOOTSTRAP, DistillationEstimate, estimate_from_samples, window_accept

COLUMNS = "index,q1,q2"
_REQUIRED_KEYS = ("sample_rate_hz", "trigger_angle_rad", "verify_angle_rad", "shot_noise_variance_raw")


class SeriesFormatError(ValueError):
    """A series file could not be parsed; ``line`` is 1-based (0 if unknown)."""

    def __init__(self, message: str, line: int = 0, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<series>'}"
        if line:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class QuadratureRecord:
    index: int
    q1: float
    q2: float


@dataclass(frozen=True)
class SeriesMetadata:
    sample_rate: float = 100e3
    trigger_angle: float = 0.0
    verify_angle: float = 0.0
    shot_noise_variance_raw: float = 1.0
    description: str = ""

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not self.shot_noise_variance_raw > 0:
            raise ValueError(
                f"shot_noise_variance_raw must be > 0, got {self.shot_noise_variance_raw}"
            )
        if "\n" in self.description or "\r" in self.description:
            raise ValueError("description must be a single line")


@dataclass(frozen=True, eq=False)
class QuadratureSeries:
    """Columnar store of :class:`QuadratureRecord` rows."""

    index: np.ndarray
    q1: np.ndarray
    q2: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=np.int64)
        q1 = np.asarray(self.q1, dtype=float)
        q2 = np.asarray(self.q2, dtype=float)
        if not (idx.shape == q1.shape == q2.shape) or idx.ndim != 1:
            raise ValueError("index, q1 and q2 must be 1-D arrays of equal length")
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(q2))):
            raise ValueError("quadrature values must be finite")
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)

    @classmethod
    def from_arrays(cls, q1, q2) -> QuadratureSeries:
        return cls(np.arange(len(q1)), q1, q2)

    @classmethod
    def from_records(cls, records) -> QuadratureSeries:
        records = list(records)
        return cls(
            np.array([r.index for r in records], dtype=np.int64),
            np.array([r.q1 for r in records], dtype=float),
            np.array([r.q2 for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.index)

    def __iter__(self) -> Iterator[QuadratureRecord]:
        for k, a, b in zip(self.index.tolist(), self.q1.tolist(), self.q2.tolist()):
            yield QuadratureRecord(k, a, b)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuadratureSeries):
            return NotImplemented
        return (
            np.array_equal(self.index, other.index)
            and np.array_equal(self.q1, other.q1)
            and np.array_equal(self.q2, other.q2)
        )


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_series(series: QuadratureSeries, metadata: SeriesMetadata, fh: TextIO) -> None:
    fh.write(f"# sample_rate_hz={_fmt(metadata.sample_rate)}\n")
    fh.write(f"# trigger_angle_rad={_fmt(metadata.trigger_angle)}\n")
    fh.write(f"# verify_angle_rad={_fmt(metadata.verify_angle)}\n")
    fh.write(f"# shot_noise_variance_raw={_fmt(metadata.shot_noise_variance_raw)}\n")
    fh.write(f"# description={metadata.description}\n")
    fh.write(COLUMNS + "\n")
    fh.writelines(
        f"{k},{a:.17g},{b:.17g}\n"
        for k, a, b in zip(series.index.tolist(), series.q1.tolist(), series.q2.tolist())
    )


def save_series(
    series: QuadratureSeries, metadata: SeriesMetadata, destination: str | os.PathLike | TextIO
) -> None:
    """Write ``series`` with its metadata header to a path or text handle.

    ``series`` may also be any iterable of :class:`QuadratureRecord`.
    """
    if not isinstance(series, QuadratureSeries):
        series = QuadratureSeries.from_records(series)
    if hasattr(destination, "write"):
        write_series(series, metadata, destination)
        return
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        write_series(series, metadata, fh)


def _parse_float(text: str, what: str, line: int, source) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SeriesFormatError(f"{what} is not a number: {text!r}", line, source) from None
    if not math.isfinite(value):
        raise SeriesFormatError(f"{what} is not finite: {text!r}", line, source)
    return value


def read_series(fh: TextIO, source: str | None = None) -> tuple[QuadratureSeries, SeriesMetadata]:
    header: dict[str, str] = {}
    header_line: dict[str, int] = {}
    lineno = 0
    columns_seen = False
    for raw in fh:
        lineno += 1
        line = raw.rstrip("\r\n")
        if line.startswith("#"):
            body = line[2:] if line.startswith("# ") else line[1:]
            if not body.strip():
                continue
            if "=" not in body:
                raise SeriesFormatError(f"header line is not key=value: {line!r}", lineno, source)
            key, value = body.split("=", 1)
            key = key.strip()
            header[key] = value if key == "description" else value.strip()
            header_line[key] = lineno
            continue
        if line.strip() == COLUMNS:
            columns_seen = True
            break
        raise SeriesFormatError(f"expected header or {COLUMNS!r}, got {line!r}", lineno, source)
    if not columns_seen:
        raise SeriesFormatError(f"missing column line {COLUMNS!r}", lineno, source)
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise SeriesFormatError(f"missing header keys: {', '.join(missing)}", 0, source)

    def number(key):
        return _parse_float(header[key], key, header_line[key], source)

    try:
        meta = SeriesMetadata(
            sample_rate=number("sample_rate_hz"),
            trigger_angle=number("trigger_angle_rad"),
            verify_angle=number("verify_angle_rad"),
            shot_noise_variance_raw=number("shot_noise_variance_raw"),
            description=header.get("description", ""),
        )
    except SeriesFormatError:
        raise
    except ValueError as exc:
        raise SeriesFormatError(str(exc), 0, source) from None

    idx, q1, q2 = [], [], []
    prev = None
    for raw in fh:
        lineno += 1
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise SeriesFormatError(f"expected 3 fields, got {len(fields)}", lineno, source)
        try:
            k = int(fields[0])
        except ValueError:
            raise SeriesFormatError(f"index is not an integer: {fields[0]!r}", lineno, source) from None
        if prev is not None and k <= prev:
            raise SeriesFormatError(f"index {k} does not increase (previous {prev})", lineno, source)
        prev = k
        idx.append(k)
        q1.append(_parse_float(fields[1], "q1", lineno, source))
        q2.append(_parse_float(fields[2], "q2", lineno, source))
    return QuadratureSeries(np.array(idx, dtype=np.int64), np.array(q1), np.array(q2)), meta


def load_series(source: str | os.PathLike | TextIO) -> tuple[QuadratureSeries, SeriesMetadata]:
    """Parse a series file; raises :class:`SeriesFormatError` with line numbers."""
    if hasattr(source, "read"):
        return read_series(source, getattr(source, "name", None))
    with open(source, encoding="utf-8", newline="") as fh:
        return read_series(fh, str(Path(source)))


def dumps(series: QuadratureSeries, metadata: SeriesMetadata) -> str:
    buf = io.StringIO()
    write_series(series, metadata, buf)
    return buf.getvalue()


def calibrate(series: QuadratureSeries, metadata: SeriesMetadata) -> QuadratureSeries:
    """Convert raw values to shot-noise units: divide by ``sqrt(shot_noise_variance_raw)``."""
    raw = metadata.shot_noise_variance_raw
    if not raw > 0:
        raise ValueError(f"calibration variance must be > 0, got {raw}")
    scale = math.sqrt(raw)
    return QuadratureSeries(series.index, series.q1 / scale, series.q2 / scale)


def condition_series(
    series: QuadratureSeries,
    q_threshold: float,
    n_qcp: int = 1,
    seed: int | None = 0,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
) -> tuple[np.ndarray, DistillationEstimate]:
    """Apply the sliding trigger rule to a calibrated series.

    Sample ``k`` is accepted when ``|q1| < Q`` holds at ``k`` and at the
    ``n_qcp - 1`` preceding samples. ``q_threshold=math.inf`` accepts
    everything. Returns the accepted positions (into the arrays, not the
    stored ``index`` column) and the estimate over the accepted ``q2``.
    """
    if not q_threshold > 0:
        raise ValueError(f"q_threshold must be > 0, got {q_threshold}")
    accepted = window_accept(series.q1, q_threshold, n_qcp)
    est = estimate_from_samples(
        series.q2[accepted], len(series) - (n_qcp - 1), seed=seed, n_bootstrap=n_bootstrap
    )
    return accepted, est
