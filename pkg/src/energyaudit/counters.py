"""Cumulative energy counters, sampling, and power-trace integration."""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CoverageError, InputError, InsufficientDataError, OrderingError, ParseError

TRACE_HEADER = ("t_ns", "power_mw")
NS_PER_S = 1_000_000_000
UJ_PER_J = 1_000_000


class Domain(enum.Enum):
    CPU_PACKAGE = "CpuPackage"
    CPU_CLUSTER = "CpuCluster"
    GPU = "Gpu"
    DRAM = "Dram"
    IO = "Io"
    SOC_TOTAL = "SocTotal"


@dataclass(frozen=True)
class EnergyCounter:
    """A wrapping cumulative energy counter.

    ``unit_uj`` is the size of one raw count in microjoules (1 for RAPL
    ``energy_uj``, 1000 for millijoule accumulators). ``max_range`` defaults
    to ``2**width_bits``; platforms publishing a smaller range (RAPL's
    ``max_energy_range_uj``) set it explicitly.
    """

    domain: Domain
    width_bits: int = 32
    max_range: int | None = None
    unit_uj: int | float = 1
    name: str | None = None

    def __post_init__(self):
        if not 16 <= self.width_bits <= 64:
            raise InputError(f"counter width {self.width_bits} outside [16, 64]")
        if self.max_range is None:
            object.__setattr__(self, "max_range", 1 << self.width_bits)
        if self.max_range < 2:
            raise InputError("counter max_range must be >= 2")
        if self.unit_uj <= 0:
            raise InputError("counter unit must be positive")

    def wrap_time_s(self, max_power_w: float) -> float:
        """Seconds for the counter to wrap once at ``max_power_w``."""
        return self.max_range * self.unit_uj / (max_power_w * UJ_PER_J)


@dataclass(frozen=True)
class RawSample:
    t: int  # monotonic nanoseconds
    raw: int


def counter_delta(prev: RawSample, curr: RawSample, counter: EnergyCounter) -> int | float:
    """Energy in microjoules between two readings, assuming at most one wrap."""
    if curr.t <= prev.t:
        raise OrderingError(f"sample at t={curr.t} does not follow t={prev.t}")
    for s in (prev, curr):
        if not 0 <= s.raw < counter.max_range:
            raise InputError(f"raw reading {s.raw} outside [0, {counter.max_range})")
    if curr.raw >= prev.raw:
        diff = curr.raw - prev.raw
    else:
        diff = counter.max_range - prev.raw + curr.raw
    return diff * counter.unit_uj


def accumulate(series: Sequence[RawSample], counter: EnergyCounter) -> int | float:
    """Total energy in microjoules across a sample series."""
    if not series:
        raise InsufficientDataError("accumulate needs at least one sample")
    total = 0
    for prev, curr in zip(series, series[1:]):
        total += counter_delta(prev, curr, counter)
    return total


@dataclass(frozen=True, eq=False)
class PowerTrace:
    """Power samples (nanosecond timestamps, watts)."""

    t_ns: np.ndarray
    watts: np.ndarray
    nominal_rate: float = float("nan")
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.t_ns, dtype=np.int64)
        p = np.asarray(self.watts, dtype=float)
        if t.ndim != 1 or t.shape != p.shape:
            raise InputError("trace timestamps and powers must be 1-D and equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise OrderingError("trace timestamps must be strictly increasing")
        object.__setattr__(self, "t_ns", t)
        object.__setattr__(self, "watts", p)
        if math.isnan(self.nominal_rate):
            object.__setattr__(self, "nominal_rate", estimate_rate(t))

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[int, float]], **kw) -> "PowerTrace":
        pairs = list(samples)
        t = [s[0] for s in pairs]
        p = [s[1] for s in pairs]
        return cls(np.array(t, dtype=np.int64), np.array(p, dtype=float), **kw)

    def __len__(self) -> int:
        return int(self.t_ns.size)

    @property
    def start(self) -> int:
        return int(self.t_ns[0])

    @property
    def end(self) -> int:
        return int(self.t_ns[-1])

    def scaled(self, factor: float) -> "PowerTrace":
        return PowerTrace(self.t_ns, self.watts * factor, self.nominal_rate)

    def shifted(self, offset_ns: int) -> "PowerTrace":
        return PowerTrace(self.t_ns + int(offset_ns), self.watts, self.nominal_rate)


def estimate_rate(t_ns: np.ndarray) -> float:
    """Sampling rate in Hz from the median inter-sample interval."""
    if len(t_ns) < 2:
        return 0.0
    return NS_PER_S / float(np.median(np.diff(t_ns)))


def _interp(trace: PowerTrace, t: int) -> float:
    return float(np.interp(t, trace.t_ns, trace.watts))


def integrate_power(trace: PowerTrace, t0: int, t1: int) -> float:
    """Trapezoidal energy in joules over ``[t0, t1]`` (nanoseconds).

    Window edges falling between samples are linearly interpolated.
    """
    if len(trace) < 2:
        raise InsufficientDataError("integration needs at least 2 samples")
    if not t0 < t1:
        raise CoverageError(f"empty or inverted window [{t0}, {t1}]")
    if t0 < trace.start or t1 > trace.end:
        raise CoverageError(
            f"window [{t0}, {t1}] outside trace coverage [{trace.start}, {trace.end}]"
        )
    lo = int(np.searchsorted(trace.t_ns, t0, side="right"))
    hi = int(np.searchsorted(trace.t_ns, t1, side="left"))
    t = np.concatenate(([t0], trace.t_ns[lo:hi], [t1]))
    p = np.concatenate(([_interp(trace, t0)], trace.watts[lo:hi], [_interp(trace, t1)]))
    # relative seconds keep the time axis well conditioned
    seconds = (t - t0) / NS_PER_S
    return float(np.trapezoid(p, seconds))


# --- trace files ---------------------------------------------------------------


def read_trace_csv(source: str | os.PathLike | io.TextIOBase) -> PowerTrace:
    """Parse a ``t_ns,power_mw`` CSV trace into a :class:`PowerTrace` in watts."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_trace_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
        raise ParseError(f"expected header {','.join(TRACE_HEADER)}, got {header!r}", 1)
    t_list, p_list = [], []
    prev_t = None
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", lineno)
        t_text, p_text = (c.strip() for c in row)
        if not t_text.isdigit():
            raise ParseError(f"t_ns must be an unsigned integer, got {t_text!r}", lineno)
        try:
            mw = Decimal(p_text)
        except InvalidOperation as exc:
            raise ParseError(f"power_mw is not a decimal: {p_text!r}", lineno) from exc
        if not mw.is_finite() or mw < 0:
            raise ParseError(f"power_mw must be finite and non-negative, got {p_text!r}", lineno)
        t = int(t_text)
        if prev_t is not None and t <= prev_t:
            raise OrderingError(f"line {lineno}: t_ns {t} does not increase past {prev_t}")
        prev_t = t
        t_list.append(t)
        p_list.append(float(mw) / 1000.0)
    return PowerTrace(np.array(t_list, dtype=np.int64), np.array(p_list, dtype=float))


def write_trace_csv(trace: PowerTrace, dest: str | os.PathLike | io.TextIOBase) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(trace, fh)
            return
    dest.write(",".join(TRACE_HEADER) + "\n")
    for t, w in zip(trace.t_ns, trace.watts):
        mw = np.format_float_positional(float(w) * 1000.0, trim="-")
        dest.write(f"{int(t)},{mw}\n")


def read_counter_csv(path: str | os.PathLike) -> list[RawSample]:
    """Parse a ``t_ns,raw`` CSV of counter readings."""
    samples = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_ns", "raw"]:
            raise ParseError(f"expected header t_ns,raw, got {header!r}", 1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                t, raw = int(row[0]), int(row[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad counter row {row!r}", lineno) from exc
            if samples and t <= samples[-1].t:
                raise OrderingError(f"line {lineno}: t_ns {t} does not increase")
            samples.append(RawSample(t, raw))
    return samples


# --- sampling ------------------------------------------------------------------


@dataclass
class SampleSeries:
    samples: list[RawSample]
    latency_ns: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def latency_stats(self) -> dict[str, float] | None:
        if not self.latency_ns:
            return None
        return {
            "min_ms": min(self.latency_ns) / 1e6,
            "median_ms": statistics.median(self.latency_ns) / 1e6,
            "max_ms": max(self.latency_ns) / 1e6,
        }


def wrap_risk_warning(counter: EnergyCounter, period_s: float, max_power_w: float) -> str | None:
    wrap_s = counter.wrap_time_s(max_power_w)
    if period_s >= wrap_s:
        return (
            f"sampling period {period_s:g} s is not shorter than the worst-case wrap time "
            f"{wrap_s:.3g} s at {max_power_w:g} W; wraps may be missed"
        )
    return None


def sample_counter(
    reader: Callable[[], int],
    period: float,
    duration: float,
    *,
    counter: EnergyCounter | None = None,
    max_power_w: float | None = None,
    clock: Callable[[], int] = time.monotonic_ns,
    sleep: Callable[[float], None] = time.sleep,
) -> SampleSeries:
    """Poll ``reader`` every ``period`` seconds for ``duration`` seconds.

    Each read is timed. A read failure stops sampling and returns the partial
    series with a failure note. When both ``counter`` and ``max_power_w`` are
    given, a warning is attached if the period could let the counter wrap
    more than once between reads.
    """
    if period <= 0:
        raise InputError("sampling period must be positive")
    series = SampleSeries(samples=[])
    if counter is not None and max_power_w is not None:
        msg = wrap_risk_warning(counter, period, max_power_w)
        if msg:
            series.warnings.append(msg)
    n_reads = int(round(duration / period)) + 1
    start = clock()
    for i in range(n_reads):
        target = start + int(round(i * period * NS_PER_S))
        now = clock()
        if target > now:
            sleep((target - now) / NS_PER_S)
        before = clock()
        try:
            raw = int(reader())
        except Exception as exc:
            series.failures.append(f"read {i} failed: {exc}")
            break
        after = clock()
        series.latency_ns.append(after - before)
        t = before + (after - before) // 2
        if series.samples and t <= series.samples[-1].t:
            t = series.samples[-1].t + 1
        series.samples.append(RawSample(t, raw))
    return series


def sysfs_reader(path: str | os.PathLike) -> Callable[[], int]:
    """Reader for a single integer sysfs attribute such as ``energy_uj``."""
    def read() -> int:
        with open(path, encoding="ascii") as fh:
            return int(fh.read().strip())
    return read


def scripted_reader(values: Iterable[int]) -> Callable[[], int]:
    """Reader that plays back a fixed sequence, then fails."""
    it = iter(values)

    def read() -> int:
        try:
            return next(it)
        except StopIteration:
            raise InputError("scripted reader exhausted") from None
    return read
