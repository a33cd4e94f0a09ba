"""Per-process energy attribution and goal-normalized energy metrics.

The pipeline has three layers:

1. package energy over a window, from a cumulative counter;
2. task energy, the package energy minus idle power times window length;
3. per-process energy, task energy scaled by each process's share of the
   busy CPU ticks in the window.

Whatever is not attributed to a requested pid is reported as residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .counters import NS_PER_S, UJ_PER_J, EnergyCounter, RawSample, accumulate
from .errors import (
    AccountingError,
    InputError,
    ParseError,
    ProcessGoneError,
    UndefinedFractionError,
    UndefinedMetricError,
)
from .sysmodel import SystemTree

FRACTION_EPS = 1e-9


@dataclass(frozen=True)
class AttributionWindow:
    t0: int
    t1: int
    e_pkg: float

    def __post_init__(self):
        if self.t1 <= self.t0:
            raise InputError(f"window [{self.t0}, {self.t1}] has non-positive length")
        if self.e_pkg < 0:
            raise InputError("package energy must be non-negative")

    @property
    def delta_t(self) -> float:
        return (self.t1 - self.t0) / NS_PER_S


@dataclass(frozen=True)
class IdleBaseline:
    idle_power: float  # watts
    provenance: str = ""

    def __post_init__(self):
        if self.idle_power < 0:
            raise InputError("idle power must be non-negative")


@dataclass(frozen=True)
class ProcessShare:
    pid: int
    cpu_ticks: int
    fraction: float


@dataclass(frozen=True)
class GoalMetrics:
    total_energy: float
    successful_goals: int

    @property
    def epg(self) -> float:
        return epg(self.total_energy, self.successful_goals)


@dataclass(frozen=True)
class TaskEnergy:
    joules: float
    warnings: tuple[str, ...] = ()


def task_energy(window: AttributionWindow, baseline: IdleBaseline) -> TaskEnergy:
    raw = window.e_pkg - baseline.idle_power * window.delta_t
    if raw < 0:
        return TaskEnergy(0.0, (
            f"baseline exceeds measured energy by {-raw:.6g} J; task energy clamped to 0",
        ))
    return TaskEnergy(raw)


def cpu_fraction(pid_ticks: int, total_ticks: int) -> float:
    if pid_ticks < 0 or total_ticks < 0:
        raise AccountingError("tick counts must be non-negative")
    if total_ticks == 0:
        raise UndefinedFractionError("no CPU ticks elapsed in the window")
    if pid_ticks > total_ticks:
        raise AccountingError(f"process ticks {pid_ticks} exceed total ticks {total_ticks}")
    return pid_ticks / total_ticks


@dataclass(frozen=True)
class Attribution:
    per_pid: dict[int, float]
    residual: float


def attribute(e_task: float, shares: Sequence[ProcessShare]) -> Attribution:
    """Split ``e_task`` across processes by CPU fraction."""
    total = 0.0
    if len({s.pid for s in shares}) != len(shares):
        raise AccountingError("duplicate pid in shares")
    for s in shares:
        if not 0.0 <= s.fraction <= 1.0:
            raise AccountingError(f"pid {s.pid} fraction {s.fraction} outside [0, 1]")
        total += s.fraction
    if total > 1.0 + FRACTION_EPS:
        raise AccountingError(f"CPU fractions sum to {total!r} > 1")
    per_pid = {s.pid: s.fraction * e_task for s in shares}
    residual = e_task - math.fsum(per_pid.values())
    return Attribution(per_pid, residual)


# --- scheduler accounting -------------------------------------------------------


def parse_pid_stat(line: str) -> int:
    """utime + stime from a ``/proc/<pid>/stat`` line.

    The command name may itself contain spaces and parentheses, so the fields
    are taken from after the last ``)``.
    """
    close = line.rfind(")")
    if close < 0 or "(" not in line[:close]:
        raise ParseError(f"no '(comm)' field in stat line {line!r}")
    rest = line[close + 1:].split()
    # rest[0] is field 3 (state); utime and stime are fields 14 and 15
    if len(rest) < 13:
        raise ParseError(f"stat line has too few fields: {line!r}")
    try:
        return int(rest[11]) + int(rest[12])
    except ValueError as exc:
        raise ParseError(f"non-integer utime/stime in {line!r}") from exc


def read_process_ticks(tree: SystemTree, pid: int) -> int:
    text = tree.read(f"/proc/{pid}/stat")
    if text is None:
        raise ProcessGoneError(f"/proc/{pid}/stat not found")
    return parse_pid_stat(text.strip())


# user nice system idle iowait irq softirq steal; guest time is already in user
_BUSY_FIELDS = (0, 1, 2, 5, 6, 7)


def parse_cpu_busy_ticks(stat_text: str) -> int:
    """Busy ticks (everything except idle and iowait) from the aggregate ``cpu`` line."""
    for line in stat_text.splitlines():
        parts = line.split()
        if parts and parts[0] == "cpu":
            try:
                values = [int(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"non-integer field in {line!r}") from exc
            if len(values) < 4:
                raise ParseError(f"aggregate cpu line too short: {line!r}")
            return sum(values[i] for i in _BUSY_FIELDS if i < len(values))
    raise ParseError("no aggregate 'cpu' line in /proc/stat")


def read_total_ticks(tree: SystemTree) -> int:
    text = tree.read("/proc/stat")
    if text is None:
        raise ProcessGoneError("/proc/stat not found")
    return parse_cpu_busy_ticks(text)


# --- goal metrics ---------------------------------------------------------------


def epg(total_energy: float, successful_goals: int) -> float:
    """Energy per successful goal."""
    if successful_goals < 0:
        raise InputError("successful goal count must be non-negative")
    if successful_goals == 0:
        raise UndefinedMetricError("energy per goal is undefined with zero successful goals")
    return total_energy / successful_goals


def ooi(epg_agentic: float, epg_linear: float) -> float:
    """Orchestration overhead index: agentic over linear energy per goal."""
    if epg_linear <= 0:
        raise UndefinedMetricError("OOI needs a positive linear-baseline energy per goal")
    return epg_agentic / epg_linear


# --- composed pipeline ----------------------------------------------------------


@dataclass
class AttributionRecord:
    t0: int
    t1: int
    e_pkg: float
    idle_power: float
    e_task: float
    shares: list[ProcessShare]
    per_pid: dict[int, float]
    residual: float
    channel: str = "cpu"
    ticks_per_second: float | None = None
    warnings: list[str] = field(default_factory=list)

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for s in self.shares:
            row = {"pid": s.pid, "ticks": s.cpu_ticks, "fraction": s.fraction, "e_pid_j": self.per_pid[s.pid]}
            if self.ticks_per_second:
                row["cpu_seconds"] = s.cpu_ticks / self.ticks_per_second
            out.append(row)
        return out

    def to_dict(self) -> dict[str, Any]:
        d = {
            "window_start_ns": self.t0,
            "window_end_ns": self.t1,
            "channel": self.channel,
            "e_pkg_j": self.e_pkg,
            "idle_power_w": self.idle_power,
            "e_task_j": self.e_task,
            "processes": self.rows(),
            "residual_j": self.residual,
            "warnings": list(self.warnings),
        }
        if self.ticks_per_second:
            d["ticks_per_second"] = self.ticks_per_second
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AttributionRecord":
        shares = [ProcessShare(r["pid"], r["ticks"], r["fraction"]) for r in d["processes"]]
        return cls(
            t0=d["window_start_ns"], t1=d["window_end_ns"], e_pkg=d["e_pkg_j"],
            idle_power=d["idle_power_w"], e_task=d["e_task_j"], shares=shares,
            per_pid={r["pid"]: r["e_pid_j"] for r in d["processes"]},
            residual=d["residual_j"], channel=d.get("channel", "cpu"),
            ticks_per_second=d.get("ticks_per_second"), warnings=list(d.get("warnings", [])),
        )

    def to_text(self) -> str:
        lines = [
            f"window_start_ns={self.t0}",
            f"window_end_ns={self.t1}",
            f"channel={self.channel}",
            f"e_pkg_j={self.e_pkg:.9g}",
            f"idle_power_w={self.idle_power:.9g}",
            f"e_task_j={self.e_task:.9g}",
        ]
        for s in self.shares:
            lines.append(
                f"pid={s.pid} ticks={s.cpu_ticks} fraction={s.fraction:.9g} "
                f"e_pid_j={self.per_pid[s.pid]:.9g}"
            )
        lines.append(f"residual_j={self.residual:.9g}")
        lines.extend(f"warning={w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def measure_shares(
    start: SystemTree, end: SystemTree, pids: Iterable[int]
) -> tuple[list[ProcessShare], list[str]]:
    """CPU shares of ``pids`` between two scheduler snapshots.

    A pid missing from the start snapshot is assumed to have started inside
    the window; one missing at the end is skipped with a warning.
    """
    warnings: list[str] = []
    total = read_total_ticks(end) - read_total_ticks(start)
    if total < 0:
        raise AccountingError("aggregate CPU ticks decreased across the window")
    shares = []
    for pid in pids:
        try:
            after = read_process_ticks(end, pid)
        except ProcessGoneError:
            warnings.append(f"pid {pid} exited before the window closed; not attributed")
            continue
        try:
            before = read_process_ticks(start, pid)
        except ProcessGoneError:
            warnings.append(f"pid {pid} started inside the window")
            before = 0
        ticks = after - before
        if total == 0:
            if ticks:
                raise AccountingError(f"pid {pid} used {ticks} ticks while the system used none")
            warnings.append("no busy CPU ticks in window; fractions reported as 0")
            frac = 0.0
        else:
            frac = cpu_fraction(ticks, total)
        shares.append(ProcessShare(pid, ticks, frac))
    return shares, warnings


def attribute_window(
    samples: Sequence[RawSample],
    counter: EnergyCounter,
    baseline: IdleBaseline,
    shares: Sequence[ProcessShare],
    *,
    warnings: Iterable[str] = (),
    ticks_per_second: float | None = None,
) -> AttributionRecord:
    """Run all three layers over one counter series and a set of shares."""
    if len(samples) < 2:
        raise InputError("attribution needs at least two counter samples")
    e_pkg = accumulate(samples, counter) / UJ_PER_J
    window = AttributionWindow(samples[0].t, samples[-1].t, e_pkg)
    return attribute_energy(window, baseline, shares, warnings=warnings, ticks_per_second=ticks_per_second)


def attribute_energy(
    window: AttributionWindow,
    baseline: IdleBaseline,
    shares: Sequence[ProcessShare],
    *,
    channel: str = "cpu",
    warnings: Iterable[str] = (),
    ticks_per_second: float | None = None,
) -> AttributionRecord:
    """Layers 2 and 3 for a window whose energy is already known."""
    task = task_energy(window, baseline)
    result = attribute(task.joules, shares)
    return AttributionRecord(
        t0=window.t0, t1=window.t1, e_pkg=window.e_pkg, idle_power=baseline.idle_power,
        e_task=task.joules, shares=list(shares), per_pid=result.per_pid,
        residual=result.residual, channel=channel, ticks_per_second=ticks_per_second,
        warnings=list(warnings) + list(task.warnings),
    )
