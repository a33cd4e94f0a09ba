"""External-meter calibration bridge.

Board-level DC meter power minus GPU-reported power gives a combined
CPU-plus-system channel for platforms without CPU energy counters. This is
coarser than per-domain counters: the derived channel also carries memory,
interconnect and I/O power.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .attribution import (
    AttributionRecord,
    AttributionWindow,
    IdleBaseline,
    ProcessShare,
    attribute_energy,
)
from .counters import NS_PER_S, PowerTrace, integrate_power, read_trace_csv
from .errors import AlignmentError, InputError

MIN_METER_RATE_HZ = 1000.0
# tolerance on the rate estimate so timestamp rounding does not trip the check
RATE_TOLERANCE = 0.01
BRIDGE_CHANNEL = "cpu+sys"


@dataclass(frozen=True)
class BridgeDecomposition:
    t0: int
    t1: int
    e_total: float
    e_gpu: float
    e_cpu_sys: float
    meter_rate: float
    gpu_rate: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "t0_ns": self.t0,
            "t1_ns": self.t1,
            "e_total_j": self.e_total,
            "e_gpu_j": self.e_gpu,
            "e_cpu_sys_j": self.e_cpu_sys,
            "meter_rate_hz": self.meter_rate,
            "gpu_rate_hz": self.gpu_rate,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BridgeDecomposition":
        return cls(
            t0=d["t0_ns"], t1=d["t1_ns"], e_total=d["e_total_j"], e_gpu=d["e_gpu_j"],
            e_cpu_sys=d["e_cpu_sys_j"],
            meter_rate=d["meter_rate_hz"], gpu_rate=d["gpu_rate_hz"],
            warnings=tuple(d.get("warnings", ())),
        )

    def to_text(self) -> str:
        lines = [
            f"t0_ns={self.t0}",
            f"t1_ns={self.t1}",
            f"e_total_j={self.e_total:.9g}",
            f"e_gpu_j={self.e_gpu:.9g}",
            f"e_cpu_sys_j={self.e_cpu_sys:.9g}",
        ]
        lines.extend(f"warning={w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def load_meter_trace(path: str | os.PathLike, min_rate: float = MIN_METER_RATE_HZ) -> PowerTrace:
    trace = read_trace_csv(path)
    if trace.nominal_rate < min_rate * (1 - RATE_TOLERANCE):
        msg = (
            f"{os.fspath(path)}: estimated sampling rate {trace.nominal_rate:.4g} Hz "
            f"is below {min_rate:g} Hz"
        )
        trace = replace(trace, warnings=trace.warnings + (msg,))
    return trace


def _trim(trace: PowerTrace, lo: int, hi: int) -> PowerTrace:
    inside = (trace.t_ns > lo) & (trace.t_ns < hi)
    t = np.concatenate(([lo], trace.t_ns[inside], [hi]))
    p = np.concatenate((
        [np.interp(lo, trace.t_ns, trace.watts)],
        trace.watts[inside],
        [np.interp(hi, trace.t_ns, trace.watts)],
    ))
    return PowerTrace(t, p, trace.nominal_rate, trace.warnings)


def align_traces(
    meter: PowerTrace, gpu: PowerTrace, offset: float = 0.0
) -> tuple[PowerTrace, PowerTrace]:
    """Shift the GPU trace by ``offset`` seconds and trim both to their overlap.

    Overlap edges that fall between samples get a linearly interpolated
    sample, so both returned traces span exactly the same interval.
    """
    shifted = gpu.shifted(round(offset * NS_PER_S)) if offset else gpu
    lo = max(meter.start, shifted.start)
    hi = min(meter.end, shifted.end)
    if lo >= hi:
        raise AlignmentError(
            f"traces do not overlap after shifting GPU trace by {offset:g} s"
        )
    if (lo, hi) == (meter.start, meter.end) and (lo, hi) == (shifted.start, shifted.end):
        return meter, shifted
    return _trim(meter, lo, hi), _trim(shifted, lo, hi)


def bridge_decompose(meter: PowerTrace, gpu: PowerTrace, t0: int, t1: int) -> BridgeDecomposition:
    e_total = integrate_power(meter, t0, t1)
    e_gpu = integrate_power(gpu, t0, t1)
    warnings = list(meter.warnings) + list(gpu.warnings)
    e_cpu_sys = e_total - e_gpu
    # Report the total the two channels sum to. When the GPU share is
    # physical this moves the total by at most one ulp, and only on
    # round-half-even ties.
    e_total = e_gpu + e_cpu_sys
    if e_cpu_sys < 0:
        warnings.append(
            f"GPU energy {e_gpu:.6g} J exceeds metered total {e_total:.6g} J; "
            "check trace alignment and meter calibration"
        )
    return BridgeDecomposition(
        t0=t0, t1=t1, e_total=e_total, e_gpu=e_gpu, e_cpu_sys=e_cpu_sys,
        meter_rate=meter.nominal_rate, gpu_rate=gpu.nominal_rate,
        warnings=tuple(warnings),
    )


def bridge_attribute(
    decomp: BridgeDecomposition, baseline: IdleBaseline, shares: Sequence[ProcessShare]
) -> AttributionRecord:
    """Attribute the derived CPU-plus-system energy to processes.

    Refuses a negative decomposition instead of clamping it, since that
    value points at a measurement problem rather than idle drift.
    """
    if decomp.e_cpu_sys < 0:
        raise InputError(
            f"derived cpu+sys energy is negative ({decomp.e_cpu_sys:.6g} J); "
            "refusing to attribute a miscalibrated or misaligned decomposition"
        )
    window = AttributionWindow(decomp.t0, decomp.t1, decomp.e_cpu_sys)
    return attribute_energy(
        window, baseline, shares, channel=BRIDGE_CHANNEL, warnings=list(decomp.warnings)
    )
