"""Decoding of firmware power-budget telemetry dumps.

Each record carries per-rail power (mW), four cumulative energy
accumulators (mJ) and per-zone temperatures. The on-device byte layout is
undocumented, so the layout is always supplied as a descriptor; the
default descriptor describes this package's own fixture format::

    u64 t_ns | 14 x u32 rail mW | 4 x u64 accumulator mJ | 8 x i16 temp (0.01 C)

Descriptor files are ``key = value`` lines. Field specs are
``offset:type`` or ``offset:type:count``; types are ``u8``..``u64`` and
``i8``..``i64``.
"""

from __future__ import annotations

import enum
import os
import statistics
import struct
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .counters import Domain, EnergyCounter, RawSample, accumulate
from .errors import DomainError, InputError, InsufficientDataError, ParseError, TruncationError


class SpbmDomain(enum.Enum):
    P_CORE_CLUSTER = "PCoreCluster"
    E_CORE_CLUSTER = "ECoreCluster"
    GPU = "Gpu"
    SOC_TOTAL = "SocTotal"


_COUNTER_DOMAIN = {
    SpbmDomain.P_CORE_CLUSTER: (Domain.CPU_CLUSTER, "P-core"),
    SpbmDomain.E_CORE_CLUSTER: (Domain.CPU_CLUSTER, "E-core"),
    SpbmDomain.GPU: (Domain.GPU, None),
    SpbmDomain.SOC_TOTAL: (Domain.SOC_TOTAL, None),
}

_TYPES = {
    "u8": "B", "u16": "H", "u32": "I", "u64": "Q",
    "i8": "b", "i16": "h", "i32": "i", "i64": "q",
}


@dataclass(frozen=True)
class FieldSpec:
    offset: int
    type: str
    count: int = 1

    @property
    def size(self) -> int:
        return struct.calcsize("<" + _TYPES[self.type]) * self.count

    @classmethod
    def parse(cls, text: str) -> "FieldSpec":
        parts = [p.strip() for p in text.split(":")]
        if len(parts) not in (2, 3) or parts[1] not in _TYPES:
            raise ParseError(f"bad field spec {text!r}")
        try:
            offset = int(parts[0], 0)
            count = int(parts[2], 0) if len(parts) == 3 else 1
        except ValueError as exc:
            raise ParseError(f"bad field spec {text!r}") from exc
        return cls(offset, parts[1], count)

    def __str__(self) -> str:
        return f"{self.offset}:{self.type}" + (f":{self.count}" if self.count != 1 else "")


@dataclass(frozen=True)
class SpbmLayout:
    record_size: int
    timestamp: FieldSpec
    rails: FieldSpec
    accumulators: dict[SpbmDomain, FieldSpec]
    temps: FieldSpec
    endianness: str = "little"
    acc_wrap_bits: int = 64
    temp_scale: float = 0.01
    rail_names: tuple[str, ...] = ()
    temp_names: tuple[str, ...] = ()
    max_rail_mw: int = 1_000_000
    min_temp_c: float = -40.0
    max_temp_c: float = 150.0

    def __post_init__(self):
        if self.endianness not in ("little", "big"):
            raise ParseError(f"endianness must be little or big, not {self.endianness!r}")
        if not self.rail_names:
            object.__setattr__(self, "rail_names", tuple(f"rail{i}" for i in range(self.rails.count)))
        if not self.temp_names:
            object.__setattr__(self, "temp_names", tuple(f"zone{i}" for i in range(self.temps.count)))
        if len(self.rail_names) != self.rails.count or len(self.temp_names) != self.temps.count:
            raise ParseError("rail/temp name count does not match field count")
        spans = sorted(
            (f.offset, f.offset + f.size, name)
            for name, f in [("timestamp", self.timestamp), ("rails", self.rails), ("temps", self.temps)]
            + [(d.value, f) for d, f in self.accumulators.items()]
        )
        for (start, end, name), nxt in zip(spans, spans[1:] + [(self.record_size, None, None)]):
            if start < 0 or end > self.record_size:
                raise ParseError(f"field {name} exceeds record size {self.record_size}")
            if end > nxt[0]:
                raise ParseError(f"field {name} overlaps {nxt[2]}")

    @property
    def _prefix(self) -> str:
        return "<" if self.endianness == "little" else ">"

    def _fmt(self, spec: FieldSpec) -> struct.Struct:
        return struct.Struct(self._prefix + _TYPES[spec.type] * spec.count)

    def to_text(self) -> str:
        lines = [
            f"record_size = {self.record_size}",
            f"endianness = {self.endianness}",
            f"timestamp = {self.timestamp}",
            f"rails = {self.rails}",
            f"rail_names = {','.join(self.rail_names)}",
        ]
        lines += [f"acc.{d.value} = {f}" for d, f in self.accumulators.items()]
        lines += [
            f"acc_wrap_bits = {self.acc_wrap_bits}",
            f"temps = {self.temps}",
            f"temp_names = {','.join(self.temp_names)}",
            f"temp_scale = {self.temp_scale!r}",
            f"max_rail_mw = {self.max_rail_mw}",
            f"min_temp_c = {self.min_temp_c!r}",
            f"max_temp_c = {self.max_temp_c!r}",
        ]
        return "\n".join(lines) + "\n"


def parse_layout(text: str) -> SpbmLayout:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected key = value, got {raw!r}", lineno)
        values[key.strip()] = value.strip()
    try:
        accs = {}
        for key in [k for k in values if k.startswith("acc.")]:
            try:
                dom = SpbmDomain(key[4:])
            except ValueError as exc:
                raise ParseError(f"unknown accumulator domain {key[4:]!r}") from exc
            accs[dom] = FieldSpec.parse(values.pop(key))

        def names(key: str) -> tuple[str, ...]:
            v = values.pop(key, "")
            return tuple(n.strip() for n in v.split(",") if n.strip())

        layout = SpbmLayout(
            record_size=int(values.pop("record_size"), 0),
            timestamp=FieldSpec.parse(values.pop("timestamp")),
            rails=FieldSpec.parse(values.pop("rails")),
            accumulators=accs,
            temps=FieldSpec.parse(values.pop("temps")),
            endianness=values.pop("endianness", "little"),
            acc_wrap_bits=int(values.pop("acc_wrap_bits", "64")),
            temp_scale=float(values.pop("temp_scale", "0.01")),
            rail_names=names("rail_names"),
            temp_names=names("temp_names"),
            max_rail_mw=int(values.pop("max_rail_mw", "1000000")),
            min_temp_c=float(values.pop("min_temp_c", "-40")),
            max_temp_c=float(values.pop("max_temp_c", "150")),
        )
    except KeyError as exc:
        raise ParseError(f"layout descriptor lacks {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad layout value: {exc}") from exc
    if values:
        raise ParseError(f"unknown layout keys: {', '.join(sorted(values))}")
    return layout


def load_layout(path: str | os.PathLike) -> SpbmLayout:
    with open(path, encoding="utf-8") as fh:
        return parse_layout(fh.read())


def default_layout() -> SpbmLayout:
    text = resources.files("energyaudit").joinpath("data/spbm_layout.txt").read_text("utf-8")
    return parse_layout(text)


@dataclass(frozen=True)
class SpbmRecord:
    t: int
    rail_power: dict[str, int]
    energy_acc: dict[SpbmDomain, int]
    temps: dict[str, float]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def same_reading(self, other: "SpbmRecord") -> bool:
        return self.rail_power == other.rail_power and self.energy_acc == other.energy_acc

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_ns": self.t,
            "rail_power_mw": dict(self.rail_power),
            "energy_acc_mj": {d.value: v for d, v in self.energy_acc.items()},
            "temps_c": dict(self.temps),
            "warnings": list(self.warnings),
        }


def _check(record: SpbmRecord, layout: SpbmLayout) -> tuple[str, ...]:
    issues = []
    for name, mw in record.rail_power.items():
        if not 0 <= mw <= layout.max_rail_mw:
            issues.append(f"rail {name} power {mw} mW outside [0, {layout.max_rail_mw}]")
    for zone, c in record.temps.items():
        if not layout.min_temp_c <= c <= layout.max_temp_c:
            issues.append(f"zone {zone} temperature {c:g} C outside plausible range")
    limit = 1 << layout.acc_wrap_bits
    for dom, v in record.energy_acc.items():
        if not 0 <= v < limit:
            issues.append(f"accumulator {dom.value} value {v} outside declared {layout.acc_wrap_bits}-bit range")
    return tuple(issues)


def decode_spbm_stream(blob: bytes, layout: SpbmLayout) -> list[SpbmRecord]:
    if len(blob) % layout.record_size:
        raise TruncationError(
            f"blob length {len(blob)} is not a multiple of record size {layout.record_size}"
        )
    ts_fmt = layout._fmt(layout.timestamp)
    rail_fmt = layout._fmt(layout.rails)
    temp_fmt = layout._fmt(layout.temps)
    acc_fmts = {d: layout._fmt(f) for d, f in layout.accumulators.items()}
    records = []
    view = memoryview(blob)
    for base in range(0, len(blob), layout.record_size):
        (t,) = ts_fmt.unpack_from(view, base + layout.timestamp.offset)
        rails = rail_fmt.unpack_from(view, base + layout.rails.offset)
        temps = temp_fmt.unpack_from(view, base + layout.temps.offset)
        accs = {d: fmt.unpack_from(view, base + layout.accumulators[d].offset)[0] for d, fmt in acc_fmts.items()}
        rec = SpbmRecord(
            t=t,
            rail_power=dict(zip(layout.rail_names, rails)),
            energy_acc=accs,
            temps={n: v * layout.temp_scale for n, v in zip(layout.temp_names, temps)},
        )
        issues = _check(rec, layout)
        if issues:
            rec = SpbmRecord(rec.t, rec.rail_power, rec.energy_acc, rec.temps, issues)
        records.append(rec)
    return records


def encode_spbm_stream(records: Iterable[SpbmRecord], layout: SpbmLayout) -> bytes:
    out = bytearray()
    for rec in records:
        buf = bytearray(layout.record_size)
        layout._fmt(layout.timestamp).pack_into(buf, layout.timestamp.offset, rec.t)
        layout._fmt(layout.rails).pack_into(
            buf, layout.rails.offset, *(rec.rail_power[n] for n in layout.rail_names)
        )
        for dom, spec in layout.accumulators.items():
            layout._fmt(spec).pack_into(buf, spec.offset, rec.energy_acc[dom])
        layout._fmt(layout.temps).pack_into(
            buf, layout.temps.offset,
            *(round(rec.temps[n] / layout.temp_scale) for n in layout.temp_names),
        )
        out += buf
    return bytes(out)


@dataclass(frozen=True)
class Cadence:
    interval_ms: float
    iqr_ms: float
    stale_reads: int
    records: int
    fresh_interval_ms: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "interval_ms": self.interval_ms,
            "iqr_ms": self.iqr_ms,
            "stale_reads": self.stale_reads,
            "records": self.records,
            "fresh_interval_ms": self.fresh_interval_ms,
        }


def spbm_cadence(records: Sequence[SpbmRecord]) -> Cadence:
    """Estimate the update interval of a record stream.

    ``interval_ms`` is the median spacing of all records; consecutive
    records with identical powers and accumulators are counted as stale
    reads, and ``fresh_interval_ms`` is the median spacing of the rest.
    """
    if len(records) < 3:
        raise InsufficientDataError("cadence estimation needs at least 3 records")
    t = np.array([r.t for r in records], dtype=np.int64)
    gaps_ms = np.diff(t) / 1e6
    q1, q3 = np.percentile(gaps_ms, [25, 75])
    stale = sum(1 for a, b in zip(records, records[1:]) if b.same_reading(a))
    fresh_t = [records[0].t] + [b.t for a, b in zip(records, records[1:]) if not b.same_reading(a)]
    fresh = statistics.median(np.diff(fresh_t) / 1e6) if len(fresh_t) >= 2 else None
    return Cadence(
        interval_ms=float(np.median(gaps_ms)),
        iqr_ms=float(q3 - q1),
        stale_reads=stale,
        records=len(records),
        fresh_interval_ms=float(fresh) if fresh is not None else None,
    )


def spbm_as_counters(
    records: Sequence[SpbmRecord], domain: SpbmDomain | str, layout: SpbmLayout
) -> tuple[list[RawSample], EnergyCounter]:
    """Counter samples (raw millijoules) for one accumulator."""
    try:
        domain = SpbmDomain(domain) if isinstance(domain, str) else domain
    except ValueError as exc:
        raise DomainError(f"unknown accumulator domain {domain!r}") from exc
    if domain not in layout.accumulators:
        raise DomainError(f"layout has no {domain.value} accumulator")
    if not records:
        raise InsufficientDataError("no records to convert")
    kind, name = _COUNTER_DOMAIN[domain]
    counter = EnergyCounter(kind, width_bits=layout.acc_wrap_bits, unit_uj=1000, name=name)
    samples = [RawSample(r.t, r.energy_acc[domain]) for r in records]
    for prev, curr in zip(samples, samples[1:]):
        if curr.t <= prev.t:
            raise InputError(f"record timestamps not increasing at t={curr.t}")
    return samples, counter


def accumulator_stats(records: Sequence[SpbmRecord], layout: SpbmLayout) -> dict[str, Any]:
    """Per-accumulator totals in millijoules plus observational cross-checks."""
    totals = {}
    for dom in layout.accumulators:
        samples, counter = spbm_as_counters(records, dom, layout)
        totals[dom.value] = accumulate(samples, counter) // 1000
    out: dict[str, Any] = {"totals_mj": totals}
    parts = [SpbmDomain.P_CORE_CLUSTER, SpbmDomain.E_CORE_CLUSTER, SpbmDomain.GPU]
    if all(d.value in totals for d in parts + [SpbmDomain.SOC_TOTAL]):
        # what the SoC total covers is unknown; this is reported, not checked
        out["soc_total_minus_parts_mj"] = totals["SocTotal"] - sum(totals[d.value] for d in parts)
    return out
