"""Grade a platform's energy-attribution capability.

A platform is MEASURED when it exposes a cumulative energy measurement for
the CPU domain; otherwise it is LIMITED. The remaining requirements
(latency, resolution, domain granularity, overflow semantics) are evaluated
and reported alongside the grade without changing it.
"""

from __future__ import annotations

import enum
import re
import statistics
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .probe import AuditReport, Interface

MAX_READ_LATENCY_MS = 1.0
MAX_RESOLUTION_MJ = 1.0
LATENCY_READS = 100

# hwmon drivers for board-level current/power monitor chips
RAIL_MONITOR_DRIVERS = re.compile(r"^ina\d+|^ina2xx")


class CapDomain(enum.Enum):
    CPU = "CPU"
    GPU = "GPU"
    DRAM = "DRAM"
    IO = "I/O"
    SYSTEM = "System"


class Grade(enum.Enum):
    MEASURED = "MEASURED"
    LIMITED = "LIMITED"


class CheckStatus(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not-applicable"
    NOT_MEASURABLE = "not-measurable"


@dataclass(frozen=True)
class DomainCapability:
    cumulative_energy: bool = False
    instantaneous_power: bool = False
    sources: tuple[str, ...] = ()

    def mark(self) -> str:
        if self.cumulative_energy:
            return "✓"
        if self.instantaneous_power:
            return "✓*"
        return "×"


@dataclass(frozen=True)
class CounterCharacterization:
    resolution_mj: float | None = None
    read_latency_ms: float | None = None
    monotonic_with_wrap: bool | None = None


@dataclass(frozen=True)
class CapabilityProfile:
    domains: dict[CapDomain, DomainCapability]
    counter: CounterCharacterization | None = None

    def __post_init__(self):
        full = {d: self.domains.get(d, DomainCapability()) for d in CapDomain}
        object.__setattr__(self, "domains", full)
        if self.counter is not None and not self.any_cumulative:
            raise ValueError("counter characterization requires a cumulative energy counter")

    @property
    def any_cumulative(self) -> bool:
        return any(c.cumulative_energy for c in self.domains.values())

    def __getitem__(self, domain: CapDomain) -> DomainCapability:
        return self.domains[domain]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "domains": {
                d.value: {
                    "cumulative_energy": c.cumulative_energy,
                    "instantaneous_power": c.instantaneous_power,
                    "sources": list(c.sources),
                }
                for d, c in self.domains.items()
            }
        }
        if self.counter is not None:
            out["counter"] = {
                "resolution_mj": self.counter.resolution_mj,
                "read_latency_ms": self.counter.read_latency_ms,
                "monotonic_with_wrap": self.counter.monotonic_with_wrap,
            }
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CapabilityProfile":
        domains = {
            CapDomain(k): DomainCapability(v["cumulative_energy"], v["instantaneous_power"], tuple(v["sources"]))
            for k, v in d["domains"].items()
        }
        c = d.get("counter")
        counter = CounterCharacterization(**c) if c is not None else None
        return cls(domains, counter)


@dataclass(frozen=True)
class RequirementCheck:
    id: str
    status: CheckStatus
    evidence: str


@dataclass(frozen=True)
class RequirementReport:
    checks: list[RequirementCheck]
    grade: Grade
    profile: CapabilityProfile | None = None

    def __getitem__(self, req_id: str) -> RequirementCheck:
        for c in self.checks:
            if c.id == req_id:
                return c
        raise KeyError(req_id)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "grade": self.grade.value,
            "checks": [{"id": c.id, "status": c.status.value, "evidence": c.evidence} for c in self.checks],
        }
        if self.profile is not None:
            out["profile"] = self.profile.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RequirementReport":
        checks = [RequirementCheck(c["id"], CheckStatus(c["status"]), c["evidence"]) for c in d["checks"]]
        profile = CapabilityProfile.from_dict(d["profile"]) if "profile" in d else None
        return cls(checks, Grade(d["grade"]), profile)


# --- deriving capabilities ------------------------------------------------------

_LABEL_RULES: tuple[tuple[CapDomain, re.Pattern], ...] = (
    (CapDomain.CPU, re.compile(r"^(cpu|cores?|pkg|package|socket|cluster|ecore|esocket|[pe]core)")),
    (CapDomain.GPU, re.compile(r"^(gpu|uncore|gfx)")),
    (CapDomain.DRAM, re.compile(r"^(dram|ddr|vddq|mem)")),
    (CapDomain.IO, re.compile(r"^(io|pcie|nvme|usb)$")),
    (CapDomain.SYSTEM, re.compile(r"^(psys|sys|vin|board|platform|total)$")),
)
_DRIVER_DOMAIN = {
    "amd_energy": CapDomain.CPU,
    "zenpower": CapDomain.CPU,
    "amdgpu": CapDomain.GPU,
    "nouveau": CapDomain.GPU,
}


def domains_for_label(label: str) -> set[CapDomain]:
    """Map a rail or zone label such as ``VDD_CPU_CV`` or ``package-0`` to domains."""
    tokens = [t for t in re.split(r"[^a-z0-9]+", label.lower()) if t]
    found = {dom for dom, rule in _LABEL_RULES for tok in tokens if rule.match(tok)}
    if not found and "soc" in tokens:
        found.add(CapDomain.SYSTEM)
    return found


def _merge(profile: dict[CapDomain, DomainCapability], domain: CapDomain, *, cumulative: bool, source: str):
    cur = profile.get(domain, DomainCapability())
    profile[domain] = DomainCapability(
        cumulative_energy=cur.cumulative_energy or cumulative,
        # any energy source also yields power
        instantaneous_power=True,
        sources=tuple(sorted(set(cur.sources) | {source})),
    )


def derive_capabilities(
    audit: AuditReport, counter_chars: CounterCharacterization | None = None
) -> CapabilityProfile:
    """Map audit findings onto per-domain capability bits.

    Cumulative sources: readable powercap ``energy_uj`` zones (RAPL or SCMI
    powercap), hwmon energy attributes, and hwmon power channels of
    board-level rail monitor chips. Instantaneous-only sources: other hwmon
    power channels, GPU power queries without an energy counter, IPMI.
    """
    prof: dict[CapDomain, DomainCapability] = {}
    cpu_ranges_published = []

    rapl = audit.rapl
    if rapl.present:
        for dom in rapl.detail["domains"]:
            if not dom["readable"]:
                continue
            for cap in domains_for_label(dom["name"]):
                _merge(prof, cap, cumulative=True, source=f"powercap:{dom['zone']}")
                if cap is CapDomain.CPU:
                    cpu_ranges_published.append(dom["max_energy_range_uj"] is not None)

    hwmon = audit[Interface.HWMON_ENERGY]
    for dev in hwmon.detail.get("devices", []):
        rail_monitor = bool(RAIL_MONITOR_DRIVERS.match(dev["name"]))
        for ch in dev["channels"]:
            if not ch["readable"]:
                continue
            caps = domains_for_label(ch["label"]) if ch["label"] else set()
            if not caps:
                if dev["name"] in _DRIVER_DOMAIN:
                    caps = {_DRIVER_DOMAIN[dev["name"]]}
                elif rail_monitor:
                    caps = {CapDomain.SYSTEM}
            cumulative = ch["kind"] == "energy" or rail_monitor
            for cap in caps:
                _merge(prof, cap, cumulative=cumulative, source=f"hwmon:{dev['device']}/{ch['attribute']}")

    gpu = audit[Interface.GPU_POWER]
    if gpu.present:
        _merge(prof, CapDomain.GPU, cumulative=bool(gpu.detail.get("cumulative")), source="gpu-query")

    if audit[Interface.INA_I2C].present:
        _merge(prof, CapDomain.SYSTEM, cumulative=True, source="i2c:ina")
    if audit[Interface.IPMI].present:
        _merge(prof, CapDomain.SYSTEM, cumulative=False, source="ipmi")

    counter = None
    if any(c.cumulative_energy for c in prof.values()):
        monotonic = all(cpu_ranges_published) if cpu_ranges_published else None
        counter = CounterCharacterization(monotonic_with_wrap=monotonic)
        if counter_chars is not None:
            counter = CounterCharacterization(
                resolution_mj=counter_chars.resolution_mj,
                read_latency_ms=counter_chars.read_latency_ms,
                monotonic_with_wrap=(
                    counter_chars.monotonic_with_wrap
                    if counter_chars.monotonic_with_wrap is not None else monotonic
                ),
            )
    return CapabilityProfile(prof, counter)


# --- requirement checks ---------------------------------------------------------

GRANULAR_DOMAINS = (CapDomain.CPU, CapDomain.GPU, CapDomain.DRAM, CapDomain.IO)


def _measured_check(req_id, value, ok, unit, bound_text, profile) -> RequirementCheck:
    if not profile.any_cumulative:
        return RequirementCheck(req_id, CheckStatus.NOT_APPLICABLE, "no cumulative energy counter")
    if value is None:
        return RequirementCheck(req_id, CheckStatus.NOT_MEASURABLE, f"{unit} not measured ({bound_text})")
    status = CheckStatus.PASS if ok(value) else CheckStatus.FAIL
    return RequirementCheck(req_id, status, f"{unit} {value:.6g} ({bound_text})")


def check_requirements(profile: CapabilityProfile) -> RequirementReport:
    cumulative = [d.value for d, c in profile.domains.items() if c.cumulative_energy]
    counter = profile.counter or CounterCharacterization()

    cpu = profile[CapDomain.CPU]
    r1 = RequirementCheck(
        "R1",
        CheckStatus.PASS if cpu.cumulative_energy else CheckStatus.FAIL,
        "cumulative energy for: " + (", ".join(cumulative) if cumulative else "none")
        + ("" if cpu.cumulative_energy else "; CPU domain has no cumulative energy counter"),
    )
    r2 = _measured_check(
        "R2", counter.read_latency_ms, lambda v: v < MAX_READ_LATENCY_MS,
        "median read latency ms", "< 1 ms required", profile,
    )
    r3 = _measured_check(
        "R3", counter.resolution_mj, lambda v: v <= MAX_RESOLUTION_MJ,
        "resolution mJ", "<= 1 mJ required", profile,
    )
    missing = [d.value for d in GRANULAR_DOMAINS if not profile[d].cumulative_energy]
    r4 = RequirementCheck(
        "R4",
        CheckStatus.FAIL if missing else CheckStatus.PASS,
        ("missing separate counters for: " + ", ".join(missing)) if missing
        else "separate CPU, GPU, DRAM and I/O counters",
    )
    if not profile.any_cumulative:
        r5 = RequirementCheck("R5", CheckStatus.NOT_APPLICABLE, "no cumulative energy counter")
    elif counter.monotonic_with_wrap is None:
        r5 = RequirementCheck("R5", CheckStatus.NOT_MEASURABLE, "overflow range not published")
    else:
        r5 = RequirementCheck(
            "R5",
            CheckStatus.PASS if counter.monotonic_with_wrap else CheckStatus.FAIL,
            "published wrap range" if counter.monotonic_with_wrap else "no defined overflow semantics",
        )
    grade = Grade.MEASURED if r1.status is CheckStatus.PASS else Grade.LIMITED
    return RequirementReport([r1, r2, r3, r4, r5], grade, profile)


def measure_read_latency(
    reader: Callable[[], Any], reads: int = LATENCY_READS, clock: Callable[[], int] = time.perf_counter_ns
) -> float:
    """Median wall time of ``reads`` calls to ``reader``, in milliseconds."""
    if reads < LATENCY_READS:
        raise ValueError(f"latency needs at least {LATENCY_READS} reads")
    samples = []
    for _ in range(reads):
        start = clock()
        reader()
        samples.append(clock() - start)
    return statistics.median(samples) / 1e6
