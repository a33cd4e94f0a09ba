"""Energy-measurement interface probes.

Every probe is a pure function of its inputs (a :class:`SystemTree`, an
event list, I2C scan results or a GPU query adapter) and returns a
:class:`ProbeResult`. :func:`run_audit` runs all of them and assembles an
:class:`AuditReport` with exactly one result per audited interface.
"""

from __future__ import annotations

import datetime as _dt
import enum
import errno
import glob
import os
import re
import shutil
import subprocess
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

from .errors import InputError, LoadError, ParseError
from .sysmodel import (
    EntryKind,
    FixtureManifest,
    SystemTree,
    live_tree,
    load_manifest,
    load_system_tree,
)

SCMI_BUS = "/sys/bus/scmi_protocol"
SCMI_DRIVERS = SCMI_BUS + "/drivers"
SCMI_DEVICES = SCMI_BUS + "/devices"
POWERCAP_CLASS = "/sys/class/powercap"
HWMON_CLASS = "/sys/class/hwmon"
POWER_SUPPLY_CLASS = "/sys/class/power_supply"
IPMI_NODES = ("/dev/ipmi0", "/dev/ipmi/0", "/dev/ipmidev/0")

INA_ADDRESS_RANGE = range(0x40, 0x50)
ONLY_INTERFACE_NOTE = "Only energy interface on entire platform."


class Interface(enum.Enum):
    SCMI_POWERCAP = "ScmiPowercap"
    PMU_ENERGY_EVENTS = "PmuEnergyEvents"
    INA_I2C = "InaI2c"
    IPMI = "Ipmi"
    HWMON_ENERGY = "HwmonEnergy"
    POWER_SUPPLY = "PowerSupply"
    GPU_POWER = "GpuPower"
    # internal capability check; not one of the seven audited rows
    RAPL_POWERCAP = "RaplPowercap"


AUDITED_INTERFACES: tuple[Interface, ...] = tuple(
    i for i in Interface if i is not Interface.RAPL_POWERCAP
)


class Status(enum.Enum):
    PRESENT = "Present"
    ABSENT = "Absent"
    PARTIAL = "PartiallyPresent"


@dataclass(frozen=True)
class ProbeResult:
    interface: Interface
    status: Status
    detail: dict[str, Any]

    @property
    def present(self) -> bool:
        return self.status is Status.PRESENT

    def to_dict(self) -> dict[str, Any]:
        return {"interface": self.interface.value, "status": self.status.value, "detail": self.detail}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProbeResult":
        return cls(Interface(data["interface"]), Status(data["status"]), dict(data["detail"]))


@dataclass(frozen=True)
class ScmiFindings:
    bus_registered: bool
    loaded_drivers: list[str]
    powercap_present: bool
    sensor_present: bool
    device_count: int
    unreadable: bool = False


@dataclass(frozen=True)
class AuditReport:
    platform: str
    timestamp: str
    results: dict[Interface, ProbeResult]
    rapl: ProbeResult
    notes: str = ""

    def __post_init__(self):
        if set(self.results) != set(AUDITED_INTERFACES):
            raise ValueError("audit report must hold exactly one result per audited interface")

    def __getitem__(self, interface: Interface) -> ProbeResult:
        if interface is Interface.RAPL_POWERCAP:
            return self.rapl
        return self.results[interface]

    def to_dict(self) -> dict[str, Any]:
        return {
            "platform": self.platform,
            "timestamp": self.timestamp,
            "results": [self.results[i].to_dict() for i in AUDITED_INTERFACES],
            "rapl_powercap": self.rapl.to_dict(),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AuditReport":
        results = {}
        for item in data["results"]:
            r = ProbeResult.from_dict(item)
            results[r.interface] = r
        return cls(
            platform=data["platform"],
            timestamp=data["timestamp"],
            results=results,
            rapl=ProbeResult.from_dict(data["rapl_powercap"]),
            notes=data.get("notes", ""),
        )


# --- SCMI -----------------------------------------------------------------


def probe_scmi(tree: SystemTree) -> ScmiFindings:
    drivers = list(tree.children(SCMI_DRIVERS))
    scmi_powercap_zones = [z for z in tree.children(POWERCAP_CLASS) if z.startswith("arm-scmi")]
    return ScmiFindings(
        bus_registered=tree.exists(SCMI_BUS),
        loaded_drivers=drivers,
        powercap_present="scmi-powercap" in drivers or bool(scmi_powercap_zones),
        sensor_present=any("sensor" in d or d == "scmi-hwmon" for d in drivers),
        device_count=len(tree.children(SCMI_DEVICES)),
        unreadable=any(
            tree.kind(p) is EntryKind.UNREADABLE for p in (SCMI_BUS, SCMI_DRIVERS, SCMI_DEVICES)
        ),
    )


def scmi_result(findings: ScmiFindings) -> ProbeResult:
    if findings.powercap_present:
        status = Status.PRESENT
    elif findings.sensor_present or findings.unreadable:
        status = Status.PARTIAL
    else:
        status = Status.ABSENT
    detail = {
        "searched": [SCMI_DRIVERS, SCMI_DEVICES],
        "bus_registered": findings.bus_registered,
        "loaded_drivers": findings.loaded_drivers,
        "powercap": findings.powercap_present,
        "sensor": findings.sensor_present,
        "device_count": findings.device_count,
    }
    if findings.unreadable:
        detail["note"] = "SCMI bus path present but unreadable"
    return ProbeResult(Interface.SCMI_POWERCAP, status, detail)


# --- PMU energy events ----------------------------------------------------

_ENERGY_PATTERN = re.compile("energy|power|rapl", re.IGNORECASE)
_TRACEPOINT_NAME = re.compile(r"^[\w.-]+:[\w.-]+$")


def _split_event_line(line: str) -> tuple[str, bool]:
    name = line.split()[0]
    tracepoint = "tracepoint" in line.lower() or bool(_TRACEPOINT_NAME.match(name))
    return name, tracepoint


def probe_pmu_energy_events(event_names: Iterable[str]) -> ProbeResult:
    """Look for hardware energy events by name, like ``grep energy|power|rapl``.

    Tracepoints (``power:cpu_idle`` and friends) match the pattern too but
    carry no energy data, so they are reported separately and never count.
    """
    scanned = 0
    energy, tracepoints = [], []
    for line in event_names:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        scanned += 1
        name, is_tracepoint = _split_event_line(line)
        if not _ENERGY_PATTERN.search(name):
            continue
        (tracepoints if is_tracepoint else energy).append(name)
    detail = {
        "searched": "event names matching energy|power|rapl, tracepoints excluded",
        "events_scanned": scanned,
        "energy_events": sorted(set(energy)),
        "matching_tracepoints": sorted(set(tracepoints)),
    }
    status = Status.PRESENT if energy else Status.ABSENT
    return ProbeResult(Interface.PMU_ENERGY_EVENTS, status, detail)


def parse_event_list(text: str) -> list[str]:
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]


def live_pmu_events() -> list[str]:
    """Enumerate PMU events from sysfs, plus power tracepoints if tracefs is readable."""
    names = []
    for path in sorted(glob.glob("/sys/bus/event_source/devices/*/events/*")):
        pmu = path.split("/")[-3]
        names.append(f"{pmu}/{os.path.basename(path)}/")
    for tracefs in ("/sys/kernel/tracing/events", "/sys/kernel/debug/tracing/events"):
        for path in sorted(glob.glob(tracefs + "/power/*")):
            if os.path.isdir(path):
                names.append(f"power:{os.path.basename(path)} [Tracepoint event]")
        if names and os.path.isdir(tracefs):
            break
    return names


# --- INA3221/INA226 on I2C --------------------------------------------------


def probe_ina_i2c(
    bus_scans: Mapping[str, Iterable[int]], unreadable_buses: Iterable[str] = ()
) -> ProbeResult:
    found = []
    for bus, addresses in sorted(bus_scans.items()):
        for addr in sorted(set(addresses)):
            if not 0 <= addr <= 0x7F:
                raise InputError(f"I2C address {addr:#x} on bus {bus} is outside the 7-bit range")
            if addr in INA_ADDRESS_RANGE:
                found.append({"bus": str(bus), "address": f"0x{addr:02X}"})
    unreadable = sorted(str(b) for b in unreadable_buses)
    detail = {
        "searched": "addresses 0x40-0x4F on every scanned bus",
        "buses_scanned": len(bus_scans),
        "devices": found,
    }
    if unreadable:
        detail["unreadable_buses"] = unreadable
    if found:
        status = Status.PRESENT
    elif unreadable:
        status = Status.PARTIAL
    else:
        status = Status.ABSENT
    return ProbeResult(Interface.INA_I2C, status, detail)


def parse_i2c_scan(text: str) -> dict[str, list[int]]:
    """Parse ``<bus>: <hex addr> ...`` lines; a bus with no addresses is empty."""
    scans: dict[str, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        bus, sep, rest = line.partition(":")
        if not sep or not bus.strip():
            raise ParseError(f"expected '<bus>: <addresses>', got {raw!r}", lineno)
        try:
            addrs = [int(tok, 16) for tok in rest.replace(",", " ").split()]
        except ValueError as exc:
            raise ParseError(f"bad hex address in {raw!r}", lineno) from exc
        scans[bus.strip()] = addrs
    return scans


_I2C_SLAVE = 0x0703


def live_i2c_scan() -> tuple[dict[str, list[int]], list[str]]:
    """Read-only scan of 0x40-0x4F on every visible I2C adapter.

    Each address is probed with a one-byte read. Addresses already claimed by
    a kernel driver (EBUSY) are reported as responding.
    """
    import fcntl

    scans: dict[str, list[int]] = {}
    unreadable = []
    for dev in sorted(glob.glob("/dev/i2c-*"), key=lambda p: int(p.rsplit("-", 1)[1])):
        bus = os.path.basename(dev)
        try:
            fd = os.open(dev, os.O_RDWR)
        except OSError:
            unreadable.append(bus)
            continue
        hits = []
        try:
            for addr in INA_ADDRESS_RANGE:
                try:
                    fcntl.ioctl(fd, _I2C_SLAVE, addr)
                except OSError as exc:
                    if exc.errno == errno.EBUSY:
                        hits.append(addr)
                    continue
                try:
                    os.read(fd, 1)
                    hits.append(addr)
                except OSError:
                    pass
        finally:
            os.close(fd)
        scans[bus] = hits
    return scans, unreadable


# --- IPMI -------------------------------------------------------------------


def probe_ipmi(tree: SystemTree) -> ProbeResult:
    present, unreadable = [], []
    for node in IPMI_NODES:
        kind = tree.kind(node)
        if kind is EntryKind.UNREADABLE:
            unreadable.append(node)
        elif kind is not None:
            present.append(node)
    detail: dict[str, Any] = {"searched": list(IPMI_NODES), "nodes": present}
    if present:
        status = Status.PRESENT
    elif unreadable:
        status = Status.PARTIAL
        detail["unreadable"] = unreadable
        detail["note"] = "IPMI device node exists but could not be accessed"
    else:
        status = Status.ABSENT
        detail["note"] = f"{IPMI_NODES[0]}: no such file or directory"
    return ProbeResult(Interface.IPMI, status, detail)


# --- hwmon --------------------------------------------------------------------

_HWMON_KINDS = (
    ("energy", re.compile(r"^(energy\d*_input|energy_uj)$")),
    ("power", re.compile(r"^power\d*_(input|average)$")),
    ("temperature", re.compile(r"^temp\d*_input$")),
    ("other", re.compile(r"^[a-z]+\d*_input$")),
)
_KIND_ORDER = ("energy", "power", "temperature", "other")
_CHANNEL = re.compile(r"^([a-z]+)(\d*)_")


def classify_hwmon_attribute(name: str) -> str | None:
    for kind, pattern in _HWMON_KINDS:
        if pattern.match(name):
            return kind
    return None


def _channel_label(tree: SystemTree, dev: str, attr: str) -> str | None:
    m = _CHANNEL.match(attr)
    if not m:
        return None
    prefix, num = m.groups()
    # ina3221 labels its rails on the voltage channels only
    for candidate in (f"{prefix}{num}_label", f"in{num}_label"):
        label = tree.read_value(f"{dev}/{candidate}")
        if label:
            return label
    return None


def probe_hwmon(tree: SystemTree) -> ProbeResult:
    devices = []
    unreadable = []
    for name in tree.children(HWMON_CLASS):
        dev = f"{HWMON_CLASS}/{name}"
        if tree.kind(dev) is EntryKind.UNREADABLE:
            unreadable.append(name)
            continue
        kinds = set()
        channels = []
        for attr in tree.children(dev):
            kind = classify_hwmon_attribute(attr)
            if kind is None:
                continue
            kinds.add(kind)
            if kind in ("energy", "power"):
                value = tree.read_value(f"{dev}/{attr}")
                channels.append({
                    "attribute": attr,
                    "kind": kind,
                    "label": _channel_label(tree, dev, attr),
                    "readable": value is not None,
                })
        devices.append({
            "device": name,
            "name": tree.read_value(f"{dev}/name") or name,
            "kinds": [k for k in _KIND_ORDER if k in kinds],
            "channels": channels,
        })
    detail: dict[str, Any] = {
        "searched": f"{HWMON_CLASS}/*/(energy*_input|energy_uj|power*_input|power*_average)",
        "devices": devices,
    }
    if unreadable:
        detail["unreadable"] = unreadable
    measuring = [d for d in devices if {"energy", "power"} & set(d["kinds"])]
    if measuring:
        status = Status.PRESENT
    elif unreadable:
        status = Status.PARTIAL
    else:
        status = Status.ABSENT
    return ProbeResult(Interface.HWMON_ENERGY, status, detail)


# --- power_supply ---------------------------------------------------------------


def probe_power_supply(tree: SystemTree) -> ProbeResult:
    supplies = [
        {"name": n, "type": tree.read_value(f"{POWER_SUPPLY_CLASS}/{n}/type") or "unknown"}
        for n in tree.children(POWER_SUPPLY_CLASS)
    ]
    detail = {"searched": f"{POWER_SUPPLY_CLASS}/*", "supplies": supplies}
    status = Status.PRESENT if supplies else Status.ABSENT
    return ProbeResult(Interface.POWER_SUPPLY, status, detail)


# --- RAPL / powercap ----------------------------------------------------------


def _int_or_none(text: str | None) -> int | None:
    try:
        return int(text) if text is not None else None
    except ValueError:
        return None


def probe_rapl_powercap(tree: SystemTree) -> ProbeResult:
    """Find powercap zones exposing a cumulative ``energy_uj`` counter."""
    domains = []
    for zone in tree.children(POWERCAP_CLASS):
        zpath = f"{POWERCAP_CLASS}/{zone}"
        # nested subzones (intel-rapl:0:0) may also appear under their parent
        for path in [zpath] + [f"{zpath}/{c}" for c in tree.children(zpath) if c.startswith(zone + ":")]:
            kind = tree.kind(f"{path}/energy_uj")
            if kind is None:
                continue
            zone_id = path.rsplit("/", 1)[1]
            if any(d["zone"] == zone_id for d in domains):
                continue
            domains.append({
                "zone": zone_id,
                "control_type": zone_id.split(":", 1)[0],
                "name": tree.read_value(f"{path}/name") or zone_id,
                "max_energy_range_uj": _int_or_none(tree.read_value(f"{path}/max_energy_range_uj")),
                "readable": kind is EntryKind.FILE,
            })
    domains.sort(key=lambda d: d["zone"])
    detail = {"searched": f"{POWERCAP_CLASS}/*/energy_uj", "domains": domains}
    if any(d["readable"] for d in domains):
        status = Status.PRESENT
    elif domains:
        status = Status.PARTIAL
        detail["note"] = "energy_uj present but unreadable (permission)"
    else:
        status = Status.ABSENT
    return ProbeResult(Interface.RAPL_POWERCAP, status, detail)


# --- GPU power ------------------------------------------------------------------


@dataclass(frozen=True)
class GpuReading:
    instantaneous_available: bool
    cumulative_available: bool
    watts: float | None = None
    extra: dict[str, str] = field(default_factory=dict)


class GpuPowerAdapter(Protocol):
    def query(self) -> GpuReading: ...


class FixtureGpuAdapter:
    """GPU adapter backed by a ``key=value`` file.

    Recognised keys are ``instantaneous_watts`` and ``cumulative_available``;
    any other key is carried through as extra detail.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)

    def query(self) -> GpuReading:
        values = {}
        with open(self.path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ParseError(f"expected key=value, got {raw.strip()!r}", lineno)
                values[key.strip()] = value.strip()
        watts_text = values.pop("instantaneous_watts", "")
        watts = float(watts_text) if watts_text not in ("", "N/A") else None
        cumulative = values.pop("cumulative_available", "false").lower() in ("1", "true", "yes")
        return GpuReading(watts is not None, cumulative, watts, values)


class NvidiaSmiAdapter:
    """Live adapter shelling out to ``nvidia-smi``; reports instantaneous power only."""

    def __init__(self, executable: str = "nvidia-smi", timeout: float = 5.0):
        self.executable = executable
        self.timeout = timeout

    def query(self) -> GpuReading:
        out = subprocess.run(
            [self.executable, "--query-gpu=power.draw", "--format=csv,noheader,nounits"],
            capture_output=True, text=True, timeout=self.timeout, check=True,
        ).stdout
        readings = []
        for line in out.splitlines():
            try:
                readings.append(float(line.strip()))
            except ValueError:
                continue
        if not readings:
            return GpuReading(False, False, None, {"raw": out.strip()})
        return GpuReading(True, False, sum(readings) / len(readings))


def probe_gpu_power(source: GpuPowerAdapter | None) -> ProbeResult:
    if source is None:
        return ProbeResult(
            Interface.GPU_POWER, Status.ABSENT,
            {"searched": "GPU power query adapter", "note": "no GPU power source"},
        )
    try:
        reading = source.query()
    except Exception as exc:  # adapter failures are findings, not errors
        return ProbeResult(
            Interface.GPU_POWER, Status.ABSENT,
            {"searched": "GPU power query adapter", "note": f"query failed: {exc}"},
        )
    detail: dict[str, Any] = {
        "instantaneous": reading.instantaneous_available,
        "cumulative": reading.cumulative_available,
        "watts": reading.watts,
    }
    detail.update(sorted(reading.extra.items()))
    status = Status.PRESENT if reading.instantaneous_available else Status.ABSENT
    if status is Status.ABSENT:
        detail["searched"] = "GPU power query adapter"
    return ProbeResult(Interface.GPU_POWER, status, detail)


# --- audit ----------------------------------------------------------------------


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_audit(
    tree: SystemTree,
    pmu_events: Iterable[str],
    i2c_scans: Mapping[str, Iterable[int]],
    gpu_adapter: GpuPowerAdapter | None,
    *,
    platform: str = "unknown",
    unreadable_buses: Iterable[str] = (),
    timestamp: str | None = None,
    notes: str = "",
) -> AuditReport:
    results = {
        Interface.SCMI_POWERCAP: scmi_result(probe_scmi(tree)),
        Interface.PMU_ENERGY_EVENTS: probe_pmu_energy_events(pmu_events),
        Interface.INA_I2C: probe_ina_i2c(i2c_scans, unreadable_buses),
        Interface.IPMI: probe_ipmi(tree),
        Interface.HWMON_ENERGY: probe_hwmon(tree),
        Interface.POWER_SUPPLY: probe_power_supply(tree),
        Interface.GPU_POWER: probe_gpu_power(gpu_adapter),
    }
    rapl = probe_rapl_powercap(tree)
    # power_supply entries (batteries) are not energy meters for this purpose
    meters = [r for i, r in results.items() if r.present and i is not Interface.POWER_SUPPLY]
    if rapl.present:
        meters.append(rapl)
    gpu = results[Interface.GPU_POWER]
    if meters == [gpu]:
        results[Interface.GPU_POWER] = ProbeResult(
            gpu.interface, gpu.status, {**gpu.detail, "note": ONLY_INTERFACE_NOTE}
        )
    return AuditReport(
        platform=platform,
        timestamp=timestamp or _now(),
        results=results,
        rapl=rapl,
        notes=notes,
    )


# --- inputs ----------------------------------------------------------------------


@dataclass
class AuditInputs:
    """Everything :func:`run_audit` consumes, from a fixture or the live host."""

    platform: str
    tree: SystemTree
    pmu_events: list[str]
    i2c_scans: dict[str, list[int]]
    gpu_adapter: GpuPowerAdapter | None
    unreadable_buses: list[str] = field(default_factory=list)
    manifest: FixtureManifest | None = None
    root: str | None = None

    def audit(self, timestamp: str | None = None) -> AuditReport:
        notes = self.manifest.provenance if self.manifest else ""
        return run_audit(
            self.tree, self.pmu_events, self.i2c_scans, self.gpu_adapter,
            platform=self.platform, unreadable_buses=self.unreadable_buses,
            timestamp=timestamp, notes=notes,
        )


def load_audit_inputs(fixture_dir: str | os.PathLike) -> AuditInputs:
    """Load a platform fixture.

    Layout::

        <fixture>/manifest.toml     platform_name, description, provenance
        <fixture>/tree/             mirrored /sys, /dev, /proc paths
        <fixture>/pmu_events.txt    one event per line (optional)
        <fixture>/i2c_scan.txt      "<bus>: <hex addrs>" lines (optional)
        <fixture>/gpu_power.txt     key=value GPU adapter file (optional)
    """
    root = os.fspath(fixture_dir)
    if not os.path.isdir(root):
        raise LoadError(f"fixture directory not found: {root}")
    manifest = load_manifest(os.path.join(root, "manifest.toml"))
    tree_dir = os.path.join(root, "tree")
    tree = load_system_tree(tree_dir) if os.path.isdir(tree_dir) else SystemTree()

    def optional_text(name: str) -> str:
        path = os.path.join(root, name)
        if not os.path.exists(path):
            return ""
        with open(path, encoding="utf-8") as fh:
            return fh.read()

    gpu_file = os.path.join(root, "gpu_power.txt")
    return AuditInputs(
        platform=manifest.platform_name,
        tree=tree,
        pmu_events=parse_event_list(optional_text("pmu_events.txt")),
        i2c_scans=parse_i2c_scan(optional_text("i2c_scan.txt")),
        gpu_adapter=FixtureGpuAdapter(gpu_file) if os.path.exists(gpu_file) else None,
        manifest=manifest,
        root=root,
    )


def live_audit_inputs(scan_i2c: bool = True) -> AuditInputs:
    scans, unreadable = live_i2c_scan() if scan_i2c else ({}, [])
    gpu = NvidiaSmiAdapter() if shutil.which("nvidia-smi") else None
    return AuditInputs(
        platform=os.uname().nodename,
        tree=live_tree(),
        pmu_events=live_pmu_events(),
        i2c_scans=scans,
        gpu_adapter=gpu,
        unreadable_buses=unreadable,
    )
