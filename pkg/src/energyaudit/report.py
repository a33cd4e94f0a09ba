"""JSON and Markdown rendering of audits, grades and attribution results."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

from . import __version__
from .attribution import AttributionRecord
from .bridge import BridgeDecomposition
from .grading import CapDomain, RequirementReport
from .probe import AUDITED_INTERFACES, AuditReport, Interface, ProbeResult, Status

SCHEMA_VERSION = 1
SIGNIFICANT_DIGITS = 9
NORMALIZED_TIMESTAMP = "1970-01-01T00:00:00+00:00"


@dataclass
class ReportBundle:
    audit: AuditReport | None = None
    grade: RequirementReport | None = None
    attribution: list[AttributionRecord] | None = None
    bridge: list[BridgeDecomposition] | None = None
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": self.schema_version, "tool_version": self.tool_version}
        if self.audit is not None:
            out["audit"] = self.audit.to_dict()
        if self.grade is not None:
            out["grade"] = self.grade.to_dict()
        if self.attribution is not None:
            out["attribution"] = [r.to_dict() for r in self.attribution]
        if self.bridge is not None:
            out["bridge"] = [b.to_dict() for b in self.bridge]
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReportBundle":
        known = {"schema_version", "tool_version", "audit", "grade", "attribution", "bridge"}
        return cls(
            audit=AuditReport.from_dict(d["audit"]) if "audit" in d else None,
            grade=RequirementReport.from_dict(d["grade"]) if "grade" in d else None,
            attribution=[AttributionRecord.from_dict(r) for r in d["attribution"]] if "attribution" in d else None,
            bridge=[BridgeDecomposition.from_dict(b) for b in d["bridge"]] if "bridge" in d else None,
            tool_version=d["tool_version"],
            schema_version=d["schema_version"],
            extra={k: v for k, v in d.items() if k not in known},
        )


def _fix_floats(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(obj, Mapping):
        return {str(k): _fix_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fix_floats(v) for v in obj]
    return obj


def dumps_json(obj: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, floats at 9 significant digits."""
    text = json.dumps(_fix_floats(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def emit_json(bundle: ReportBundle) -> bytes:
    return dumps_json(bundle.to_dict())


def parse_json(data: bytes | str) -> ReportBundle:
    return ReportBundle.from_dict(json.loads(data))


def load_schema() -> dict[str, Any]:
    text = resources.files("energyaudit").joinpath("schema/report.schema.json").read_text("utf-8")
    return json.loads(text)


def normalize_timestamps(obj: Any) -> Any:
    """Replace every ``timestamp`` value so captures can be compared byte-for-byte."""
    if isinstance(obj, Mapping):
        return {k: (NORMALIZED_TIMESTAMP if k == "timestamp" else normalize_timestamps(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [normalize_timestamps(v) for v in obj]
    return obj


# --- Markdown -------------------------------------------------------------------

INTERFACE_TITLES = {
    Interface.SCMI_POWERCAP: "ARM SCMI powercap",
    Interface.PMU_ENERGY_EVENTS: "PMU energy events",
    Interface.INA_I2C: "INA3221/INA226",
    Interface.IPMI: "IPMI/BMC",
    Interface.HWMON_ENERGY: "hwmon energy/power",
    Interface.POWER_SUPPLY: "Power supply subsystem",
    Interface.GPU_POWER: "GPU power",
}

PROBE_METHODS = {
    Interface.SCMI_POWERCAP: "`/sys/bus/scmi_protocol/drivers/`, `/sys/bus/scmi_protocol/devices/`",
    Interface.PMU_ENERGY_EVENTS: "event list filtered on `energy|power|rapl`",
    Interface.IPMI: "`/dev/ipmi0`, `/dev/ipmi/0`, `/dev/ipmidev/0`",
    Interface.HWMON_ENERGY: "`energy_uj` under `/sys/class/powercap/`; `/sys/class/hwmon/*/{energy,power}*_input`",
    Interface.POWER_SUPPLY: "`/sys/class/power_supply/*/`",
    Interface.GPU_POWER: "GPU power query",
}

_KIND_SHORT = {"energy": "energy", "power": "power", "temperature": "temp", "other": "other"}


def _cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def _probe_method(r: ProbeResult) -> str:
    if r.interface is Interface.INA_I2C:
        n = r.detail["buses_scanned"]
        if n == 0:
            return "read-only scan of 0x40-0x4F (no I2C buses found)"
        return f"read-only scan of 0x40-0x4F on all {n} I2C bus{'es' if n != 1 else ''}"
    return PROBE_METHODS[r.interface]


def _summary_scmi(d: Mapping[str, Any]) -> str:
    parts = ["Bus active." if d["bus_registered"] else "SCMI bus not registered."]
    if d["loaded_drivers"]:
        parts.append("Loaded: " + ", ".join(d["loaded_drivers"]) + ".")
    parts.append("Powercap present." if d["powercap"] else "No powercap.")
    parts.append("Sensor present." if d["sensor"] else "No sensor.")
    parts.append(f"{d['device_count']} SCMI devices.")
    return " ".join(parts)


def _summary_pmu(d: Mapping[str, Any]) -> str:
    if d["energy_events"]:
        text = f"{len(d['energy_events'])} energy events: " + ", ".join(d["energy_events"]) + "."
    else:
        text = f"Zero hardware energy events ({d['events_scanned']} events scanned)."
    if d["matching_tracepoints"]:
        text += " Matching tracepoints only: " + ", ".join(d["matching_tracepoints"]) + "."
    return text


def _summary_ina(d: Mapping[str, Any]) -> str:
    n = d["buses_scanned"]
    if d["devices"]:
        found = ", ".join(f"{x['bus']}@{x['address']}" for x in d["devices"])
        text = f"{len(d['devices'])} devices at 0x40-0x4F: {found}."
    elif n == 0:
        text = "No I2C buses scanned."
    else:
        text = f"Zero devices at 0x40-0x4F. All {n} buses empty."
    if d.get("unreadable_buses"):
        text += " Unreadable: " + ", ".join(d["unreadable_buses"]) + "."
    return text


def _summary_ipmi(d: Mapping[str, Any]) -> str:
    if d["nodes"]:
        return "Device node present: " + ", ".join(d["nodes"]) + "."
    return d.get("note", "Absent.")


def _summary_hwmon(d: Mapping[str, Any], rapl: ProbeResult) -> str:
    parts = []
    if rapl.detail["domains"]:
        names = ", ".join(f"{x['zone']} ({x['name']})" for x in rapl.detail["domains"])
        parts.append(f"energy_uj: {names}.")
    else:
        parts.append("energy_uj: no results.")
    if not d["devices"]:
        parts.append("No hwmon devices.")
    for dev in d["devices"]:
        kinds = [_KIND_SHORT[k] for k in dev["kinds"]] or ["no sensors"]
        only = " only" if len(kinds) == 1 and kinds[0] == "temp" else ""
        text = f"{dev['device']} ({dev['name']}): {', '.join(kinds)}{only}"
        labels = [c["label"] for c in dev["channels"] if c["label"]]
        if labels:
            text += f" [{', '.join(labels)}]"
        parts.append(text + ".")
    return " ".join(parts)


def _summary_supply(d: Mapping[str, Any]) -> str:
    if not d["supplies"]:
        return "Empty: no batteries, no PMIC reporting."
    return "Supplies: " + ", ".join(f"{s['name']} ({s['type']})" for s in d["supplies"]) + "."


def _summary_gpu(d: Mapping[str, Any]) -> str:
    if "watts" not in d:
        return d.get("note", "No GPU power source.")
    parts = []
    if d["watts"] is not None:
        parts.append(f"GPU: {d['watts']:.2f} W.")
    parts.append("Cumulative energy counter: " + ("yes." if d["cumulative"] else "no."))
    skip = {"instantaneous", "cumulative", "watts", "note", "searched"}
    for key in sorted(k for k in d if k not in skip):
        parts.append(f"{key.replace('_', ' ').capitalize()}: {d[key]}.")
    if d.get("note"):
        parts.append(d["note"])
    return " ".join(parts)


def result_summary(r: ProbeResult, audit: AuditReport) -> str:
    d = r.detail
    return {
        Interface.SCMI_POWERCAP: lambda: _summary_scmi(d),
        Interface.PMU_ENERGY_EVENTS: lambda: _summary_pmu(d),
        Interface.INA_I2C: lambda: _summary_ina(d),
        Interface.IPMI: lambda: _summary_ipmi(d),
        Interface.HWMON_ENERGY: lambda: _summary_hwmon(d, audit.rapl),
        Interface.POWER_SUPPLY: lambda: _summary_supply(d),
        Interface.GPU_POWER: lambda: _summary_gpu(d),
    }[r.interface]()


def emit_markdown_audit(audit: AuditReport) -> str:
    lines = [
        f"## Energy measurement interface audit: {audit.platform}",
        "",
        "| Interface | Probe Method | Status | Result |",
        "|---|---|---|---|",
    ]
    for iface in AUDITED_INTERFACES:
        r = audit.results[iface]
        lines.append(
            f"| {INTERFACE_TITLES[iface]} | {_cell(_probe_method(r))} | {r.status.value} "
            f"| {_cell(result_summary(r, audit))} |"
        )
    rapl = audit.rapl
    lines += ["", f"Powercap energy counters: {rapl.status.value}."]
    return "\n".join(lines) + "\n"


def emit_markdown_grade(report: RequirementReport, platform: str = "") -> str:
    lines = [f"## Energy attribution capability{': ' + platform if platform else ''}", ""]
    if report.profile is not None:
        p = report.profile
        lines += [
            "| CPU | GPU | DRAM | I/O | Sys | Grade |",
            "|---|---|---|---|---|---|",
            "| " + " | ".join(p[d].mark() for d in CapDomain) + f" | {report.grade.value} |",
            "",
            "✓ = cumulative energy measurement, ✓* = instantaneous power only, × = absent",
            "",
        ]
    lines += ["| Requirement | Status | Evidence |", "|---|---|---|"]
    for c in report.checks:
        lines.append(f"| {c.id} | {c.status.value} | {_cell(c.evidence)} |")
    lines += ["", f"Grade: **{report.grade.value}**"]
    return "\n".join(lines) + "\n"


def emit_markdown_attribution(records: list[AttributionRecord]) -> str:
    out = []
    for rec in records:
        out += [
            f"## Attribution window {rec.t0}-{rec.t1} ns ({rec.channel})",
            "",
            f"- e_pkg: {rec.e_pkg:.9g} J",
            f"- idle power: {rec.idle_power:.9g} W",
            f"- e_task: {rec.e_task:.9g} J",
            f"- residual: {rec.residual:.9g} J",
            "",
            "| PID | Ticks | Fraction | Energy (J) |",
            "|---|---|---|---|",
        ]
        out += [
            f"| {s.pid} | {s.cpu_ticks} | {s.fraction:.9g} | {rec.per_pid[s.pid]:.9g} |" for s in rec.shares
        ]
        out += [f"\nWarning: {w}" for w in rec.warnings]
        out.append("")
    return "\n".join(out)


def emit_markdown_bridge(decomps: list[BridgeDecomposition]) -> str:
    out = [
        "## Meter bridge decomposition",
        "",
        "| t0 (ns) | t1 (ns) | E_total (J) | E_gpu (J) | E_cpu+sys (J) |",
        "|---|---|---|---|---|",
    ]
    warnings = []
    for b in decomps:
        out.append(f"| {b.t0} | {b.t1} | {b.e_total:.9g} | {b.e_gpu:.9g} | {b.e_cpu_sys:.9g} |")
        warnings += b.warnings
    out += [f"\nWarning: {w}" for w in warnings]
    return "\n".join(out) + "\n"
