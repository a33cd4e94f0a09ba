"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 input or data error, 3 internal
error, 4 capability gap (the platform lacks a required energy counter).
"""

from __future__ import annotations

import os
import sys
import traceback
from typing import Any

import click

from . import __version__
from .attribution import (
    AttributionRecord,
    IdleBaseline,
    ProcessShare,
    attribute_window,
    measure_shares,
)
from .bridge import align_traces, bridge_attribute, bridge_decompose, load_meter_trace
from .counters import Domain, EnergyCounter, read_counter_csv, read_trace_csv, sample_counter, sysfs_reader
from .errors import CapabilityGapError, EnergyAuditError, InputError
from .grading import (
    CapDomain,
    CounterCharacterization,
    check_requirements,
    derive_capabilities,
    domains_for_label,
    measure_read_latency,
)
from .probe import AuditInputs, AuditReport, POWERCAP_CLASS, load_audit_inputs, live_audit_inputs
from .report import (
    ReportBundle,
    dumps_json,
    emit_json,
    emit_markdown_attribution,
    emit_markdown_audit,
    emit_markdown_bridge,
    emit_markdown_grade,
)
from .spbm import accumulator_stats, decode_spbm_stream, default_layout, load_layout, spbm_cadence
from .sysmodel import live_proc_tree, load_system_tree

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3
EXIT_CAPABILITY_GAP = 4

CPU_GAP_MESSAGE = (
    "capability gap: no CPU energy counter. The CPU domain exposes no cumulative energy "
    "measurement (no powercap energy_uj, hwmon energy or SCMI powercap counter), so "
    "package energy for the CPU cannot be measured and per-process attribution is refused "
    "rather than estimated."
)


class ExitCodeGroup(click.Group):
    """Group that maps exceptions onto the documented exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, **extra):
        extra.pop("standalone_mode", None)
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Exit as exc:
            sys.exit(exc.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_USAGE)
        except CapabilityGapError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CAPABILITY_GAP)
        except (EnergyAuditError, OSError, tomllib.TOMLDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except Exception:
            click.echo("internal error:", err=True)
            click.echo(traceback.format_exc(), err=True)
            sys.exit(EXIT_INTERNAL)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def common_options(fn):
    fn = click.option(
        "--out", "out_path", type=click.Path(dir_okay=False), default=None,
        help="Write output to FILE instead of stdout.",
    )(fn)
    fn = click.option(
        "--output", "output", type=click.Choice(["json", "markdown"]), default="markdown",
        show_default=True, help="Output format.",
    )(fn)
    fn = click.option(
        "--fixture", "fixture", type=click.Path(file_okay=False), default=None,
        help="Read a captured platform fixture directory instead of the live host.",
    )(fn)
    return fn


def _write(data: bytes | str, out_path: str | None) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if out_path:
        with open(out_path, "wb") as fh:
            fh.write(data)
    else:
        stream = click.get_binary_stream("stdout")
        stream.write(data)
        stream.flush()


def _inputs(fixture: str | None) -> AuditInputs:
    if fixture is not None:
        return load_audit_inputs(fixture)
    return live_audit_inputs()


def _cpu_counter_path(audit: AuditReport) -> str | None:
    """sysfs path of a readable CPU-domain powercap counter, if any."""
    for dom in audit.rapl.detail.get("domains", []):
        if dom["readable"] and CapDomain.CPU in domains_for_label(dom["name"]):
            return f"{POWERCAP_CLASS}/{dom['zone']}/energy_uj"
    return None


def _live_counter_chars(audit: AuditReport) -> CounterCharacterization | None:
    path = _cpu_counter_path(audit)
    if path is None:
        return None
    try:
        latency = measure_read_latency(sysfs_reader(path))
    except (OSError, ValueError):
        return None
    # energy_uj counts microjoules
    return CounterCharacterization(resolution_mj=0.001, read_latency_ms=latency)


def _grade(inputs: AuditInputs, audit: AuditReport):
    chars = _live_counter_chars(audit) if inputs.root is None else None
    return check_requirements(derive_capabilities(audit, chars))


@click.group(cls=ExitCodeGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="energyaudit")
def cli():
    """Audit a platform's energy measurement interfaces and attribute energy to processes."""


@cli.command()
@common_options
def audit(fixture, output, out_path):
    """Probe the seven energy measurement interfaces and report what exists."""
    inputs = _inputs(fixture)
    report = inputs.audit()
    if output == "json":
        _write(emit_json(ReportBundle(audit=report, grade=_grade(inputs, report))), out_path)
    else:
        _write(emit_markdown_audit(report), out_path)


@cli.command()
@common_options
def grade(fixture, output, out_path):
    """Grade the platform MEASURED or LIMITED and list requirement checks.

    The exit code is 0 for either grade; the grade is in the report.
    """
    inputs = _inputs(fixture)
    report = inputs.audit()
    result = _grade(inputs, report)
    if output == "json":
        _write(emit_json(ReportBundle(audit=report, grade=result)), out_path)
    else:
        _write(emit_markdown_grade(result, report.platform), out_path)


def _fixture_attribution(fixture: str, pids, idle_power, ticks_per_second):
    base = os.path.join(fixture, "attribution")
    if not os.path.isdir(base):
        raise InputError(f"fixture {fixture} has no scripted attribution series (attribution/)")
    with open(os.path.join(base, "config.toml"), "rb") as fh:
        cfg = tomllib.load(fh)
    counter = EnergyCounter(
        Domain.CPU_PACKAGE,
        width_bits=int(cfg.get("counter_width_bits", 32)),
        max_range=cfg.get("counter_max_range"),
        unit_uj=cfg.get("counter_unit_uj", 1),
    )
    samples = read_counter_csv(os.path.join(base, "counter.csv"))
    pids = list(pids) or [int(p) for p in cfg.get("pids", [])]
    idle = idle_power if idle_power is not None else cfg.get("idle_power_w")
    if idle is None:
        raise click.UsageError("idle power is required (--idle-power or idle_power_w in config.toml)")
    tps = ticks_per_second or cfg.get("ticks_per_second")
    start = load_system_tree(os.path.join(base, "start"))
    end = load_system_tree(os.path.join(base, "end"))
    shares, warnings = measure_shares(start, end, pids)
    baseline = IdleBaseline(float(idle), provenance=f"{base}/config.toml")
    return attribute_window(samples, counter, baseline, shares, warnings=warnings, ticks_per_second=tps)


def _live_attribution(audit_report, pids, duration, period, idle_power, ticks_per_second, max_power):
    path = _cpu_counter_path(audit_report)
    if path is None:
        raise InputError("live attribution needs a readable powercap energy_uj counter for the CPU")
    if idle_power is None:
        raise click.UsageError("--idle-power is required in live mode")
    zone = next(
        d for d in audit_report.rapl.detail["domains"]
        if f"{POWERCAP_CLASS}/{d['zone']}/energy_uj" == path
    )
    max_range = zone["max_energy_range_uj"]
    counter = EnergyCounter(
        Domain.CPU_PACKAGE, width_bits=64,
        max_range=max_range + 1 if max_range else None, name=zone["name"],
    )
    start = live_proc_tree(pids)
    series = sample_counter(
        sysfs_reader(path), period, duration, counter=counter, max_power_w=max_power
    )
    end = live_proc_tree(pids)
    if series.failures:
        raise InputError("; ".join(series.failures))
    shares, warnings = measure_shares(start, end, pids)
    tps = ticks_per_second or os.sysconf("SC_CLK_TCK")
    return attribute_window(
        series.samples, counter, IdleBaseline(idle_power, "command line"), shares,
        warnings=series.warnings + warnings, ticks_per_second=tps,
    )


@cli.command()
@common_options
@click.option("--pid", "pids", type=int, multiple=True, help="Process to attribute energy to (repeatable).")
@click.option("--duration", type=float, default=10.0, show_default=True, help="Window length in seconds.")
@click.option("--period", type=float, default=0.1, show_default=True, help="Counter sampling period in seconds.")
@click.option("--idle-power", type=float, default=None, help="Idle power baseline in watts.")
@click.option("--ticks-per-second", type=float, default=None, help="Scheduler clock ticks per second.")
@click.option(
    "--max-power", type=float, default=None,
    help="Worst-case package power in watts, used to warn about counter wrap risk.",
)
def attribute(fixture, output, out_path, pids, duration, period, idle_power, ticks_per_second, max_power):
    """Attribute CPU package energy over a window to processes by CPU share.

    Exits with code 4 when the platform has no CPU energy counter.
    """
    if duration <= 0:
        raise click.UsageError("--duration must be positive")
    if period <= 0:
        raise click.UsageError("--period must be positive")
    if idle_power is not None and idle_power < 0:
        raise click.UsageError("--idle-power must be non-negative")
    inputs = _inputs(fixture)
    report = inputs.audit()
    profile = derive_capabilities(report)
    if not profile[CapDomain.CPU].cumulative_energy:
        raise CapabilityGapError(CPU_GAP_MESSAGE)
    if fixture is not None:
        record = _fixture_attribution(fixture, pids, idle_power, ticks_per_second)
    else:
        if not pids:
            raise click.UsageError("at least one --pid is required in live mode")
        record = _live_attribution(report, pids, duration, period, idle_power, ticks_per_second, max_power)
    _emit_attribution([record], output, out_path)


def _emit_attribution(records: list[AttributionRecord], output, out_path, bridge=None):
    if output == "json":
        _write(emit_json(ReportBundle(attribution=records, bridge=bridge)), out_path)
    else:
        text = emit_markdown_bridge(bridge) + "\n" if bridge else ""
        _write(text + emit_markdown_attribution(records), out_path)


def _parse_share(text: str) -> ProcessShare:
    try:
        pid, frac = text.split("=", 1)
        return ProcessShare(int(pid), 0, float(frac))
    except ValueError:
        raise click.BadParameter(f"expected PID=FRACTION, got {text!r}", param_hint="--share") from None


@cli.command()
@common_options
@click.option("--meter", type=click.Path(dir_okay=False), default=None, help="Board meter trace CSV (t_ns,power_mw).")
@click.option("--gpu", type=click.Path(dir_okay=False), default=None, help="GPU power trace CSV (t_ns,power_mw).")
@click.option("--offset", type=float, default=0.0, show_default=True, help="Shift applied to the GPU trace, seconds.")
@click.option("--t0", type=int, default=None, help="Window start in ns (default: start of overlap).")
@click.option("--t1", type=int, default=None, help="Window end in ns (default: end of overlap).")
@click.option("--idle-power", type=float, default=None, help="Idle baseline for the cpu+sys channel, watts.")
@click.option("--share", "shares", multiple=True, help="CPU share as PID=FRACTION (repeatable).")
def bridge(fixture, output, out_path, meter, gpu, offset, t0, t1, idle_power, shares):
    """Split metered board energy into GPU and CPU-plus-system channels.

    With --idle-power and --share the cpu+sys energy is also attributed to
    processes.
    """
    if fixture is not None:
        meter = meter or os.path.join(fixture, "bridge", "meter.csv")
        gpu = gpu or os.path.join(fixture, "bridge", "gpu.csv")
    if meter is None or gpu is None:
        raise click.UsageError("bridge needs both --meter and --gpu traces (or --fixture)")
    parsed_shares = [_parse_share(s) for s in shares]
    if parsed_shares and idle_power is None:
        raise click.UsageError("--share requires --idle-power")
    meter_trace = load_meter_trace(meter)
    gpu_trace = read_trace_csv(gpu)
    m, g = align_traces(meter_trace, gpu_trace, offset)
    lo = m.start if t0 is None else t0
    hi = m.end if t1 is None else t1
    decomp = bridge_decompose(m, g, lo, hi)
    if idle_power is not None:
        record = bridge_attribute(decomp, IdleBaseline(idle_power, "command line"), parsed_shares)
        _emit_attribution([record], output, out_path, bridge=[decomp])
    elif output == "json":
        _write(emit_json(ReportBundle(bridge=[decomp])), out_path)
    else:
        _write(emit_markdown_bridge([decomp]), out_path)


def _spbm_summary(records, layout) -> dict[str, Any]:
    out: dict[str, Any] = {"records": len(records), "record_size": layout.record_size}
    if len(records) >= 3:
        out["cadence"] = spbm_cadence(records).to_dict()
    if records:
        out.update(accumulator_stats(records, layout))
        out["first_t_ns"] = records[0].t
        out["last_t_ns"] = records[-1].t
    out["warnings"] = [f"t={r.t}: {w}" for r in records for w in r.warnings]
    return out


def _spbm_markdown(s: dict[str, Any]) -> str:
    lines = ["## SPBM stream", "", f"- records: {s['records']} of {s['record_size']} bytes"]
    if "cadence" in s:
        c = s["cadence"]
        lines.append(f"- cadence: {c['interval_ms']:.6g} ms median (IQR {c['iqr_ms']:.6g} ms)")
        lines.append(f"- stale reads: {c['stale_reads']}")
    if "totals_mj" in s:
        lines += ["", "| Accumulator | Energy (mJ) |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in s["totals_mj"].items()]
    if "soc_total_minus_parts_mj" in s:
        lines += ["", f"SocTotal minus cluster and GPU accumulators: {s['soc_total_minus_parts_mj']} mJ "
                  "(observational; coverage of SocTotal is unknown)"]
    lines += [f"\nWarning: {w}" for w in s["warnings"]]
    return "\n".join(lines) + "\n"


@cli.command()
@common_options
@click.option("--blob", type=click.Path(dir_okay=False), default=None, help="Raw SPBM dump.")
@click.option("--layout", "layout_path", type=click.Path(dir_okay=False), default=None,
              help="Layout descriptor (default: the built-in layout).")
def spbm(fixture, output, out_path, blob, layout_path):
    """Decode a captured SPBM shared-memory dump: cadence and accumulator totals."""
    if fixture is not None:
        blob = blob or os.path.join(fixture, "spbm", "blob.bin")
        candidate = os.path.join(fixture, "spbm", "layout.txt")
        if layout_path is None and os.path.exists(candidate):
            layout_path = candidate
    if blob is None:
        raise click.UsageError("spbm needs --blob (or --fixture)")
    layout = load_layout(layout_path) if layout_path else default_layout()
    with open(blob, "rb") as fh:
        data = fh.read()
    if not data:
        _write(b"", out_path)
        return
    summary = _spbm_summary(decode_spbm_stream(data, layout), layout)
    if output == "json":
        _write(dumps_json(ReportBundle(extra={"spbm": summary}).to_dict()), out_path)
    else:
        _write(_spbm_markdown(summary), out_path)


def main() -> None:
    cli.main(prog_name="energyaudit")


if __name__ == "__main__":
    main()
