import itertools

import pytest
from hypothesis import given, strategies as st

from energyaudit.grading import (
    CapabilityProfile,
    CapDomain,
    CheckStatus,
    CounterCharacterization,
    DomainCapability,
    Grade,
    RequirementReport,
    check_requirements,
    derive_capabilities,
    domains_for_label,
    measure_read_latency,
)
from energyaudit.probe import run_audit

from conftest import make_tree

# platform -> (grade, CPU/GPU/Sys marks); None where the domain does not apply
TABLE = {
    "x86_rapl": (Grade.MEASURED, ("✓", None, "✓")),
    "jetson_orin": (Grade.MEASURED, ("✓", "✓", "✓")),
    "gx10": (Grade.LIMITED, ("×", "✓*", "×")),
    "apple_m": (Grade.LIMITED, ("×", "×", "×")),
    "qualcomm_snapdragon": (Grade.LIMITED, ("×", "×", "×")),
}

POWERCAP = "/sys/class/powercap"
HWMON = "/sys/class/hwmon"


def grade_of(audit):
    return check_requirements(derive_capabilities(audit))


def audit_tree(tree, gpu=None):
    return run_audit(tree, [], {}, gpu, timestamp="t")


class TestTable:
    @pytest.mark.parametrize("name", list(TABLE))
    def test_grade(self, audit_of, name):
        assert grade_of(audit_of(name)).grade is TABLE[name][0]

    @pytest.mark.parametrize("name", list(TABLE))
    def test_marks(self, audit_of, name):
        prof = derive_capabilities(audit_of(name))
        expected = TABLE[name][1]
        for dom, mark in zip((CapDomain.CPU, CapDomain.GPU, CapDomain.SYSTEM), expected):
            if mark is not None:
                assert prof[dom].mark() == mark, dom

    def test_gx10_full_row(self, audit_of):
        prof = derive_capabilities(audit_of("gx10"))
        assert [prof[d].mark() for d in CapDomain] == ["×", "✓*", "×", "×", "×"]
        assert prof[CapDomain.GPU].sources == ("gpu-query",)

    def test_empty_is_limited(self, audit_of):
        report = grade_of(audit_of("empty"))
        assert report.grade is Grade.LIMITED
        assert report["R1"].status is CheckStatus.FAIL


class TestDomainsForLabel:
    @pytest.mark.parametrize("label,expected", [
        ("package-0", {CapDomain.CPU}),
        ("core", {CapDomain.CPU}),
        ("dram", {CapDomain.DRAM}),
        ("psys", {CapDomain.SYSTEM}),
        ("uncore", {CapDomain.GPU}),
        ("VDD_GPU_SOC", {CapDomain.GPU}),
        ("VDD_CPU_CV", {CapDomain.CPU}),
        ("VIN_SYS_5V0", {CapDomain.SYSTEM}),
        ("VDDQ_VDD2_1V8AO", {CapDomain.DRAM}),
        ("VDD_SOC", {CapDomain.SYSTEM}),
        ("acpitz", set()),
        ("", set()),
    ])
    def test_mapping(self, label, expected):
        assert domains_for_label(label) == expected


class TestRequirements:
    def test_x86_checks(self, audit_of):
        report = grade_of(audit_of("x86_rapl"))
        status = {c.id: c.status for c in report.checks}
        assert status == {
            "R1": CheckStatus.PASS,
            "R2": CheckStatus.NOT_MEASURABLE,
            "R3": CheckStatus.NOT_MEASURABLE,
            "R4": CheckStatus.FAIL,
            "R5": CheckStatus.PASS,
        }
        assert "GPU" in report["R4"].evidence and "I/O" in report["R4"].evidence

    def test_limited_checks_not_applicable(self, audit_of):
        report = grade_of(audit_of("gx10"))
        for rid in ("R2", "R3", "R5"):
            assert report[rid].status is CheckStatus.NOT_APPLICABLE
        assert "CPU" in report["R1"].evidence

    def test_jetson_overflow_unpublished(self, audit_of):
        assert grade_of(audit_of("jetson_orin"))["R5"].status is CheckStatus.NOT_MEASURABLE

    @pytest.mark.parametrize("latency,resolution,r2,r3", [
        (0.05, 0.061, CheckStatus.PASS, CheckStatus.PASS),
        (1.0, 1.0, CheckStatus.FAIL, CheckStatus.PASS),
        (2.5, 15.3, CheckStatus.FAIL, CheckStatus.FAIL),
    ])
    def test_measured_counter(self, latency, resolution, r2, r3):
        prof = CapabilityProfile(
            {CapDomain.CPU: DomainCapability(True, True, ("powercap:x",))},
            CounterCharacterization(resolution, latency, True),
        )
        report = check_requirements(prof)
        assert (report["R2"].status, report["R3"].status) == (r2, r3)

    def test_all_granular(self):
        full = DomainCapability(True, True, ("s",))
        prof = CapabilityProfile({d: full for d in CapDomain}, CounterCharacterization())
        assert check_requirements(prof)["R4"].status is CheckStatus.PASS

    def test_counter_without_cumulative_rejected(self):
        with pytest.raises(ValueError):
            CapabilityProfile({CapDomain.GPU: DomainCapability(False, True)}, CounterCharacterization())

    def test_unknown_check(self, audit_of):
        with pytest.raises(KeyError):
            grade_of(audit_of("gx10"))["R9"]

    @pytest.mark.parametrize("name", list(TABLE) + ["empty"])
    def test_round_trip(self, audit_of, name):
        report = grade_of(audit_of(name))
        assert RequirementReport.from_dict(report.to_dict()) == report


class TestDerive:
    def test_unreadable_energy_uj_does_not_count(self):
        tree = make_tree(
            files={f"{POWERCAP}/intel-rapl:0/name": "package-0"},
            unreadable=[f"{POWERCAP}/intel-rapl:0/energy_uj"],
        )
        assert grade_of(audit_tree(tree)).grade is Grade.LIMITED

    def test_scmi_powercap_counts(self):
        tree = make_tree(files={
            f"{POWERCAP}/scmi:0/name": "cpu-cluster0",
            f"{POWERCAP}/scmi:0/energy_uj": "123",
        })
        assert grade_of(audit_tree(tree)).grade is Grade.MEASURED

    def test_plain_hwmon_power_is_instantaneous(self):
        tree = make_tree(files={
            f"{HWMON}/hwmon0/name": "somechip",
            f"{HWMON}/hwmon0/power1_input": "5000000",
            f"{HWMON}/hwmon0/power1_label": "cpu",
        })
        prof = derive_capabilities(audit_tree(tree))
        assert prof[CapDomain.CPU].mark() == "✓*"
        assert check_requirements(prof).grade is Grade.LIMITED

    def test_hwmon_energy_counts(self):
        tree = make_tree(files={
            f"{HWMON}/hwmon0/name": "amd_energy",
            f"{HWMON}/hwmon0/energy1_input": "5000000",
        })
        assert grade_of(audit_tree(tree)).grade is Grade.MEASURED

    def test_counter_chars_carried(self, audit_of):
        chars = CounterCharacterization(resolution_mj=0.061, read_latency_ms=0.01)
        prof = derive_capabilities(audit_of("x86_rapl"), chars)
        assert prof.counter == CounterCharacterization(0.061, 0.01, True)
        report = check_requirements(prof)
        assert report["R2"].status is CheckStatus.PASS and report["R3"].status is CheckStatus.PASS


# capability-adding pieces of sysfs; any subset forms a valid tree
PIECES = {
    "rapl_pkg": {f"{POWERCAP}/intel-rapl:0/name": "package-0", f"{POWERCAP}/intel-rapl:0/energy_uj": "1"},
    "rapl_dram": {f"{POWERCAP}/intel-rapl:1/name": "dram", f"{POWERCAP}/intel-rapl:1/energy_uj": "1"},
    "hwmon_gpu_power": {f"{HWMON}/hwmon0/name": "x", f"{HWMON}/hwmon0/power1_input": "1",
                        f"{HWMON}/hwmon0/power1_label": "gpu"},
    "ina_cpu": {f"{HWMON}/hwmon1/name": "ina3221", f"{HWMON}/hwmon1/power1_input": "1",
                f"{HWMON}/hwmon1/in1_label": "VDD_CPU"},
    "temp": {f"{HWMON}/hwmon2/name": "acpitz", f"{HWMON}/hwmon2/temp1_input": "40000"},
    "battery": {"/sys/class/power_supply/BAT0/type": "Battery"},
}
RANK = {Grade.LIMITED: 0, Grade.MEASURED: 1}


def tree_of(keys):
    files = {}
    for k in keys:
        files.update(PIECES[k])
    return make_tree(files=files)


class TestMonotonicity:
    @given(st.sets(st.sampled_from(sorted(PIECES))), st.sets(st.sampled_from(sorted(PIECES))))
    def test_adding_interfaces_never_lowers_grade(self, base, extra):
        small = grade_of(audit_tree(tree_of(base)))
        big = grade_of(audit_tree(tree_of(base | extra)))
        assert RANK[big.grade] >= RANK[small.grade]
        for dom in CapDomain:
            assert big.profile[dom].cumulative_energy >= small.profile[dom].cumulative_energy

    @given(st.sets(st.sampled_from(sorted(PIECES))))
    def test_deterministic(self, keys):
        assert grade_of(audit_tree(tree_of(keys))) == grade_of(audit_tree(tree_of(keys)))

    def test_cpu_counter_is_decisive(self):
        for keys in itertools.chain.from_iterable(
            itertools.combinations(sorted(PIECES), n) for n in range(len(PIECES) + 1)
        ):
            report = grade_of(audit_tree(tree_of(keys)))
            has_cpu = "rapl_pkg" in keys or "ina_cpu" in keys
            assert report.grade is (Grade.MEASURED if has_cpu else Grade.LIMITED), keys


class TestReadLatency:
    def test_fake_clock(self):
        ticks = itertools.count(step=250_000)  # every call advances 0.25 ms
        assert measure_read_latency(lambda: None, clock=lambda: next(ticks)) == pytest.approx(0.25)

    def test_minimum_reads(self):
        with pytest.raises(ValueError):
            measure_read_latency(lambda: None, reads=99)

    def test_counts_calls(self):
        calls = []
        measure_read_latency(lambda: calls.append(1), reads=150)
        assert len(calls) == 150
