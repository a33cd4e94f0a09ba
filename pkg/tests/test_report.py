import json
import os

import jsonschema
import pytest
from click.testing import CliRunner
from hypothesis import given, strategies as st

from energyaudit.attribution import AttributionWindow, IdleBaseline, ProcessShare, attribute_energy
from energyaudit.cli import cli
from energyaudit.grading import check_requirements, derive_capabilities
from energyaudit.probe import AUDITED_INTERFACES
from energyaudit.report import (
    NORMALIZED_TIMESTAMP,
    ReportBundle,
    dumps_json,
    emit_json,
    emit_markdown_audit,
    emit_markdown_grade,
    load_schema,
    normalize_timestamps,
    parse_json,
)

from conftest import FIXTURES, GOLDEN, PLATFORM_FIXTURES

ALL_FIXTURES = PLATFORM_FIXTURES + ["empty"]
# set to rewrite the golden files from current output, then review the diff
UPDATE = bool(os.environ.get("ENERGYAUDIT_UPDATE_GOLDEN"))


def bundle_of(audit):
    return ReportBundle(audit=audit, grade=check_requirements(derive_capabilities(audit)))


def cli_output(*args) -> str:
    result = CliRunner().invoke(cli, list(args))
    assert result.exit_code == 0, result.output
    return result.output


def check_golden(name: str, text: str):
    path = GOLDEN / name
    if UPDATE:
        path.parent.mkdir(exist_ok=True)
        path.write_text(text, encoding="utf-8")
    assert path.exists(), f"missing golden {name}; rerun with ENERGYAUDIT_UPDATE_GOLDEN=1"
    assert text == path.read_text(encoding="utf-8")


class TestGolden:
    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_audit_markdown(self, name):
        check_golden(f"{name}.audit.md", cli_output("audit", "--fixture", str(FIXTURES / name)))

    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_grade_markdown(self, name):
        check_golden(f"{name}.grade.md", cli_output("grade", "--fixture", str(FIXTURES / name)))

    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_audit_json(self, name):
        raw = cli_output("audit", "--fixture", str(FIXTURES / name), "--output", "json")
        text = dumps_json(normalize_timestamps(json.loads(raw))).decode("utf-8")
        check_golden(f"{name}.audit.json", text)


class TestJson:
    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_deterministic(self, audit_of, name):
        assert emit_json(bundle_of(audit_of(name))) == emit_json(bundle_of(audit_of(name)))

    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_round_trip(self, audit_of, name):
        bundle = bundle_of(audit_of(name))
        assert parse_json(emit_json(bundle)) == bundle

    @pytest.mark.parametrize("name", ALL_FIXTURES)
    def test_schema_valid(self, audit_of, name):
        jsonschema.validate(json.loads(emit_json(bundle_of(audit_of(name)))), load_schema())

    def test_schema_is_valid_draft(self):
        jsonschema.Draft202012Validator.check_schema(load_schema())

    def test_gx10_grade(self, gx10_audit):
        data = json.loads(emit_json(bundle_of(gx10_audit)))
        assert data["grade"]["grade"] == "LIMITED"
        assert "attribution" not in data and "bridge" not in data

    def test_schema_rejects_unknown_key(self, gx10_audit):
        data = json.loads(emit_json(bundle_of(gx10_audit)))
        data["surprise"] = 1
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(data, load_schema())

    def test_attribution_schema(self):
        rec = attribute_energy(
            AttributionWindow(0, 10**9, 3.0), IdleBaseline(1.0), [ProcessShare(42, 10, 0.5)]
        )
        data = json.loads(emit_json(ReportBundle(attribution=[rec])))
        jsonschema.validate(data, load_schema())
        assert parse_json(emit_json(ReportBundle(attribution=[rec]))).attribution == [rec]

    def test_format(self, gx10_audit):
        raw = emit_json(bundle_of(gx10_audit))
        assert raw.endswith(b"}\n")
        assert raw.decode("utf-8").splitlines()[1].startswith('  "')

    @pytest.mark.parametrize("value,text", [
        (0.1 + 0.2, "0.3"),
        (float("nan"), "null"),
        (float("inf"), "null"),
        (1 / 3, "0.333333333"),
        (12345678912.0, "12345678900.0"),
    ])
    def test_float_rendering(self, value, text):
        assert dumps_json({"v": value}) == f'{{\n  "v": {text}\n}}\n'.encode()

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_floats_stable(self, x):
        once = dumps_json({"v": x})
        assert dumps_json(json.loads(once)) == once

    def test_normalize_timestamps(self):
        nested = {"timestamp": "x", "a": [{"timestamp": "y", "b": 1}]}
        assert normalize_timestamps(nested) == {
            "timestamp": NORMALIZED_TIMESTAMP, "a": [{"timestamp": NORMALIZED_TIMESTAMP, "b": 1}]
        }

    def test_extra_preserved(self):
        bundle = ReportBundle(extra={"spbm": {"records": 3}})
        assert parse_json(emit_json(bundle)).extra == {"spbm": {"records": 3}}


class TestMarkdown:
    def test_gx10_rows(self, gx10_audit):
        text = emit_markdown_audit(gx10_audit)
        rows = [ln for ln in text.splitlines() if ln.startswith("| ") and not ln.startswith("| Interface")]
        assert len(rows) == 7
        gpu = rows[-1]
        assert "3.84 W" in gpu and "Only energy interface" in gpu and "| Present |" in gpu
        assert "scmi-clocks" in rows[0] and "No powercap. No sensor." in rows[0]
        assert "All 6 buses empty" in rows[2]
        assert rows[4].count("temp only") == 3

    def test_empty_all_absent(self, audit_of):
        text = emit_markdown_audit(audit_of("empty"))
        assert text.count("| Absent |") == len(AUDITED_INTERFACES) == 7

    def test_jetson_ina_addresses(self, audit_of):
        text = emit_markdown_audit(audit_of("jetson_orin"))
        ina = next(ln for ln in text.splitlines() if ln.startswith("| INA3221"))
        assert "0x40" in ina and "0x41" in ina and "0x42" in ina and "| Present |" in ina

    def test_grade_table(self, gx10_audit):
        report = check_requirements(derive_capabilities(gx10_audit))
        text = emit_markdown_grade(report, gx10_audit.platform)
        assert "| × | ✓* | × | × | × | LIMITED |" in text
        assert text.rstrip().endswith("Grade: **LIMITED**")

    def test_pipe_escaped(self, audit_of):
        # the PMU filter pattern contains pipes and must not split the row
        text = emit_markdown_audit(audit_of("gx10"))
        pmu = next(ln for ln in text.splitlines() if ln.startswith("| PMU"))
        assert pmu.count(" | ") == 3
