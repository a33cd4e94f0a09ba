from pathlib import Path

import pytest
from hypothesis import settings

from energyaudit.probe import load_audit_inputs
from energyaudit.sysmodel import DEVICE, DIRECTORY, UNREADABLE, Entry, EntryKind, SystemTree

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"
FIXED_TIMESTAMP = "2026-03-26T16:57:00+00:00"

PLATFORM_FIXTURES = ["x86_rapl", "jetson_orin", "gx10", "apple_m", "qualcomm_snapdragon"]


def file_entry(text: str) -> Entry:
    return Entry(EntryKind.FILE, text)


def make_tree(files=(), dirs=(), devices=(), unreadable=()) -> SystemTree:
    """Build a SystemTree from plain lists; ``files`` maps path -> content."""
    entries = [(p, file_entry(c)) for p, c in dict(files).items()]
    entries += [(p, DIRECTORY) for p in dirs]
    entries += [(p, DEVICE) for p in devices]
    entries += [(p, UNREADABLE) for p in unreadable]
    return SystemTree(entries)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def gx10_inputs():
    return load_audit_inputs(FIXTURES / "gx10")


@pytest.fixture
def gx10_audit(gx10_inputs):
    return gx10_inputs.audit(FIXED_TIMESTAMP)


@pytest.fixture
def audit_of():
    def run(name: str):
        return load_audit_inputs(FIXTURES / name).audit(FIXED_TIMESTAMP)
    return run


@pytest.fixture
def chdir_repo(monkeypatch):
    monkeypatch.chdir(REPO)
    return REPO


def write_tree(root: Path, files: dict[str, str]) -> Path:
    for rel, content in files.items():
        path = root / rel.lstrip("/")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
    return root


@pytest.fixture
def tree_dir(tmp_path):
    """Factory writing a directory tree under tmp_path."""
    def build(files: dict[str, str], name: str = "tree") -> Path:
        root = tmp_path / name
        root.mkdir(exist_ok=True)
        return write_tree(root, files)
    return build


# the wrap and conservation properties run long example loops
settings.register_profile("energyaudit", deadline=None)
settings.load_profile("energyaudit")


# --- acceptance reporting --------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _ACCEPTANCE[number] = ("PASS" if report.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
