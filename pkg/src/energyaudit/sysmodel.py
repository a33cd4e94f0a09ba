"""Virtual snapshots of the filesystem paths the probes inspect.

A :class:`SystemTree` maps absolute paths to entries. It can be captured
from the live system (:func:`live_tree`) or loaded from a fixture directory
that mirrors ``/sys``, ``/dev`` and ``/proc`` (:func:`load_system_tree`),
so the same probe code runs against both.

Fixture conventions:

* a file ``<name>.devnode`` stands in for the device node ``<name>``;
* a file ``<name>.unreadable`` records ``<name>`` as present but unreadable;
* files named ``.keep`` are ignored (they keep empty directories in git).
"""

from __future__ import annotations

import enum
import fnmatch
import glob
import os
import posixpath
import sys
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .errors import LoadError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

DEVNODE_SUFFIX = ".devnode"
UNREADABLE_SUFFIX = ".unreadable"
PLACEHOLDER_NAME = ".keep"

# sysfs attributes are tiny; anything longer is truncated on live capture
_MAX_READ = 4096


class EntryKind(enum.Enum):
    FILE = "file"
    DIRECTORY = "directory"
    DEVICE = "device"
    UNREADABLE = "unreadable"


@dataclass(frozen=True)
class Entry:
    kind: EntryKind
    content: str | None = None


DIRECTORY = Entry(EntryKind.DIRECTORY)
DEVICE = Entry(EntryKind.DEVICE)
UNREADABLE = Entry(EntryKind.UNREADABLE)


def _norm(path: str) -> str:
    path = posixpath.normpath("/" + path.lstrip("/"))
    return path


class SystemTree(Mapping[str, Entry]):
    """Immutable mapping of absolute path to :class:`Entry`.

    Missing paths are simply absent. Parent directories of every entry are
    implied and added automatically.
    """

    def __init__(self, entries: Mapping[str, Entry] | Iterable[tuple[str, Entry]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        data: dict[str, Entry] = {}
        for path, entry in items:
            path = _norm(path)
            if path in data and data[path] != entry and data[path] is not DIRECTORY:
                raise ValueError(f"conflicting entries for {path}")
            data[path] = entry
            parent = posixpath.dirname(path)
            while parent != "/" and parent not in data:
                data[parent] = DIRECTORY
                parent = posixpath.dirname(parent)
        self._entries = dict(sorted(data.items()))
        children: dict[str, list[str]] = {}
        for path in self._entries:
            if path == "/":
                continue
            children.setdefault(posixpath.dirname(path), []).append(posixpath.basename(path))
        self._children = {k: tuple(sorted(v)) for k, v in children.items()}

    def __getitem__(self, path: str) -> Entry:
        return self._entries[_norm(path)]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"SystemTree({len(self)} entries)"

    def __eq__(self, other):
        if isinstance(other, SystemTree):
            return self._entries == other._entries
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self._entries.items()))

    def exists(self, path: str) -> bool:
        return _norm(path) in self._entries

    def kind(self, path: str) -> EntryKind | None:
        entry = self._entries.get(_norm(path))
        return entry.kind if entry else None

    def is_dir(self, path: str) -> bool:
        # the root is always a directory, even in an empty tree
        return _norm(path) == "/" or self.kind(path) is EntryKind.DIRECTORY

    def children(self, path: str) -> tuple[str, ...]:
        """Sorted child names of ``path`` (empty if absent or not a directory)."""
        return self._children.get(_norm(path), ())

    def read(self, path: str) -> str | None:
        """Content of a readable file, else None."""
        entry = self._entries.get(_norm(path))
        if entry is None or entry.kind is not EntryKind.FILE:
            return None
        return entry.content

    def read_value(self, path: str) -> str | None:
        text = self.read(path)
        return text.strip() if text is not None else None

    def glob(self, pattern: str) -> list[str]:
        """Paths matching a shell-style pattern, one path component per segment."""
        parts = _norm(pattern).strip("/").split("/")
        found = ["/"]
        for part in parts:
            nxt = []
            for base in found:
                for name in self.children(base):
                    if fnmatch.fnmatchcase(name, part):
                        nxt.append(posixpath.join(base, name))
            found = nxt
        return sorted(found)

    def merged(self, other: "SystemTree") -> "SystemTree":
        """Union of two trees; entries of ``other`` win on conflict."""
        return SystemTree({**self._entries, **other._entries})


@dataclass(frozen=True)
class FixtureManifest:
    platform_name: str
    description: str
    provenance: str


def load_system_tree(root: str | os.PathLike) -> SystemTree:
    """Load a directory tree as a :class:`SystemTree` rooted at ``/``.

    Symbolic links are resolved at load time; a link cycle is recorded once.
    """
    root = os.fspath(root)
    if not os.path.exists(root):
        raise LoadError(f"snapshot root does not exist: {root}")
    if not os.path.isdir(root):
        raise LoadError(f"snapshot root is not a directory: {root}")
    if not os.access(root, os.R_OK | os.X_OK):
        raise LoadError(f"snapshot root is not readable: {root}")

    entries: list[tuple[str, Entry]] = []

    def walk(real_dir: str, virt_dir: str, ancestors: frozenset = frozenset()) -> None:
        real = os.path.realpath(real_dir)
        if real in ancestors:
            return
        ancestors = ancestors | {real}
        try:
            names = sorted(os.listdir(real_dir))
        except PermissionError:
            entries.append((virt_dir, UNREADABLE))
            return
        for name in names:
            if name == PLACEHOLDER_NAME:
                continue
            src = os.path.join(real_dir, name)
            if name.endswith(DEVNODE_SUFFIX):
                entries.append((posixpath.join(virt_dir, name[: -len(DEVNODE_SUFFIX)]), DEVICE))
                continue
            if name.endswith(UNREADABLE_SUFFIX):
                entries.append((posixpath.join(virt_dir, name[: -len(UNREADABLE_SUFFIX)]), UNREADABLE))
                continue
            virt = posixpath.join(virt_dir, name)
            if os.path.isdir(src):
                entries.append((virt, DIRECTORY))
                walk(src, virt, ancestors)
            elif os.path.isfile(src):
                try:
                    with open(src, encoding="utf-8") as fh:
                        entries.append((virt, Entry(EntryKind.FILE, fh.read())))
                except PermissionError:
                    entries.append((virt, UNREADABLE))
            elif os.path.lexists(src) and not os.path.exists(src):
                continue  # dangling symlink
            else:
                entries.append((virt, DEVICE))

    walk(root, "/")
    return SystemTree(entries)


def load_manifest(path: str | os.PathLike) -> FixtureManifest:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise LoadError(f"fixture manifest not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise LoadError(f"malformed fixture manifest {path}: {exc}") from exc
    try:
        return FixtureManifest(
            platform_name=str(data["platform_name"]),
            description=str(data.get("description", "")),
            provenance=str(data["provenance"]),
        )
    except KeyError as exc:
        raise LoadError(f"fixture manifest {path} lacks field {exc}") from exc


# Path families captured by live_tree(). Depth counts levels below each root.
LIVE_FAMILIES: tuple[tuple[str, int], ...] = (
    ("/sys/class/powercap", 3),
    ("/sys/bus/scmi_protocol", 2),
    ("/sys/class/hwmon", 2),
    ("/sys/class/power_supply", 2),
    ("/sys/class/i2c-dev", 1),
    ("/sys/bus/i2c/devices", 1),
    ("/dev/ipmi0", 0),
    ("/dev/ipmi", 1),
    ("/dev/ipmidev", 1),
)


def _capture(path: str, depth: int, out: list[tuple[str, Entry]]) -> None:
    if not os.path.lexists(path):
        return
    if os.path.isdir(path):
        out.append((path, DIRECTORY))
        if depth <= 0:
            return
        try:
            names = sorted(os.listdir(path))
        except OSError:
            out[-1] = (path, UNREADABLE)
            return
        for name in names:
            _capture(os.path.join(path, name), depth - 1, out)
    elif os.path.isfile(path):
        try:
            with open(path, encoding="utf-8", errors="replace") as fh:
                out.append((path, Entry(EntryKind.FILE, fh.read(_MAX_READ))))
        except OSError:
            out.append((path, UNREADABLE))
    elif os.path.exists(path):
        out.append((path, DEVICE))


def live_tree(families: Iterable[tuple[str, int]] = LIVE_FAMILIES) -> SystemTree:
    """Eagerly snapshot the live path families the probes inspect.

    The snapshot is taken once, so every probe in an audit sees the same
    state. Missing paths are simply absent from the tree.
    """
    out: list[tuple[str, Entry]] = []
    for root, depth in families:
        _capture(root, depth, out)
    for dev in sorted(glob.glob("/dev/i2c-*")):
        _capture(dev, 0, out)
    return SystemTree(out)


def live_proc_tree(pids: Iterable[int]) -> SystemTree:
    """Snapshot ``/proc/stat`` and ``/proc/<pid>/stat`` for the given pids."""
    out: list[tuple[str, Entry]] = []
    _capture("/proc/stat", 0, out)
    for pid in pids:
        _capture(f"/proc/{int(pid)}/stat", 0, out)
    return SystemTree(out)
