"""Installed-package database and prefix integrity checks.

The database is one JSON document at ``<prefix>/var/pkgdb.json`` guarded by an
advisory lock file. Every mutation re-reads the document under the lock,
applies the change, and atomically rewrites it, so a completed mutation is
durable and concurrent writers cannot interleave.
"""

from __future__ import annotations

import errno
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import (
    AlreadyInstalledError,
    ComponentClashError,
    DependedUponError,
    NotInstalledError,
    ParseError,
)
from .manifest import Diagnostic, ERROR, parse_manifest
from .version import VersionTag

DEFAULT_BASE_COMPONENTS = ("Core", "RIO", "Cling")
DB_RELPATH = Path("var/pkgdb.json")
DB_LOCK_RELPATH = Path("var/pkgdb.lock")
MANAGED_DIRS = ("lib", "include", "share/manifests")
MANIFEST_DIR = Path("share/manifests")


@dataclass
class InstalledPackage:
    """One database record: what was installed and which files it owns."""

    name: str
    version: VersionTag
    manifest_digest: str
    file_list: list[str]
    provided_components: list[str]
    installed_at: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": str(self.version),
            "manifest_digest": self.manifest_digest,
            "file_list": list(self.file_list),
            "provided_components": list(self.provided_components),
            "installed_at": self.installed_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> InstalledPackage:
        return cls(
            name=str(data["name"]),
            version=VersionTag.parse(data["version"]),
            manifest_digest=str(data.get("manifest_digest", "")),
            file_list=[str(f) for f in data.get("file_list", [])],
            provided_components=[str(c) for c in data.get("provided_components", [])],
            installed_at=str(data.get("installed_at", "")),
        )


@dataclass
class PackageDatabase:
    """In-memory view of one prefix's database."""

    prefix: Path
    records: dict[str, InstalledPackage] = field(default_factory=dict)
    component_map: dict[str, str] = field(default_factory=dict)
    base_set: list[str] = field(default_factory=lambda: list(DEFAULT_BASE_COMPONENTS))


@dataclass
class EnvironmentReport:
    """What a prefix provides versus the expected base component set."""

    prefix: Path
    base_present: list[str]
    base_missing: list[str]
    found_manifests: list[Path]
    db_ok: bool


class FileLock:
    """Advisory lock via O_EXCL creation of a lock file."""

    def __init__(self, path: Path, timeout: float = 10.0, poll: float = 0.05):
        self.path = Path(path)
        self.timeout = timeout
        self.poll = poll
        self._fd: int | None = None

    def __enter__(self) -> FileLock:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(self._fd, str(os.getpid()).encode())
                return self
            except OSError as exc:
                if exc.errno != errno.EEXIST:
                    raise
                if time.monotonic() >= deadline:
                    raise TimeoutError(f"could not acquire lock {self.path}") from exc
                time.sleep(self.poll)

    def __exit__(self, *exc_info: object) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self.path.unlink(missing_ok=True)


def now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


# ---------------------------------------------------------------------------
# persistence


def _db_path(prefix: Path) -> Path:
    return Path(prefix) / DB_RELPATH


def _load(prefix: Path, base_set: list[str] | None = None) -> PackageDatabase:
    prefix = Path(prefix)
    path = _db_path(prefix)
    db = PackageDatabase(prefix=prefix, base_set=list(base_set or DEFAULT_BASE_COMPONENTS))
    if not path.exists():
        return db
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ParseError(f"corrupt package database {path}: {exc}") from exc
    db.records = {name: InstalledPackage.from_dict(rec) for name, rec in data.get("records", {}).items()}
    db.component_map = {str(c): str(p) for c, p in data.get("component_map", {}).items()}
    if data.get("base_set"):
        db.base_set = [str(c) for c in data["base_set"]]
    return db


def _write(db: PackageDatabase) -> None:
    path = _db_path(db.prefix)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "base_set": list(db.base_set),
        "component_map": dict(sorted(db.component_map.items())),
        "records": {name: db.records[name].to_dict() for name in sorted(db.records)},
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix="pkgdb.")
    try:
        with open(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        Path(tmp).replace(path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def open_db(prefix: Path | str, base_set: list[str] | None = None) -> PackageDatabase:
    """Load the database for a prefix; a missing file is an empty database."""
    return _load(Path(prefix), base_set)


# ---------------------------------------------------------------------------
# mutations


def _validate_record(rec: InstalledPackage) -> None:
    if not rec.name:
        raise ValueError("record needs a package name")
    if not rec.file_list:
        raise ValueError(f"record for '{rec.name}' has an empty file_list")
    if not rec.provided_components:
        raise ValueError(f"record for '{rec.name}' provides no components")
    if rec.file_list != sorted(rec.file_list):
        raise ValueError(f"record for '{rec.name}' has an unsorted file_list")


def register(db: PackageDatabase, rec: InstalledPackage) -> None:
    """Add a record, enforcing one record per name and one provider per component."""
    _validate_record(rec)
    with FileLock(db.prefix / DB_LOCK_RELPATH):
        disk = _load(db.prefix, db.base_set)
        if rec.name in disk.records:
            raise AlreadyInstalledError(f"package already installed: {rec.name}")
        for comp in rec.provided_components:
            owner = disk.component_map.get(comp)
            if owner is not None and owner != rec.name:
                raise ComponentClashError(f"component '{comp}' is already provided by '{owner}'")
        disk.records[rec.name] = rec
        for comp in rec.provided_components:
            disk.component_map[comp] = rec.name
        _write(disk)
        db.records = disk.records
        db.component_map = disk.component_map


def dependents_of(db: PackageDatabase, name: str) -> list[str]:
    """Installed packages whose stored manifests depend on `name` or a component it provides."""
    target = db.records.get(name)
    if target is None:
        return []
    provided = set(target.provided_components) | {target.name}
    out = []
    for other_name in sorted(db.records):
        if other_name == name:
            continue
        manifest_path = db.prefix / MANIFEST_DIR / f"{other_name}.yml"
        if not manifest_path.is_file():
            continue
        try:
            m = parse_manifest(manifest_path.read_text(encoding="utf-8"))
        except Exception:  # unreadable stored manifest; integrity check reports it
            continue
        local = m.local_module_names()
        needed = {dep.name for mod in m.modules for dep in mod.dependencies} - local
        needed |= {mod.name for mod in m.modules if mod.is_external}
        if needed & provided:
            out.append(other_name)
    return out


def remove_record(db: PackageDatabase, name: str) -> None:
    """Drop a record unless another installed package still depends on it."""
    with FileLock(db.prefix / DB_LOCK_RELPATH):
        disk = _load(db.prefix, db.base_set)
        if name not in disk.records:
            raise NotInstalledError(f"package not installed: {name}")
        dependents = dependents_of(disk, name)
        if dependents:
            raise DependedUponError(name, dependents)
        del disk.records[name]
        disk.component_map = {c: p for c, p in disk.component_map.items() if p != name}
        _write(disk)
        db.records = disk.records
        db.component_map = disk.component_map


# ---------------------------------------------------------------------------
# queries


def query(db: PackageDatabase, name: str) -> InstalledPackage | None:
    return db.records.get(name)


def list_installed(db: PackageDatabase) -> list[InstalledPackage]:
    """All records, sorted case-sensitively by name."""
    return [db.records[name] for name in sorted(db.records)]


def check_integrity(db: PackageDatabase, prefix: Path | str | None = None) -> list[Diagnostic]:
    """Missing owned files, dangling component entries, and orphan files."""
    prefix = Path(prefix) if prefix is not None else db.prefix
    diags: list[Diagnostic] = []
    for name in sorted(db.records):
        for rel in db.records[name].file_list:
            if not (prefix / rel).exists():
                diags.append(Diagnostic(ERROR, f"missing file: {rel}", f"package {name}"))
    for comp in sorted(db.component_map):
        owner = db.component_map[comp]
        if owner not in db.records:
            diags.append(Diagnostic(ERROR, f"dangling component: {comp} → {owner}", "component_map"))
    owned = {rel for rec in db.records.values() for rel in rec.file_list}
    for managed in MANAGED_DIRS:
        root = prefix / managed
        if not root.is_dir():
            continue
        for path in sorted(root.rglob("*")):
            if path.is_file():
                rel = path.relative_to(prefix).as_posix()
                if rel not in owned:
                    diags.append(Diagnostic(ERROR, f"orphan file: {rel}", managed))
    return diags


def analyze_environment(
    prefix: Path | str, workdir: Path | str | None = None, base_set: list[str] | None = None
) -> EnvironmentReport:
    """Compare a prefix against the base component set and scan for manifests.

    ``base_missing`` preserves the base-set order, so an empty prefix reports
    the full base set verbatim. ``found_manifests`` lists package.yml files
    under the working directory (default: the current one).
    """
    prefix = Path(prefix)
    if prefix.exists() and not prefix.is_dir():
        raise NotADirectoryError(f"prefix is not a directory: {prefix}")
    db = open_db(prefix, base_set)
    present = [c for c in db.base_set if c in db.component_map]
    missing = [c for c in db.base_set if c not in db.component_map]
    workdir = Path(workdir) if workdir is not None else Path.cwd()
    found = sorted(workdir.rglob("package.yml")) if workdir.is_dir() else []
    db_ok = not any(d.severity == ERROR for d in check_integrity(db, prefix))
    return EnvironmentReport(prefix, present, missing, found, db_ok)
