"""Command-line front end.

Global flags follow each subcommand (``pkgforge install P --prefix ...``).
Configuration precedence: flags, then PKGFORGE_* environment variables, then
the config file, then built-in defaults under ``~/.pkgforge``. With
``--machine`` each command prints exactly one JSON document on stdout; human
progress and diagnostics always go to stderr.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import os
import sys
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import lifecycle, resolver, store
from .errors import (
    AlreadyInstalledError,
    BuildFailedError,
    ComponentClashError,
    ConfigError,
    CorruptArchiveError,
    CyclicGraphError,
    DependedUponError,
    DigestMismatchError,
    DuplicateVersionError,
    EmptyRequestError,
    InstallError,
    LockfileConflictError,
    MissingArtifactError,
    MissingRecipeError,
    NetworkError,
    NotInstalledError,
    NoVersionMatchesError,
    PackageNotFoundError,
    ParseError,
    PkgforgeError,
    SchemaError,
    TestsFailedError,
    UnsafePathError,
    VersionConflictError,
)
from .manifest import ComponentDescriptor, DependencyRef, Manifest, generate_manifest, load_manifest, serialize, validate
from .index import PackageIndex, load_index, parse_index

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RESOLUTION = 2
EXIT_NETWORK = 3
EXIT_BUILD = 4
EXIT_INSTALL = 5
EXIT_INTEGRITY = 6

# ordered: first matching class wins
_EXIT_TABLE: tuple[tuple[type, int], ...] = (
    (ConfigError, EXIT_USAGE),
    (EmptyRequestError, EXIT_USAGE),
    (VersionConflictError, EXIT_RESOLUTION),
    (CyclicGraphError, EXIT_RESOLUTION),
    (LockfileConflictError, EXIT_RESOLUTION),
    (PackageNotFoundError, EXIT_RESOLUTION),
    (NoVersionMatchesError, EXIT_RESOLUTION),
    (ParseError, EXIT_RESOLUTION),
    (SchemaError, EXIT_RESOLUTION),
    (DuplicateVersionError, EXIT_RESOLUTION),
    (DigestMismatchError, EXIT_NETWORK),
    (NetworkError, EXIT_NETWORK),
    (CorruptArchiveError, EXIT_NETWORK),
    (UnsafePathError, EXIT_NETWORK),
    (MissingRecipeError, EXIT_BUILD),
    (BuildFailedError, EXIT_BUILD),
    (MissingArtifactError, EXIT_BUILD),
    (TestsFailedError, EXIT_BUILD),
    (InstallError, EXIT_INSTALL),
    (AlreadyInstalledError, EXIT_INSTALL),
    (NotInstalledError, EXIT_INSTALL),
    (ComponentClashError, EXIT_INSTALL),
    (DependedUponError, EXIT_INSTALL),
    (TimeoutError, EXIT_INSTALL),
    (OSError, EXIT_INSTALL),
)


def exit_code_for(err: BaseException) -> int:
    for klass, code in _EXIT_TABLE:
        if isinstance(err, klass):
            return code
    return EXIT_USAGE


@dataclass
class CliConfig:
    prefix: Path
    cache_dir: Path
    index_path: str  # filesystem path or URL
    workdir: Path
    jobs: int
    machine_output: bool


def _default_home() -> Path:
    return Path(os.environ.get("PKGFORGE_HOME", Path.home() / ".pkgforge"))


def _read_config_file(path: Path) -> dict:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return data


def build_config(args: argparse.Namespace) -> CliConfig:
    home = _default_home()
    file_values: dict = {}
    explicit = getattr(args, "config", None) or os.environ.get("PKGFORGE_CONFIG")
    if explicit:
        file_values = _read_config_file(Path(explicit))
    elif (home / "config.yml").is_file():
        file_values = _read_config_file(home / "config.yml")

    def pick(flag_value, env_name: str, file_key: str, default):
        if flag_value is not None:
            return flag_value
        env = os.environ.get(env_name)
        if env:
            return env
        if file_values.get(file_key) is not None:
            return file_values[file_key]
        return default

    prefix = pick(getattr(args, "prefix", None), "PKGFORGE_PREFIX", "prefix", home / "prefix")
    cache = pick(getattr(args, "cache", None), "PKGFORGE_CACHE", "cache", home / "cache")
    index = pick(getattr(args, "index", None), "PKGFORGE_INDEX", "index", home / "index.yml")
    workdir = pick(getattr(args, "workdir", None), "PKGFORGE_WORKDIR", "workdir", home / "work")
    jobs_raw = pick(getattr(args, "jobs", None), "PKGFORGE_JOBS", "jobs", 1)
    try:
        jobs = int(jobs_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"jobs must be an integer, got {jobs_raw!r}") from exc
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")

    index_str = str(index)
    if "://" not in index_str:
        index_str = str(Path(index_str).expanduser().resolve())
    return CliConfig(
        prefix=Path(prefix).expanduser().resolve(),
        cache_dir=Path(cache).expanduser().resolve(),
        index_path=index_str,
        workdir=Path(workdir).expanduser().resolve(),
        jobs=jobs,
        machine_output=bool(getattr(args, "machine", False)),
    )


def _load_index(cfg: CliConfig) -> PackageIndex:
    if "://" in cfg.index_path:
        try:
            with urllib.request.urlopen(cfg.index_path, timeout=60) as resp:
                return parse_index(resp.read().decode("utf-8"))
        except OSError as exc:
            raise NetworkError(f"cannot fetch index {cfg.index_path}: {exc}") from exc
    path = Path(cfg.index_path)
    if not path.is_file():
        raise ConfigError(f"index not found: {path} (set --index or PKGFORGE_INDEX)")
    return load_index(path)


def _emit(cfg: CliConfig, document: dict, human_lines: list[str]) -> None:
    if cfg.machine_output:
        print(json.dumps(document, sort_keys=True, indent=2))
    else:
        for line in human_lines:
            print(line)


def _say(cfg: CliConfig):
    def inner(message: str) -> None:
        print(message, file=sys.stderr)

    return inner


# ---------------------------------------------------------------------------
# request interpretation


def _looks_like_path(name: str) -> bool:
    return name in (".", "..") or "/" in name or name.endswith((".yml", ".yaml")) or Path(name).exists()


def _split_request(names: list[str]) -> tuple[list[str], list[tuple[Manifest, Path]]]:
    """Separate index package names from local manifest roots."""
    requests: list[str] = []
    roots: list[tuple[Manifest, Path]] = []
    for name in names:
        if not _looks_like_path(name):
            requests.append(name)
            continue
        path = Path(name)
        manifest_path = path / "package.yml" if path.is_dir() else path
        if not manifest_path.is_file():
            raise ConfigError(f"no manifest at {manifest_path}")
        roots.append((load_manifest(manifest_path), manifest_path.parent))
    return requests, roots


def _find_lock(args: argparse.Namespace, roots: list[tuple[Manifest, Path]]) -> resolver.Lockfile | None:
    explicit = getattr(args, "lock", None)
    if explicit:
        return resolver.read_lock(Path(explicit).read_text(encoding="utf-8"))
    for _manifest, root_dir in roots:
        candidate = root_dir / "package.lock"
        if candidate.is_file():
            return resolver.read_lock(candidate.read_text(encoding="utf-8"))
    return None


def _dry_run_plan(cfg: CliConfig, args: argparse.Namespace) -> resolver.ResolutionPlan:
    """Resolve without touching prefix, cache, or workdir."""
    requests, roots = _split_request(list(args.names))
    idx = _load_index(cfg)
    db = store.open_db(cfg.prefix)
    provider = lifecycle.SourceProvider(idx, cfg.cache_dir, cfg.workdir / "staging", allow_fetch=False)
    return resolver.resolve(
        requests or None,
        idx,
        db,
        roots=[m for m, _ in roots],
        lockfile=_find_lock(args, roots),
        manifest_provider=provider.manifest_for,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_install(cfg: CliConfig, args: argparse.Namespace) -> int:
    if args.dry_run:
        plan = _dry_run_plan(cfg, args)
        _emit(cfg, plan.to_dict(), [plan.render().rstrip("\n")])
        return EXIT_OK
    requests, roots = _split_request(list(args.names))
    idx = _load_index(cfg)
    db = store.open_db(cfg.prefix)
    installed, plan = lifecycle.install_packages(
        requests or None,
        idx,
        db,
        cfg.prefix,
        cache_dir=cfg.cache_dir,
        workdir=cfg.workdir,
        roots=roots,
        lockfile=_find_lock(args, roots),
        jobs=cfg.jobs,
        require_tests=bool(args.require_tests),
        progress=_say(cfg),
    )
    document = {
        "installed": [{"name": p.name, "version": str(p.version)} for p in installed],
        "already_installed": [{"name": p.name, "version": str(p.version)} for p in plan.already_installed],
    }
    lines = [f"installed {len(installed)} package(s)"]
    lines.extend(f"  {p.name} {p.version}" for p in installed)
    if plan.already_installed:
        lines.append(f"already installed: {', '.join(p.display() for p in plan.already_installed)}")
    _emit(cfg, document, lines)
    return EXIT_OK


def cmd_resolve(cfg: CliConfig, args: argparse.Namespace) -> int:
    plan = _dry_run_plan(cfg, args)
    _emit(cfg, plan.to_dict(), [plan.render().rstrip("\n")])
    return EXIT_OK


def cmd_lock(cfg: CliConfig, args: argparse.Namespace) -> int:
    requests, roots = _split_request(list(args.names))
    idx = _load_index(cfg)
    db = store.open_db(cfg.prefix)
    provider = lifecycle.SourceProvider(idx, cfg.cache_dir, cfg.workdir / "staging", allow_fetch=True)
    plan = resolver.resolve(
        requests or None, idx, db, roots=[m for m, _ in roots], manifest_provider=provider.manifest_for
    )
    lock = resolver.write_lock(plan, idx)
    if args.output:
        out_path = Path(args.output)
    elif roots:
        out_path = roots[0][1] / "package.lock"
    else:
        out_path = Path.cwd() / "package.lock"
    out_path.write_text(resolver.lock_to_document(lock), encoding="utf-8")
    document = {
        "written": str(out_path),
        "entries": [
            {"name": e.name, "version": str(e.version), "url": e.url, "digest": e.digest or "unverified"}
            for e in lock.entries
        ],
    }
    _emit(cfg, document, [f"wrote {out_path} ({len(lock.entries)} pinned package(s))"])
    return EXIT_OK


def cmd_remove(cfg: CliConfig, args: argparse.Namespace) -> int:
    db = store.open_db(cfg.prefix)
    removed = lifecycle.uninstall(args.name, db, cfg.prefix)
    _emit(
        cfg,
        {"removed": args.name, "files_removed": removed},
        [f"removed {args.name} ({removed} file(s))"],
    )
    return EXIT_OK


def cmd_list(cfg: CliConfig, args: argparse.Namespace) -> int:
    db = store.open_db(cfg.prefix)
    records = store.list_installed(db)
    document = {
        "packages": [
            {"name": r.name, "version": str(r.version), "components": list(r.provided_components)}
            for r in records
        ]
    }
    lines = [f"{r.name} {r.version}" for r in records] or ["(nothing installed)"]
    _emit(cfg, document, lines)
    return EXIT_OK


def cmd_search(cfg: CliConfig, args: argparse.Namespace) -> int:
    idx = _load_index(cfg)
    pattern = args.pattern
    if any(ch in pattern for ch in "*?["):
        matches = [n for n in idx.names() if fnmatch.fnmatch(n, pattern)]
    else:
        matches = [n for n in idx.names() if pattern.lower() in n.lower()]
    document = {"matches": {n: [str(v) for v in idx.versions(n)] for n in matches}}
    lines = [f"{n} {' '.join(str(v) for v in idx.versions(n))}" for n in matches] or ["(no matches)"]
    _emit(cfg, document, lines)
    return EXIT_OK


def cmd_generate_manifest(cfg: CliConfig, args: argparse.Namespace) -> int:
    directory = Path(args.directory).expanduser().resolve()
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    name = args.name or directory.name

    def first_existing(*candidates: str) -> Path:
        for c in candidates:
            if (directory / c).is_dir():
                return directory / c
        return directory

    header_dir = directory / args.headers if args.headers else first_existing("inc", "include")
    source_dir = directory / args.sources if args.sources else first_existing("src", "source")
    descriptor = ComponentDescriptor(
        name=name,
        root_dir=directory,
        header_dir=header_dir,
        source_dir=source_dir,
        declared_deps=[DependencyRef.parse(d) for d in (args.dep or [])],
        test_targets=list(args.test or []),
    )
    manifest = generate_manifest(descriptor)
    out_path = Path(args.output) if args.output else directory / "package.yml"
    if out_path.exists() and not args.force:
        raise ConfigError(f"refusing to overwrite {out_path} (pass --force)")
    out_path.write_text(serialize(manifest), encoding="utf-8")
    module = manifest.modules[0]
    document = {
        "written": str(out_path),
        "package": manifest.name,
        "headers": len(module.public_headers),
        "sources": len(module.sources),
    }
    _emit(
        cfg,
        document,
        [f"wrote {out_path} ({len(module.public_headers)} header(s), {len(module.sources)} source(s))"],
    )
    return EXIT_OK


def cmd_verify(cfg: CliConfig, args: argparse.Namespace) -> int:
    db = store.open_db(cfg.prefix)
    findings = store.check_integrity(db, cfg.prefix)
    document = {
        "findings": [
            {"severity": d.severity, "message": d.message, "location": d.location} for d in findings
        ]
    }
    lines = [str(d) for d in findings] or ["ok: database and prefix are consistent"]
    _emit(cfg, document, lines)
    return EXIT_INTEGRITY if findings else EXIT_OK


def cmd_env(cfg: CliConfig, args: argparse.Namespace) -> int:
    report = store.analyze_environment(cfg.prefix, workdir=Path.cwd())
    exports = {
        "PKGFORGE_PREFIX": str(cfg.prefix),
        "PATH": f"{cfg.prefix}/bin:$PATH",
        "LD_LIBRARY_PATH": f"{cfg.prefix}/lib:$LD_LIBRARY_PATH",
        "CPATH": f"{cfg.prefix}/include:$CPATH",
    }
    if report.base_missing:
        print(f"missing base components: {', '.join(report.base_missing)}", file=sys.stderr)
    document = {
        "prefix": str(report.prefix),
        "base_present": list(report.base_present),
        "base_missing": list(report.base_missing),
        "manifests_found": [str(p) for p in report.found_manifests],
        "db_ok": report.db_ok,
        "exports": exports,
    }
    lines = [f'export {key}="{value}"' for key, value in exports.items()]
    _emit(cfg, document, lines)
    return EXIT_OK


def cmd_validate(cfg: CliConfig, args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "package.yml"
    manifest = load_manifest(manifest_path)
    idx = _load_index(cfg)
    diags = validate(manifest, idx)
    document = {
        "manifest": str(manifest_path),
        "diagnostics": [{"severity": d.severity, "message": d.message, "location": d.location} for d in diags],
        "warnings": list(manifest.warnings),
    }
    lines = [str(d) for d in diags] or [f"ok: {manifest_path} is valid"]
    _emit(cfg, document, lines)
    return EXIT_RESOLUTION if any(d.severity == "error" for d in diags) else EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    # keep exit class 2 reserved for resolution failures
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--prefix", help="installation prefix")
    common.add_argument("--index", help="package index file or URL")
    common.add_argument("--cache", help="archive cache directory")
    common.add_argument("--workdir", help="build working directory")
    common.add_argument("--jobs", type=int, help="build parallelism (default 1)")
    common.add_argument("--machine", action="store_true", help="print one JSON document on stdout")
    common.add_argument("--config", help="config file path")
    return common


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pkgforge", description="package and dependency manager")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    common = _global_flags()

    p = sub.add_parser("install", parents=[common], help="resolve, build, and install packages")
    p.add_argument("names", nargs="+", help="package names (name or name@x.y.z) or local manifest paths")
    p.add_argument("--require-tests", action="store_true", help="fail the install when package tests fail")
    p.add_argument("--dry-run", action="store_true", help="print the plan without installing")
    p.add_argument("--lock", help="lockfile to enforce (default: package.lock beside a local manifest)")
    p.set_defaults(func=cmd_install)

    p = sub.add_parser("remove", parents=[common], help="uninstall one package")
    p.add_argument("name")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("list", parents=[common], help="list installed packages")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("search", parents=[common], help="search the index by substring or glob")
    p.add_argument("pattern")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("resolve", parents=[common], help="print the install plan without side effects")
    p.add_argument("names", nargs="+")
    p.add_argument("--lock", help="lockfile to enforce")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("lock", parents=[common], help="resolve and write exact version pins")
    p.add_argument("names", nargs="+")
    p.add_argument("--output", help="lockfile path (default: package.lock beside the first local root)")
    p.set_defaults(func=cmd_lock)

    p = sub.add_parser("generate-manifest", parents=[common], help="write package.yml for a source directory")
    p.add_argument("directory")
    p.add_argument("--name", help="component name (default: directory name)")
    p.add_argument("--headers", help="header subdirectory (default: inc/ or include/ when present)")
    p.add_argument("--sources", help="source subdirectory (default: src/ or source/ when present)")
    p.add_argument("--dep", action="append", help="declared dependency (repeatable, name or name@x.y.z)")
    p.add_argument("--test", action="append", help="test target name (repeatable)")
    p.add_argument("--output", help="output path (default: <directory>/package.yml)")
    p.add_argument("--force", action="store_true", help="overwrite an existing manifest")
    p.set_defaults(func=cmd_generate_manifest)

    p = sub.add_parser("validate", parents=[common], help="validate a manifest against the index")
    p.add_argument("manifest", help="manifest file or directory containing package.yml")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("verify", parents=[common], help="check database/prefix integrity")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("env", parents=[common], help="print shell exports for the prefix")
    p.set_defaults(func=cmd_env)
    return parser


def _report_error(err: BaseException, machine: bool) -> None:
    detail = resolver.diagnose(err) if isinstance(err, PkgforgeError) else str(err)
    print(f"pkgforge: {detail}", file=sys.stderr)
    if machine:
        document = {
            "error": {
                "type": type(err).__name__,
                "message": str(err),
                "detail": detail,
                "exit_code": exit_code_for(err),
            }
        }
        print(json.dumps(document, sort_keys=True, indent=2))


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    machine = bool(getattr(args, "machine", False))
    try:
        cfg = build_config(args)
        machine = cfg.machine_output
        return int(args.func(cfg, args))
    except (PkgforgeError, OSError, TimeoutError) as err:
        _report_error(err, machine)
        return exit_code_for(err)


def console_entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entrypoint()
