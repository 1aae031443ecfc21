"""Build orchestration and transactional installation.

Each package builds inside its own sandbox ``<workdir>/build/<name>-<version>``
with ``src`` (a private copy of the source tree), ``build``, ``stage``, and
``logs`` subdirectories. Recipes come from the manifest's ``build:`` block
when present, otherwise from a table matching conventional build files.
Installation copies the staged tree into the prefix under a transaction that
rolls back completely on any failure, leaving prefix and database untouched.
"""

from __future__ import annotations

import os
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import (
    BuildFailedError,
    DependedUponError,
    InstallError,
    MissingArtifactError,
    MissingRecipeError,
    NotInstalledError,
    PackageNotFoundError,
    ParseError,
    PkgforgeError,
    TestsFailedError,
)
from .index import (
    FetchedArchive,
    IndexEntry,
    PackageIndex,
    archive_member_text,
    fetch,
    fetch_many,
    find_cached,
    lookup,
    sha256_file,
    unpack,
)
from .manifest import Manifest, ModuleSpec, parse_manifest, serialize
from .resolver import Lockfile, PackageRef, PackageSource, ResolutionPlan, resolve
from .store import InstalledPackage, PackageDatabase, dependents_of, now_iso, query, register, remove_record
from .version import ANY_VERSION

import hashlib


@dataclass(frozen=True)
class Command:
    """One build command; argv entries may use {src} {build} {stage} {jobs}."""

    argv: tuple[str, ...]
    workdir: str = "{build}"
    env: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class RecipeRule:
    """Maps a conventional build file to the commands that drive it."""

    match: str
    commands: tuple[tuple[str, ...], ...]


DEFAULT_RECIPES: tuple[RecipeRule, ...] = (
    RecipeRule("build.sh", (("sh", "{src}/build.sh"),)),
    RecipeRule(
        "configure",
        (("sh", "{src}/configure", "--prefix={stage}"), ("make", "-j{jobs}"), ("make", "install")),
    ),
    RecipeRule(
        "Makefile",
        (("make", "-C", "{src}", "-j{jobs}"), ("make", "-C", "{src}", "install", "PREFIX={stage}")),
    ),
    RecipeRule(
        "CMakeLists.txt",
        (
            ("cmake", "-S", "{src}", "-B", "{build}"),
            ("cmake", "--build", "{build}", "-j", "{jobs}"),
            ("cmake", "--install", "{build}", "--prefix", "{stage}"),
        ),
    ),
)


def load_recipe_table(path: Path | str) -> tuple[RecipeRule, ...]:
    """Read recipe rules from a YAML file; string commands run through sh -c."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed recipe table: {exc}") from exc
    rules = []
    for item in (data or {}).get("recipes", []):
        if not isinstance(item, dict) or "match" not in item or "commands" not in item:
            raise ParseError("recipe rules need 'match' and 'commands'")
        commands = []
        for cmd in item["commands"]:
            if isinstance(cmd, str):
                commands.append(("sh", "-c", cmd))
            else:
                commands.append(tuple(str(a) for a in cmd))
        rules.append(RecipeRule(str(item["match"]), tuple(commands)))
    return tuple(rules)


@dataclass
class BuildStep:
    """Everything needed to build one package in its sandbox."""

    package: PackageRef
    source_root: Path
    sandbox_root: Path
    commands: list[Command]
    test_commands: list[tuple[str, Command | None]] = field(default_factory=list)
    artifacts_spec: dict[str, str] = field(default_factory=dict)


@dataclass
class BuildPlan:
    steps: list[BuildStep] = field(default_factory=list)


@dataclass
class BuildResult:
    """Outcome of one executed step: the staged files ready to install."""

    package: PackageRef
    artifacts: dict[str, Path]  # install-relative destination -> staged file
    log_dir: Path
    stage_dir: Path
    exit_status: int = 0


@dataclass
class TestReport:
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    status: str = "skipped"  # passed | failed | skipped

    def __str__(self) -> str:
        return f"{self.status} (passed={self.passed} failed={self.failed} skipped={self.skipped})"


@dataclass(frozen=True)
class EnsureResult:
    already_present: bool
    installed: tuple[PackageRef, ...] = ()


# ---------------------------------------------------------------------------
# planning


def _test_commands(manifest: Manifest | None, source_root: Path) -> list[tuple[str, Command | None]]:
    out: list[tuple[str, Command | None]] = []
    if manifest is None:
        return out
    for mod in manifest.modules:
        for target in mod.tests:
            command: Command | None = None
            for rel in (f"{target}.sh", f"tests/{target}.sh"):
                if (source_root / rel).is_file():
                    command = Command(("sh", "{src}/" + rel))
                    break
            out.append((target, command))  # no runnable script means the target is reported skipped
    return out


def plan_build(
    plan: ResolutionPlan,
    manifests: dict[str, Manifest | None],
    source_roots: dict[str, Path],
    *,
    workdir: Path | str,
    recipes: tuple[RecipeRule, ...] = DEFAULT_RECIPES,
) -> BuildPlan:
    """One BuildStep per plan entry, in plan order.

    Recipe resolution: the manifest's explicit build commands win; otherwise
    the first recipe rule whose build file exists at the source root applies;
    otherwise MissingRecipeError.
    """
    workdir = Path(workdir)
    steps = []
    for ref in plan.ordered:
        manifest = manifests.get(ref.name)
        source_root = source_roots.get(ref.name)
        if source_root is None:
            raise PkgforgeError(f"no source root for planned package '{ref.name}'")
        source_root = Path(source_root)
        artifacts_spec: dict[str, str] = {}
        if manifest is not None and manifest.build_commands:
            commands = [Command(("sh", "-c", c)) for c in manifest.build_commands]
            artifacts_spec = dict(manifest.build_artifacts)
        else:
            rule = next((r for r in recipes if (source_root / r.match).is_file()), None)
            if rule is None:
                raise MissingRecipeError(
                    f"no build recipe for '{ref.name}': no build commands in its manifest and "
                    f"no recognized build file under {source_root}"
                )
            commands = [Command(argv) for argv in rule.commands]
        steps.append(
            BuildStep(
                package=ref,
                source_root=source_root,
                sandbox_root=workdir / "build" / f"{ref.name}-{ref.version}",
                commands=commands,
                test_commands=_test_commands(manifest, source_root),
                artifacts_spec=artifacts_spec,
            )
        )
    return BuildPlan(steps)


# ---------------------------------------------------------------------------
# execution


def _substitute(text: str, mapping: dict[str, str]) -> str:
    for key, value in mapping.items():
        text = text.replace(key, value)
    return text


def _sandbox_dirs(step: BuildStep) -> dict[str, Path]:
    root = step.sandbox_root
    return {"src": root / "src", "build": root / "build", "stage": root / "stage", "logs": root / "logs"}


def _run_logged(argv: list[str], cwd: Path, env: dict[str, str], log_base: Path) -> int:
    stdout_path = log_base.with_suffix(".stdout")
    stderr_path = log_base.with_suffix(".stderr")
    with open(stdout_path, "wb") as out, open(stderr_path, "wb") as err:
        proc = subprocess.run(argv, cwd=str(cwd), env=env, stdout=out, stderr=err)
    return proc.returncode


def execute(step: BuildStep, log_dir: Path | str | None = None, *, jobs: int = 1) -> BuildResult:
    """Run a step's commands in a fresh sandbox and collect staged artifacts.

    Stops at the first nonzero exit (BuildFailedError carries the command and
    log paths). Files named in artifacts_spec are copied from the build or
    source tree into the stage area; a missing one raises
    MissingArtifactError.
    """
    if step.sandbox_root.exists():
        shutil.rmtree(step.sandbox_root)
    dirs = _sandbox_dirs(step)
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    shutil.copytree(step.source_root, dirs["src"], dirs_exist_ok=True)
    logs = Path(log_dir) if log_dir is not None else dirs["logs"]
    logs.mkdir(parents=True, exist_ok=True)

    mapping = {
        "{src}": str(dirs["src"]),
        "{build}": str(dirs["build"]),
        "{stage}": str(dirs["stage"]),
        "{jobs}": str(jobs),
    }
    env = dict(os.environ)
    env.update(
        PKG_SRC=mapping["{src}"],
        PKG_BUILD=mapping["{build}"],
        PKG_STAGE=mapping["{stage}"],
        PKG_JOBS=str(jobs),
    )
    for i, cmd in enumerate(step.commands):
        argv = [_substitute(a, mapping) for a in cmd.argv]
        cwd = Path(_substitute(cmd.workdir, mapping))
        code = _run_logged(argv, cwd, {**env, **dict(cmd.env)}, logs / f"step-{i}")
        if code != 0:
            raise BuildFailedError(
                step.package.name, " ".join(argv), code, logs / f"step-{i}.stdout", logs / f"step-{i}.stderr"
            )

    for built_rel in sorted(step.artifacts_spec):
        dest_rel = step.artifacts_spec[built_rel]
        produced = next(
            (base / built_rel for base in (dirs["build"], dirs["src"]) if (base / built_rel).is_file()), None
        )
        if produced is None:
            raise MissingArtifactError(
                f"build of '{step.package.name}' succeeded but promised artifact '{built_rel}' is missing"
            )
        target = dirs["stage"] / dest_rel
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(produced, target)

    artifacts = {
        p.relative_to(dirs["stage"]).as_posix(): p for p in sorted(dirs["stage"].rglob("*")) if p.is_file()
    }
    return BuildResult(step.package, artifacts, logs, dirs["stage"])


def run_tests(step: BuildStep, *, jobs: int = 1) -> TestReport:
    """Run the step's test commands; requires execute() to have run first.

    Declared targets without a runnable script count as skipped. No declared
    tests at all yields the all-zero report with status "skipped".
    """
    dirs = _sandbox_dirs(step)
    mapping = {
        "{src}": str(dirs["src"]),
        "{build}": str(dirs["build"]),
        "{stage}": str(dirs["stage"]),
        "{jobs}": str(jobs),
    }
    env = dict(os.environ)
    env.update(
        PKG_SRC=mapping["{src}"],
        PKG_BUILD=mapping["{build}"],
        PKG_STAGE=mapping["{stage}"],
        PKG_JOBS=str(jobs),
    )
    report = TestReport()
    for i, (target, cmd) in enumerate(step.test_commands):
        if cmd is None:
            report.skipped += 1
            continue
        argv = [_substitute(a, mapping) for a in cmd.argv]
        cwd = Path(_substitute(cmd.workdir, mapping))
        code = _run_logged(argv, cwd, env, dirs["logs"] / f"test-{i}-{target}")
        if code == 0:
            report.passed += 1
        else:
            report.failed += 1
    if report.failed:
        report.status = "failed"
    elif report.passed:
        report.status = "passed"
    else:
        report.status = "skipped"
    return report


# ---------------------------------------------------------------------------
# installation


def _copy_file(src: Path, dst: Path) -> None:
    # single seam for every payload copy; tests inject faults here
    shutil.copy2(src, dst)


@dataclass
class InstallTransaction:
    """Tracks copies into the prefix so a failure can undo them byte-for-byte."""

    prefix: Path
    state: str = "staged"  # staged | committed | rolled_back
    _written: list[Path] = field(default_factory=list)
    _created_dirs: list[Path] = field(default_factory=list)

    def _prepare(self, rel: str) -> Path:
        dest = self.prefix / rel
        if dest.exists():
            raise InstallError(f"refusing to overwrite existing file: {rel}")
        missing = []
        parent = dest.parent
        while not parent.exists() and parent != self.prefix:
            missing.append(parent)
            parent = parent.parent
        dest.parent.mkdir(parents=True, exist_ok=True)
        self._created_dirs.extend(reversed(missing))
        return dest

    def copy_file(self, rel: str, staged: Path) -> None:
        dest = self._prepare(rel)
        _copy_file(staged, dest)
        self._written.append(dest)

    def write_text(self, rel: str, text: str) -> None:
        dest = self._prepare(rel)
        dest.write_text(text, encoding="utf-8")
        self._written.append(dest)

    def commit(self) -> None:
        self.state = "committed"

    def rollback(self) -> None:
        for path in reversed(self._written):
            path.unlink(missing_ok=True)
        for directory in reversed(self._created_dirs):
            try:
                directory.rmdir()
            except OSError:
                pass
        self.state = "rolled_back"


def _stub_manifest(ref: PackageRef, url: str | None) -> Manifest:
    module = ModuleSpec(name=ref.name, targets=[ref.name], package_url=url or f"unknown://{ref.name}")
    if not ref.is_local:
        module.tag = ref.version
    return Manifest(name=ref.name, targets=[ref.name], modules=[module])


def install(result: BuildResult, manifest: Manifest | None, db: PackageDatabase, prefix: Path | str) -> InstalledPackage:
    """Copy staged files into the prefix and register the record, atomically.

    On any failure (including AlreadyInstalled or ComponentClash raised by
    registration) every copied file and created directory is removed again
    before the error propagates; an I/O failure is wrapped in InstallError
    noting the completed rollback.
    """
    prefix = Path(prefix)
    name = result.package.name
    if manifest is None:
        manifest = _stub_manifest(result.package, None)
    document = serialize(manifest)
    manifest_rel = f"share/manifests/{name}.yml"
    components = [mod.name for mod in manifest.modules if mod.is_local] or [name]
    record = InstalledPackage(
        name=name,
        version=result.package.version,
        manifest_digest="sha256:" + hashlib.sha256(document.encode("utf-8")).hexdigest(),
        file_list=sorted(list(result.artifacts) + [manifest_rel]),
        provided_components=components,
        installed_at=now_iso(),
    )
    txn = InstallTransaction(prefix)
    try:
        for rel in sorted(result.artifacts):
            txn.copy_file(rel, result.artifacts[rel])
        txn.write_text(manifest_rel, document)
        register(db, record)
    except OSError as exc:
        txn.rollback()
        raise InstallError(f"install of '{name}' failed ({exc}); rollback completed") from exc
    except BaseException:
        txn.rollback()
        raise
    txn.commit()
    return record


def uninstall(name: str, db: PackageDatabase, prefix: Path | str) -> int:
    """Remove a package's files and record; returns the number of files removed.

    Refuses while other installed packages depend on it. Directories the
    removal empties are pruned up to (not including) the prefix.
    """
    prefix = Path(prefix)
    record = query(db, name)
    if record is None:
        raise NotInstalledError(f"package not installed: {name}")
    dependents = dependents_of(db, name)
    if dependents:
        raise DependedUponError(name, dependents)
    removed = 0
    prefix_resolved = prefix.resolve()
    for rel in record.file_list:
        path = prefix / rel
        if path.exists():
            path.unlink()
            removed += 1
        parent = path.parent
        while parent.resolve() != prefix_resolved:
            try:
                parent.rmdir()
            except OSError:
                break
            parent = parent.parent
    remove_record(db, name)
    return removed


# ---------------------------------------------------------------------------
# source access for the pipeline


class SourceProvider:
    """Memoizing access to external packages' archives, trees, and manifests.

    With ``allow_fetch=False`` only already-cached archives are consulted and
    manifests are read from them in memory, so resolution stays free of cache
    and workdir writes (dry-run purity). Fetching mode downloads on demand.
    """

    def __init__(self, idx: PackageIndex, cache_dir: Path | str, staging_dir: Path | str, *, allow_fetch: bool = True):
        self.idx = idx
        self.cache_dir = Path(cache_dir)
        self.staging_dir = Path(staging_dir)
        self.allow_fetch = allow_fetch
        self._manifests: dict[str, Manifest | None] = {}
        self._archives: dict[str, Path] = {}
        self._trees: dict[str, Path] = {}
        self._sources: dict[str, PackageSource] = {}

    def _entry(self, source: PackageSource) -> IndexEntry:
        return IndexEntry(
            name=source.name,
            version=source.version,
            url=source.url or "",
            digest=source.digest,
            manifest_hint=source.manifest_hint,
            components=source.components,
        )

    def archive_path(self, name: str, source: PackageSource | None = None) -> Path | None:
        if name in self._archives:
            return self._archives[name]
        source = source or self._sources.get(name)
        if source is None or source.url is None:
            return None
        if self.allow_fetch:
            fetched = fetch(self._entry(source), self.cache_dir)
            path = fetched.local_path
        else:
            cached = find_cached(self.cache_dir, source.url, source.digest)
            if cached is None:
                return None
            path = cached[0]
        self._archives[name] = path
        return path

    def manifest_for(self, name: str, source: PackageSource) -> Manifest | None:
        if name in self._manifests:
            return self._manifests[name]
        self._sources[name] = source
        manifest: Manifest | None = None
        path = self.archive_path(name, source)
        if path is not None:
            text = archive_member_text(path, source.manifest_hint)
            if text is not None:
                manifest = parse_manifest(text)
        self._manifests[name] = manifest
        return manifest

    def source_tree(self, name: str) -> Path:
        if name in self._trees:
            return self._trees[name]
        path = self.archive_path(name)
        if path is None:
            raise PkgforgeError(f"no archive available for '{name}'")
        source = self._sources.get(name)
        digest = source.digest if source and source.digest else sha256_file(path)
        root = unpack(FetchedArchive(path, digest, source.url if source and source.url else str(path)), self.staging_dir)
        self._trees[name] = root
        return root

    def prefetch(self, names: list[str], *, jobs: int = 4) -> None:
        wanted = []
        for name in names:
            source = self._sources.get(name)
            if name not in self._archives and source is not None and source.url is not None:
                wanted.append(self._entry(source))
        for fetched in fetch_many(wanted, self.cache_dir, jobs=jobs):
            entry = fetched.source
            if isinstance(entry, IndexEntry):
                self._archives[entry.name] = fetched.local_path


# ---------------------------------------------------------------------------
# the full pipeline


def install_packages(
    request: list[str] | None,
    idx: PackageIndex,
    db: PackageDatabase,
    prefix: Path | str,
    *,
    cache_dir: Path | str,
    workdir: Path | str,
    roots: list[tuple[Manifest, Path]] | None = None,
    lockfile: Lockfile | None = None,
    recipes: tuple[RecipeRule, ...] = DEFAULT_RECIPES,
    jobs: int = 1,
    require_tests: bool = False,
    progress=None,
) -> tuple[list[PackageRef], ResolutionPlan]:
    """Resolve, fetch, build, test, and install a request. Returns (installed, plan)."""

    def say(message: str) -> None:
        if progress is not None:
            progress(message)

    workdir = Path(workdir)
    provider = SourceProvider(idx, cache_dir, workdir / "staging", allow_fetch=True)
    root_list = list(roots or [])
    plan = resolve(
        request,
        idx,
        db,
        roots=[m for m, _ in root_list],
        lockfile=lockfile,
        manifest_provider=provider.manifest_for,
    )
    say(f"resolved {len(plan.ordered)} package(s) to install, {len(plan.already_installed)} already present")
    provider.prefetch([ref.name for ref in plan.ordered], jobs=max(jobs, 4))

    manifests: dict[str, Manifest | None] = {}
    source_roots: dict[str, Path] = {}
    for m, root_dir in root_list:
        manifests[m.name] = m
        source_roots[m.name] = Path(root_dir)
    for ref in plan.ordered:
        if ref.name in source_roots:
            continue
        source = plan.sources.get(ref.name)
        if source is None:
            raise PkgforgeError(f"planned package '{ref.name}' has no source")
        say(f"fetching {ref.name} {ref.version}")
        manifest = provider.manifest_for(ref.name, source)
        manifests[ref.name] = manifest if manifest is not None else _stub_manifest(ref, source.url)
        source_roots[ref.name] = provider.source_tree(ref.name)

    build_plan = plan_build(plan, manifests, source_roots, workdir=workdir, recipes=recipes)
    installed: list[PackageRef] = []
    for step in build_plan.steps:
        say(f"building {step.package.display()}")
        result = execute(step, jobs=jobs)
        report = run_tests(step, jobs=jobs)
        if report.status == "failed":
            say(f"tests for {step.package.name}: {report}")
            if require_tests:
                raise TestsFailedError(step.package.name, report)
        say(f"installing {step.package.display()}")
        install(result, manifests.get(step.package.name), db, prefix)
        installed.append(step.package)
    return installed, plan


def ensure(
    component_name: str,
    db: PackageDatabase,
    idx: PackageIndex,
    prefix: Path | str,
    *,
    cache_dir: Path | str,
    workdir: Path | str,
    recipes: tuple[RecipeRule, ...] = DEFAULT_RECIPES,
    jobs: int = 1,
    require_tests: bool = False,
    progress=None,
) -> EnsureResult:
    """Install whatever provides a component, unless it is already present.

    Lazy lookup order for the providing package: a package named like the
    component, then index entries with declared components metadata, then a
    fetch-and-inspect scan of package manifests.
    """
    if component_name in db.component_map:
        return EnsureResult(already_present=True)
    provider_name = _providing_package(component_name, idx, cache_dir)
    installed, _plan = install_packages(
        [provider_name],
        idx,
        db,
        prefix,
        cache_dir=cache_dir,
        workdir=workdir,
        recipes=recipes,
        jobs=jobs,
        require_tests=require_tests,
        progress=progress,
    )
    return EnsureResult(already_present=False, installed=tuple(installed))


def _providing_package(component: str, idx: PackageIndex, cache_dir: Path | str) -> str:
    if component in idx:
        return component
    for name in idx.names():
        if component in lookup(idx, name, ANY_VERSION).components:
            return name
    for name in idx.names():
        entry = lookup(idx, name, ANY_VERSION)
        try:
            fetched = fetch(entry, cache_dir)
            text = archive_member_text(fetched.local_path, entry.manifest_hint)
        except PkgforgeError:
            continue
        if text is None:
            continue
        try:
            manifest = parse_manifest(text)
        except PkgforgeError:
            continue
        if any(mod.name == component and mod.is_local for mod in manifest.modules):
            return name
    raise PackageNotFoundError(f"no package provides component '{component}'")
