"""Build planning/execution, transactional install, and the lazy pipeline."""

from pathlib import Path

import pytest

import pkgforge.lifecycle as lifecycle
from pkgforge.errors import (
    AlreadyInstalledError,
    BuildFailedError,
    ComponentClashError,
    DependedUponError,
    InstallError,
    MissingArtifactError,
    MissingRecipeError,
    PackageNotFoundError,
    ParseError,
)
from pkgforge.errors import TestsFailedError as RequiredTestsError  # pytest would try to collect the real name
from pkgforge.index import parse_index
from pkgforge.lifecycle import (
    BuildStep,
    Command,
    SourceProvider,
    ensure,
    execute,
    install,
    install_packages,
    load_recipe_table,
    plan_build,
    run_tests,
    uninstall,
)
from pkgforge.manifest import parse_manifest, serialize
from pkgforge.resolver import PackageRef, ResolutionPlan, resolve
from pkgforge.store import check_integrity, list_installed, open_db, query
from pkgforge.version import VersionTag

from conftest import (
    build_repo,
    default_build_script,
    rootmath_repo,
    sha256_tool,
    simple_manifest,
    snapshot_tree,
)


def _source_dir(tmp_path, name="pkg", staged=None, manifest_text=None, tests=()):
    src = tmp_path / f"{name}-src"
    src.mkdir(parents=True, exist_ok=True)
    (src / "build.sh").write_text(default_build_script(staged or {f"lib/lib{name}.a": "payload\n"}))
    (src / "package.yml").write_text(manifest_text or simple_manifest(name, tests=tests))
    for target in tests:
        d = src / "tests"
        d.mkdir(exist_ok=True)
        (d / f"{target}.sh").write_text("#!/bin/sh\nexit 0\n")
    return src


def _step(tmp_path, name="pkg", **kwargs):
    src = _source_dir(tmp_path, name, **kwargs)
    manifest = parse_manifest((src / "package.yml").read_text())
    plan = ResolutionPlan(ordered=[PackageRef(name, VersionTag(1, 0, 0))])
    built = plan_build(plan, {name: manifest}, {name: src}, workdir=tmp_path / "work")
    return built.steps[0], manifest


# ---------------------------------------------------------------------------
# planning


def test_plan_follows_resolution_order(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    provider = SourceProvider(idx, tmp_path / "cache", tmp_path / "staging")
    plan = resolve(["ROOTMath"], idx, manifest_provider=provider.manifest_for)
    manifests, roots = {}, {}
    for ref in plan.ordered:
        manifests[ref.name] = provider.manifest_for(ref.name, plan.sources[ref.name])
        roots[ref.name] = provider.source_tree(ref.name)
    built = plan_build(plan, manifests, roots, workdir=tmp_path / "work")
    assert [s.package.display() for s in built.steps] == [
        "Imt@1.0.0",
        "VecCore@0.5.1",
        "gsl@2.5.0",
        "ROOTMath@6.30.0",
    ]
    assert built.steps[0].sandbox_root == tmp_path / "work" / "build" / "Imt-1.0.0"


def test_manifest_build_commands_override_recipes(tmp_path):
    text = (
        "package:\n  name: pkg\n"
        "  build:\n    commands:\n      - ./custom.sh --fast\n"
        "  modules:\n    - name: pkg\n      sources: [src/p.c]\n"
    )
    src = _source_dir(tmp_path, manifest_text=text)
    manifest = parse_manifest(text)
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": manifest}, {"pkg": src}, workdir=tmp_path / "work")
    assert built.steps[0].commands == [Command(("sh", "-c", "./custom.sh --fast"))]


@pytest.mark.parametrize(
    "present,expected_first",
    [
        ("build.sh", ("sh", "{src}/build.sh")),
        ("configure", ("sh", "{src}/configure", "--prefix={stage}")),
        ("Makefile", ("make", "-C", "{src}", "-j{jobs}")),
        ("CMakeLists.txt", ("cmake", "-S", "{src}", "-B", "{build}")),
    ],
)
def test_recipe_selected_by_build_file(tmp_path, present, expected_first):
    src = tmp_path / "src"
    src.mkdir()
    (src / present).write_text("")
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": None}, {"pkg": src}, workdir=tmp_path / "work")
    assert built.steps[0].commands[0].argv == expected_first


def test_recipe_order_prefers_build_script(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "build.sh").write_text("")
    (src / "Makefile").write_text("")
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": None}, {"pkg": src}, workdir=tmp_path / "work")
    assert built.steps[0].commands[0].argv == ("sh", "{src}/build.sh")


def test_unbuildable_source_rejected(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "README").write_text("nothing to build here")
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    with pytest.raises(MissingRecipeError, match="pkg"):
        plan_build(plan, {"pkg": None}, {"pkg": src}, workdir=tmp_path / "work")


def test_recipe_table_file(tmp_path):
    table = tmp_path / "recipes.yml"
    table.write_text(
        "recipes:\n"
        "  - match: meson.build\n"
        "    commands:\n"
        "      - meson setup {build} {src}\n"
        "      - [ninja, -C, '{build}']\n"
    )
    rules = load_recipe_table(table)
    assert rules[0].match == "meson.build"
    assert rules[0].commands[0] == ("sh", "-c", "meson setup {build} {src}")
    assert rules[0].commands[1] == ("ninja", "-C", "{build}")


def test_recipe_table_rejects_incomplete_rules(tmp_path):
    table = tmp_path / "recipes.yml"
    table.write_text("recipes:\n  - match: x\n")
    with pytest.raises(ParseError):
        load_recipe_table(table)


def test_declared_test_without_script_planned_as_skip(tmp_path):
    src = _source_dir(tmp_path, manifest_text=simple_manifest("pkg", tests=("ghost-tests",)))
    manifest = parse_manifest((src / "package.yml").read_text())
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": manifest}, {"pkg": src}, workdir=tmp_path / "work")
    assert built.steps[0].test_commands == [("ghost-tests", None)]


# ---------------------------------------------------------------------------
# execution


def test_execute_stages_build_output(tmp_path):
    step, _ = _step(tmp_path, staged={"lib/libpkg.a": "objects\n", "include/pkg.h": "/* h */\n"})
    result = execute(step)
    assert sorted(result.artifacts) == ["include/pkg.h", "lib/libpkg.a"]
    assert result.artifacts["lib/libpkg.a"].read_text() == "objects\n"
    assert result.exit_status == 0
    assert (result.log_dir / "step-0.stdout").exists()
    assert (result.log_dir / "step-0.stderr").exists()


def test_execute_exports_sandbox_environment(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "build.sh").write_text(
        '#!/bin/sh\nprintf %s "$PKG_JOBS" > "$PKG_STAGE/jobs.txt"\n'
        'test -d "$PKG_SRC" && test -d "$PKG_BUILD"\n'
    )
    step = BuildStep(
        package=PackageRef("pkg", VersionTag(1, 0, 0)),
        source_root=src,
        sandbox_root=tmp_path / "work" / "build" / "pkg-1.0.0",
        commands=[Command(("sh", "{src}/build.sh"))],
    )
    result = execute(step, jobs=7)
    assert result.artifacts["jobs.txt"].read_text() == "7"


def test_execute_does_not_mutate_the_source_tree(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "build.sh").write_text('#!/bin/sh\necho scratch > "$PKG_BUILD/scratch.txt"\n')
    before = snapshot_tree(src)
    step = BuildStep(
        package=PackageRef("pkg", VersionTag(1, 0, 0)),
        source_root=src,
        sandbox_root=tmp_path / "work" / "build" / "pkg-1.0.0",
        commands=[Command(("sh", "{src}/build.sh"))],
    )
    execute(step)
    assert snapshot_tree(src) == before


def test_failed_command_reports_exit_and_logs(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "build.sh").write_text('#!/bin/sh\necho "no gsl found" >&2\nexit 3\n')
    step = BuildStep(
        package=PackageRef("pkg", VersionTag(1, 0, 0)),
        source_root=src,
        sandbox_root=tmp_path / "work" / "build" / "pkg-1.0.0",
        commands=[Command(("sh", "{src}/build.sh"))],
    )
    with pytest.raises(BuildFailedError) as exc_info:
        execute(step)
    err = exc_info.value
    assert err.exit_code == 3
    assert err.package == "pkg"
    assert Path(err.stderr_path).read_text() == "no gsl found\n"


def test_execute_stops_at_first_failure(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    step = BuildStep(
        package=PackageRef("pkg", VersionTag(1, 0, 0)),
        source_root=src,
        sandbox_root=tmp_path / "work" / "build" / "pkg-1.0.0",
        commands=[
            Command(("sh", "-c", "exit 1")),
            Command(("sh", "-c", 'touch "{stage}/should-not-exist"')),
        ],
    )
    with pytest.raises(BuildFailedError):
        execute(step)
    assert not (step.sandbox_root / "stage" / "should-not-exist").exists()


def test_promised_artifacts_are_staged(tmp_path):
    text = (
        "package:\n  name: pkg\n"
        "  build:\n"
        "    commands:\n      - gcc -o pkg.o || true; printf lib > libpkg.a\n"
        "    artifacts:\n      libpkg.a: lib/libpkg.a\n"
        "  modules:\n    - name: pkg\n      sources: [src/p.c]\n"
    )
    src = tmp_path / "src"
    src.mkdir()
    (src / "p.c").write_text("int x;")
    manifest = parse_manifest(text)
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": manifest}, {"pkg": src}, workdir=tmp_path / "work")
    result = execute(built.steps[0])
    assert list(result.artifacts) == ["lib/libpkg.a"]
    assert result.artifacts["lib/libpkg.a"].read_text() == "lib"


def test_missing_promised_artifact_fails(tmp_path):
    text = (
        "package:\n  name: pkg\n"
        "  build:\n"
        "    commands:\n      - 'true'\n"
        "    artifacts:\n      libpkg.a: lib/libpkg.a\n"
        "  modules:\n    - name: pkg\n      sources: [src/p.c]\n"
    )
    src = tmp_path / "src"
    src.mkdir()
    manifest = parse_manifest(text)
    plan = ResolutionPlan(ordered=[PackageRef("pkg", VersionTag(1, 0, 0))])
    built = plan_build(plan, {"pkg": manifest}, {"pkg": src}, workdir=tmp_path / "work")
    with pytest.raises(MissingArtifactError, match="libpkg.a"):
        execute(built.steps[0])


def test_sandbox_is_wiped_between_runs(tmp_path):
    step, _ = _step(tmp_path, staged={"lib/a.txt": "one\n", "lib/b.txt": "two\n"})
    execute(step)
    (step.source_root / "build.sh").write_text(default_build_script({"lib/a.txt": "only\n"}))
    result = execute(step)
    assert list(result.artifacts) == ["lib/a.txt"]  # b.txt from the first run is gone


# ---------------------------------------------------------------------------
# test running


def test_passing_suite(tmp_path):
    step, _ = _step(tmp_path, tests=("pkg-tests",))
    execute(step)
    report = run_tests(step)
    assert (report.status, report.passed, report.failed, report.skipped) == ("passed", 1, 0, 0)
    assert str(report) == "passed (passed=1 failed=0 skipped=0)"


def test_failing_and_passing_mixed(tmp_path):
    step, _ = _step(tmp_path, tests=("good", "bad"))
    (step.source_root / "tests" / "bad.sh").write_text("#!/bin/sh\nexit 1\n")
    execute(step)
    report = run_tests(step)
    assert (report.status, report.passed, report.failed) == ("failed", 1, 1)


def test_no_tests_is_a_skip(tmp_path):
    step, _ = _step(tmp_path)
    execute(step)
    assert str(run_tests(step)) == "skipped (passed=0 failed=0 skipped=0)"


def test_declared_but_scriptless_target_skipped(tmp_path):
    step, _ = _step(tmp_path, manifest_text=simple_manifest("pkg", tests=("ghost",)))
    execute(step)
    report = run_tests(step)
    assert (report.status, report.skipped) == ("skipped", 1)


# ---------------------------------------------------------------------------
# installation


def _built(tmp_path, name="pkg", staged=None, manifest_text=None):
    step, manifest = _step(tmp_path, name, staged=staged, manifest_text=manifest_text)
    return execute(step), manifest


def test_install_copies_files_and_registers(tmp_path):
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    result, manifest = _built(tmp_path, "gsl", staged={"lib/libgsl.a": "gsl\n", "include/gsl/gsl_math.h": "h\n"})
    record = install(result, manifest, db, prefix)
    assert (prefix / "lib/libgsl.a").read_text() == "gsl\n"
    stored = prefix / "share/manifests/gsl.yml"
    assert stored.read_text() == serialize(manifest)
    # digest oracle: an external hashing tool agrees with the recorded digest
    assert record.manifest_digest == sha256_tool(stored)
    assert record.file_list == ["include/gsl/gsl_math.h", "lib/libgsl.a", "share/manifests/gsl.yml"]
    assert record.provided_components == ["gsl"]
    assert check_integrity(db) == []


def test_install_components_come_from_local_modules(tmp_path):
    text = (
        "package:\n  name: bundle\n  modules:\n"
        "    - name: Core\n      sources: [src/c.c]\n"
        "    - name: RIO\n      sources: [src/r.c]\n"
        "    - name: gsl\n      packageurl: https://x/gsl.zip\n"
    )
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    result, manifest = _built(tmp_path, "bundle", manifest_text=text)
    record = install(result, manifest, db, prefix)
    assert record.provided_components == ["Core", "RIO"]  # externals are not provided
    assert db.component_map == {"Core": "bundle", "RIO": "bundle"}


def test_double_install_rolls_back_cleanly(tmp_path):
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    result, manifest = _built(tmp_path, "gsl")
    install(result, manifest, db, prefix)
    before = snapshot_tree(prefix)
    result2, _ = _built(tmp_path, "gsl")
    with pytest.raises(InstallError, match="refusing to overwrite"):
        install(result2, manifest, db, prefix)
    assert snapshot_tree(prefix) == before


def test_registration_failure_undoes_copies(tmp_path):
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    clash_result, clash_manifest = _built(tmp_path, "other", staged={"lib/other.a": "x\n"})
    install(clash_result, clash_manifest, db, prefix)
    before = snapshot_tree(prefix)
    text = (
        "package:\n  name: newpkg\n  modules:\n"
        "    - name: other\n      sources: [src/o.c]\n"  # provides a taken component
    )
    result, manifest = _built(tmp_path / "n", "newpkg", manifest_text=text)
    with pytest.raises(ComponentClashError):
        install(result, manifest, db, prefix)
    assert snapshot_tree(prefix) == before
    assert query(db, "newpkg") is None


def test_io_fault_at_every_copy_leaves_no_trace(tmp_path, monkeypatch):
    files = {f"lib/part{i}.a": f"chunk {i}\n" for i in range(6)}
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    seed_result, seed_manifest = _built(tmp_path / "seed", "seed", staged={"lib/seed.a": "s\n"})
    install(seed_result, seed_manifest, db, prefix)  # a non-empty prefix makes leaks visible
    prefix_before = snapshot_tree(prefix)

    real_copy = lifecycle._copy_file
    for fail_at in range(len(files)):
        result, manifest = _built(tmp_path / f"try{fail_at}", "pkg", staged=dict(files))
        calls = {"n": 0}

        def flaky(src, dst, _fail_at=fail_at, _calls=calls):
            if _calls["n"] == _fail_at:
                raise OSError(28, "No space left on device")
            _calls["n"] += 1
            real_copy(src, dst)

        monkeypatch.setattr(lifecycle, "_copy_file", flaky)
        with pytest.raises(InstallError, match="rollback completed"):
            install(result, manifest, db, prefix)
        monkeypatch.setattr(lifecycle, "_copy_file", real_copy)
        assert snapshot_tree(prefix) == prefix_before, f"residue after failing copy #{fail_at}"
        assert query(db, "pkg") is None
        assert open_db(prefix).records.keys() == {"seed"}


def test_uninstall_restores_prior_tree(tmp_path):
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    base_result, base_manifest = _built(tmp_path / "a", "base", staged={"lib/libbase.a": "b\n"})
    install(base_result, base_manifest, db, prefix)
    before = snapshot_tree(prefix)
    result, manifest = _built(
        tmp_path / "b", "extra", staged={"lib/libextra.a": "e\n", "include/extra/extra.h": "h\n"}
    )
    install(result, manifest, db, prefix)
    assert snapshot_tree(prefix) != before
    removed = uninstall("extra", db, prefix)
    assert removed == 3  # two payload files plus the stored manifest
    assert snapshot_tree(prefix) == before
    assert not (prefix / "include" / "extra").exists()  # emptied dirs are pruned
    assert (prefix / "lib").is_dir()  # shared dirs survive


def test_uninstall_blocked_while_depended_upon(tmp_path):
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    gsl_result, gsl_manifest = _built(tmp_path / "g", "gsl")
    install(gsl_result, gsl_manifest, db, prefix)
    app_result, app_manifest = _built(
        tmp_path / "a", "app", manifest_text=simple_manifest("app", deps=("gsl",))
    )
    install(app_result, app_manifest, db, prefix)
    with pytest.raises(DependedUponError, match="app"):
        uninstall("gsl", db, prefix)
    uninstall("app", db, prefix)
    assert uninstall("gsl", db, prefix) > 0


# ---------------------------------------------------------------------------
# source provider


def test_provider_fetches_and_memoizes(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    provider = SourceProvider(idx, tmp_path / "cache", tmp_path / "staging")
    plan = resolve(["gsl"], idx)
    manifest = provider.manifest_for("gsl", plan.sources["gsl"])
    assert manifest.name == "gsl"
    tree = provider.source_tree("gsl")
    assert (tree / "build.sh").is_file()
    assert provider.manifest_for("gsl", plan.sources["gsl"]) is manifest


def test_offline_provider_never_writes(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    cache, staging = tmp_path / "cache", tmp_path / "staging"
    provider = SourceProvider(idx, cache, staging, allow_fetch=False)
    plan = resolve(["gsl"], idx)
    assert provider.manifest_for("gsl", plan.sources["gsl"]) is None  # nothing cached yet
    assert not cache.exists() and not staging.exists()


def test_offline_provider_reads_existing_cache(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    cache = tmp_path / "cache"
    warm = SourceProvider(idx, cache, tmp_path / "staging-a")
    plan = resolve(["gsl"], idx)
    warm.manifest_for("gsl", plan.sources["gsl"])
    staging = tmp_path / "staging-b"
    cold = SourceProvider(idx, cache, staging, allow_fetch=False)
    cache_before = snapshot_tree(cache)
    manifest = cold.manifest_for("gsl", plan.sources["gsl"])
    assert manifest is not None and manifest.name == "gsl"
    assert snapshot_tree(cache) == cache_before
    assert not staging.exists()


# ---------------------------------------------------------------------------
# the full pipeline


def test_install_packages_end_to_end(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    messages = []
    installed, plan = install_packages(
        ["ROOTMath"],
        idx,
        db,
        prefix,
        cache_dir=tmp_path / "cache",
        workdir=tmp_path / "work",
        progress=messages.append,
    )
    assert [str(p) for p in installed] == ["Imt@1.0.0", "VecCore@0.5.1", "gsl@2.5.0", "ROOTMath@6.30.0"]
    assert plan.already_installed == []
    assert [r.name for r in list_installed(db)] == ["Imt", "ROOTMath", "VecCore", "gsl"]
    assert (prefix / "lib/libgsl.a").is_file()
    assert (prefix / "include/MathCore.h").is_file()
    assert check_integrity(db) == []
    assert any("building gsl@2.5.0" in m for m in messages)


def test_install_packages_skips_installed(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    install_packages(["gsl"], idx, db, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    installed, plan = install_packages(
        ["ROOTMath"], idx, db, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work"
    )
    assert [p.name for p in installed] == ["Imt", "VecCore", "ROOTMath"]
    assert [str(p) for p in plan.already_installed] == ["gsl@2.5.0"]


def test_required_tests_gate_installation(tmp_path):
    index_path = build_repo(
        tmp_path / "repo",
        [{"name": "flaky", "version": "1.0.0", "tests": ("flaky-tests",), "test_exit": 1}],
    )
    idx = parse_index(index_path.read_text())
    prefix = tmp_path / "prefix"
    db = open_db(prefix)
    with pytest.raises(RequiredTestsError):
        install_packages(
            ["flaky"], idx, db, prefix,
            cache_dir=tmp_path / "cache", workdir=tmp_path / "work", require_tests=True,
        )
    assert query(db, "flaky") is None
    assert snapshot_tree(prefix) == snapshot_tree(prefix / "missing")  # prefix never created


def test_failing_tests_reported_but_tolerated_by_default(tmp_path):
    index_path = build_repo(
        tmp_path / "repo",
        [{"name": "flaky", "version": "1.0.0", "tests": ("flaky-tests",), "test_exit": 1}],
    )
    idx = parse_index(index_path.read_text())
    db = open_db(tmp_path / "prefix")
    messages = []
    installed, _ = install_packages(
        ["flaky"], idx, db, tmp_path / "prefix",
        cache_dir=tmp_path / "cache", workdir=tmp_path / "work", progress=messages.append,
    )
    assert [p.name for p in installed] == ["flaky"]
    assert any("failed (passed=0 failed=1 skipped=0)" in m for m in messages)


# ---------------------------------------------------------------------------
# lazy provisioning


def _pipeline(tmp_path):
    index_path = rootmath_repo(tmp_path / "repo")
    idx = parse_index(index_path.read_text())
    prefix = tmp_path / "prefix"
    return idx, open_db(prefix), prefix


def test_ensure_installs_provider_of_component(tmp_path):
    idx, db, prefix = _pipeline(tmp_path)
    # MathCore is not an index package; the provider is found by manifest scan
    outcome = ensure("MathCore", db, idx, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    assert not outcome.already_present
    assert [p.name for p in outcome.installed] == ["Imt", "VecCore", "gsl", "ROOTMath"]
    assert db.component_map["MathCore"] == "ROOTMath"


def test_ensure_is_idempotent(tmp_path):
    idx, db, prefix = _pipeline(tmp_path)
    ensure("MathCore", db, idx, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    before = snapshot_tree(prefix)
    outcome = ensure("MathCore", db, idx, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    assert outcome.already_present
    assert outcome.installed == ()
    assert snapshot_tree(prefix) == before


def test_ensure_package_named_like_component(tmp_path):
    idx, db, prefix = _pipeline(tmp_path)
    outcome = ensure("gsl", db, idx, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    assert [p.name for p in outcome.installed] == ["gsl"]


def test_ensure_honors_index_component_metadata(tmp_path):
    index_path = build_repo(
        tmp_path / "repo",
        [{
            "name": "rootbase",
            "version": "6.30.0",
            "manifest_text": (
                "package:\n  name: rootbase\n  modules:\n"
                "    - name: Core\n      sources: [src/c.c]\n"
                "    - name: RIO\n      sources: [src/r.c]\n"
                "    - name: Cling\n      sources: [src/cl.c]\n"
            ),
            "components": ["Core", "RIO", "Cling"],
        }],
    )
    idx = parse_index(index_path.read_text())
    db = open_db(tmp_path / "prefix")
    outcome = ensure("RIO", db, idx, tmp_path / "prefix", cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
    assert [p.name for p in outcome.installed] == ["rootbase"]
    assert db.component_map == {"Core": "rootbase", "RIO": "rootbase", "Cling": "rootbase"}


def test_ensure_unknown_component(tmp_path):
    idx, db, prefix = _pipeline(tmp_path)
    with pytest.raises(PackageNotFoundError, match="no package provides component 'Nonexistent'"):
        ensure("Nonexistent", db, idx, prefix, cache_dir=tmp_path / "cache", workdir=tmp_path / "work")
