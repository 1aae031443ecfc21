"""Shared fixtures: archive/repo builders, environment isolation, oracles."""

from __future__ import annotations

import hashlib
import subprocess
import zipfile
from pathlib import Path
from types import SimpleNamespace

import pytest

# The ROOTMath manifest in its original draft layout: repeated `module:` keys,
# a `target: name:` block under targets, and a single mapping-form product.
ROOTMATH_MANIFEST = """\
  package:
    name: "ROOTMath"
    targets:
      target:
      name: "MathCore MathMore mathcore-tests mathmore-tests"
    products:
      package:
      name: ROOTMath
      targets: MathCore MathMore VecCore Imt gsl
    module:
      name: MathCore
      publicheaders: inc/<enumerated headers>.h
      sources: src/<enumerated source files>.cxx
      targets: MathCore
      dependencies: VecCore Imt
      tests: mathcore-tests
    module:
      name: MathMore
      publicheaders: inc/<enumerated headers>.h
      sources: src/<enumerated source files>.cxx
      targets: MathMore
      dependencies: gsl MathCore
      tests: mathmore-tests
    module:
      name: VecCore
      packageurl: "https://github.com/root-project/veccore/archive/v0.5.1.zip"
      targets: VecCore
      tag: 0.5.1
    module:
      name: gsl
      packageurl: "https://github.com/ampl/gsl/archive/v2.5.0.zip"
      targets: gsl
"""

ROOTMATH_INDEX = """\
packages:
  gsl:
    - version: 2.5.0
      url: "https://example.org/archives/gsl-2.5.0.zip"
      digest: sha256:{d1}
  VecCore:
    - version: 0.5.1
      url: "https://example.org/archives/veccore-0.5.1.zip"
      digest: sha256:{d2}
  Imt:
    - version: 1.0.0
      url: "https://example.org/archives/imt-1.0.0.zip"
      digest: unverified
""".format(d1="1" * 64, d2="2" * 64)


def sha256_tool(path: Path) -> str:
    """Digest via the system sha256sum binary, independent of hashlib."""
    out = subprocess.run(["sha256sum", str(path)], check=True, capture_output=True, text=True)
    return "sha256:" + out.stdout.split()[0]


def snapshot_tree(root: Path) -> dict[str, str]:
    """Relative path -> content hash for every file under root (empty if absent)."""
    root = Path(root)
    if not root.exists():
        return {}
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def default_build_script(staged: dict[str, str]) -> str:
    lines = ["#!/bin/sh", "set -e"]
    for rel in sorted(staged):
        parent = str(Path(rel).parent)
        if parent != ".":
            lines.append(f'mkdir -p "$PKG_STAGE/{parent}"')
        lines.append(f'printf %s "{staged[rel]}" > "$PKG_STAGE/{rel}"')
    return "\n".join(lines) + "\n"


def simple_manifest(
    name: str,
    module: str | None = None,
    deps: tuple[str, ...] = (),
    tests: tuple[str, ...] = (),
) -> str:
    module = module or name
    text = f"package:\n  name: {name}\n  modules:\n    - name: {module}\n"
    text += f"      sources:\n        - src/{module}.c\n"
    text += f"      targets:\n        - {module}\n"
    if deps:
        text += "      dependencies:\n" + "".join(f"        - {d}\n" for d in deps)
    if tests:
        text += "      tests:\n" + "".join(f"        - {t}\n" for t in tests)
    return text


def make_package_archive(
    repo_dir: Path,
    name: str,
    version: str,
    *,
    manifest_text: str | None = None,
    deps: tuple[str, ...] = (),
    staged: dict[str, str] | None = None,
    extra_files: dict[str, str] | None = None,
    tests: tuple[str, ...] = (),
    test_exit: int = 0,
) -> tuple[Path, str]:
    """Zip archive with one top-level dir, a manifest, and a staging build script.

    Returns (archive path, digest computed by an external hashing tool).
    """
    repo_dir = Path(repo_dir)
    repo_dir.mkdir(parents=True, exist_ok=True)
    if staged is None:
        staged = {f"lib/lib{name}.a": f"fake archive for {name}\n"}
    if manifest_text is None:
        manifest_text = simple_manifest(name, deps=deps, tests=tests)
    members = {
        "package.yml": manifest_text,
        "build.sh": default_build_script(staged),
        f"src/{name}.c": f"int {name.lower().replace('-', '_')}_impl;\n",
    }
    for target in tests:
        members[f"tests/{target}.sh"] = f"#!/bin/sh\nexit {test_exit}\n"
    members.update(extra_files or {})
    archive = repo_dir / f"{name}-{version}.zip"
    top = f"{name}-{version}"
    with zipfile.ZipFile(archive, "w") as zf:
        for rel in sorted(members):
            zf.writestr(f"{top}/{rel}", members[rel])
    return archive, sha256_tool(archive)


def write_index(path: Path, entries: list[dict]) -> Path:
    """entries: [{name, version, url, digest, components?, manifest_hint?}]"""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["packages:"] if entries else ["packages: {}"]
    by_name: dict[str, list[dict]] = {}
    for e in entries:
        by_name.setdefault(e["name"], []).append(e)
    for name in by_name:
        lines.append(f"  {name}:")
        for e in by_name[name]:
            lines.append(f"    - version: {e['version']}")
            lines.append(f"      url: \"{e['url']}\"")
            lines.append(f"      digest: {e.get('digest', 'unverified')}")
            if e.get("components"):
                lines.append(f"      components: [{', '.join(e['components'])}]")
            if e.get("manifest_hint"):
                lines.append(f"      manifest_hint: {e['manifest_hint']}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def build_repo(repo_dir: Path, packages: list[dict]) -> Path:
    """Create archives plus an index.yml of file:// entries; returns index path.

    packages: [{name, version, deps?, manifest_text?, staged?, extra_files?,
                tests?, components?, test_exit?}]
    """
    entries = []
    for spec in packages:
        archive, digest = make_package_archive(
            repo_dir,
            spec["name"],
            spec["version"],
            manifest_text=spec.get("manifest_text"),
            deps=tuple(spec.get("deps", ())),
            staged=spec.get("staged"),
            extra_files=spec.get("extra_files"),
            tests=tuple(spec.get("tests", ())),
            test_exit=spec.get("test_exit", 0),
        )
        entries.append(
            {
                "name": spec["name"],
                "version": spec["version"],
                "url": f"file://{archive}",
                "digest": digest,
                "components": spec.get("components"),
            }
        )
    return write_index(repo_dir / "index.yml", entries)


def rootmath_repo(repo_dir: Path) -> Path:
    """The four-package closure used by the end-to-end scenarios."""
    return build_repo(
        Path(repo_dir),
        [
            {
                "name": "gsl",
                "version": "2.5.0",
                "staged": {"lib/libgsl.a": "gsl lib\n", "include/gsl/gsl_math.h": "/* gsl */\n"},
            },
            {"name": "VecCore", "version": "0.5.1", "staged": {"include/VecCore.h": "/* veccore */\n"}},
            {"name": "Imt", "version": "1.0.0", "staged": {"lib/libImt.a": "imt\n"}},
            {
                "name": "ROOTMath",
                "version": "6.30.0",
                "manifest_text": (
                    "package:\n"
                    "  name: ROOTMath\n"
                    "  targets: MathCore mathcore-tests\n"
                    "  module:\n"
                    "    name: MathCore\n"
                    "    publicheaders: inc/MathCore.h\n"
                    "    sources: src/MathCore.cxx\n"
                    "    targets: MathCore\n"
                    "    dependencies: gsl VecCore Imt\n"
                    "    tests: mathcore-tests\n"
                ),
                "staged": {"lib/libMathCore.a": "mathcore\n", "include/MathCore.h": "/* mc */\n"},
                "extra_files": {
                    "inc/MathCore.h": "/* mc */\n",
                    "src/MathCore.cxx": "int mathcore;\n",
                    "tests/mathcore-tests.sh": "#!/bin/sh\nexit 0\n",
                },
            },
        ],
    )


@pytest.fixture
def sandbox(tmp_path, monkeypatch):
    """Isolated prefix/cache/workdir plus a scrubbed PKGFORGE_* environment."""
    home = tmp_path / "home"
    home.mkdir()
    paths = SimpleNamespace(
        root=tmp_path,
        home=home,
        prefix=tmp_path / "prefix",
        cache=tmp_path / "cache",
        work=tmp_path / "work",
        repo=tmp_path / "repo",
    )
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.setenv("PKGFORGE_PREFIX", str(paths.prefix))
    monkeypatch.setenv("PKGFORGE_CACHE", str(paths.cache))
    monkeypatch.setenv("PKGFORGE_WORKDIR", str(paths.work))
    for var in ("PKGFORGE_INDEX", "PKGFORGE_CONFIG", "PKGFORGE_JOBS", "PKGFORGE_HOME"):
        monkeypatch.delenv(var, raising=False)
    return paths
