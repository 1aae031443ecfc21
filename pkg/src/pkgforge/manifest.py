"""Package manifest model: parsing, validation, canonical serialization, generation.

A manifest describes one package: the targets it builds, the products it
publishes, and its modules. Two input layouts are accepted:

* the canonical schema, where ``package.modules`` is a list of mappings;
* a legacy layout where ``module:`` blocks repeat at one mapping level.
  Plain YAML loses all but the last duplicate key, so a line-level pre-pass
  rewrites consecutive sibling ``module:`` blocks into a ``modules:`` list
  before the document is parsed.

Serialization always emits the canonical schema with a fixed key order and a
deterministic quoting rule, so equal manifests produce byte-equal documents.
"""

from __future__ import annotations

import json
import posixpath
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Container

import yaml

from .errors import (
    DuplicateModuleError,
    EmptyComponentError,
    ParseError,
    SchemaError,
)
from .version import ANY_VERSION, VersionConstraint, VersionTag

ERROR = "error"
WARNING = "warning"

_HEADER_SUFFIXES = {".h", ".hh", ".hpp", ".hxx", ".inc"}

# package-level and module-level keys the canonical schema knows about
_PACKAGE_KEYS = {"name", "targets", "products", "modules", "module", "license", "build"}
_MODULE_KEYS = {"name", "publicheaders", "sources", "targets", "dependencies", "tests", "packageurl", "tag"}
_PRODUCT_KINDS = ("package", "library", "executable")


@dataclass(frozen=True)
class Diagnostic:
    """One validation or integrity finding."""

    severity: str
    message: str
    location: str = ""

    def __str__(self) -> str:
        where = f" [{self.location}]" if self.location else ""
        return f"{self.severity}: {self.message}{where}"


@dataclass(frozen=True)
class DependencyRef:
    """A dependency by name, optionally pinned to an exact version."""

    name: str
    constraint: VersionConstraint = ANY_VERSION

    @classmethod
    def parse(cls, text: str) -> DependencyRef:
        text = text.strip()
        if "@" in text:
            name, _, ver = text.partition("@")
            return cls(name.strip(), VersionConstraint.exact(ver))
        return cls(text)

    def __str__(self) -> str:
        if self.constraint.is_exact:
            return f"{self.name}@{self.constraint.tag}"
        return self.name


@dataclass
class ProductSpec:
    """A published product bundling a set of targets."""

    name: str
    kind: str = "package"
    targets: list[str] = field(default_factory=list)


@dataclass
class ModuleSpec:
    """One module: either locally built (sources/headers) or an external reference."""

    name: str
    public_headers: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    dependencies: list[DependencyRef] = field(default_factory=list)
    tests: list[str] = field(default_factory=list)
    package_url: str | None = None
    tag: VersionTag | None = None

    @property
    def is_local(self) -> bool:
        return bool(self.public_headers or self.sources)

    @property
    def is_external(self) -> bool:
        return self.package_url is not None


@dataclass
class Manifest:
    """A parsed package manifest."""

    name: str
    targets: list[str] = field(default_factory=list)
    products: list[ProductSpec] = field(default_factory=list)
    modules: list[ModuleSpec] = field(default_factory=list)
    license: str | None = None
    build_commands: list[str] = field(default_factory=list)
    build_artifacts: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list, compare=False, repr=False)

    def module(self, name: str) -> ModuleSpec | None:
        for mod in self.modules:
            if mod.name == name:
                return mod
        return None

    def local_module_names(self) -> set[str]:
        return {mod.name for mod in self.modules if mod.is_local}


@dataclass
class ComponentDescriptor:
    """Input to generate_manifest: where a component's files live."""

    name: str
    root_dir: Path
    header_dir: Path
    source_dir: Path
    declared_deps: list[DependencyRef] = field(default_factory=list)
    test_targets: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# parsing


_MODULE_KEY_RE = re.compile(r"^(\s*)module:\s*$")


def _rewrite_repeated_modules(text: str) -> str:
    """Rewrite sibling ``module:`` blocks into one ``modules:`` list.

    Runs before YAML parsing; required because duplicate mapping keys would
    otherwise collapse to the last block. Nested lines keep their relative
    indentation, shifted right by the two columns the list marker adds.
    """
    lines = text.splitlines()
    out: list[str] = []
    i = 0
    while i < len(lines):
        m = _MODULE_KEY_RE.match(lines[i])
        if m is None:
            out.append(lines[i])
            i += 1
            continue
        indent = m.group(1)
        out.append(indent + "modules:")
        pat = re.compile(rf"^{re.escape(indent)}module:\s*$")
        while i < len(lines) and pat.match(lines[i]):
            i += 1
            block: list[str] = []
            while i < len(lines):
                nxt = lines[i]
                if nxt.strip() == "":
                    block.append(nxt)
                    i += 1
                    continue
                if len(nxt) - len(nxt.lstrip(" ")) <= len(indent):
                    break
                block.append(nxt)
                i += 1
            first = True
            for b in block:
                if b.strip() == "":
                    out.append(b)
                    continue
                shifted = "  " + b
                if first:
                    pos = len(indent) + 2
                    shifted = shifted[:pos] + "- " + shifted[pos + 2 :]
                    first = False
                out.append(shifted)
    return "\n".join(out) + "\n"


def _as_str(value: object) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _name_list(value: object, warnings: list[str], where: str) -> list[str]:
    """Whitespace-separated names, a list of them, or a {name: "..."} wrapper."""
    if value is None:
        return []
    if isinstance(value, str):
        return value.split()
    if isinstance(value, dict):
        if "name" in value and value["name"] is not None:
            return _as_str(value["name"]).split()
        warnings.append(f"{where}: mapping without a 'name' entry ignored")
        return []
    if isinstance(value, list):
        names: list[str] = []
        for item in value:
            if isinstance(item, (dict, list)):
                warnings.append(f"{where}: non-scalar list entry ignored")
                continue
            names.extend(_as_str(item).split())
        return names
    return [_as_str(value)]


def _path_list(value: object, warnings: list[str], where: str) -> list[str]:
    """Paths are never whitespace-split: one scalar is one path."""
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, list):
        paths: list[str] = []
        for item in value:
            if isinstance(item, (dict, list)):
                warnings.append(f"{where}: non-scalar path entry ignored")
                continue
            paths.append(_as_str(item))
        return paths
    return [_as_str(value)]


def _products(value: object, warnings: list[str]) -> list[ProductSpec]:
    if value is None:
        return []
    if isinstance(value, dict):
        # legacy single-product form: a kind marker key plus name/targets siblings
        kind = next((k for k in _PRODUCT_KINDS if k in value), "package")
        name = _as_str(value.get("name", "")) if value.get("name") is not None else ""
        for key in value:
            if key not in set(_PRODUCT_KINDS) | {"name", "targets"}:
                warnings.append(f"products: unknown key '{key}'")
        return [ProductSpec(name=name, kind=kind, targets=_name_list(value.get("targets"), warnings, "products"))]
    if isinstance(value, list):
        out: list[ProductSpec] = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                warnings.append(f"products[{i}]: expected a mapping")
                continue
            for key in item:
                if key not in {"name", "kind", "targets"}:
                    warnings.append(f"products[{i}]: unknown key '{key}'")
            out.append(
                ProductSpec(
                    name=_as_str(item.get("name", "")),
                    kind=_as_str(item.get("kind", "package")),
                    targets=_name_list(item.get("targets"), warnings, f"products[{i}]"),
                )
            )
        return out
    warnings.append("products: unrecognized shape ignored")
    return []


def _module(item: object, warnings: list[str]) -> ModuleSpec:
    if not isinstance(item, dict):
        raise SchemaError(f"module entry must be a mapping, got {type(item).__name__}")
    raw_name = item.get("name")
    if raw_name is None or _as_str(raw_name).strip() == "":
        raise SchemaError("module missing name")
    name = _as_str(raw_name).strip()
    for key in item:
        if key not in _MODULE_KEYS:
            warnings.append(f"module {name}: unknown key '{key}'")
    where = f"module {name}"
    deps = [DependencyRef.parse(d) for d in _name_list(item.get("dependencies"), warnings, where)]
    tag: VersionTag | None = None
    if item.get("tag") is not None:
        try:
            tag = VersionTag.parse(_as_str(item["tag"]))
        except ValueError as exc:
            raise SchemaError(f"module '{name}': {exc}") from exc
    url = item.get("packageurl")
    mod = ModuleSpec(
        name=name,
        public_headers=_path_list(item.get("publicheaders"), warnings, where),
        sources=_path_list(item.get("sources"), warnings, where),
        targets=_name_list(item.get("targets"), warnings, where),
        dependencies=deps,
        tests=_name_list(item.get("tests"), warnings, where),
        package_url=_as_str(url) if url is not None else None,
        tag=tag,
    )
    if mod.is_local == mod.is_external:
        kind = "both locally built and externally sourced" if mod.is_local else "neither sources/headers nor a packageurl"
        raise SchemaError(f"module '{name}' declares {kind}")
    return mod


def parse_manifest(text: str) -> Manifest:
    """Parse a manifest document.

    Raises ParseError for malformed YAML, SchemaError for a missing package
    name or a module violating the exactly-one-of(local, external) rule, and
    DuplicateModuleError when two modules share a name. Unknown keys are
    collected into ``Manifest.warnings`` rather than rejected.
    """
    try:
        data = yaml.safe_load(_rewrite_repeated_modules(text))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ParseError(f"malformed manifest: {exc.problem or exc}", line, column) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed manifest: {exc}") from exc

    if not isinstance(data, dict) or not isinstance(data.get("package"), dict):
        raise SchemaError("missing top-level 'package' mapping")
    pkg = data["package"]
    warnings = [f"unknown top-level key '{k}'" for k in data if k != "package"]
    for key in pkg:
        if key not in _PACKAGE_KEYS:
            warnings.append(f"package: unknown key '{key}'")

    raw_name = pkg.get("name")
    if raw_name is None or _as_str(raw_name).strip() == "":
        raise SchemaError("missing package.name")

    modules_value = pkg.get("modules")
    if modules_value is None:
        modules_value = []
    if not isinstance(modules_value, list):
        modules_value = [modules_value]
    modules = [_module(item, warnings) for item in modules_value]
    seen: set[str] = set()
    for mod in modules:
        if mod.name in seen:
            raise DuplicateModuleError(f"duplicate module: {mod.name}")
        seen.add(mod.name)

    build_commands: list[str] = []
    build_artifacts: dict[str, str] = {}
    build = pkg.get("build")
    if isinstance(build, dict):
        build_commands = [_as_str(c) for c in build.get("commands") or []]
        build_artifacts = {_as_str(k): _as_str(v) for k, v in (build.get("artifacts") or {}).items()}
        for key in build:
            if key not in {"commands", "artifacts"}:
                warnings.append(f"build: unknown key '{key}'")
    elif build is not None:
        warnings.append("build: expected a mapping")

    lic = pkg.get("license")
    return Manifest(
        name=_as_str(raw_name).strip(),
        targets=_name_list(pkg.get("targets"), warnings, "targets"),
        products=_products(pkg.get("products"), warnings),
        modules=modules,
        license=_as_str(lic) if lic is not None else None,
        build_commands=build_commands,
        build_artifacts=build_artifacts,
        warnings=warnings,
    )


def load_manifest(path: Path | str) -> Manifest:
    """Read and parse a manifest file."""
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# validation


_NAME_BAD = re.compile(r"[\s/\\]")


def _valid_name(name: str) -> bool:
    return bool(name) and _NAME_BAD.search(name) is None


def _path_ok(p: str) -> bool:
    if not p or p.startswith("/") or "\\" in p:
        return False
    if ".." in p.split("/"):
        return False
    return posixpath.normpath(p) == p


def validate(m: Manifest, index: Container[str]) -> list[Diagnostic]:
    """Check every manifest invariant and external-name resolvability.

    ``index`` only needs membership tests (``name in index``); a PackageIndex
    works, as does a plain set of package names. Returns an empty list iff
    the manifest is internally consistent and every external name (a
    dependency or packageurl module not locally built here, or a product
    target not declared here) appears in the index.
    """
    diags: list[Diagnostic] = []
    if not _valid_name(m.name):
        diags.append(Diagnostic(ERROR, f"invalid package name: {m.name!r}", "package"))

    declared = {mod.name for mod in m.modules}
    local = m.local_module_names()
    seen: set[str] = set()
    for mod in m.modules:
        where = f"module {mod.name}"
        if not _valid_name(mod.name):
            diags.append(Diagnostic(ERROR, f"invalid module name: {mod.name!r}", where))
        if mod.name in seen:
            diags.append(Diagnostic(ERROR, f"duplicate module: {mod.name}", where))
        seen.add(mod.name)
        if mod.is_local == mod.is_external:
            kind = (
                "is both locally built and externally sourced"
                if mod.is_local
                else "declares neither sources/headers nor a packageurl"
            )
            diags.append(Diagnostic(ERROR, f"module {kind}", where))
        for p in list(mod.public_headers) + list(mod.sources):
            if not _path_ok(p):
                diags.append(Diagnostic(ERROR, f"path is not relative and normalized: {p!r}", where))
        for dep in mod.dependencies:
            if not dep.name:
                diags.append(Diagnostic(ERROR, "empty dependency name", where))

    # every name outside this manifest's locally built modules must resolve
    # via the index; packageurl stubs are external references, not an escape
    external: dict[str, str] = {}
    for mod in m.modules:
        if mod.is_external:
            external.setdefault(mod.name, f"module {mod.name}")
        for dep in mod.dependencies:
            if dep.name and dep.name not in local:
                external.setdefault(dep.name, f"module {mod.name}")
    for name in sorted(external):
        if name not in index:
            diags.append(Diagnostic(ERROR, f"unresolvable external dependency: {name}", external[name]))

    for i, product in enumerate(m.products):
        where = f"products[{i}]"
        if not _valid_name(product.name):
            diags.append(Diagnostic(ERROR, f"invalid product name: {product.name!r}", where))
        for target in product.targets:
            if target in declared or target in index:
                continue
            diags.append(
                Diagnostic(ERROR, f"product '{product.name}' references unknown target '{target}'", where)
            )
    return diags


# ---------------------------------------------------------------------------
# canonical serialization


_PLAIN_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.+@/-]*$")
_NUMERIC_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_AMBIGUOUS = {"true", "false", "yes", "no", "on", "off", "null"}


def _scalar(value: str) -> str:
    if _PLAIN_RE.match(value) and value.lower() not in _AMBIGUOUS and not _NUMERIC_RE.match(value):
        return value
    return json.dumps(value, ensure_ascii=False)


def _emit_list(out: list[str], indent: str, key: str, values: list[str]) -> None:
    if not values:
        return
    out.append(f"{indent}{key}:")
    for v in values:
        out.append(f"{indent}  - {_scalar(v)}")


def serialize(m: Manifest) -> str:
    """Emit the canonical form: fixed key order, two-space indent, stable quoting."""
    out = ["package:", f"  name: {_scalar(m.name)}"]
    _emit_list(out, "  ", "targets", m.targets)
    if m.products:
        out.append("  products:")
        for p in m.products:
            out.append(f"    - name: {_scalar(p.name)}")
            out.append(f"      kind: {_scalar(p.kind)}")
            _emit_list(out, "      ", "targets", p.targets)
    if m.license is not None:
        out.append(f"  license: {_scalar(m.license)}")
    if m.build_commands or m.build_artifacts:
        out.append("  build:")
        if m.build_commands:
            out.append("    commands:")
            for c in m.build_commands:
                out.append(f"      - {_scalar(c)}")
        if m.build_artifacts:
            out.append("    artifacts:")
            for src in sorted(m.build_artifacts):
                out.append(f"      {_scalar(src)}: {_scalar(m.build_artifacts[src])}")
    if m.modules:
        out.append("  modules:")
        for mod in m.modules:
            out.append(f"    - name: {_scalar(mod.name)}")
            _emit_list(out, "      ", "publicheaders", mod.public_headers)
            _emit_list(out, "      ", "sources", mod.sources)
            _emit_list(out, "      ", "targets", mod.targets)
            _emit_list(out, "      ", "dependencies", [str(d) for d in mod.dependencies])
            _emit_list(out, "      ", "tests", mod.tests)
            if mod.package_url is not None:
                out.append(f"      packageurl: {_scalar(mod.package_url)}")
            if mod.tag is not None:
                out.append(f"      tag: {_scalar(str(mod.tag))}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# generation


def _files_under(root: Path, directory: Path) -> list[str]:
    if not directory.is_dir():
        return []
    files = [p.relative_to(root).as_posix() for p in directory.rglob("*") if p.is_file()]
    return sorted(files)


def generate_manifest(d: ComponentDescriptor) -> Manifest:
    """Build a manifest for one component by enumerating its files.

    Headers come from ``header_dir``, sources from ``source_dir``, both
    relative to ``root_dir`` and sorted. When the two directories coincide,
    files are split by suffix instead so nothing is listed twice. Raises
    EmptyComponentError when no files are found at all.
    """
    root = Path(d.root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"component root is not a directory: {root}")
    header_dir = Path(d.header_dir)
    source_dir = Path(d.source_dir)
    same_dir = header_dir == source_dir
    if header_dir.exists() and source_dir.exists():
        same_dir = header_dir.resolve() == source_dir.resolve()
    if same_dir:
        everything = _files_under(root, header_dir)
        headers = [f for f in everything if Path(f).suffix in _HEADER_SUFFIXES]
        sources = [f for f in everything if Path(f).suffix not in _HEADER_SUFFIXES]
    else:
        headers = _files_under(root, header_dir)
        sources = _files_under(root, source_dir)
    if not headers and not sources:
        raise EmptyComponentError(f"component '{d.name}' has no headers or sources under {root}")
    module = ModuleSpec(
        name=d.name,
        public_headers=headers,
        sources=sources,
        targets=[d.name],
        dependencies=list(d.declared_deps),
        tests=list(d.test_targets),
    )
    return Manifest(name=d.name, targets=[d.name], modules=[module])
