"""Dependency resolution: graph building, ordering, conflict diagnosis, lockfiles.

Modules of the root manifests become individual graph nodes so intra-package
dependency cycles are caught; external packages stay single nodes resolved
through the index (or the database when already installed). The final plan
collapses module nodes back into their owning package, keeping the
dependencies-before-dependents order at package granularity.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import yaml

from .errors import (
    CyclicGraphError,
    EmptyRequestError,
    LockfileConflictError,
    PackageNotFoundError,
    ParseError,
    PkgforgeError,
    SchemaError,
    VersionConflictError,
)
from .index import PackageIndex, lookup
from .manifest import DependencyRef, Manifest, serialize, _scalar
from .version import ANY_VERSION, VersionConstraint, VersionTag

if TYPE_CHECKING:
    from .store import PackageDatabase

LOCAL_VERSION = VersionTag(0, 0, 0)

ManifestProvider = Callable[[str, "PackageSource"], "Manifest | None"]


@dataclass(frozen=True, order=True)
class PackageRef:
    """A package (or root module) at one resolved version."""

    name: str
    version: VersionTag = LOCAL_VERSION

    @property
    def is_local(self) -> bool:
        return self.version == LOCAL_VERSION

    def display(self) -> str:
        return self.name if self.is_local else f"{self.name}@{self.version}"

    def __str__(self) -> str:
        return self.display()


@dataclass(frozen=True)
class Requirement:
    """Who asked for a package, and how hard they pinned it."""

    target: str
    constraint: VersionConstraint = ANY_VERSION
    chain: tuple[str, ...] = ()  # package names from the root to the requester
    origin: str = "manifest"  # manifest | request | lock | installed

    def render(self) -> str:
        if self.origin == "request":
            head = f"{self.target} (requested)"
        elif self.origin == "lock":
            head = f"package.lock → {self.target}"
        elif self.origin == "installed":
            head = f"{self.target} (installed)"
        else:
            head = " → ".join(self.chain + (self.target,))
        if self.constraint.is_exact:
            head += f" ={self.constraint.tag}"
        return head


@dataclass(frozen=True)
class PackageSource:
    """Where a resolved external package comes from."""

    name: str
    version: VersionTag
    url: str | None
    digest: str | None
    origin: str  # index | stub | db
    manifest_hint: str | None = None
    components: tuple[str, ...] = ()


@dataclass
class DependencyGraph:
    """Nodes, dependent-to-dependency edges, and resolution bookkeeping."""

    nodes: set[PackageRef] = field(default_factory=set)
    edges: set[tuple[PackageRef, PackageRef]] = field(default_factory=set)
    roots: set[PackageRef] = field(default_factory=set)
    package_of: dict[PackageRef, str] = field(default_factory=dict)
    sources: dict[str, PackageSource] = field(default_factory=dict)
    requirements: dict[str, tuple[Requirement, ...]] = field(default_factory=dict)

    def owner(self, node: PackageRef) -> str:
        return self.package_of.get(node, node.name)


@dataclass
class ResolutionPlan:
    """Install order (dependencies first) plus what was already present."""

    ordered: list[PackageRef]
    already_installed: list[PackageRef] = field(default_factory=list)
    sources: dict[str, PackageSource] = field(default_factory=dict)
    generated_from: str = ""

    def to_dict(self) -> dict:
        return {
            "ordered": [{"name": p.name, "version": str(p.version)} for p in self.ordered],
            "already_installed": [{"name": p.name, "version": str(p.version)} for p in self.already_installed],
            "generated_from": self.generated_from,
        }

    def render(self) -> str:
        lines = ["plan:"]
        if not self.ordered:
            lines.append("  (nothing to install)")
        for i, ref in enumerate(self.ordered, start=1):
            shown = f"{ref.name} (local)" if ref.is_local else f"{ref.name} {ref.version}"
            lines.append(f"  {i}. {shown}")
        if self.already_installed:
            lines.append("already installed:")
            for ref in self.already_installed:
                lines.append(f"  - {ref.name} {ref.version}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph construction


class _Restart(Exception):
    """A late requirement invalidated an earlier version choice; retry."""


@dataclass(frozen=True)
class _StubHint:
    url: str | None
    tag: VersionTag | None


class _GraphBuilder:
    def __init__(
        self,
        roots: list[Manifest],
        idx: PackageIndex,
        db: "PackageDatabase | None",
        provider: ManifestProvider | None,
        requests: list[tuple[str, VersionConstraint]],
        lock: "Lockfile | None",
    ):
        self.root_manifests = roots
        self.idx = idx
        self.db = db
        self.provider = provider
        self.requests = requests
        self.lock = lock
        # requirements survive restarts so the next attempt merges them upfront
        self.known: dict[str, dict[Requirement, None]] = {}
        for name, constraint in requests:
            self._insert(Requirement(name, constraint, (), "request"))
        if lock is not None:
            for entry in lock.entries:
                self._insert(Requirement(entry.name, VersionConstraint.exact(entry.version), (), "lock"))

    def _insert(self, req: Requirement) -> None:
        self.known.setdefault(req.target, {})[req] = None

    def build(self) -> DependencyGraph:
        for _ in range(50):
            try:
                return self._attempt()
            except _Restart:
                continue
        raise PkgforgeError("dependency resolution did not converge")

    # -- one full pass ------------------------------------------------------

    def _attempt(self) -> DependencyGraph:
        g = DependencyGraph()
        self._resolved: dict[str, PackageRef] = {}
        self._local_map: dict[str, PackageRef] = {}
        self._stub_hints: dict[str, _StubHint] = {}
        self._queue: deque[str] = deque()
        pending_edges: list[tuple[PackageRef, str]] = []

        self._root_packages: dict[str, list[PackageRef]] = {}
        root_packages = self._root_packages
        for m in self.root_manifests:
            root_packages.setdefault(m.name, [])
            for mod in m.modules:
                if not mod.is_local:
                    continue
                if mod.name in self._local_map:
                    raise SchemaError(f"module '{mod.name}' is declared locally by multiple root manifests")
                node = PackageRef(mod.name, LOCAL_VERSION)
                self._local_map[mod.name] = node
                g.nodes.add(node)
                g.roots.add(node)
                g.package_of[node] = m.name
                root_packages[m.name].append(node)

        for m in self.root_manifests:
            locals_here = m.local_module_names()
            for mod in m.modules:
                if mod.is_external:
                    self._note_stub(mod.name, mod.package_url, mod.tag)
                    if mod.name not in self._local_map:
                        constraint = VersionConstraint.exact(mod.tag) if mod.tag else ANY_VERSION
                        self._require(Requirement(mod.name, constraint, (m.name,), "manifest"))
                    continue
                node = self._local_map[mod.name]
                for dep in mod.dependencies:
                    if dep.name in locals_here or dep.name in self._local_map:
                        g.edges.add((node, self._local_map[dep.name]))
                        continue
                    self._require(Requirement(dep.name, dep.constraint, (m.name,), "manifest"))
                    pending_edges.append((node, dep.name))

        for name, _constraint in self.requests:
            if name in self._local_map:
                g.roots.add(self._local_map[name])
            elif name in root_packages:
                # the request names a root manifest's package, not an index entry
                g.roots.update(root_packages[name])
            else:
                self._queue.append(name)

        while self._queue:
            name = self._queue.popleft()
            if name in self._resolved or name in self._local_map:
                continue
            source, requested = self._resolve_name(name)
            node = PackageRef(name, source.version)
            self._resolved[name] = node
            g.nodes.add(node)
            g.package_of[node] = name
            g.sources[name] = source
            if requested:
                g.roots.add(node)
            if self.provider is not None and source.origin in ("index", "stub"):
                manifest = self.provider(name, source)
                if manifest is not None:
                    self._expand(g, node, manifest, pending_edges)

        for src_node, dep_name in pending_edges:
            target = self._local_map.get(dep_name) or self._resolved.get(dep_name)
            if target is not None:
                g.edges.add((src_node, target))
            elif dep_name in root_packages:
                # package-level dependency on a local root: order after all its modules
                for node in root_packages[dep_name]:
                    if node != src_node:
                        g.edges.add((src_node, node))

        g.requirements = {name: tuple(reqs) for name, reqs in self.known.items()}
        return g

    def _note_stub(self, name: str, url: str | None, tag: VersionTag | None) -> None:
        old = self._stub_hints.get(name)
        self._stub_hints[name] = _StubHint(url or (old.url if old else None), tag or (old.tag if old else None))

    def _require(self, req: Requirement) -> None:
        fresh = req not in self.known.get(req.target, {})
        self._insert(req)
        name = req.target
        if name in self._local_map or name in self._root_packages:
            return
        if name in self._resolved:
            if fresh and not req.constraint.satisfied_by(self._resolved[name].version):
                raise _Restart()
            return
        self._queue.append(name)

    def _resolve_name(self, name: str) -> tuple[PackageSource, bool]:
        reqs = list(self.known.get(name, {}))
        requested = any(r.origin == "request" for r in reqs)
        exacts = sorted({r.constraint.tag for r in reqs if r.constraint.is_exact})
        if len(exacts) > 1:
            self._conflict(name, reqs)
        constraint = VersionConstraint(exacts[0]) if exacts else ANY_VERSION
        hint = self._stub_hints.get(name)

        if self.db is not None and name in self.db.records:
            installed = self.db.records[name].version
            if not constraint.satisfied_by(installed):
                self._conflict(name, reqs + [Requirement(name, VersionConstraint.exact(installed), (), "installed")])
            return PackageSource(name, installed, None, None, "db"), requested

        if name in self.idx:
            entry = lookup(self.idx, name, constraint)
            url, digest, origin = entry.url, entry.digest, "index"
            if hint is not None and hint.url and hint.url != entry.url:
                # the manifest's own packageurl wins over the index listing
                url, digest, origin = hint.url, None, "stub"
            return (
                PackageSource(name, entry.version, url, digest, origin, entry.manifest_hint, entry.components),
                requested,
            )

        if hint is not None and hint.url:
            version = hint.tag or LOCAL_VERSION
            if constraint.is_exact and constraint.tag is not None:
                version = constraint.tag
            return PackageSource(name, version, hint.url, None, "stub"), requested

        first = next((r for r in reqs if r.origin != "lock"), reqs[0] if reqs else Requirement(name))
        raise PackageNotFoundError(f"package not found: {first.render()}")

    def _conflict(self, name: str, reqs: list[Requirement]) -> None:
        shown = tuple(sorted(reqs, key=lambda r: r.render()))
        if any(r.origin == "lock" for r in reqs):
            detail = "; ".join(r.render() for r in shown if r.constraint.is_exact)
            raise LockfileConflictError(f"lockfile conflicts with current requirements for '{name}': {detail}")
        raise VersionConflictError(name, shown)

    def _expand(
        self, g: DependencyGraph, node: PackageRef, manifest: Manifest, pending_edges: list[tuple[PackageRef, str]]
    ) -> None:
        reqs = list(self.known.get(node.name, {}))
        base = next((r for r in reqs if r.origin not in ("lock", "installed")), None)
        chain = (base.chain if base else ()) + (node.name,)
        locals_here = manifest.local_module_names()
        for mod in manifest.modules:
            if mod.is_external:
                self._note_stub(mod.name, mod.package_url, mod.tag)
                constraint = VersionConstraint.exact(mod.tag) if mod.tag else ANY_VERSION
                self._require(Requirement(mod.name, constraint, chain, "manifest"))
                pending_edges.append((node, mod.name))
                continue
            for dep in mod.dependencies:
                if dep.name in locals_here:
                    continue  # internal to that package; its own build handles ordering
                self._require(Requirement(dep.name, dep.constraint, chain, "manifest"))
                pending_edges.append((node, dep.name))


def build_graph(
    roots: list[Manifest],
    idx: PackageIndex,
    db: "PackageDatabase | None" = None,
    *,
    manifest_provider: ManifestProvider | None = None,
    requests: list[tuple[str, VersionConstraint]] | None = None,
    lock: "Lockfile | None" = None,
) -> DependencyGraph:
    """Close the dependency graph over root manifests and direct requests.

    External dependencies resolve through the index (or the database when an
    installed version satisfies the constraint; an installed version that
    contradicts an exact pin is a conflict). ``manifest_provider`` supplies
    manifests for external packages so their own dependencies join the
    closure; without one, externals are leaf nodes.
    """
    return _GraphBuilder(list(roots), idx, db, manifest_provider, list(requests or []), lock).build()


# ---------------------------------------------------------------------------
# graph algorithms


def _adjacency(g: DependencyGraph) -> dict[PackageRef, list[PackageRef]]:
    nodes = set(g.nodes)
    for a, b in g.edges:
        nodes.add(a)
        nodes.add(b)
    adj: dict[PackageRef, list[PackageRef]] = {n: [] for n in nodes}
    for a, b in g.edges:
        adj[a].append(b)
    for n in adj:
        adj[n].sort()
    return adj


def detect_cycles(g: DependencyGraph) -> list[list[PackageRef]]:
    """Every elementary cycle, each rotated to start at its smallest member.

    The result is sorted lexicographically and empty iff the graph is a DAG.
    Enumeration walks from each start node through strictly greater nodes
    only, so each cycle is produced exactly once, already canonically rotated.
    """
    adj = _adjacency(g)
    order = sorted(adj)
    pos = {n: i for i, n in enumerate(order)}
    cycles: list[list[PackageRef]] = []
    for start in order:
        s = pos[start]
        stack: list[tuple[PackageRef, object]] = [(start, iter(adj[start]))]
        path = [start]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)  # type: ignore[arg-type]
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if nxt == start:
                cycles.append(list(path))
                continue
            if pos[nxt] < s or nxt in on_path:
                continue
            stack.append((nxt, iter(adj[nxt])))
            path.append(nxt)
            on_path.add(nxt)
    cycles.sort()
    return cycles


def topo_order(g: DependencyGraph) -> ResolutionPlan:
    """Dependencies-before-dependents order, ties broken by (name, version).

    Raises CyclicGraphError carrying detect_cycles(g) when no such order
    exists.
    """
    adj = _adjacency(g)
    remaining = {n: len(set(adj[n])) for n in adj}
    dependents: dict[PackageRef, list[PackageRef]] = {n: [] for n in adj}
    for a, b in g.edges:
        dependents[b].append(a)
    ready = [n for n in adj if remaining[n] == 0]
    heapq.heapify(ready)
    ordered: list[PackageRef] = []
    while ready:
        node = heapq.heappop(ready)
        ordered.append(node)
        for dep in sorted(set(dependents[node])):
            remaining[dep] -= 1
            if remaining[dep] == 0:
                heapq.heappush(ready, dep)
    if len(ordered) != len(adj):
        raise CyclicGraphError(detect_cycles(g))
    return ResolutionPlan(ordered=ordered)


# ---------------------------------------------------------------------------
# resolve


def _hash_inputs(roots: list[Manifest], names: list[str]) -> str:
    h = hashlib.sha256()
    for doc in sorted(serialize(m) for m in roots):
        h.update(doc.encode("utf-8"))
    for name in sorted(names):
        h.update(f"request:{name}\n".encode("utf-8"))
    return "sha256:" + h.hexdigest()


def resolve(
    request: list[str] | None,
    idx: PackageIndex,
    db: "PackageDatabase | None" = None,
    *,
    roots: list[Manifest] | None = None,
    lockfile: "Lockfile | None" = None,
    manifest_provider: ManifestProvider | None = None,
) -> ResolutionPlan:
    """Produce the package-level install plan for a request.

    ``request`` holds index package names (``name`` or ``name@x.y.z``);
    ``roots`` holds local manifests whose modules join the graph directly.
    Packages already installed at a satisfying version are skipped into
    ``already_installed``. With a lockfile, the resolution must reproduce
    exactly the locked versions or LockfileConflictError is raised.
    """
    names = [str(n) for n in (request or [])]
    root_list = list(roots or [])
    if not names and not root_list:
        raise EmptyRequestError()
    requests = []
    for text in names:
        ref = DependencyRef.parse(text)
        requests.append((ref.name, ref.constraint))

    g = build_graph(root_list, idx, db, manifest_provider=manifest_provider, requests=requests, lock=lockfile)
    topo_order(g)  # module-level cycles (including intra-package ones) are fatal

    pkg_version: dict[str, VersionTag] = {}
    for node in sorted(g.nodes):
        pkg_version.setdefault(g.owner(node), node.version)
    pkg_nodes = {name: PackageRef(name, version) for name, version in pkg_version.items()}
    pkg_graph = DependencyGraph(
        nodes=set(pkg_nodes.values()),
        edges={(pkg_nodes[g.owner(a)], pkg_nodes[g.owner(b)]) for a, b in g.edges if g.owner(a) != g.owner(b)},
        roots={pkg_nodes[g.owner(n)] for n in g.roots},
    )
    pkg_plan = topo_order(pkg_graph)

    installed = sorted(pkg_nodes[name] for name, src in g.sources.items() if src.origin == "db")
    skip = set(installed)
    plan = ResolutionPlan(
        ordered=[p for p in pkg_plan.ordered if p not in skip],
        already_installed=list(installed),
        sources=dict(g.sources),
        generated_from=_hash_inputs(root_list, names),
    )
    if lockfile is not None:
        _check_lock(plan, lockfile)
    return plan


def _check_lock(plan: ResolutionPlan, lock: "Lockfile") -> None:
    locked = {e.name: e.version for e in lock.entries}
    resolved = {name: src.version for name, src in plan.sources.items()}
    problems = []
    for name in sorted(locked.keys() | resolved.keys()):
        if name not in resolved:
            problems.append(f"locked but no longer required: {name} {locked[name]}")
        elif name not in locked:
            problems.append(f"resolved but not in lockfile: {name} {resolved[name]}")
        elif locked[name] != resolved[name]:
            problems.append(f"{name}: locked {locked[name]}, resolved {resolved[name]}")
    if problems:
        raise LockfileConflictError("lockfile cannot be reproduced: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# diagnosis


def diagnose(err: PkgforgeError) -> str:
    """Human-readable report for conflict and cycle errors."""
    if isinstance(err, VersionConflictError):
        lines = [f"version conflict for '{err.name}':"]
        lines.extend(f"  {req.render()}" for req in err.requirements)
        return "\n".join(lines)
    if isinstance(err, CyclicGraphError):
        lines = ["dependency cycle detected:"]
        for cycle in err.cycles:
            names = [node.name for node in cycle]
            lines.append("  " + " → ".join(names + [names[0]]))
        return "\n".join(lines)
    return str(err)


# ---------------------------------------------------------------------------
# lockfiles


@dataclass(frozen=True)
class LockEntry:
    name: str
    version: VersionTag
    url: str
    digest: str | None


@dataclass(frozen=True)
class Lockfile:
    """Exact pins for every index/URL-resolved package of one resolution."""

    entries: tuple[LockEntry, ...] = ()
    generated_from: str = ""


def write_lock(plan: ResolutionPlan, idx: PackageIndex | None = None) -> Lockfile:
    """Pin the plan's external packages; installed ones fall back to the index for URLs."""
    entries = []
    for name in sorted(plan.sources):
        src = plan.sources[name]
        url, digest = src.url, src.digest
        if url is None and idx is not None:
            try:
                entry = lookup(idx, name, VersionConstraint.exact(src.version))
                url, digest = entry.url, entry.digest
            except PkgforgeError:
                pass
        entries.append(LockEntry(name, src.version, url or "", digest))
    return Lockfile(tuple(entries), plan.generated_from)


def lock_to_document(lock: Lockfile) -> str:
    """Canonical lockfile text: stable ordering, stable quoting."""
    out = [f"generated_from: {_scalar(lock.generated_from)}" if lock.generated_from else "generated_from: \"\""]
    if not lock.entries:
        out.append("packages: []")
    else:
        out.append("packages:")
        for e in lock.entries:
            out.append(f"  - name: {_scalar(e.name)}")
            out.append(f"    version: {_scalar(str(e.version))}")
            out.append(f"    url: {json.dumps(e.url)}")
            out.append(f"    digest: {_scalar(e.digest) if e.digest else 'unverified'}")
    return "\n".join(out) + "\n"


def read_lock(document: str) -> Lockfile:
    """Parse a lockfile document; entries come back sorted by name."""
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed lockfile: {exc}") from exc
    if data is None:
        return Lockfile()
    if not isinstance(data, dict):
        raise ParseError("lockfile must be a mapping")
    raw_entries = data.get("packages") or []
    if not isinstance(raw_entries, list):
        raise ParseError("lockfile 'packages' must be a list")
    entries = []
    for item in raw_entries:
        if not isinstance(item, dict) or "name" not in item or "version" not in item:
            raise ParseError("lockfile entries need 'name' and 'version'")
        digest = item.get("digest")
        digest = None if digest in (None, "unverified") else str(digest)
        try:
            version = VersionTag.parse(item["version"])
        except ValueError as exc:
            raise ParseError(f"lockfile entry '{item['name']}': {exc}") from exc
        entries.append(LockEntry(str(item["name"]), version, str(item.get("url", "")), digest))
    entries.sort(key=lambda e: e.name)
    return Lockfile(tuple(entries), str(data.get("generated_from", "")))
