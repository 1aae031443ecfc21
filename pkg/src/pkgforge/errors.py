"""Exception hierarchy shared by every pkgforge module.

Each error class corresponds to one failure the CLI can map to an exit-code
class; see :mod:`pkgforge.cli` for the mapping table.
"""

from __future__ import annotations


class PkgforgeError(Exception):
    """Base class for all pkgforge failures."""


class ConfigError(PkgforgeError):
    """The command-line configuration is unusable (bad flag/env/file value)."""


class ParseError(PkgforgeError):
    """A document (manifest, index, lockfile) is not well-formed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
            message += where
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(PkgforgeError):
    """A document parsed but violates the expected schema."""


class DuplicateModuleError(SchemaError):
    """Two modules in one manifest share a name."""


class EmptyComponentError(PkgforgeError):
    """Manifest generation found neither headers nor sources."""


class DuplicateVersionError(PkgforgeError):
    """An index lists the same package version twice."""


class PackageNotFoundError(PkgforgeError):
    """A requested package name is absent from the index."""


class NoVersionMatchesError(PkgforgeError):
    """A package exists but no listed version satisfies the constraint."""

    def __init__(self, name: str, constraint: object, available: list[str]):
        super().__init__(
            f"no version of '{name}' matches {constraint} (available: {', '.join(available) or 'none'})"
        )
        self.name = name
        self.available = available


class NetworkError(PkgforgeError):
    """An archive or index could not be retrieved."""


class DigestMismatchError(PkgforgeError):
    """Downloaded bytes do not hash to the declared digest."""

    def __init__(self, url: str, declared: str, computed: str):
        super().__init__(f"digest mismatch for {url}: declared {declared}, got {computed}")
        self.url = url
        self.declared = declared
        self.computed = computed


class CorruptArchiveError(PkgforgeError):
    """The fetched file is not a readable zip or tar archive."""


class UnsafePathError(PkgforgeError):
    """An archive member would escape the extraction directory."""


class VersionConflictError(PkgforgeError):
    """Two requesters pin the same package to different exact versions."""

    def __init__(self, name: str, requirements: tuple):
        super().__init__(f"version conflict for '{name}'")
        self.name = name
        self.requirements = tuple(requirements)


class CyclicGraphError(PkgforgeError):
    """The dependency graph contains at least one cycle."""

    def __init__(self, cycles: list):
        super().__init__(f"dependency graph contains {len(cycles)} cycle(s)")
        self.cycles = list(cycles)


class EmptyRequestError(PkgforgeError):
    """resolve() was called with nothing to resolve."""

    def __init__(self) -> None:
        super().__init__("nothing requested: no package names and no root manifests")


class LockfileConflictError(PkgforgeError):
    """The lockfile cannot be reproduced from the current inputs."""


class AlreadyInstalledError(PkgforgeError):
    """The database already holds a record for this package."""


class NotInstalledError(PkgforgeError):
    """No database record exists for this package."""


class ComponentClashError(PkgforgeError):
    """A component is already provided by a different installed package."""


class DependedUponError(PkgforgeError):
    """Removal refused because installed packages still depend on the target."""

    def __init__(self, name: str, dependents: list[str]):
        super().__init__(f"cannot remove '{name}': depended upon by {', '.join(dependents)}")
        self.name = name
        self.dependents = list(dependents)


class MissingRecipeError(PkgforgeError):
    """No build recipe could be determined for a package."""


class BuildFailedError(PkgforgeError):
    """A build command exited nonzero."""

    def __init__(self, package: str, command: str, exit_code: int, stdout_path: object, stderr_path: object):
        super().__init__(f"build of '{package}' failed: {command!r} exited {exit_code} (logs: {stderr_path})")
        self.package = package
        self.command = command
        self.exit_code = exit_code
        self.stdout_path = stdout_path
        self.stderr_path = stderr_path


class MissingArtifactError(PkgforgeError):
    """A build succeeded but a promised artifact is absent."""


class TestsFailedError(PkgforgeError):
    """Package tests failed and the caller demanded passing tests."""

    def __init__(self, package: str, report: object):
        super().__init__(f"tests failed for '{package}': {report}")
        self.package = package
        self.report = report


class InstallError(PkgforgeError):
    """The install transaction failed; the prefix was rolled back."""
