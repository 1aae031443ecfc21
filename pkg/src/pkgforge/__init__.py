"""pkgforge: a manifest-driven package and dependency manager.

Modules:
    manifest   package.yml parsing, validation, canonical output, generation
    index      version listings, cached fetching, safe extraction
    resolver   dependency graphs, ordering, conflicts, lockfiles
    store      the installed-package database and integrity checks
    lifecycle  build sandboxes, transactional install, lazy install
    cli        the pkgforge command
"""

from .errors import (
    AlreadyInstalledError,
    BuildFailedError,
    ComponentClashError,
    ConfigError,
    CorruptArchiveError,
    CyclicGraphError,
    DependedUponError,
    DigestMismatchError,
    DuplicateModuleError,
    DuplicateVersionError,
    EmptyComponentError,
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
from .version import ANY_VERSION, VersionConstraint, VersionTag
from .manifest import (
    ComponentDescriptor,
    DependencyRef,
    Diagnostic,
    Manifest,
    ModuleSpec,
    ProductSpec,
    generate_manifest,
    load_manifest,
    parse_manifest,
    serialize,
    validate,
)
from .index import (
    FetchedArchive,
    IndexEntry,
    PackageIndex,
    archive_member_text,
    fetch,
    fetch_many,
    find_cached,
    load_index,
    lookup,
    normalize_digest,
    parse_index,
    sha256_file,
    unpack,
)
from .resolver import (
    LOCAL_VERSION,
    DependencyGraph,
    LockEntry,
    Lockfile,
    PackageRef,
    PackageSource,
    Requirement,
    ResolutionPlan,
    build_graph,
    detect_cycles,
    diagnose,
    lock_to_document,
    read_lock,
    resolve,
    topo_order,
    write_lock,
)
from .store import (
    DEFAULT_BASE_COMPONENTS,
    EnvironmentReport,
    InstalledPackage,
    PackageDatabase,
    analyze_environment,
    check_integrity,
    dependents_of,
    list_installed,
    open_db,
    query,
    register,
    remove_record,
)
from .lifecycle import (
    DEFAULT_RECIPES,
    BuildPlan,
    BuildResult,
    BuildStep,
    Command,
    EnsureResult,
    InstallTransaction,
    RecipeRule,
    SourceProvider,
    TestReport,
    ensure,
    execute,
    install,
    install_packages,
    plan_build,
    run_tests,
    uninstall,
)

__version__ = "0.1.0"
