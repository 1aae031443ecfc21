"""Package index: version listings, archive fetching, and safe extraction.

The index document maps package names to version entries (url, digest,
manifest hint). Fetched archives land in a content-addressed cache:
``<cache_dir>/blobs/<digest>`` holds the bytes, ``<cache_dir>/meta/<digest>.json``
records where and when they came from. A second fetch of the same entry is a
cache hit and performs no transfer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import tarfile
import tempfile
import time
import urllib.error
import urllib.request
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import yaml

from .errors import (
    CorruptArchiveError,
    DigestMismatchError,
    DuplicateVersionError,
    NetworkError,
    NoVersionMatchesError,
    PackageNotFoundError,
    ParseError,
    UnsafePathError,
)
from .version import ANY_VERSION, VersionConstraint, VersionTag

log = logging.getLogger(__name__)

_ALLOWED_SCHEMES = ("https://", "http://", "file://")
_CHUNK = 1 << 16


@dataclass(frozen=True)
class IndexEntry:
    """One published version of one package."""

    name: str
    version: VersionTag
    url: str
    digest: str | None = None  # None means explicitly unverified
    manifest_hint: str | None = None
    components: tuple[str, ...] = ()


@dataclass
class PackageIndex:
    """All known packages, each with entries sorted newest first."""

    entries: dict[str, list[IndexEntry]] = field(default_factory=dict)

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return sorted(self.entries)

    def versions(self, name: str) -> list[VersionTag]:
        return [e.version for e in self.entries.get(name, [])]


@dataclass(frozen=True)
class FetchedArchive:
    """A cached archive plus the digest its bytes hash to."""

    local_path: Path
    digest: str
    source: IndexEntry | str


def normalize_digest(value: object) -> str | None:
    """Canonical digest form 'sha256:<hex>'; 'unverified'/empty become None."""
    if value is None:
        return None
    text = str(value).strip().lower()
    if text in ("", "unverified"):
        return None
    if ":" not in text:
        text = "sha256:" + text
    algo, _, hexdigest = text.partition(":")
    if algo != "sha256" or len(hexdigest) != 64 or any(c not in "0123456789abcdef" for c in hexdigest):
        raise ParseError(f"malformed digest: {value!r}")
    return text


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


# ---------------------------------------------------------------------------
# index documents


def parse_index(text: str) -> PackageIndex:
    """Parse an index document; entries per package are sorted descending."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(
            f"malformed index: {exc.problem or exc}",
            mark.line + 1 if mark else None,
            mark.column + 1 if mark else None,
        ) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed index: {exc}") from exc
    if data is None:
        return PackageIndex()
    if not isinstance(data, dict) or not isinstance(data.get("packages"), dict):
        raise ParseError("index must contain a top-level 'packages' mapping")

    idx = PackageIndex()
    for name, listed in data["packages"].items():
        name = str(name)
        if listed is None:
            listed = []
        if not isinstance(listed, list):
            raise ParseError(f"index entry for '{name}' must be a list")
        entries: list[IndexEntry] = []
        seen: set[VersionTag] = set()
        for item in listed:
            if not isinstance(item, dict) or "version" not in item or "url" not in item:
                raise ParseError(f"index entry for '{name}' needs 'version' and 'url'")
            try:
                version = VersionTag.parse(item["version"])
            except ValueError as exc:
                raise ParseError(f"index entry for '{name}': {exc}") from exc
            if version in seen:
                raise DuplicateVersionError(f"duplicate version for '{name}': {version}")
            seen.add(version)
            url = str(item["url"])
            if not url.startswith(_ALLOWED_SCHEMES):
                raise ParseError(f"index entry for '{name}': unsupported url scheme in {url!r}")
            components = item.get("components") or []
            if isinstance(components, str):
                components = components.split()
            entries.append(
                IndexEntry(
                    name=name,
                    version=version,
                    url=url,
                    digest=normalize_digest(item.get("digest")),
                    manifest_hint=str(item["manifest_hint"]) if item.get("manifest_hint") else None,
                    components=tuple(str(c) for c in components),
                )
            )
        entries.sort(key=lambda e: e.version, reverse=True)
        idx.entries[name] = entries
    return idx


def load_index(path: Path | str) -> PackageIndex:
    """Read and parse an index file."""
    return parse_index(Path(path).read_text(encoding="utf-8"))


def lookup(idx: PackageIndex, name: str, constraint: VersionConstraint = ANY_VERSION) -> IndexEntry:
    """Highest-version entry satisfying the constraint.

    Raises PackageNotFoundError when the name is absent and
    NoVersionMatchesError (listing what is available) when no version fits.
    """
    entries = idx.entries.get(name)
    if not entries:
        raise PackageNotFoundError(f"package not found: {name}")
    for entry in entries:  # sorted descending, so first hit is the max
        if constraint.satisfied_by(entry.version):
            return entry
    raise NoVersionMatchesError(name, constraint, [str(e.version) for e in entries])


# ---------------------------------------------------------------------------
# fetching


def _cache_dirs(cache_dir: Path) -> tuple[Path, Path]:
    blobs = cache_dir / "blobs"
    meta = cache_dir / "meta"
    blobs.mkdir(parents=True, exist_ok=True)
    meta.mkdir(parents=True, exist_ok=True)
    return blobs, meta


def find_cached(cache_dir: Path, url: str, digest: str | None) -> tuple[Path, str] | None:
    """Locate a cached blob by digest, falling back to a URL scan of the metadata."""
    blobs = Path(cache_dir) / "blobs"
    meta = Path(cache_dir) / "meta"
    if digest is not None:
        blob = blobs / digest
        return (blob, digest) if blob.is_file() else None
    if not meta.is_dir():
        return None
    for record in sorted(meta.glob("*.json")):
        try:
            info = json.loads(record.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            continue
        if info.get("url") == url:
            found = blobs / record.stem
            if found.is_file():
                return found, record.stem
    return None


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".")
    try:
        with open(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        Path(tmp).replace(path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def fetch(source: IndexEntry | str, cache_dir: Path | str, *, timeout: float = 60.0) -> FetchedArchive:
    """Fetch one archive into the cache, verifying any declared digest.

    ``source`` is an index entry or a bare URL. Cache hits return without a
    transfer. A declared digest that does not match the downloaded bytes
    raises DigestMismatchError and the downloaded copy is discarded; entries
    without a digest are fetched but logged as unverified.
    """
    cache_dir = Path(cache_dir)
    entry = source if isinstance(source, IndexEntry) else None
    url = entry.url if entry else str(source)
    if not url.startswith(_ALLOWED_SCHEMES):
        raise NetworkError(f"unsupported url scheme: {url}")
    declared = entry.digest if entry else None
    blobs, meta = _cache_dirs(cache_dir)

    cached = find_cached(cache_dir, url, declared)
    if cached is not None:
        return FetchedArchive(cached[0], cached[1], source)

    digest = hashlib.sha256()
    fd, tmp = tempfile.mkstemp(dir=str(blobs), prefix="fetch.")
    try:
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                status = getattr(resp, "status", None)
                if status is not None and not 200 <= status < 300:
                    raise NetworkError(f"fetch of {url} failed with status {status}")
                with open(fd, "wb") as out:
                    for chunk in iter(lambda: resp.read(_CHUNK), b""):
                        digest.update(chunk)
                        out.write(chunk)
        except NetworkError:
            raise
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise NetworkError(f"fetch of {url} failed: {exc}") from exc
        computed = "sha256:" + digest.hexdigest()
        if declared is not None and computed != declared:
            raise DigestMismatchError(url, declared, computed)
        blob = blobs / computed
        Path(tmp).replace(blob)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    _atomic_write_text(meta / f"{computed}.json", json.dumps({"url": url, "fetched_at": time.time()}, sort_keys=True))
    if declared is None:
        log.warning("no digest declared for %s; cached as %s unverified", url, computed)
    return FetchedArchive(blob, computed, source)


def fetch_many(
    sources: list[IndexEntry | str], cache_dir: Path | str, *, jobs: int = 4, timeout: float = 60.0
) -> list[FetchedArchive]:
    """Fetch distinct archives concurrently; results keep the input order."""
    if not sources:
        return []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [pool.submit(fetch, src, cache_dir, timeout=timeout) for src in sources]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# extraction


def _check_member_path(name: str) -> PurePosixPath:
    path = PurePosixPath(name)
    if path.is_absolute() or name.startswith(("/", "\\")) or (len(name) > 1 and name[1] == ":"):
        raise UnsafePathError(f"archive member has an absolute path: {name!r}")
    if ".." in path.parts:
        raise UnsafePathError(f"archive member escapes the extraction root: {name!r}")
    return path


def _extract_zip(path: Path, dest: Path) -> None:
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            member = _check_member_path(info.filename)
            target = dest / member
            if info.is_dir():
                target.mkdir(parents=True, exist_ok=True)
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            with zf.open(info) as src, open(target, "wb") as out:
                shutil.copyfileobj(src, out)
            if (info.external_attr >> 16) & 0o111:
                target.chmod(target.stat().st_mode | 0o755)


def _extract_tar(path: Path, dest: Path) -> None:
    with tarfile.open(path) as tf:
        for member in tf:
            rel = _check_member_path(member.name)
            target = dest / rel
            if member.isdir():
                target.mkdir(parents=True, exist_ok=True)
            elif member.isfile():
                target.parent.mkdir(parents=True, exist_ok=True)
                src = tf.extractfile(member)
                if src is None:
                    raise CorruptArchiveError(f"unreadable tar member: {member.name!r}")
                with src, open(target, "wb") as out:
                    shutil.copyfileobj(src, out)
                if member.mode & 0o111:
                    target.chmod(target.stat().st_mode | 0o755)
            else:
                raise UnsafePathError(f"unsupported tar member type: {member.name!r}")


def unpack(archive: FetchedArchive, staging_dir: Path | str) -> Path:
    """Extract an archive under a fresh staging subdirectory.

    Members with absolute paths or '..' components raise UnsafePathError
    before anything is written outside the staging root. When the archive
    holds a single top-level directory that directory is returned, otherwise
    the staging subdirectory itself.
    """
    staging_dir = Path(staging_dir)
    staging_dir.mkdir(parents=True, exist_ok=True)
    dest = Path(tempfile.mkdtemp(dir=str(staging_dir), prefix="unpack-"))
    path = archive.local_path
    try:
        if zipfile.is_zipfile(path):
            _extract_zip(path, dest)
        elif tarfile.is_tarfile(path):
            _extract_tar(path, dest)
        else:
            raise CorruptArchiveError(f"not a zip or tar archive: {path}")
    except (zipfile.BadZipFile, tarfile.TarError, EOFError) as exc:
        raise CorruptArchiveError(f"unreadable archive {path}: {exc}") from exc
    for extracted in dest.rglob("*"):
        if not extracted.resolve().is_relative_to(dest.resolve()):
            raise UnsafePathError(f"extraction escaped staging root: {extracted}")
    children = list(dest.iterdir())
    if len(children) == 1 and children[0].is_dir():
        return children[0]
    return dest


def archive_member_text(path: Path, hint: str | None = None) -> str | None:
    """Read a manifest-like member from an archive without extracting it.

    Tries the hint verbatim, then under the single top-level directory, then
    the shallowest member named package.yml. Returns None when nothing fits.
    """
    candidates = [hint, "package.yml"] if hint else ["package.yml"]
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            names = [n for n in zf.namelist() if not n.endswith("/")]
            member = _pick_member(names, candidates)
            return zf.read(member).decode("utf-8") if member else None
    if tarfile.is_tarfile(path):
        with tarfile.open(path) as tf:
            names = [m.name for m in tf.getmembers() if m.isfile()]
            member = _pick_member(names, candidates)
            if member is None:
                return None
            src = tf.extractfile(member)
            return src.read().decode("utf-8") if src else None
    raise CorruptArchiveError(f"not a zip or tar archive: {path}")


def _pick_member(names: list[str], candidates: list[str]) -> str | None:
    present = set(names)
    for cand in candidates:
        if cand in present:
            return cand
        nested = [n for n in names if n.endswith("/" + cand)]
        if nested:
            return min(nested, key=lambda n: (n.count("/"), n))
    return None
