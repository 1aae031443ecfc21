"""Version tags and the constraint forms the resolver understands."""

from __future__ import annotations

import re
from dataclasses import dataclass

_TAG_RE = re.compile(r"^v?(\d+)(?:\.(\d+))?(?:\.(\d+))?$")


@dataclass(frozen=True, order=True)
class VersionTag:
    """A major.minor.patch version, totally ordered component-wise."""

    major: int
    minor: int = 0
    patch: int = 0

    def __post_init__(self) -> None:
        if min(self.major, self.minor, self.patch) < 0:
            raise ValueError("version components must be non-negative")

    @classmethod
    def parse(cls, text: object) -> VersionTag:
        """Parse '0.5.1' (also 'v2', '1.0'; missing components are zero)."""
        m = _TAG_RE.match(str(text).strip())
        if m is None:
            raise ValueError(f"invalid version tag: {text!r}")
        major, minor, patch = (int(g) if g else 0 for g in m.groups())
        return cls(major, minor, patch)

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"


@dataclass(frozen=True)
class VersionConstraint:
    """Either any version (tag is None) or an exact pin."""

    tag: VersionTag | None = None

    @classmethod
    def exact(cls, tag: VersionTag | str) -> VersionConstraint:
        if not isinstance(tag, VersionTag):
            tag = VersionTag.parse(tag)
        return cls(tag)

    @classmethod
    def parse(cls, text: str) -> VersionConstraint:
        text = text.strip()
        if text in ("", "*", "any"):
            return cls()
        return cls.exact(text.lstrip("="))

    @property
    def is_exact(self) -> bool:
        return self.tag is not None

    def satisfied_by(self, version: VersionTag) -> bool:
        return self.tag is None or version == self.tag

    def __str__(self) -> str:
        return "*" if self.tag is None else f"={self.tag}"


ANY_VERSION = VersionConstraint()
