"""Archive ingestion and project inspection.

Unpacks the uploaded zip safely, classifies every file into exactly one of
four classes (Executable, Manifest, Data, Other) using auditable rule tables,
and cuts the text snippets later fed to dependency inference.
"""

from __future__ import annotations

import hashlib
import io
import zipfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .errors import (
    EmptyProject,
    MalformedArchive,
    PathEscape,
    SnippetBudgetExceeded,
    TooLarge,
)


@dataclass(frozen=True)
class IngestLimits:
    max_total_bytes: int = 2 * 1024 ** 3  # uncompressed


# Directories whose contents never take part in classification or snippets.
_EXCLUDED_DIR_NAMES = {"__pycache__", "node_modules"}


def _is_excluded(relpath: PurePosixPath) -> bool:
    for part in relpath.parts[:-1]:
        if part in _EXCLUDED_DIR_NAMES or part.startswith("."):
            return True
    name = relpath.parts[-1]
    return name in _EXCLUDED_DIR_NAMES


FileClass = str  # "Executable" | "Manifest" | "Data" | "Other"

EXECUTABLE_EXTENSIONS = {
    ".py", ".sh", ".bash", ".r", ".R", ".jl", ".c", ".cpp", ".cc",
    ".java", ".js", ".mjs", ".pl", ".m",
}

MANIFEST_NAMES = {
    "requirements.txt", "environment.yml", "Pipfile", "pyproject.toml",
    "setup.py", "package.json", "Makefile", "CMakeLists.txt", "Cargo.toml",
    "DESCRIPTION", "pom.xml", "build.gradle", "Gemfile",
}

DATA_EXTENSIONS = {
    ".csv", ".tsv", ".json", ".dat", ".txt", ".parquet", ".h5", ".npz", ".zip",
}

_EXT_LANGUAGE = {
    ".py": "Python",
    ".sh": "Shell",
    ".bash": "Shell",
    ".r": "R",
    ".R": "R",
    ".jl": "Julia",
    ".c": "C",
    ".cpp": "C++",
    ".cc": "C++",
    ".java": "Java",
    ".js": "JavaScript",
    ".mjs": "JavaScript",
    ".pl": "Perl",
    ".m": "MATLAB",
}

_SHEBANG_LANGUAGE = (
    ("python", "Python"),
    ("bash", "Shell"),
    ("/sh", "Shell"),
    ("env sh", "Shell"),
    ("Rscript", "R"),
    ("node", "JavaScript"),
    ("perl", "Perl"),
    ("julia", "Julia"),
)


@dataclass(frozen=True)
class FileEntry:
    relative_path: str
    size: int
    file_class: FileClass = "Other"
    language_hint: str = ""
    is_binary: bool = False


@dataclass
class ProjectArchive:
    root: Path
    sha256: str
    entries: list[FileEntry] = field(default_factory=list)
    total_bytes: int = 0


@dataclass
class ProjectProfile:
    root: Path
    executables: list[FileEntry] = field(default_factory=list)
    manifests: list[FileEntry] = field(default_factory=list)
    data_files: list[FileEntry] = field(default_factory=list)
    others: list[FileEntry] = field(default_factory=list)

    @property
    def languages(self) -> list[str]:
        seen: list[str] = []
        for entry in self.executables:
            hint = entry.language_hint
            if hint and hint not in seen:
                seen.append(hint)
        return seen

    def summary(self) -> str:
        return (
            f"{len(self.executables)} executable, {len(self.manifests)} manifest, "
            f"{len(self.data_files)} data, {len(self.others)} other files"
        )


@dataclass(frozen=True)
class Snippet:
    relative_path: str
    text: str


@dataclass
class SnippetBundle:
    snippets: list[Snippet]
    lines_per_file: int
    total_chars: int
    budget_chars: int


def _safe_relpath(name: str) -> PurePosixPath:
    # Zip names use forward slashes; backslashes are treated as separators
    # too so a crafted archive cannot smuggle them past the check.
    cleaned = name.replace("\\", "/")
    path = PurePosixPath(cleaned)
    if path.is_absolute() or (path.parts and ":" in path.parts[0]):
        raise PathEscape(f"absolute entry path {name!r}")
    if ".." in path.parts:
        raise PathEscape(f"entry path {name!r} escapes the extraction root")
    return path


def ingest_archive(
    zip_bytes: bytes, dest: Path, limits: IngestLimits | None = None
) -> ProjectArchive:
    """Extract the uploaded zip under dest and inventory its files.

    Entries are listed in lexicographic order of their relative paths, so the
    same archive bytes always produce the same inventory.  Hidden and cache
    directories are extracted but kept out of the inventory.
    """
    limits = limits or IngestLimits()
    buf = io.BytesIO(zip_bytes)
    if not zipfile.is_zipfile(buf):
        raise MalformedArchive("not a zip archive")

    digest = hashlib.sha256(zip_bytes).hexdigest()
    try:
        zf = zipfile.ZipFile(buf)
        infos = zf.infolist()
    except zipfile.BadZipFile as exc:
        raise MalformedArchive(str(exc)) from None

    total = sum(info.file_size for info in infos if not info.is_dir())
    if total > limits.max_total_bytes:
        raise TooLarge(
            f"archive expands to {total} bytes, limit {limits.max_total_bytes}"
        )

    dest.mkdir(parents=True, exist_ok=True)
    entries: list[FileEntry] = []
    for info in sorted(infos, key=lambda i: i.filename):
        if info.is_dir():
            continue
        relpath = _safe_relpath(info.filename)
        if not relpath.parts:
            continue
        target = dest.joinpath(*relpath.parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        with zf.open(info) as src:
            data = src.read()
        target.write_bytes(data)
        if _is_excluded(relpath):
            continue
        entries.append(FileEntry(relative_path=str(relpath), size=info.file_size))
    return ProjectArchive(root=dest, sha256=digest, entries=entries, total_bytes=total)


def _read_head(root: Path, relpath: str, length: int = 8192) -> bytes:
    with open(root / relpath, "rb") as handle:
        return handle.read(length)


def _looks_binary(head: bytes) -> bool:
    return b"\x00" in head


def _shebang_hint(head: bytes) -> str:
    if not head.startswith(b"#!"):
        return ""
    first = head.split(b"\n", 1)[0].decode("utf-8", errors="replace")
    for needle, language in _SHEBANG_LANGUAGE:
        if needle in first:
            return language
    return "Shell" if first.startswith("#!") else ""


def classify_file(root: Path, entry: FileEntry) -> FileEntry:
    """Assign exactly one class plus an optional language hint."""
    relpath = PurePosixPath(entry.relative_path)
    name = relpath.name
    suffix = relpath.suffix
    head = _read_head(root, entry.relative_path)
    binary = _looks_binary(head)

    if name in MANIFEST_NAMES:
        file_class, hint = "Manifest", ""
    elif suffix in EXECUTABLE_EXTENSIONS:
        file_class, hint = "Executable", _EXT_LANGUAGE.get(suffix, "")
    elif not binary and _shebang_hint(head):
        file_class, hint = "Executable", _shebang_hint(head)
    elif suffix.lower() in DATA_EXTENSIONS:
        file_class, hint = "Data", ""
    else:
        file_class, hint = "Other", ""
    return FileEntry(
        relative_path=entry.relative_path,
        size=entry.size,
        file_class=file_class,
        language_hint=hint,
        is_binary=binary,
    )


def classify_files(archive: ProjectArchive) -> ProjectProfile:
    """Classify every inventoried file.

    Raises EmptyProject when the archive holds nothing executable, since the
    pipeline would have nothing to run.
    """
    profile = ProjectProfile(root=archive.root)
    buckets = {
        "Executable": profile.executables,
        "Manifest": profile.manifests,
        "Data": profile.data_files,
        "Other": profile.others,
    }
    for entry in archive.entries:
        classified = classify_file(archive.root, entry)
        buckets[classified.file_class].append(classified)
    if not profile.executables:
        raise EmptyProject("the archive contains no executable files")
    return profile


def extract_snippets(
    profile: ProjectProfile,
    lines_per_file: int = 50,
    budget_chars: int = 120_000,
) -> SnippetBundle:
    """Cut the first lines_per_file lines of each executable and manifest.

    Binary files are skipped entirely.  The combined size of all snippets
    must fit budget_chars; otherwise SnippetBudgetExceeded reports how much
    space would have been needed.
    """
    candidates = sorted(
        profile.executables + profile.manifests,
        key=lambda e: e.relative_path,
    )
    snippets: list[Snippet] = []
    total = 0
    for entry in candidates:
        if entry.is_binary:
            continue
        text = (profile.root / entry.relative_path).read_text(
            encoding="utf-8", errors="replace"
        )
        lines = text.splitlines()[:lines_per_file]
        snippet = "\n".join(lines)
        snippets.append(Snippet(relative_path=entry.relative_path, text=snippet))
        total += len(snippet)
    if total > budget_chars:
        raise SnippetBudgetExceeded(total_needed=total, budget=budget_chars)
    return SnippetBundle(
        snippets=snippets,
        lines_per_file=lines_per_file,
        total_chars=total,
        budget_chars=budget_chars,
    )
