"""Environment inference: languages, packages, and system requirements.

Two heuristic scanners feed the environment description: manifest parsing
(requirements.txt and friends) and import scanning over code snippets.
An assistant backend may refine the result additively.  Per-item provenance
is tracked so later merges know who to trust: User > Manifest > Assistant >
ImportScan.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConflictingPin, InferenceFailed
from .inspector import ProjectProfile, SnippetBundle

PROVENANCE_MANIFEST = "Manifest"
PROVENANCE_IMPORT_SCAN = "ImportScan"
PROVENANCE_ASSISTANT = "Assistant"
PROVENANCE_USER = "User"

_PROVENANCE_RANK = {
    PROVENANCE_IMPORT_SCAN: 0,
    PROVENANCE_ASSISTANT: 1,
    PROVENANCE_MANIFEST: 2,
    PROVENANCE_USER: 3,
}

DEFAULT_LANGUAGE_VERSIONS = {"Python": "3.11", "JavaScript": "20"}

# Package names and versions end up inside generated shell commands, so the
# accepted character sets are strict.
_NAME_RE = re.compile(r"^(@[A-Za-z0-9._-]+/)?[A-Za-z0-9][A-Za-z0-9._+-]*$")
_VERSION_RE = re.compile(r"^[A-Za-z0-9^~><=!*.,+-]+$")


def _data_text(name: str) -> str:
    return resources.files("sciconv.data").joinpath(name).read_text(encoding="utf-8")


def _load_name_set(name: str) -> frozenset[str]:
    return frozenset(
        line.strip() for line in _data_text(name).splitlines() if line.strip()
    )

PYTHON_STDLIB = _load_name_set("stdlib_python.txt")
NODE_BUILTINS = _load_name_set("builtins_node.txt")
R_BASE_PACKAGES = _load_name_set("base_r.txt")
PYTHON_ALIASES: dict[str, str] = json.loads(_data_text("import_aliases.json"))["python"]


@dataclass(frozen=True)
class PackageReq:
    manager: str  # "pip" | "apt" | "npm" | "cran" | other manager name
    name: str
    version: Optional[str] = None  # full specifier text, e.g. "==1.5.3" or "^1.3.0"
    provenance: str = PROVENANCE_IMPORT_SCAN

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ValueError(f"suspicious package name {self.name!r}")
        if self.version is not None and not _VERSION_RE.match(self.version):
            raise ValueError(f"suspicious version text {self.version!r}")

    def key(self) -> tuple[str, str]:
        return (self.manager, self.name)


@dataclass(frozen=True)
class LanguagePin:
    name: str
    version: str = "latest"
    provenance: str = PROVENANCE_IMPORT_SCAN


@dataclass(frozen=True)
class SystemPackage:
    name: str
    provenance: str = PROVENANCE_ASSISTANT

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ValueError(f"suspicious package name {self.name!r}")


@dataclass
class EnvironmentSpec:
    languages: list[LanguagePin] = field(default_factory=list)
    packages: list[PackageReq] = field(default_factory=list)
    system_packages: list[SystemPackage] = field(default_factory=list)
    base_image_hint: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "base_image_hint": self.base_image_hint,
            "languages": [
                {"name": l.name, "provenance": l.provenance, "version": l.version}
                for l in sorted(self.languages, key=lambda l: l.name)
            ],
            "packages": [
                {
                    "manager": p.manager,
                    "name": p.name,
                    "provenance": p.provenance,
                    "version": p.version,
                }
                for p in sorted(self.packages, key=lambda p: p.key())
            ],
            "system_packages": [
                {"name": s.name, "provenance": s.provenance}
                for s in sorted(self.system_packages, key=lambda s: s.name)
            ],
        }

    def to_json(self) -> str:
        """Canonical serialization: sorted keys, sorted items, 2-space indent."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def copy(self) -> "EnvironmentSpec":
        return EnvironmentSpec(
            languages=list(self.languages),
            packages=list(self.packages),
            system_packages=list(self.system_packages),
            base_image_hint=self.base_image_hint,
        )


@dataclass
class ScanResult:
    packages: list[PackageReq] = field(default_factory=list)
    language_pins: list[LanguagePin] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class AmendmentRequest:
    """A user-driven change to the environment."""

    kind: str  # "add_package" | "pin_language" | "add_system_package"
    manager: str = "pip"
    name: str = ""
    version: Optional[str] = None
    language: str = ""


# --- manifest scanning -------------------------------------------------------

_REQ_LINE = re.compile(
    r"^([A-Za-z0-9][A-Za-z0-9._-]*)"       # distribution name
    r"(?:\[[^\]]*\])?"                      # extras, ignored
    r"\s*((?:==|>=|<=|~=|!=|>|<)\s*[^#;,\s]+)?"  # first version bound
    r"\s*(?:[#;].*)?$"                      # comment or environment marker
)


def _parse_requirements(text: str, path: str, out: ScanResult) -> None:
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("-"):
            out.warnings.append(f"{path}: skipped option line {line!r}")
            continue
        match = _REQ_LINE.match(line)
        if not match:
            out.warnings.append(f"{path}: cannot parse {line!r}, skipped")
            continue
        version = match.group(2).replace(" ", "") if match.group(2) else None
        out.packages.append(
            PackageReq("pip", match.group(1), version, PROVENANCE_MANIFEST)
        )


def _parse_pyproject(text: str, path: str, out: ScanResult) -> None:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        out.warnings.append(f"{path}: invalid TOML ({exc}), skipped")
        return
    for dep in doc.get("project", {}).get("dependencies", []):
        match = _REQ_LINE.match(dep.strip())
        if not match:
            out.warnings.append(f"{path}: cannot parse dependency {dep!r}, skipped")
            continue
        version = match.group(2).replace(" ", "") if match.group(2) else None
        out.packages.append(
            PackageReq("pip", match.group(1), version, PROVENANCE_MANIFEST)
        )


def _parse_package_json(text: str, path: str, out: ScanResult) -> None:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        out.warnings.append(f"{path}: invalid JSON ({exc}), skipped")
        return
    for name, version in doc.get("dependencies", {}).items():
        try:
            out.packages.append(
                PackageReq("npm", name, version or None, PROVENANCE_MANIFEST)
            )
        except ValueError:
            out.warnings.append(f"{path}: skipped dependency {name!r}")


def requirements_packages(text: str) -> list[PackageReq]:
    """Parse requirements.txt content, dropping anything unparseable."""
    result = ScanResult()
    _parse_requirements(text, "requirements.txt", result)
    return result.packages


def scan_manifests(profile: ProjectProfile) -> ScanResult:
    """Parse every recognized manifest in the project.

    Unparseable lines are skipped with a warning note; a broken manifest never
    aborts the pipeline.  Build orchestration manifests (Makefile,
    CMakeLists.txt) only pin a compiled toolchain.
    """
    result = ScanResult()
    for entry in profile.manifests:
        name = entry.relative_path.rsplit("/", 1)[-1]
        if name in {"Makefile", "CMakeLists.txt"}:
            if not any(p.name == "C++" for p in result.language_pins):
                result.language_pins.append(
                    LanguagePin("C++", "latest", PROVENANCE_MANIFEST)
                )
            continue
        if name not in {"requirements.txt", "pyproject.toml", "package.json"}:
            continue  # recognized as a manifest, but no parser for it
        text = (profile.root / entry.relative_path).read_text(
            encoding="utf-8", errors="replace"
        )
        if name == "requirements.txt":
            _parse_requirements(text, entry.relative_path, result)
        elif name == "pyproject.toml":
            _parse_pyproject(text, entry.relative_path, result)
        else:
            _parse_package_json(text, entry.relative_path, result)
    return result


# --- import scanning ----------------------------------------------------------

_PY_IMPORT = re.compile(r"^\s*import\s+([A-Za-z_][\w.]*(?:\s*,\s*[A-Za-z_][\w.]*)*)")
_PY_FROM = re.compile(r"^\s*from\s+([A-Za-z_][\w.]*)\s+import\s")
_R_LIBRARY = re.compile(r"\b(?:library|require)\(\s*[\"']?([A-Za-z][\w.]*)[\"']?\s*\)")
_JS_REQUIRE = re.compile(r"""\brequire\(\s*['"]((?:@[\w.-]+/)?[\w.-]+)['"]\s*\)""")
_JS_IMPORT = re.compile(r"""^\s*import\b[^'"]*['"]((?:@[\w.-]+/)?[\w.-]+)['"]""")

_SNIPPET_LANGUAGE = {
    ".py": "python",
    ".r": "r",
    ".R": "r",
    ".js": "js",
    ".mjs": "js",
}


def _scan_python(text: str) -> set[str]:
    modules: set[str] = set()
    for line in text.splitlines():
        match = _PY_IMPORT.match(line)
        if match:
            for part in match.group(1).split(","):
                modules.add(part.strip().split(".")[0])
        match = _PY_FROM.match(line)
        if match:
            modules.add(match.group(1).split(".")[0])
    return {m for m in modules if m and m not in PYTHON_STDLIB}


def _scan_r(text: str) -> set[str]:
    return {
        m.group(1)
        for m in _R_LIBRARY.finditer(text)
        if m.group(1) not in R_BASE_PACKAGES
    }


def _scan_js(text: str) -> set[str]:
    names = {m.group(1) for m in _JS_REQUIRE.finditer(text)}
    for line in text.splitlines():
        match = _JS_IMPORT.match(line)
        if match:
            names.add(match.group(1))
    keep: set[str] = set()
    for name in names:
        if name.startswith("."):
            continue
        if name.startswith("node:") or name in NODE_BUILTINS:
            continue
        keep.add(name)
    return keep


def scan_imports(snippets: SnippetBundle) -> list[PackageReq]:
    """Find third-party imports in the code snippets.

    Works only on what the snippets show (by design the first lines of each
    file); dynamically loaded modules are invisible here and surface later as
    runtime failures.
    """
    found: dict[tuple[str, str], PackageReq] = {}
    for snippet in snippets.snippets:
        suffix = "." + snippet.relative_path.rsplit(".", 1)[-1] if "." in snippet.relative_path else ""
        language = _SNIPPET_LANGUAGE.get(suffix)
        if language == "python":
            for module in sorted(_scan_python(snippet.text)):
                name = PYTHON_ALIASES.get(module, module)
                req = PackageReq("pip", name, None, PROVENANCE_IMPORT_SCAN)
                found.setdefault(req.key(), req)
        elif language == "r":
            for name in sorted(_scan_r(snippet.text)):
                req = PackageReq("cran", name, None, PROVENANCE_IMPORT_SCAN)
                found.setdefault(req.key(), req)
        elif language == "js":
            for name in sorted(_scan_js(snippet.text)):
                req = PackageReq("npm", name, None, PROVENANCE_IMPORT_SCAN)
                found.setdefault(req.key(), req)
    return [found[key] for key in sorted(found)]


# --- merging and assembly -------------------------------------------------------

def _merge_package(spec: EnvironmentSpec, req: PackageReq) -> None:
    """Insert req, resolving duplicates by provenance rank (ties: newest wins)."""
    for i, existing in enumerate(spec.packages):
        if existing.key() == req.key():
            if _PROVENANCE_RANK[req.provenance] >= _PROVENANCE_RANK[existing.provenance]:
                spec.packages[i] = req
            return
    spec.packages.append(req)


def _merge_language(spec: EnvironmentSpec, pin: LanguagePin) -> None:
    for i, existing in enumerate(spec.languages):
        if existing.name == pin.name:
            if _PROVENANCE_RANK[pin.provenance] >= _PROVENANCE_RANK[existing.provenance]:
                spec.languages[i] = pin
            return
    spec.languages.append(pin)


def _merge_system_package(spec: EnvironmentSpec, pkg: SystemPackage) -> None:
    for i, existing in enumerate(spec.system_packages):
        if existing.name == pkg.name:
            if _PROVENANCE_RANK[pkg.provenance] >= _PROVENANCE_RANK[existing.provenance]:
                spec.system_packages[i] = pkg
            return
    spec.system_packages.append(pkg)


def infer_environment(
    profile: ProjectProfile,
    snippets: SnippetBundle,
    backend=None,
) -> tuple[EnvironmentSpec, list[str]]:
    """Assemble the environment from scans, optionally refined by the assistant.

    Returns the spec plus human-readable notes (parser warnings).  The
    heuristic result stands on its own: any backend failure during
    refinement falls back to it silently.

    Raises InferenceFailed when no language can be established at all.
    """
    notes: list[str] = []
    spec = EnvironmentSpec()

    for hint in profile.languages:
        version = DEFAULT_LANGUAGE_VERSIONS.get(hint, "latest")
        _merge_language(spec, LanguagePin(hint, version, PROVENANCE_IMPORT_SCAN))

    manifest_scan = scan_manifests(profile)
    notes.extend(manifest_scan.warnings)
    for pin in manifest_scan.language_pins:
        _merge_language(spec, pin)
    for req in scan_imports(snippets):
        _merge_package(spec, req)
    for req in manifest_scan.packages:
        _merge_package(spec, req)

    if not spec.languages:
        raise InferenceFailed("no project language could be established")

    if backend is not None:
        from . import assistant  # late import keeps module layers acyclic

        try:
            delta = assistant.refine_environment(spec, snippets, backend)
        except assistant.RefinementUnavailable:
            pass  # the heuristic spec is already usable
        else:
            for req in delta.add_packages:
                if req.key() not in {p.key() for p in spec.packages}:
                    _merge_package(spec, replace(req, provenance=PROVENANCE_ASSISTANT))
            for name in delta.add_system_packages:
                _merge_system_package(spec, SystemPackage(name, PROVENANCE_ASSISTANT))
            if delta.base_image_hint and spec.base_image_hint is None:
                spec.base_image_hint = delta.base_image_hint
    return spec, notes


def _validate_version(manager: str, version: str) -> None:
    ok = bool(_VERSION_RE.match(version))
    if ok and manager == "pip":
        ok = bool(re.match(r"^(==|>=|<=|~=|!=|>|<)?[0-9A-Za-z][0-9A-Za-z.*+!_-]*$", version))
    if not ok:
        raise ConflictingPin(f"version {version!r} is not valid for {manager}")


def merge_user_dependency(
    spec: EnvironmentSpec, request: AmendmentRequest
) -> EnvironmentSpec:
    """Apply a user amendment, returning a new spec.

    User provenance outranks everything, so the amendment always lands.
    Applying the same amendment twice is a no-op.
    """
    updated = spec.copy()
    if request.kind == "add_package":
        if request.version is not None:
            _validate_version(request.manager, request.version)
        _merge_package(
            updated,
            PackageReq(request.manager, request.name, request.version, PROVENANCE_USER),
        )
    elif request.kind == "pin_language":
        if not request.version or not _VERSION_RE.match(request.version):
            raise ConflictingPin(f"version {request.version!r} is not a valid pin")
        _merge_language(
            updated, LanguagePin(request.language, request.version, PROVENANCE_USER)
        )
    elif request.kind == "add_system_package":
        _merge_system_package(updated, SystemPackage(request.name, PROVENANCE_USER))
    else:
        raise ValueError(f"unknown amendment kind {request.kind!r}")
    return updated
