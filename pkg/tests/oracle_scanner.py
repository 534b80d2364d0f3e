"""Brute-force dependency oracle used to cross-check the inference engine.

Written independently of src/sciconv and kept deliberately simple: it walks a
project tree on disk, reads every file IN FULL, and extracts third-party
requirements with its own regexes and its own standard-library knowledge
(the live interpreter's module list for Python, hardcoded lists for R and
Node).  No code is shared with the engine under test.
"""

from __future__ import annotations

import json
import re
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

PY_IMPORT = re.compile(r"^\s*import\s+([A-Za-z_][\w.]*(?:\s*,\s*[A-Za-z_][\w.]*)*)", re.M)
PY_FROM = re.compile(r"^\s*from\s+([A-Za-z_][\w.]*)\s+import\s", re.M)
R_LIBRARY = re.compile(r"\b(?:library|require)\(\s*[\"']?([A-Za-z][\w.]*)[\"']?\s*\)")
JS_REQUIRE = re.compile(r"""\brequire\(\s*['"]((?:@[\w.-]+/)?[\w.-]+)['"]\s*\)""")
JS_IMPORT = re.compile(r"""^\s*import\b[^'"]*['"]((?:@[\w.-]+/)?[\w.-]+)['"]""", re.M)

R_BASE = {
    "base", "compiler", "datasets", "grDevices", "graphics", "grid", "methods",
    "parallel", "splines", "stats", "stats4", "tcltk", "tools", "translations",
    "utils",
}
NODE_BUILTIN = {
    "assert", "async_hooks", "buffer", "child_process", "cluster", "console",
    "constants", "crypto", "dgram", "diagnostics_channel", "dns", "domain",
    "events", "fs", "http", "http2", "https", "inspector", "module", "net",
    "os", "path", "perf_hooks", "process", "punycode", "querystring",
    "readline", "repl", "stream", "string_decoder", "sys", "timers", "tls",
    "trace_events", "tty", "url", "util", "v8", "vm", "worker_threads", "zlib",
}
PY_ALIASES = {
    "PIL": "Pillow",
    "Crypto": "pycryptodome",
    "bs4": "beautifulsoup4",
    "cv2": "opencv-python",
    "dateutil": "python-dateutil",
    "dotenv": "python-dotenv",
    "git": "GitPython",
    "sklearn": "scikit-learn",
    "yaml": "pyyaml",
}

REQ_LINE = re.compile(
    r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)\s*(?:\[[^\]]*\])?\s*"
    r"((?:==|>=|<=|~=|!=|>|<)\s*[^#;,\s]+)?"
)


def _walk(tree: Path) -> list[Path]:
    files = []
    for path in sorted(tree.rglob("*")):
        if path.is_file():
            parts = path.relative_to(tree).parts
            if any(p.startswith(".") or p in {"__pycache__", "node_modules"} for p in parts):
                continue
            files.append(path)
    return files


def oracle_imports(tree: Path) -> set[tuple[str, str]]:
    """Scan full file contents for third-party import statements."""
    found: set[tuple[str, str]] = set()
    for path in _walk(tree):
        suffix = path.suffix
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError:
            continue
        if suffix == ".py":
            modules: set[str] = set()
            for match in PY_IMPORT.finditer(text):
                for part in match.group(1).split(","):
                    modules.add(part.strip().split(".")[0])
            for match in PY_FROM.finditer(text):
                modules.add(match.group(1).split(".")[0])
            for module in modules:
                if module in sys.stdlib_module_names:
                    continue
                found.add(("pip", PY_ALIASES.get(module, module)))
        elif suffix in {".r", ".R"}:
            for match in R_LIBRARY.finditer(text):
                name = match.group(1)
                if name not in R_BASE:
                    found.add(("cran", name))
        elif suffix in {".js", ".mjs"}:
            names = {m.group(1) for m in JS_REQUIRE.finditer(text)}
            names |= {m.group(1) for m in JS_IMPORT.finditer(text)}
            for name in names:
                bare = name.removeprefix("node:")
                if bare in NODE_BUILTIN or name.startswith("node:"):
                    continue
                if name.startswith("."):
                    continue
                found.add(("npm", name))
    return found


def oracle_manifests(
    tree: Path,
) -> tuple[set[tuple[str, str, str | None]], set[tuple[str, str]]]:
    """Parse manifests in full; returns (packages, language pins)."""
    packages: set[tuple[str, str, str | None]] = set()
    pins: set[tuple[str, str]] = set()
    for path in _walk(tree):
        name = path.name
        if name == "requirements.txt":
            for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
                line = line.split("#", 1)[0].strip()
                if not line or line.startswith("-"):
                    continue
                match = REQ_LINE.match(line)
                if match:
                    version = match.group(2).replace(" ", "") if match.group(2) else None
                    packages.add(("pip", match.group(1), version))
        elif name == "pyproject.toml":
            try:
                doc = tomllib.loads(path.read_text(encoding="utf-8"))
            except tomllib.TOMLDecodeError:
                continue
            for dep in doc.get("project", {}).get("dependencies", []):
                match = REQ_LINE.match(dep)
                if match:
                    version = match.group(2).replace(" ", "") if match.group(2) else None
                    packages.add(("pip", match.group(1), version))
        elif name == "package.json":
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                continue
            for dep, version in doc.get("dependencies", {}).items():
                packages.add(("npm", dep, version or None))
        elif name in {"Makefile", "CMakeLists.txt"}:
            pins.add(("C++", "latest"))
    return packages, pins
