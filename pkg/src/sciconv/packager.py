"""Assemble and verify the downloadable reproducibility package.

The package is a zip holding exactly: manifest.json, Dockerfile, run.sh,
run.bat, README.md, the project/ tree, and optionally image.tar.  Everything
about the zip is pinned down (entry order, timestamps, permissions, newline
conventions) so the same session always packages to the same bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import shlex
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import PackagingFailed
from .inference import EnvironmentSpec

SCHEMA_VERSION = "1"
DOCKER_REQUIRED_MESSAGE = "Docker must be installed"

_REQUIRED_FILES = {"Dockerfile", "README.md", "manifest.json", "run.bat", "run.sh"}

# Zeroed DOS timestamp; zip cannot represent anything earlier.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class ReproPackage:
    zip_bytes: bytes
    image_tag: str
    embedded: bool
    path: Optional[Path] = None


@dataclass
class VerificationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[VerificationCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(VerificationCheck(name, passed, detail))

    def format(self) -> str:
        lines = []
        for check in self.checks:
            mark = "ok  " if check.passed else "FAIL"
            suffix = f": {check.detail}" if check.detail and not check.passed else ""
            lines.append(f"{mark} {check.name}{suffix}")
        lines.append("package is valid" if self.ok else "package is NOT valid")
        return "\n".join(lines)


def project_tree_sha256(files: list[tuple[str, bytes]]) -> str:
    """Order-independent content hash over (relative path, bytes) pairs."""
    digest = hashlib.sha256()
    for relpath, content in sorted(files):
        entry = hashlib.sha256(content).hexdigest()
        digest.update(f"{relpath}\x00{entry}\n".encode("utf-8"))
    return digest.hexdigest()


def build_manifest(
    session_id: str,
    created_utc: str,
    commands: tuple[str, ...],
    env: EnvironmentSpec,
    image_tag: str,
    project_sha256: str,
    network: bool,
) -> str:
    doc = {
        "commands": list(commands),
        "created_utc": created_utc,
        "engine_requirement": "docker",
        "environment": env.to_dict(),
        "image_tag": image_tag,
        "network": network,
        "project_sha256": project_sha256,
        "resolution": "manager-at-build-time",
        "schema_version": SCHEMA_VERSION,
        "session_id": session_id,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit_launchers(
    image_tag: str, commands: tuple[str, ...], embedded: bool
) -> tuple[str, str]:
    """Render run.sh (POSIX, LF) and run.bat (Windows, CRLF).

    Both check for docker first and bail out with the same message, then
    either load the embedded image or build from the bundled Dockerfile, and
    finally run the original command chain with results/ mounted.
    """
    joined = " && ".join(commands)

    # build/load chatter goes to stderr so launcher stdout is exactly the
    # experiment's stdout
    sh_image = (
        "docker load -i image.tar >&2"
        if embedded
        else f"docker build -t {image_tag} . >&2"
    )
    run_sh = "\n".join(
        [
            "#!/bin/sh",
            "# Re-runs the packaged experiment inside a container.",
            "set -e",
            "if ! command -v docker >/dev/null 2>&1; then",
            f'    echo "{DOCKER_REQUIRED_MESSAGE}" >&2',
            "    exit 1",
            "fi",
            'cd "$(dirname "$0")"',
            "mkdir -p results",
            sh_image,
            (
                'docker run --rm -v "$(pwd)/results":/app/results '
                f"{image_tag} sh -c {shlex.quote(joined)}"
            ),
            "",
        ]
    )

    bat_image = (
        "docker load -i image.tar 1>&2"
        if embedded
        else f"docker build -t {image_tag} . 1>&2"
    )
    bat_command = joined.replace('"', '\\"')
    run_bat = "\r\n".join(
        [
            "@echo off",
            "rem Re-runs the packaged experiment inside a container.",
            "where docker >nul 2>nul",
            "if %errorlevel% neq 0 (",
            f"    echo {DOCKER_REQUIRED_MESSAGE}",
            "    exit /b 1",
            ")",
            'cd /d "%~dp0"',
            "if not exist results mkdir results",
            f"{bat_image} || exit /b 1",
            (
                'docker run --rm -v "%cd%\\results":/app/results '
                f'{image_tag} sh -c "{bat_command}"'
            ),
            "if %errorlevel% neq 0 exit /b %errorlevel%",
            "",
        ]
    )
    return run_sh, run_bat


def _package_readme(image_tag: str, commands: tuple[str, ...], embedded: bool) -> str:
    command_lines = "\n".join(f"    {c}" for c in commands)
    image_source = (
        "a prebuilt image (image.tar) that the launcher loads"
        if embedded
        else "the bundled Dockerfile, which the launcher builds on first run"
    )
    return f"""# Reproducibility package

This archive re-runs a computational experiment inside a container, on any
machine, without installing the experiment's software stack on the host.

Requirement: {DOCKER_REQUIRED_MESSAGE} (https://docs.docker.com/get-docker/).

## How to run

* Linux / macOS: `sh run.sh`
* Windows: double-click `run.bat`

The container comes from {image_source}. The experiment then executes:

{command_lines}

Files the experiment writes appear under `results/` next to the launcher.

## Contents

* `manifest.json` - machine-readable description (commands, environment,
  image tag, project hash). Version pins are resolved by each package
  manager at image build time.
* `Dockerfile` - the generated build recipe. Regenerate rather than edit:
  its fixed layout is what makes rebuilds reproducible.
* `project/` - the original uploaded files, byte for byte.
* `run.sh` / `run.bat` - launchers (image tag: `{image_tag}`).
"""


def _project_files(project_dir: Path) -> list[tuple[str, bytes, bool]]:
    files = []
    for path in sorted(project_dir.rglob("*")):
        if path.is_file():
            relpath = path.relative_to(project_dir).as_posix()
            executable = bool(path.stat().st_mode & 0o111)
            files.append((relpath, path.read_bytes(), executable))
    return files


def _write_deterministic_zip(entries: list[tuple[str, bytes, bool]]) -> bytes:
    """entries: (archive name, content, executable). Sorted, zeroed timestamps."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, content, executable in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.create_system = 3  # unix, so mode bits survive extraction
            info.external_attr = (0o755 if executable else 0o644) << 16
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, content, compresslevel=9)
    return buffer.getvalue()


def package(
    session_id: str,
    created_utc: str,
    commands: tuple[str, ...],
    env: EnvironmentSpec,
    project_dir: Path,
    dockerfile_text: str,
    image_tag: str,
    engine,
    embed_image: bool = False,
    network: bool = True,
    out_path: Optional[Path] = None,
) -> ReproPackage:
    """Assemble the package zip; identical inputs produce identical bytes.

    With embed_image the engine exports the built image into image.tar
    (ImageExportFailed propagates when it cannot).
    """
    if not commands:
        raise PackagingFailed("cannot package a session without commands")
    project_files = _project_files(project_dir)
    if not project_files:
        raise PackagingFailed("project tree is empty")

    tree_hash = project_tree_sha256([(p, c) for p, c, _ in project_files])
    manifest = build_manifest(
        session_id, created_utc, commands, env, image_tag, tree_hash, network
    )
    run_sh, run_bat = emit_launchers(image_tag, commands, embed_image)
    readme = _package_readme(image_tag, commands, embed_image)

    entries: list[tuple[str, bytes, bool]] = [
        ("Dockerfile", dockerfile_text.encode("utf-8"), False),
        ("README.md", readme.encode("utf-8"), False),
        ("manifest.json", manifest.encode("utf-8"), False),
        ("run.sh", run_sh.encode("utf-8"), True),
        ("run.bat", run_bat.encode("utf-8"), False),
    ]
    for relpath, content, executable in project_files:
        entries.append((f"project/{relpath}", content, executable))
    if embed_image:
        with tempfile.TemporaryDirectory(prefix="sciconv-save-") as tmp:
            tar_path = Path(tmp) / "image.tar"
            engine.save(image_tag, tar_path)
            entries.append(("image.tar", tar_path.read_bytes(), False))

    zip_bytes = _write_deterministic_zip(entries)
    pkg = ReproPackage(
        zip_bytes=zip_bytes, image_tag=image_tag, embedded=embed_image, path=out_path
    )
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(zip_bytes)
    return pkg


def _zip_names(zf: zipfile.ZipFile) -> list[str]:
    return [info.filename for info in zf.infolist() if not info.is_dir()]


def verify_package(zip_bytes: bytes) -> VerificationReport:
    """Validate a package end to end: file set, manifest, hashes, launchers."""
    report = VerificationReport()
    try:
        zf = zipfile.ZipFile(io.BytesIO(zip_bytes))
    except zipfile.BadZipFile as exc:
        report.add("zip readable", False, str(exc))
        return report
    report.add("zip readable", True)

    names = set(_zip_names(zf))
    missing = _REQUIRED_FILES - names
    report.add(
        "required files present",
        not missing,
        f"missing: {sorted(missing)}" if missing else "",
    )
    unexpected = {
        n
        for n in names
        if n not in _REQUIRED_FILES
        and n != "image.tar"
        and not n.startswith("project/")
    }
    report.add(
        "no unexpected files",
        not unexpected,
        f"unexpected: {sorted(unexpected)}" if unexpected else "",
    )
    if missing:
        return report

    manifest_raw = zf.read("manifest.json").decode("utf-8")
    try:
        manifest = json.loads(manifest_raw)
        report.add("manifest parses", True)
    except json.JSONDecodeError as exc:
        report.add("manifest parses", False, str(exc))
        return report

    canonical = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    report.add("manifest canonical form", manifest_raw == canonical)

    required_keys = {
        "commands", "created_utc", "engine_requirement", "environment",
        "image_tag", "network", "project_sha256", "resolution",
        "schema_version", "session_id",
    }
    missing_keys = required_keys - manifest.keys()
    report.add(
        "manifest schema",
        manifest.get("schema_version") == SCHEMA_VERSION and not missing_keys,
        f"missing keys: {sorted(missing_keys)}" if missing_keys else
        f"schema_version={manifest.get('schema_version')!r}",
    )

    project_files = [
        (n[len("project/"):], zf.read(n)) for n in sorted(names) if n.startswith("project/")
    ]
    tree_hash = project_tree_sha256(project_files)
    report.add(
        "project hash matches",
        tree_hash == manifest.get("project_sha256"),
        f"computed {tree_hash[:12]}..., manifest says "
        f"{str(manifest.get('project_sha256'))[:12]}...",
    )

    run_sh = zf.read("run.sh").decode("utf-8")
    run_bat_bytes = zf.read("run.bat")
    run_bat = run_bat_bytes.decode("utf-8")
    tag = str(manifest.get("image_tag", ""))
    report.add(
        "launchers reference the image tag",
        bool(tag) and tag in run_sh and tag in run_bat,
    )
    commands = manifest.get("commands", [])
    cmd_ok = all(c in run_sh for c in commands) and all(c in run_bat for c in commands)
    report.add("launchers carry the commands", bool(commands) and cmd_ok)
    report.add(
        "launchers check for docker",
        DOCKER_REQUIRED_MESSAGE in run_sh and DOCKER_REQUIRED_MESSAGE in run_bat,
    )
    report.add(
        "run.sh is POSIX",
        run_sh.startswith("#!/bin/sh") and "\r" not in run_sh,
    )
    sh_info = zf.getinfo("run.sh")
    report.add(
        "run.sh is executable", bool((sh_info.external_attr >> 16) & 0o111)
    )
    report.add(
        "run.bat uses CRLF",
        run_bat_bytes.count(b"\n") == run_bat_bytes.count(b"\r\n"),
    )
    embedded = "image.tar" in names
    uses_load = "docker load -i image.tar" in run_sh and "docker load -i image.tar" in run_bat
    uses_build = f"docker build -t {tag}" in run_sh and f"docker build -t {tag}" in run_bat
    report.add(
        "image source is coherent",
        uses_load if embedded else uses_build,
        "embedded image.tar and launchers disagree" if not (uses_load if embedded else uses_build) else "",
    )
    return report
