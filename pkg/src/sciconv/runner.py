"""Container engines: build images, run commands, collect outputs.

Two engines implement the same small interface.  RealDockerCli shells out to
the docker command line.  FakeEngine replays scripted outcomes and touches no
external process, which keeps the test corpus deterministic and fast.

Output collection never trusts the container to declare what it wrote: the
post-run /app tree is compared against the pre-run project tree by path and
content hash, and anything new or changed is copied out.
"""

from __future__ import annotations

import hashlib
import shutil
import subprocess
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    BuildFailed,
    EngineUnavailable,
    ImageExportFailed,
    RunFailed,
    RunTimeout,
)

_INSTALL_HINT = "install Docker from https://docs.docker.com/get-docker/"


def image_tag_for(session_id: str) -> str:
    return f"sciconv/{session_id}:latest"


@dataclass
class BuildResult:
    image_tag: str
    success: bool
    log: str
    duration_s: float


@dataclass
class RunReport:
    image_tag: str
    commands: tuple[str, ...]
    exit_code: int
    stdout: str
    stderr: str
    duration_s: float
    project_dir: Path
    postrun_dir: Path
    outputs_dir: Path

    @property
    def success(self) -> bool:
        return self.exit_code == 0


class RealDockerCli:
    """Drives a local docker binary via subprocess."""

    kind = "docker"

    def __init__(self, binary: str = "docker") -> None:
        self.binary = binary

    def available(self) -> bool:
        if shutil.which(self.binary) is None:
            return False
        try:
            probe = subprocess.run(
                [self.binary, "version", "--format", "{{.Server.Version}}"],
                capture_output=True,
                timeout=20,
            )
        except (OSError, subprocess.TimeoutExpired):
            return False
        return probe.returncode == 0

    def build(self, tag: str, context_dir: Path) -> tuple[bool, str]:
        proc = subprocess.run(
            [self.binary, "build", "-t", tag, str(context_dir)],
            capture_output=True,
            text=True,
        )
        return proc.returncode == 0, proc.stdout + proc.stderr

    def run(
        self,
        tag: str,
        command: str,
        project_dir: Path,
        postrun_dir: Path,
        timeout_s: float,
        network: bool,
    ) -> tuple[int, str, str]:
        # A named container (not --rm) so the post-run /app tree can be
        # copied out before removal.
        name = f"sciconv-run-{uuid.uuid4().hex[:10]}"
        argv = [self.binary, "run", "--name", name]
        if not network:
            argv += ["--network", "none"]
        argv += [tag, "sh", "-c", command]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
        except subprocess.TimeoutExpired:
            subprocess.run([self.binary, "rm", "-f", name], capture_output=True)
            raise RunTimeout(f"commands exceeded {timeout_s}s") from None
        try:
            postrun_dir.mkdir(parents=True, exist_ok=True)
            subprocess.run(
                [self.binary, "cp", f"{name}:/app/.", str(postrun_dir)],
                capture_output=True,
            )
        finally:
            subprocess.run([self.binary, "rm", "-f", name], capture_output=True)
        return proc.returncode, proc.stdout, proc.stderr

    def save(self, tag: str, dest: Path) -> None:
        proc = subprocess.run(
            [self.binary, "save", "-o", str(dest), tag], capture_output=True, text=True
        )
        if proc.returncode != 0:
            raise ImageExportFailed(proc.stderr.strip() or "docker save failed")


class FakeEngine:
    """Replays scripted build and run outcomes; no external processes.

    The script is a dict with "builds" and "runs" lists, consumed in order.
    A run entry may carry a "files" map of path -> content that the fake
    pretends the container wrote into /app.
    """

    kind = "fake"

    def __init__(self, script: dict | None = None) -> None:
        script = script or {}
        self._builds = list(script.get("builds", []))
        self._runs = list(script.get("runs", []))

    def available(self) -> bool:
        return True

    def build(self, tag: str, context_dir: Path) -> tuple[bool, str]:
        entry = self._builds.pop(0) if self._builds else {"success": True}
        return bool(entry.get("success", True)), entry.get("log", "fake build ok")

    def run(
        self,
        tag: str,
        command: str,
        project_dir: Path,
        postrun_dir: Path,
        timeout_s: float,
        network: bool,
    ) -> tuple[int, str, str]:
        entry = self._runs.pop(0) if self._runs else {"exit_code": 0}
        if entry.get("timeout"):
            raise RunTimeout(f"commands exceeded {timeout_s}s")
        if postrun_dir.exists():
            shutil.rmtree(postrun_dir)
        shutil.copytree(project_dir, postrun_dir)
        for relpath, content in entry.get("files", {}).items():
            target = postrun_dir / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
        return (
            int(entry.get("exit_code", 0)),
            entry.get("stdout", ""),
            entry.get("stderr", ""),
        )

    def save(self, tag: str, dest: Path) -> None:
        raise ImageExportFailed("the fake engine cannot export images")


ContainerEngine = RealDockerCli | FakeEngine


def ensure_available(engine: ContainerEngine) -> None:
    if not engine.available():
        raise EngineUnavailable(f"no usable container engine; {_INSTALL_HINT}")


def build_image(
    dockerfile_text: str,
    context_dir: Path,
    engine: ContainerEngine,
    tag: str,
) -> BuildResult:
    """Write the Dockerfile into the context and build it.

    Raises BuildFailed with the full build log on a nonzero build.
    """
    ensure_available(engine)
    (context_dir / "Dockerfile").write_text(dockerfile_text, encoding="utf-8")
    started = time.monotonic()
    success, log = engine.build(tag, context_dir)
    duration = time.monotonic() - started
    if not success:
        raise BuildFailed(log)
    return BuildResult(image_tag=tag, success=True, log=log, duration_s=duration)


def run_commands(
    image_tag: str,
    commands: tuple[str, ...] | list[str],
    engine: ContainerEngine,
    project_dir: Path,
    session_dir: Path,
    timeout_s: float = 3600,
    network: bool = True,
) -> RunReport:
    """Run all commands in one shell invocation inside a fresh container.

    Commands are joined with '&&' so a failing step stops the chain, mirroring
    how the emitted launcher scripts run the package.  Nonzero exit raises
    RunFailed carrying the full report (stdout/stderr are never lost).
    """
    ensure_available(engine)
    if not commands:
        raise ValueError("run_commands requires at least one command")
    joined = " && ".join(commands)
    postrun_dir = session_dir / "postrun"
    if postrun_dir.exists():
        shutil.rmtree(postrun_dir)
    outputs_dir = session_dir / "results"
    started = time.monotonic()
    exit_code, stdout, stderr = engine.run(
        image_tag, joined, project_dir, postrun_dir, timeout_s, network
    )
    report = RunReport(
        image_tag=image_tag,
        commands=tuple(commands),
        exit_code=exit_code,
        stdout=stdout,
        stderr=stderr,
        duration_s=time.monotonic() - started,
        project_dir=project_dir,
        postrun_dir=postrun_dir,
        outputs_dir=outputs_dir,
    )
    if exit_code != 0:
        raise RunFailed(report)
    return report


def _tree_hashes(root: Path) -> dict[str, str]:
    hashes: dict[str, str] = {}
    if not root.exists():
        return hashes
    for path in sorted(root.rglob("*")):
        if path.is_file():
            relpath = path.relative_to(root).as_posix()
            hashes[relpath] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def collect_outputs(report: RunReport) -> list[str]:
    """Copy files the run created or changed into the results directory.

    The diff is computed between the pre-run project tree and the post-run
    /app tree by path and content hash; matching files are left alone.
    Returns the sorted relative paths of everything collected.
    """
    before = _tree_hashes(report.project_dir)
    after = _tree_hashes(report.postrun_dir)
    collected: list[str] = []
    report.outputs_dir.mkdir(parents=True, exist_ok=True)
    for relpath, digest in sorted(after.items()):
        if before.get(relpath) == digest:
            continue
        source = report.postrun_dir / relpath
        target = report.outputs_dir / relpath
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, target)
        collected.append(relpath)
    return collected
