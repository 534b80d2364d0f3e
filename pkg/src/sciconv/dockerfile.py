"""Dockerfile synthesis from an inferred environment.

The generated file always has the same shape, in this order: one FROM line,
one apt line for system packages, toolchain setup (multi-language bases
only), dependency installation, COPY of the project tree, WORKDIR.  The
layout is deliberately rigid so that regeneration is reproducible and chat
fixes can be applied to well-known positions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .errors import MalformedDirective, UnsupportedLanguage
from .inference import EnvironmentSpec, requirements_packages
from .inspector import ProjectProfile

_BASE_TABLE = json.loads(
    resources.files("sciconv.data").joinpath("base_images.json").read_text("utf-8")
)

_IMAGE_REF_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._/:@-]*$")

FIX_PREPEND_COMMAND = "prepend_command"
FIX_ADD_PACKAGE_LINE = "add_package_line"
FIX_CHANGE_BASE_IMAGE = "change_base_image"

_FIX_KINDS = {FIX_PREPEND_COMMAND, FIX_ADD_PACKAGE_LINE, FIX_CHANGE_BASE_IMAGE}


@dataclass(frozen=True)
class FixDirective:
    kind: str
    payload: str

    def __post_init__(self) -> None:
        if self.kind not in _FIX_KINDS:
            raise MalformedDirective(f"unknown fix kind {self.kind!r}")
        if not self.payload.strip():
            raise MalformedDirective("fix payload is empty")
        if "\n" in self.payload:
            raise MalformedDirective("fix payload must be a single line")
        if self.kind == FIX_CHANGE_BASE_IMAGE and not _IMAGE_REF_RE.match(self.payload):
            raise MalformedDirective(f"{self.payload!r} is not a valid image reference")


@dataclass
class DockerfilePlan:
    base_image: str
    system_install_lines: list[str] = field(default_factory=list)
    language_setup_lines: list[str] = field(default_factory=list)
    dependency_install_lines: list[str] = field(default_factory=list)
    copy_line: str = "COPY project/ /app"
    workdir_line: str = "WORKDIR /app"

    def render(self) -> str:
        lines = [f"FROM {self.base_image}"]
        lines += self.system_install_lines
        lines += self.language_setup_lines
        lines += self.dependency_install_lines
        lines += [self.copy_line, self.workdir_line]
        return "\n".join(lines) + "\n"


def _version_tag(version: str, parts: int) -> str:
    pieces = version.split(".")
    return ".".join(pieces[:parts])


def select_base_image(spec: EnvironmentSpec) -> tuple[str, list[str]]:
    """Pick the base image and, for mixed projects, the toolchains to install.

    Shell never counts as a project language of its own: any POSIX base image
    ships a shell.  A hint on the spec (user override) wins outright.
    """
    significant = [l for l in spec.languages if l.name != "Shell"]
    table = _BASE_TABLE["single"]
    toolchains = _BASE_TABLE["toolchains"]

    if spec.base_image_hint:
        if not _IMAGE_REF_RE.match(spec.base_image_hint):
            raise UnsupportedLanguage(
                f"base image hint {spec.base_image_hint!r} is not a valid reference"
            )
        base = spec.base_image_hint
        needed = significant if len(significant) > 1 else []
    elif not significant:
        if not spec.languages:
            raise UnsupportedLanguage("no language to pick a base image for")
        base, needed = table["Shell"]["fixed"], []
    elif len(significant) == 1:
        pin = significant[0]
        rule = table.get(pin.name)
        if rule is None:
            raise UnsupportedLanguage(f"no base image rule for {pin.name}")
        if "fixed" in rule:
            base = rule["fixed"]
        elif pin.version == "latest":
            base = rule["latest"]
        else:
            base = rule["template"].format(
                version=_version_tag(pin.version, rule["version_parts"])
            )
        needed = []
    else:
        base = _BASE_TABLE["multi"]
        needed = significant

    apt_packages: set[str] = set()
    for pin in needed:
        chain = toolchains.get(pin.name)
        if chain is None:
            raise UnsupportedLanguage(f"no toolchain rule for {pin.name}")
        apt_packages.update(chain)
    return base, sorted(apt_packages)


def _apt_line(packages: list[str]) -> str:
    joined = " ".join(packages)
    return (
        "RUN apt-get update && "
        f"apt-get install -y --no-install-recommends {joined} && "
        "rm -rf /var/lib/apt/lists/*"
    )


def _quote(spec_text: str) -> str:
    return f"'{spec_text}'"


def _pip_spec(name: str, version: Optional[str]) -> str:
    if version is None:
        return name
    if version[0] in "=<>~!":
        return f"{name}{version}"
    return f"{name}=={version}"


def _requirements_route_ok(spec: EnvironmentSpec, profile: ProjectProfile) -> bool:
    """True when `pip install -r requirements.txt` covers the whole pip set."""
    if not any(e.relative_path == "requirements.txt" for e in profile.manifests):
        return False
    text = (profile.root / "requirements.txt").read_text(encoding="utf-8", errors="replace")
    declared = {(p.name, p.version) for p in requirements_packages(text)}
    wanted = {(p.name, p.version) for p in spec.packages if p.manager == "pip"}
    return wanted == declared and bool(wanted)


def build_plan(spec: EnvironmentSpec, profile: ProjectProfile) -> DockerfilePlan:
    base, toolchain_packages = select_base_image(spec)
    plan = DockerfilePlan(base_image=base)

    system = sorted(
        {s.name for s in spec.system_packages}
        | {p.name for p in spec.packages if p.manager == "apt"}
    )
    if system:
        plan.system_install_lines.append(_apt_line(system))
    if toolchain_packages:
        plan.language_setup_lines.append(_apt_line(toolchain_packages))

    pip_cmd = "pip" if base.startswith("python:") else "python3 -m pip"
    pip_packages = sorted(
        (p for p in spec.packages if p.manager == "pip"), key=lambda p: p.name
    )
    if pip_packages:
        # First upgrade the installer itself; stale pip is a classic build breaker.
        plan.dependency_install_lines.append(
            f"RUN {pip_cmd} install --no-cache-dir --upgrade pip"
        )
        if _requirements_route_ok(spec, profile):
            plan.dependency_install_lines.append(
                "COPY project/requirements.txt /tmp/requirements.txt"
            )
            plan.dependency_install_lines.append(
                f"RUN {pip_cmd} install --no-cache-dir -r /tmp/requirements.txt"
            )
        else:
            specs = " ".join(_quote(_pip_spec(p.name, p.version)) for p in pip_packages)
            plan.dependency_install_lines.append(
                f"RUN {pip_cmd} install --no-cache-dir {specs}"
            )

    npm_packages = sorted(
        (p for p in spec.packages if p.manager == "npm"), key=lambda p: p.name
    )
    if npm_packages:
        plan.language_setup_lines.append("ENV NODE_PATH=/usr/local/lib/node_modules")
        specs = " ".join(
            _quote(f"{p.name}@{p.version}" if p.version else p.name)
            for p in npm_packages
        )
        plan.dependency_install_lines.append(f"RUN npm install -g {specs}")

    cran_packages = sorted(
        (p for p in spec.packages if p.manager == "cran"), key=lambda p: p.name
    )
    if cran_packages:
        names = ", ".join(f'"{p.name}"' for p in cran_packages)
        plan.dependency_install_lines.append(
            "RUN Rscript -e 'install.packages(c(" + names + "), "
            'repos="https://cloud.r-project.org")\''
        )
    return plan


def synthesize_dockerfile(spec: EnvironmentSpec, profile: ProjectProfile) -> str:
    """Render the Dockerfile text. Pure function of its inputs."""
    return build_plan(spec, profile).render()


def apply_fix(dockerfile_text: str, fix: FixDirective) -> str:
    """Apply one chat-driven fix to generated Dockerfile text.

    Reapplying the same fix never changes the text a second time.
    """
    lines = dockerfile_text.rstrip("\n").split("\n")
    from_index = next(
        (i for i, line in enumerate(lines) if line.startswith("FROM ")), None
    )
    if from_index is None:
        raise MalformedDirective("text has no FROM line; not a generated Dockerfile")

    if fix.kind == FIX_CHANGE_BASE_IMAGE:
        lines[from_index] = f"FROM {fix.payload}"
    elif fix.kind == FIX_PREPEND_COMMAND:
        new_line = f"RUN {fix.payload}"
        if new_line not in lines:
            lines.insert(from_index + 1, new_line)
    elif fix.kind == FIX_ADD_PACKAGE_LINE:
        new_line = f"RUN {fix.payload}"
        if new_line not in lines:
            copy_index = next(
                (i for i, line in enumerate(lines) if line.startswith("COPY project/")),
                len(lines),
            )
            lines.insert(copy_index, new_line)
    return "\n".join(lines) + "\n"
