"""Corpus evaluation: replay fixture projects end to end and score the outcomes.

A fixture directory holds a case.json descriptor and (usually) a project/
tree.  The descriptor scripts the container engine, the commands, and any
recovery chat turns, so a whole conversation replays deterministically with
no Docker daemon and no remote assistant.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import driver as driver_mod
from .assistant import ScriptedBackend
from .errors import CorpusError, TranscriptMismatch
from .runner import FakeEngine
from .workflow import Role, SessionConfig

# Fixed timestamp for fixture zips so their bytes never drift between runs.
_FIXTURE_ZIP_DATE = (2020, 1, 1, 0, 0, 0)


@dataclass
class CorpusCase:
    name: str
    path: Path
    commands: list[str]
    user_turns: list[str]
    expected: dict
    expected_stdout: Optional[str]
    engine_script: dict
    generate: Optional[dict]

    @classmethod
    def load(cls, case_dir: Path) -> "CorpusCase":
        descriptor = case_dir / "case.json"
        if not descriptor.is_file():
            raise CorpusError(f"{case_dir} has no case.json")
        try:
            raw = json.loads(descriptor.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{descriptor}: {exc}") from exc
        for key in ("name", "commands", "expected"):
            if key not in raw:
                raise CorpusError(f"{descriptor} is missing {key!r}")
        return cls(
            name=raw["name"],
            path=case_dir,
            commands=list(raw["commands"]),
            user_turns=list(raw.get("user_turns", [])),
            expected=dict(raw["expected"]),
            expected_stdout=raw.get("expected_stdout"),
            engine_script=dict(raw.get("engine", {})),
            generate=raw.get("generate"),
        )

    def project_zip(self) -> bytes:
        """Build the upload zip for this case, byte-stable across runs."""
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as zf:
            if self.generate:
                for name, text in _generated_tree(self.generate):
                    zf.writestr(_fixture_info(name), text)
            else:
                project = self.path / "project"
                if not project.is_dir():
                    raise CorpusError(f"{self.path} has no project/ tree")
                for file in sorted(project.rglob("*")):
                    if file.is_file():
                        rel = file.relative_to(project).as_posix()
                        zf.writestr(_fixture_info(rel), file.read_bytes())
        return buffer.getvalue()


def _fixture_info(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_FIXTURE_ZIP_DATE)
    info.external_attr = 0o644 << 16
    return info


def _generated_tree(params: dict) -> list[tuple[str, str]]:
    """Synthesize a large project on the fly (used to trip the snippet budget)."""
    count = int(params.get("executables", 0))
    files = []
    for i in range(count):
        name = f"gen_{i:03d}.py"
        body_lines = [f'"""Generated stage {i:03d} of a very large pipeline."""']
        body_lines += [
            f"VALUE_{j} = {i * 1000 + j}  # synthetic constant {j}" for j in range(40)
        ]
        body_lines += [
            "",
            "def main():",
            f"    print('stage {i:03d}:', sum([{', '.join(f'VALUE_{j}' for j in range(40))}]))",
            "",
            "if __name__ == '__main__':",
            "    main()",
            "",
        ]
        files.append((name, "\n".join(body_lines)))
    return files


@dataclass
class CaseResult:
    name: str
    outcome: str
    interactions: int
    error_kind: str = ""
    detail: str = ""
    runtime: Optional[driver_mod.SessionRuntime] = None

    @property
    def succeeded(self) -> bool:
        return self.outcome in ("success", "success_after_recovery")

    def matches(self, expected: dict) -> bool:
        if self.outcome != expected.get("outcome"):
            return False
        if "turns" in expected and self.interactions != expected["turns"]:
            return False
        if "error_kind" in expected and self.error_kind != expected["error_kind"]:
            return False
        return True


@dataclass
class EvalReport:
    results: list[CaseResult] = field(default_factory=list)
    expected: dict[str, dict] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def successes(self) -> int:
        return sum(1 for r in self.results if r.succeeded)

    @property
    def success_rate(self) -> float:
        return self.successes / self.total if self.total else 0.0

    @property
    def all_as_expected(self) -> bool:
        return all(r.matches(self.expected[r.name]) for r in self.results)

    def format(self) -> str:
        lines = []
        for r in self.results:
            ok = "as-expected" if r.matches(self.expected[r.name]) else "UNEXPECTED"
            extra = f" [{r.error_kind}]" if r.error_kind else ""
            lines.append(
                f"{r.name}: {r.outcome}{extra} (interactions={r.interactions}) {ok}"
            )
        lines.append(
            f"success rate: {self.successes}/{self.total} = {self.success_rate:.3f}"
        )
        return "\n".join(lines)


def _error_kind(message: str) -> str:
    head, _, _ = message.partition(":")
    return head.strip()


def run_case(case: CorpusCase, workdir: Path) -> CaseResult:
    """Drive one fixture conversation to its end state."""
    zip_bytes = case.project_zip()
    config = SessionConfig(
        workdir=workdir,
        engine="fake",
        assistant="scripted",
        session_id=f"eval-{case.name.lower()}",
        created_utc="2020-01-01T00:00:00Z",
    )
    runtime = driver_mod.create_runtime(
        config,
        engine=FakeEngine(case.engine_script),
        backend=ScriptedBackend.from_file(driver_mod.default_transcript_path()),
    )
    outcome = driver_mod.run_headless(
        runtime, zip_bytes, case.commands, case.user_turns
    )

    if not outcome.completed:
        error = outcome.error
        return CaseResult(
            name=case.name,
            outcome="failure",
            interactions=outcome.interactions,
            error_kind=_error_kind(error),
            detail=error,
            runtime=runtime,
        )

    if case.expected_stdout is not None and outcome.stdout != case.expected_stdout:
        return CaseResult(
            name=case.name,
            outcome="failure",
            interactions=outcome.interactions,
            error_kind="StdoutMismatch",
            detail=(
                f"expected {case.expected_stdout!r}, got {outcome.stdout!r}"
            ),
            runtime=runtime,
        )

    label = "success_after_recovery" if outcome.interactions else "success"
    return CaseResult(
        name=case.name,
        outcome=label,
        interactions=outcome.interactions,
        runtime=runtime,
    )


def load_corpus(corpus_dir: Path) -> list[CorpusCase]:
    if not Path(corpus_dir).is_dir():
        raise CorpusError(f"corpus directory {corpus_dir} does not exist")
    cases = []
    for entry in sorted(Path(corpus_dir).iterdir()):
        if entry.is_dir() and (entry / "case.json").is_file():
            cases.append(CorpusCase.load(entry))
    if not cases:
        raise CorpusError(f"no cases found under {corpus_dir}")
    return cases


def run_corpus(corpus_dir: Path, workdir: Path) -> EvalReport:
    report = EvalReport()
    for case in load_corpus(corpus_dir):
        report.expected[case.name] = case.expected
        report.results.append(run_case(case, Path(workdir) / case.name))
    return report


def replay_transcript(case: CorpusCase, workdir: Path) -> CaseResult:
    """Re-run a case and check its system turns against the recorded kinds.

    The descriptor's expected_kinds list pins the exact sequence of
    system-turn kinds the conversation must produce.  Raises
    TranscriptMismatch at the first divergence.
    """
    raw = json.loads((case.path / "case.json").read_text(encoding="utf-8"))
    expected_kinds = raw.get("expected_kinds")
    if expected_kinds is None:
        raise CorpusError(f"{case.name} has no expected_kinds to replay against")
    result = run_case(case, workdir)
    assert result.runtime is not None
    actual = [
        turn.kind.value
        for turn in result.runtime.state.transcript
        if turn.role is Role.SYSTEM
    ]
    for i, expected in enumerate(expected_kinds):
        got = actual[i] if i < len(actual) else "<missing>"
        if got != expected:
            raise TranscriptMismatch(i, expected, got)
    if len(actual) > len(expected_kinds):
        raise TranscriptMismatch(
            len(expected_kinds), "<end>", actual[len(expected_kinds)]
        )
    return result
