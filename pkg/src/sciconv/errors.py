"""Exception hierarchy shared across the pipeline.

Every error that can surface in a chat transcript is formatted as
``"<ClassName>: <detail>"`` so the failure kind stays machine-readable
(the eval harness matches on the prefix).
"""

from __future__ import annotations


class SciconvError(Exception):
    """Base class for all pipeline errors."""

    def as_chat_text(self) -> str:
        return f"{type(self).__name__}: {self}"


# --- workflow ---------------------------------------------------------------

class IllegalTransition(SciconvError):
    """An event arrived in a state that does not accept it."""

    def __init__(self, step: object, event_kind: object) -> None:
        super().__init__(f"event {event_kind} is not legal in step {step}")
        self.step = step
        self.event_kind = event_kind


# --- project inspection -----------------------------------------------------

class MalformedArchive(SciconvError):
    pass


class PathEscape(SciconvError):
    """A zip entry tried to write outside the extraction root."""


class TooLarge(SciconvError):
    pass


class EmptyProject(SciconvError):
    """The archive contains no executable files at all."""


class SnippetBudgetExceeded(SciconvError):
    def __init__(self, total_needed: int, budget: int) -> None:
        super().__init__(
            f"snippets need {total_needed} chars but the budget is {budget}"
        )
        self.total_needed = total_needed
        self.budget = budget


# --- environment inference ---------------------------------------------------

class ManifestParseError(SciconvError):
    def __init__(self, path: str, line: str) -> None:
        super().__init__(f"{path}: cannot parse {line!r}")
        self.path = path
        self.line = line


class InferenceFailed(SciconvError):
    pass


class ConflictingPin(SciconvError):
    """A requested version is syntactically invalid for its package manager."""


# --- assistant bridge ---------------------------------------------------------

class AssistantUnavailable(SciconvError):
    pass


class UnparseableReply(SciconvError):
    """The assistant reply was not valid JSON for the task."""

    def __init__(self, detail: str, raw: str = "") -> None:
        super().__init__(detail)
        self.raw = raw


# --- dockerfile synthesis ------------------------------------------------------

class UnsupportedLanguage(SciconvError):
    pass


class MalformedDirective(SciconvError):
    pass


# --- container runner ----------------------------------------------------------

class EngineUnavailable(SciconvError):
    pass


class BuildFailed(SciconvError):
    def __init__(self, log: str) -> None:
        tail = log.strip().splitlines()[-1] if log.strip() else "no output"
        super().__init__(tail)
        self.log = log


class RunFailed(SciconvError):
    """Commands finished with a nonzero exit code. Carries the full report."""

    def __init__(self, report: object) -> None:
        exit_code = getattr(report, "exit_code", "?")
        stderr = getattr(report, "stderr", "")
        tail = "\n".join(stderr.strip().splitlines()[-50:])
        super().__init__(f"exit {exit_code}: {tail}" if tail else f"exit {exit_code}")
        self.report = report


class RunTimeout(SciconvError):
    pass


# --- packaging -------------------------------------------------------------------

class PackagingFailed(SciconvError):
    pass


class ImageExportFailed(SciconvError):
    pass


# --- eval harness ------------------------------------------------------------------

class CorpusError(SciconvError):
    pass


class TranscriptMismatch(SciconvError):
    def __init__(self, turn_index: int, expected: str, actual: str) -> None:
        super().__init__(
            f"turn {turn_index}: expected kind {expected}, got {actual}"
        )
        self.turn_index = turn_index
        self.expected = expected
        self.actual = actual
