"""Event-sourced state machine driving a reproduction session.

A session walks a fixed sequence of steps from project upload to a finished
reproducibility package.  Failures from any step converge on a single side
state, WaitForChatInteraction, where the user and the assistant negotiate a
fix before resuming at (or before) the failed step.

The machine itself performs no I/O: applying an event returns the updated
state plus a list of Actions the caller must execute (inspect the archive,
start a build, emit a chat message, ...).
"""

from __future__ import annotations

import datetime as _dt
import enum
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import IllegalTransition


class Step(enum.Enum):
    PROJECT_LOCATION = "ProjectLocation"
    FIND_PROJECT_FILES = "FindProjectFiles"
    PARAMETERS_TO_USE = "ParametersToUse"
    FIND_CONFIGURATIONS = "FindConfigurations"
    BUILD_DOCKERFILE = "BuildDockerfile"
    BUILD_DOCKER_IMAGE = "BuildDockerImage"
    RUN_CONTAINER = "RunContainer"
    RESEARCH_ARTIFACT = "ResearchArtifact"
    COMPLETED = "Completed"
    # Side state entered on any failure; holds the recovery dialogue.
    WAIT_FOR_CHAT = "WaitForChatInteraction"

    def __str__(self) -> str:  # chat text and JSON use the wire name
        return self.value


# Ordinal position of the nine process steps. WAIT_FOR_CHAT is deliberately
# absent: it sits outside the pipeline order.
STEP_ORDER: dict[Step, int] = {
    Step.PROJECT_LOCATION: 0,
    Step.FIND_PROJECT_FILES: 1,
    Step.PARAMETERS_TO_USE: 2,
    Step.FIND_CONFIGURATIONS: 3,
    Step.BUILD_DOCKERFILE: 4,
    Step.BUILD_DOCKER_IMAGE: 5,
    Step.RUN_CONTAINER: 6,
    Step.RESEARCH_ARTIFACT: 7,
    Step.COMPLETED: 8,
}

PROCESS_STEPS: tuple[Step, ...] = tuple(STEP_ORDER)


def step_from_name(name: str) -> Step:
    for step in Step:
        if step.value == name:
            return step
    raise ValueError(f"unknown step name {name!r}")


class EventKind(enum.Enum):
    ARCHIVE_UPLOADED = "ArchiveUploaded"
    COMMANDS_PROVIDED = "CommandsProvided"
    STEP_SUCCEEDED = "StepSucceeded"
    STEP_FAILED = "StepFailed"
    USER_MESSAGE = "UserMessage"
    RESUME_APPROVED = "ResumeApproved"


class Trigger(enum.Enum):
    USER_INPUT = "UserInput"
    AUTO_ADVANCE = "AutoAdvance"
    ERROR = "Error"
    RESUME = "Resume"


_EVENT_TRIGGER: dict[EventKind, Trigger] = {
    EventKind.ARCHIVE_UPLOADED: Trigger.USER_INPUT,
    EventKind.COMMANDS_PROVIDED: Trigger.USER_INPUT,
    EventKind.USER_MESSAGE: Trigger.USER_INPUT,
    EventKind.STEP_SUCCEEDED: Trigger.AUTO_ADVANCE,
    EventKind.STEP_FAILED: Trigger.ERROR,
    EventKind.RESUME_APPROVED: Trigger.RESUME,
}


@dataclass(frozen=True)
class PipelineEvent:
    kind: EventKind
    error: str = ""
    text: str = ""
    commands: tuple[str, ...] = ()
    target: Optional[Step] = None

    def __post_init__(self) -> None:
        if self.kind is EventKind.STEP_FAILED and not self.error.strip():
            raise ValueError("StepFailed requires a nonempty error text")
        if self.kind is EventKind.COMMANDS_PROVIDED:
            if not self.commands or any(not c.strip() for c in self.commands):
                raise ValueError("CommandsProvided requires nonempty commands")
        if self.kind is EventKind.RESUME_APPROVED and self.target is None:
            raise ValueError("ResumeApproved requires a target step")

    @classmethod
    def archive_uploaded(cls) -> "PipelineEvent":
        return cls(EventKind.ARCHIVE_UPLOADED)

    @classmethod
    def commands_provided(cls, commands: list[str] | tuple[str, ...]) -> "PipelineEvent":
        return cls(EventKind.COMMANDS_PROVIDED, commands=tuple(commands))

    @classmethod
    def step_succeeded(cls) -> "PipelineEvent":
        return cls(EventKind.STEP_SUCCEEDED)

    @classmethod
    def step_failed(cls, error: str) -> "PipelineEvent":
        return cls(EventKind.STEP_FAILED, error=error)

    @classmethod
    def user_message(cls, text: str) -> "PipelineEvent":
        return cls(EventKind.USER_MESSAGE, text=text)

    @classmethod
    def resume_approved(cls, target: Step) -> "PipelineEvent":
        return cls(EventKind.RESUME_APPROVED, target=target)


@dataclass(frozen=True)
class TransitionRecord:
    from_step: Step
    to_step: Step
    trigger: Trigger
    timestamp: str
    note: str = ""


class TurnKind(enum.Enum):
    STATUS = "Status"
    PROMPT = "Prompt"
    ERROR = "Error"
    EXAMPLES_AVAILABLE = "ExamplesAvailable"
    RESULT = "Result"


class Role(enum.Enum):
    USER = "User"
    SYSTEM = "System"


@dataclass(frozen=True)
class ChatTurn:
    seq: int
    role: Role
    kind: TurnKind
    text: str
    step_context: Step
    examples: tuple[str, ...] = ()

    def to_wire(self) -> dict:
        return {
            "seq": self.seq,
            "role": self.role.value,
            "kind": self.kind.value,
            "text": self.text,
            "step": self.step_context.value,
            "examples": list(self.examples),
        }


class ActionKind(enum.Enum):
    INSPECT_ARCHIVE = "InspectArchive"
    PROMPT_COMMANDS = "PromptCommands"
    START_INFERENCE = "StartInference"
    SYNTHESIZE_DOCKERFILE = "SynthesizeDockerfile"
    START_BUILD = "StartBuild"
    START_RUN = "StartRun"
    START_PACKAGING = "StartPackaging"
    EMIT_MESSAGE = "EmitMessage"
    HANDLE_RECOVERY = "HandleRecovery"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    text: str = ""
    turn_kind: TurnKind = TurnKind.STATUS


@dataclass
class SessionConfig:
    workdir: Path = Path(".")
    engine: str = "fake"              # "fake" | "docker"
    assistant: str = "scripted"       # "scripted" | "remote"
    transcript_path: Optional[Path] = None
    snippet_lines: int = 50
    snippet_budget_chars: int = 120_000
    max_upload_bytes: int = 2 * 1024 ** 3
    run_timeout_s: int = 3600
    assistant_timeout_s: int = 60
    network: bool = True
    embed_image: bool = False
    # Pin these for byte-reproducible output; None means generate/now.
    session_id: Optional[str] = None
    created_utc: Optional[str] = None


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    created_utc: str
    current: Step = Step.PROJECT_LOCATION
    failed_step: Optional[Step] = None
    commands: tuple[str, ...] = ()
    history: list[TransitionRecord] = field(default_factory=list)
    transcript: list[ChatTurn] = field(default_factory=list)
    package_path: Optional[Path] = None

    def next_seq(self) -> int:
        return self.transcript[-1].seq + 1 if self.transcript else 1

    def add_turn(
        self,
        role: Role,
        kind: TurnKind,
        text: str,
        examples: tuple[str, ...] = (),
        step: Optional[Step] = None,
    ) -> ChatTurn:
        turn = ChatTurn(
            seq=self.next_seq(),
            role=role,
            kind=kind,
            text=text,
            step_context=step or self.current,
            examples=examples,
        )
        self.transcript.append(turn)
        return turn

    def last_error(self) -> str:
        for record in reversed(self.history):
            if record.trigger is Trigger.ERROR:
                return record.note
        return ""


GREETING = (
    "Hello! Upload your project as a zip archive and I will turn it into a "
    "portable, re-runnable package."
)

RECOVERY_QUESTION = "What might have caused this unexpected result?"

# What the driver must do when a step is (re-)entered.
STEP_ENTRY_ACTION: dict[Step, Action] = {
    Step.PROJECT_LOCATION: Action(
        ActionKind.EMIT_MESSAGE, text=GREETING, turn_kind=TurnKind.PROMPT
    ),
    Step.FIND_PROJECT_FILES: Action(ActionKind.INSPECT_ARCHIVE),
    Step.PARAMETERS_TO_USE: Action(ActionKind.PROMPT_COMMANDS),
    Step.FIND_CONFIGURATIONS: Action(ActionKind.START_INFERENCE),
    Step.BUILD_DOCKERFILE: Action(ActionKind.SYNTHESIZE_DOCKERFILE),
    Step.BUILD_DOCKER_IMAGE: Action(ActionKind.START_BUILD),
    Step.RUN_CONTAINER: Action(ActionKind.START_RUN),
    Step.RESEARCH_ARTIFACT: Action(ActionKind.START_PACKAGING),
    Step.COMPLETED: Action(
        ActionKind.EMIT_MESSAGE,
        text=(
            "The process successfully completed. Your reproducibility package "
            "is ready to download."
        ),
        turn_kind=TurnKind.RESULT,
    ),
}

# (current step, event kind) -> step the auto-advance moves to.
_ADVANCE: dict[tuple[Step, EventKind], Step] = {
    (Step.PROJECT_LOCATION, EventKind.ARCHIVE_UPLOADED): Step.FIND_PROJECT_FILES,
    (Step.FIND_PROJECT_FILES, EventKind.STEP_SUCCEEDED): Step.PARAMETERS_TO_USE,
    (Step.PARAMETERS_TO_USE, EventKind.COMMANDS_PROVIDED): Step.FIND_CONFIGURATIONS,
    (Step.FIND_CONFIGURATIONS, EventKind.STEP_SUCCEEDED): Step.BUILD_DOCKERFILE,
    (Step.BUILD_DOCKERFILE, EventKind.STEP_SUCCEEDED): Step.BUILD_DOCKER_IMAGE,
    (Step.BUILD_DOCKER_IMAGE, EventKind.STEP_SUCCEEDED): Step.RUN_CONTAINER,
    (Step.RUN_CONTAINER, EventKind.STEP_SUCCEEDED): Step.RESEARCH_ARTIFACT,
    (Step.RESEARCH_ARTIFACT, EventKind.STEP_SUCCEEDED): Step.COMPLETED,
}


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def new_session(config: SessionConfig) -> SessionState:
    """Create a fresh session in ProjectLocation with a greeting turn."""
    state = SessionState(
        session_id=config.session_id or uuid.uuid4().hex[:12],
        config=config,
        created_utc=config.created_utc or _utcnow(),
    )
    state.add_turn(Role.SYSTEM, TurnKind.PROMPT, GREETING, step=Step.PROJECT_LOCATION)
    return state


def resume_target(state: SessionState, inferred: Step) -> Step:
    """Pick the step a recovery resumes at.

    The inferred step is honored only if it does not lie beyond the failed
    step; otherwise the failed step itself is retried.  A non-process inferred
    step also falls back to the failed step.
    """
    if state.failed_step is None:
        raise ValueError("resume_target requires a failed step")
    failed_ord = STEP_ORDER[state.failed_step]
    inferred_ord = STEP_ORDER.get(inferred)
    if inferred_ord is None or inferred_ord > failed_ord:
        return state.failed_step
    return inferred


def _record(state: SessionState, to_step: Step, trigger: Trigger, note: str) -> None:
    state.history.append(
        TransitionRecord(
            from_step=state.current,
            to_step=to_step,
            trigger=trigger,
            timestamp=_utcnow(),
            note=note,
        )
    )
    state.current = to_step


def apply_event(
    state: SessionState, event: PipelineEvent
) -> tuple[SessionState, list[Action]]:
    """Apply one event, mutating and returning the state plus follow-up Actions.

    Raises IllegalTransition for events the current step does not accept;
    the state is left untouched in that case.
    """
    kind = event.kind
    current = state.current

    # Completed absorbs nothing but user chatter.
    if current is Step.COMPLETED:
        if kind is EventKind.USER_MESSAGE:
            _record(state, Step.COMPLETED, Trigger.USER_INPUT, "post-completion message")
            return state, [
                Action(
                    ActionKind.EMIT_MESSAGE,
                    text=(
                        "This session is complete. Download the package above, or "
                        "start a new session for another project."
                    ),
                    turn_kind=TurnKind.STATUS,
                )
            ]
        raise IllegalTransition(current.value, kind.value)

    if kind is EventKind.STEP_FAILED:
        # Single failure sink: every failure lands in WaitForChatInteraction.
        if current is not Step.WAIT_FOR_CHAT:
            state.failed_step = current
        _record(state, Step.WAIT_FOR_CHAT, Trigger.ERROR, event.error)
        return state, [
            Action(ActionKind.EMIT_MESSAGE, text=event.error, turn_kind=TurnKind.ERROR),
            Action(
                ActionKind.EMIT_MESSAGE,
                text=RECOVERY_QUESTION,
                turn_kind=TurnKind.EXAMPLES_AVAILABLE,
            ),
        ]

    if current is Step.WAIT_FOR_CHAT:
        if kind is EventKind.USER_MESSAGE:
            _record(state, Step.WAIT_FOR_CHAT, Trigger.USER_INPUT, event.text)
            return state, [Action(ActionKind.HANDLE_RECOVERY, text=event.text)]
        if kind is EventKind.RESUME_APPROVED:
            assert event.target is not None
            target = resume_target(state, event.target)
            if target is Step.BUILD_DOCKERFILE and not state.commands:
                raise IllegalTransition(current.value, "resume without commands")
            state.failed_step = None
            _record(state, target, Trigger.RESUME, f"resumed at {target}")
            return state, [STEP_ENTRY_ACTION[target]]
        raise IllegalTransition(current.value, kind.value)

    advance = _ADVANCE.get((current, kind))
    if advance is None:
        raise IllegalTransition(current.value, kind.value)

    if kind is EventKind.COMMANDS_PROVIDED:
        state.commands = event.commands
    if advance is Step.BUILD_DOCKERFILE and not state.commands:
        raise IllegalTransition(current.value, "advance without commands")

    _record(state, advance, _EVENT_TRIGGER[kind], "")
    return state, [STEP_ENTRY_ACTION[advance]]


def fold_history(records: list[TransitionRecord]) -> Step:
    """Replay a history chain and return the final step.

    Validates the event-sourcing invariants: the chain starts at
    ProjectLocation and each record continues where the previous one ended.
    """
    at = Step.PROJECT_LOCATION
    for i, record in enumerate(records):
        if record.from_step is not at:
            raise ValueError(
                f"record {i} starts at {record.from_step}, expected {at}"
            )
        if record.trigger is Trigger.ERROR and record.to_step is not Step.WAIT_FOR_CHAT:
            raise ValueError(f"record {i}: Error trigger must land in WaitForChatInteraction")
        if record.trigger is Trigger.RESUME and record.from_step is not Step.WAIT_FOR_CHAT:
            raise ValueError(f"record {i}: Resume trigger must leave WaitForChatInteraction")
        at = record.to_step
    return at
