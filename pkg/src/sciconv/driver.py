"""Session driver: executes workflow Actions against the concrete modules.

The workflow core decides WHAT must happen next; this module makes it happen
(unpack, infer, synthesize, build, run, package) and narrates progress into
the chat transcript.  Pipeline errors never escape: they become StepFailed
events, which the workflow routes to the recovery state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional

from . import assistant as assistant_mod
from . import dockerfile as dockerfile_mod
from . import inference as inference_mod
from . import inspector as inspector_mod
from . import packager as packager_mod
from . import runner as runner_mod
from .errors import (
    AssistantUnavailable,
    BuildFailed,
    ConflictingPin,
    MalformedDirective,
    RunFailed,
    SciconvError,
    TooLarge,
)
from .workflow import (
    RECOVERY_QUESTION,
    Action,
    ActionKind,
    ChatTurn,
    EventKind,
    PipelineEvent,
    Role,
    SessionConfig,
    SessionState,
    Step,
    TurnKind,
    apply_event,
    fold_history,
    new_session,
)

COMMANDS_QUESTION = (
    "How should the experiment be executed? Enter the command(s), one per line."
)

_STEP_STATUS: dict[Step, str] = {
    Step.FIND_PROJECT_FILES: (
        "Archive received. Scanning the project for executable and "
        "configuration files..."
    ),
    Step.FIND_CONFIGURATIONS: (
        "Inferring the software environment from manifests and imports..."
    ),
    Step.BUILD_DOCKERFILE: "Generating a Dockerfile for the project...",
    Step.BUILD_DOCKER_IMAGE: "Building the Docker image...",
    Step.RUN_CONTAINER: "Running the experiment inside the container...",
    Step.RESEARCH_ARTIFACT: "Packaging the reproducibility artifact...",
}

_PROMPT_EXAMPLES: dict[str, list[str]] = json.loads(
    resources.files("sciconv.data").joinpath("prompt_examples.json").read_text("utf-8")
)

_MAX_EVENTS_PER_DRIVE = 64  # hard stop against event loops


def default_transcript_path() -> Path:
    return Path(str(resources.files("sciconv.data").joinpath("scripted_transcript.json")))


@dataclass
class SessionRuntime:
    """A session's mutable working set: state machine plus pipeline artifacts."""

    state: SessionState
    engine: runner_mod.ContainerEngine
    backend: assistant_mod.AssistantBackend
    session_dir: Path
    pending_zip: Optional[bytes] = None
    archive: Optional[inspector_mod.ProjectArchive] = None
    profile: Optional[inspector_mod.ProjectProfile] = None
    snippets: Optional[inspector_mod.SnippetBundle] = None
    env: Optional[inference_mod.EnvironmentSpec] = None
    dockerfile_text: Optional[str] = None
    dockerfile_fixes: list[dockerfile_mod.FixDirective] = field(default_factory=list)
    amendments: list[inference_mod.AmendmentRequest] = field(default_factory=list)
    build_result: Optional[runner_mod.BuildResult] = None
    run_report: Optional[runner_mod.RunReport] = None
    collected_outputs: list[str] = field(default_factory=list)

    @property
    def image_tag(self) -> str:
        return runner_mod.image_tag_for(self.state.session_id)

    @property
    def project_dir(self) -> Path:
        return self.session_dir / "project"

    @property
    def package_path(self) -> Path:
        return self.session_dir / "package.zip"


def _make_engine(config: SessionConfig) -> runner_mod.ContainerEngine:
    if config.engine == "docker":
        return runner_mod.RealDockerCli()
    return runner_mod.FakeEngine()


def _make_backend(config: SessionConfig) -> assistant_mod.AssistantBackend:
    if config.assistant == "remote":
        return assistant_mod.RemoteBackend.from_env(timeout_s=config.assistant_timeout_s)
    path = config.transcript_path or default_transcript_path()
    return assistant_mod.ScriptedBackend.from_file(path)


def create_runtime(
    config: SessionConfig,
    engine: runner_mod.ContainerEngine | None = None,
    backend: assistant_mod.AssistantBackend | None = None,
) -> SessionRuntime:
    state = new_session(config)
    session_dir = Path(config.workdir) / "sessions" / state.session_id
    session_dir.mkdir(parents=True, exist_ok=True)
    return SessionRuntime(
        state=state,
        engine=engine if engine is not None else _make_engine(config),
        backend=backend if backend is not None else _make_backend(config),
        session_dir=session_dir,
    )


def submit_upload(runtime: SessionRuntime, zip_bytes: bytes) -> list[ChatTurn]:
    """Accept the uploaded archive bytes and kick the pipeline off."""
    limit = runtime.state.config.max_upload_bytes
    if len(zip_bytes) > limit:
        raise TooLarge(f"upload is {len(zip_bytes)} bytes, limit {limit}")
    runtime.pending_zip = zip_bytes
    return drive(runtime, PipelineEvent.archive_uploaded())


def drive(runtime: SessionRuntime, event: PipelineEvent) -> list[ChatTurn]:
    """Apply one external event and run the pipeline as far as it goes.

    Returns the chat turns appended during this call.  Raises
    IllegalTransition (only) for events the current step cannot accept;
    everything that happens after acceptance is reported in the transcript.
    """
    state = runtime.state
    first_new = len(state.transcript)
    queue: list[PipelineEvent] = [event]
    applied = 0
    while queue:
        current = queue.pop(0)
        applied += 1
        if applied > _MAX_EVENTS_PER_DRIVE:
            raise RuntimeError("event cascade did not terminate")
        _record_user_turn(state, current)
        before = state.current
        state, actions = apply_event(state, current)
        if state.current is not before:
            status = _STEP_STATUS.get(state.current)
            if status:
                state.add_turn(Role.SYSTEM, TurnKind.STATUS, status)
        for action in actions:
            queue.extend(_execute(runtime, action))
    assert fold_history(state.history) is state.current
    return state.transcript[first_new:]


def _record_user_turn(state: SessionState, event: PipelineEvent) -> None:
    if event.kind is EventKind.USER_MESSAGE:
        state.add_turn(Role.USER, TurnKind.STATUS, event.text)
    elif event.kind is EventKind.COMMANDS_PROVIDED:
        state.add_turn(Role.USER, TurnKind.STATUS, "\n".join(event.commands))


def _execute(runtime: SessionRuntime, action: Action) -> list[PipelineEvent]:
    try:
        return _execute_inner(runtime, action)
    except SciconvError as exc:
        return [PipelineEvent.step_failed(exc.as_chat_text())]
    except Exception as exc:  # noqa: BLE001 - a crash must still reach the chat
        return [PipelineEvent.step_failed(f"Internal: {exc}")]


def _execute_inner(runtime: SessionRuntime, action: Action) -> list[PipelineEvent]:
    state = runtime.state
    kind = action.kind

    if kind is ActionKind.EMIT_MESSAGE:
        examples: tuple[str, ...] = ()
        if action.turn_kind is TurnKind.EXAMPLES_AVAILABLE:
            examples = tuple(_PROMPT_EXAMPLES.get("Recovery", []))
        state.add_turn(Role.SYSTEM, action.turn_kind, action.text, examples=examples)
        return []

    if kind is ActionKind.PROMPT_COMMANDS:
        state.add_turn(
            Role.SYSTEM,
            TurnKind.EXAMPLES_AVAILABLE,
            COMMANDS_QUESTION,
            examples=tuple(_PROMPT_EXAMPLES.get("ParametersToUse", [])),
        )
        return []

    if kind is ActionKind.INSPECT_ARCHIVE:
        if runtime.pending_zip is None:
            return [PipelineEvent.step_failed("MalformedArchive: no upload present")]
        limits = inspector_mod.IngestLimits(
            max_total_bytes=state.config.max_upload_bytes
        )
        runtime.archive = inspector_mod.ingest_archive(
            runtime.pending_zip, runtime.project_dir, limits
        )
        runtime.profile = inspector_mod.classify_files(runtime.archive)
        state.add_turn(
            Role.SYSTEM,
            TurnKind.STATUS,
            f"Found {runtime.profile.summary()}.",
        )
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.START_INFERENCE:
        assert runtime.profile is not None
        runtime.snippets = inspector_mod.extract_snippets(
            runtime.profile,
            lines_per_file=state.config.snippet_lines,
            budget_chars=state.config.snippet_budget_chars,
        )
        env, notes = inference_mod.infer_environment(
            runtime.profile, runtime.snippets, runtime.backend
        )
        # Chat-sourced amendments survive re-inference.
        for amendment in runtime.amendments:
            env = inference_mod.merge_user_dependency(env, amendment)
        runtime.env = env
        lang_text = ", ".join(f"{l.name} {l.version}" for l in env.languages)
        pkg_text = (
            ", ".join(f"{p.name} ({p.manager})" for p in env.packages)
            if env.packages
            else "none"
        )
        lines = [f"Environment: {lang_text}. Packages: {pkg_text}."]
        lines += notes
        state.add_turn(Role.SYSTEM, TurnKind.STATUS, "\n".join(lines))
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.SYNTHESIZE_DOCKERFILE:
        assert runtime.env is not None and runtime.profile is not None
        text = dockerfile_mod.synthesize_dockerfile(runtime.env, runtime.profile)
        for fix in runtime.dockerfile_fixes:
            text = dockerfile_mod.apply_fix(text, fix)
        runtime.dockerfile_text = text
        (runtime.session_dir / "Dockerfile").write_text(text, encoding="utf-8")
        # Keep session bookkeeping out of the build context.
        (runtime.session_dir / ".dockerignore").write_text(
            "results/\npostrun/\npackage.zip\n", encoding="utf-8"
        )
        base = text.splitlines()[0].removeprefix("FROM ")
        state.add_turn(
            Role.SYSTEM, TurnKind.STATUS, f"Dockerfile generated (base image {base})."
        )
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.START_BUILD:
        assert runtime.dockerfile_text is not None
        try:
            runtime.build_result = runner_mod.build_image(
                runtime.dockerfile_text,
                runtime.session_dir,
                runtime.engine,
                runtime.image_tag,
            )
        except BuildFailed as exc:
            tail = "\n".join(exc.log.strip().splitlines()[-50:])
            return [PipelineEvent.step_failed(f"BuildFailed: {tail}")]
        state.add_turn(
            Role.SYSTEM, TurnKind.STATUS, f"Image {runtime.image_tag} built."
        )
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.START_RUN:
        try:
            runtime.run_report = runner_mod.run_commands(
                runtime.image_tag,
                state.commands,
                runtime.engine,
                project_dir=runtime.project_dir,
                session_dir=runtime.session_dir,
                timeout_s=state.config.run_timeout_s,
                network=state.config.network,
            )
        except RunFailed as exc:
            runtime.run_report = exc.report
            tail = "\n".join(exc.report.stderr.strip().splitlines()[-50:])
            return [
                PipelineEvent.step_failed(
                    f"RunFailed: exit {exc.report.exit_code}: {tail}"
                )
            ]
        runtime.collected_outputs = runner_mod.collect_outputs(runtime.run_report)
        text = "Execution finished successfully."
        stdout = runtime.run_report.stdout.strip()
        if stdout:
            text += f"\nOutput:\n{stdout}"
        if runtime.collected_outputs:
            text += "\nCollected result files: " + ", ".join(runtime.collected_outputs)
        state.add_turn(Role.SYSTEM, TurnKind.STATUS, text)
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.START_PACKAGING:
        assert runtime.env is not None and runtime.dockerfile_text is not None
        pkg = packager_mod.package(
            session_id=state.session_id,
            created_utc=state.created_utc,
            commands=state.commands,
            env=runtime.env,
            project_dir=runtime.project_dir,
            dockerfile_text=runtime.dockerfile_text,
            image_tag=runtime.image_tag,
            engine=runtime.engine,
            embed_image=state.config.embed_image,
            network=state.config.network,
            out_path=runtime.package_path,
        )
        state.package_path = pkg.path
        state.add_turn(
            Role.SYSTEM,
            TurnKind.STATUS,
            f"Package assembled ({len(pkg.zip_bytes)} bytes).",
        )
        return [PipelineEvent.step_succeeded()]

    if kind is ActionKind.HANDLE_RECOVERY:
        return _handle_recovery(runtime, action.text)

    raise RuntimeError(f"unhandled action {kind}")


def _handle_recovery(runtime: SessionRuntime, text: str) -> list[PipelineEvent]:
    """Interpret a user message sent while the pipeline waits after a failure."""
    state = runtime.state
    backend = runtime.backend
    assert state.failed_step is not None
    try:
        tone = assistant_mod.classify_tone(text, backend)
        if tone == assistant_mod.TONE_POSITIVE:
            state.add_turn(
                Role.SYSTEM,
                TurnKind.STATUS,
                f"Resuming from the {state.failed_step} step.",
            )
            return [PipelineEvent.resume_approved(state.failed_step)]

        step, rationale = assistant_mod.infer_problem_step(text, state, backend)
        note = f"The problem seems to live in the {step} step."
        if rationale:
            note += f" {rationale}"
        state.add_turn(Role.SYSTEM, TurnKind.STATUS, note)

        fix = assistant_mod.suggest_fix(text, state.last_error(), backend)
        if fix is not None:
            applied_note = _apply_fix_directive(runtime, fix)
            if applied_note:
                state.add_turn(Role.SYSTEM, TurnKind.STATUS, applied_note)
        return [PipelineEvent.resume_approved(step)]
    except AssistantUnavailable as exc:
        state.add_turn(
            Role.SYSTEM,
            TurnKind.ERROR,
            f"The assistant is unreachable right now ({exc}). Please try again.",
        )
        return []
    except (ConflictingPin, MalformedDirective, ValueError) as exc:
        state.add_turn(
            Role.SYSTEM,
            TurnKind.ERROR,
            f"That change cannot be applied: {exc}. Try rephrasing.",
        )
        return []


def _apply_fix_directive(runtime: SessionRuntime, fix: dict) -> str:
    """Turn a structured fix suggestion into an environment or Dockerfile change.

    Only validated fields are used; free text from the assistant never reaches
    a shell line directly.
    """
    action = fix.get("action")
    if action in {"add_package", "add_system_package", "pin_language"}:
        amendment = inference_mod.AmendmentRequest(
            kind=action,
            manager=str(fix.get("manager", "pip")),
            name=str(fix.get("name", "")),
            version=fix.get("version"),
            language=str(fix.get("language", "")),
        )
        if runtime.env is not None:
            runtime.env = inference_mod.merge_user_dependency(runtime.env, amendment)
        runtime.amendments.append(amendment)
        if action == "add_package":
            return f"Added {amendment.manager} package '{amendment.name}' to the environment."
        if action == "add_system_package":
            return f"Added system package '{amendment.name}' to the environment."
        return f"Pinned {amendment.language} to version {amendment.version}."
    if action == "change_base_image":
        image = str(fix.get("image", ""))
        directive = dockerfile_mod.FixDirective(
            dockerfile_mod.FIX_CHANGE_BASE_IMAGE, image
        )
        if runtime.env is not None:
            runtime.env.base_image_hint = directive.payload
        return f"Base image changed to {image}."
    if action in {"prepend_command", "add_package_line"}:
        directive = dockerfile_mod.FixDirective(action, str(fix.get("payload", "")))
        if directive not in runtime.dockerfile_fixes:
            runtime.dockerfile_fixes.append(directive)
        return f"Dockerfile adjustment recorded: {directive.payload}"
    return ""


# --- headless driving ----------------------------------------------------------

@dataclass
class HeadlessOutcome:
    runtime: SessionRuntime
    completed: bool
    interactions: int
    error: str = ""
    stdout: str = ""

    @property
    def state(self) -> SessionState:
        return self.runtime.state


def run_headless(
    runtime: SessionRuntime,
    zip_bytes: bytes,
    commands: list[str],
    recovery_turns: Iterable[str] = (),
) -> HeadlessOutcome:
    """Drive a whole session without HTTP: upload, commands, scripted recovery.

    Recovery turns are consumed one per stop in the waiting state; when they
    run out the session is left as-is and reported.  An interaction is a
    consumed recovery turn; the initial command entry does not count.
    """
    turns: Iterator[str] = iter(recovery_turns)
    interactions = 0
    submit_upload(runtime, zip_bytes)
    commands_sent = False
    while True:
        current = runtime.state.current
        if current is Step.PARAMETERS_TO_USE:
            if not commands_sent:
                drive(runtime, PipelineEvent.commands_provided(commands))
                commands_sent = True
                continue
            # The pipeline re-asked for commands: the next scripted turn is
            # the corrected command line.
            turn = next(turns, None)
            if turn is None:
                break
            interactions += 1
            drive(runtime, PipelineEvent.commands_provided([turn]))
        elif current is Step.WAIT_FOR_CHAT:
            turn = next(turns, None)
            if turn is None:
                break
            interactions += 1
            drive(runtime, PipelineEvent.user_message(turn))
        else:
            break
    state = runtime.state
    completed = state.current is Step.COMPLETED
    return HeadlessOutcome(
        runtime=runtime,
        completed=completed,
        interactions=interactions,
        error="" if completed else state.last_error(),
        stdout=runtime.run_report.stdout if runtime.run_report else "",
    )
