"""Bridge to a conversational assistant.

Two interchangeable backends answer four structured tasks (environment
refinement, tone classification, problem-step inference, fix suggestion):

* Remote: one generic chat-completion HTTP call, configured through the
  ASSISTANT_API_URL / ASSISTANT_API_KEY / ASSISTANT_MODEL environment
  variables.
* Scripted: a lookup table loaded from a JSON file, for tests and offline
  runs. Fully deterministic.

Replies must be strict JSON.  A remote backend gets exactly one re-ask on a
parse failure.  Raw reply text is never executed or interpolated into shell
commands; only validated, structured fields leave this module.
"""

from __future__ import annotations

import difflib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests

from .errors import AssistantUnavailable, SciconvError, UnparseableReply
from .inference import EnvironmentSpec, PackageReq, PROVENANCE_ASSISTANT
from .inspector import SnippetBundle
from .workflow import PROCESS_STEPS, SessionState, Step, step_from_name

TASK_REFINE_ENVIRONMENT = "RefineEnvironment"
TASK_CLASSIFY_TONE = "ClassifyTone"
TASK_INFER_PROBLEM_STEP = "InferProblemStep"
TASK_SUGGEST_FIX = "SuggestFix"

TONE_POSITIVE = "Positive"
TONE_NEGATIVE = "Negative"

_AFFIRMATIVE_WORDS = {"yes", "ok", "continue", "solved", "works"}
_NEGATIVE_WORDS = {"no", "error", "fail", "missing", "wrong"}

_FIX_ACTIONS = {
    "add_package",
    "add_system_package",
    "pin_language",
    "change_base_image",
    "prepend_command",
    "add_package_line",
}


class RefinementUnavailable(SciconvError):
    """Environment refinement could not be obtained; heuristics stand."""


def canonical_key(text: str) -> str:
    """Collapse a free-text message into a stable scripted-table key."""
    return " ".join(text.lower().split()).strip(" .,!?;:")


@dataclass(frozen=True)
class TaskRequest:
    task: str
    context: dict

    def context_key(self) -> str:
        if self.task == TASK_REFINE_ENVIRONMENT:
            return ";".join(sorted(self.context.get("files", [])))
        return canonical_key(self.context.get("message", ""))


@dataclass(frozen=True)
class TaskResponse:
    task: str
    raw: str
    result: dict


@dataclass
class EnvironmentDelta:
    add_packages: list[PackageReq] = field(default_factory=list)
    add_system_packages: list[str] = field(default_factory=list)
    base_image_hint: Optional[str] = None


# --- prompt templates ---------------------------------------------------------
# Templates are deterministic: same request, same prompt text.

_PROMPTS = {
    TASK_CLASSIFY_TONE: (
        "You are helping reproduce a computational experiment.\n"
        "Classify the tone of the user's message as positive (the problem is "
        "solved or the user wants to continue) or negative (something is still "
        "wrong).\n"
        'Reply with only this JSON: {{"tone": "positive"}} or {{"tone": "negative"}}.\n'
        "User message: {message}"
    ),
    TASK_INFER_PROBLEM_STEP: (
        "You are helping reproduce a computational experiment. The process has "
        "these steps, in order:\n{steps}\n"
        "The pipeline failed during step {failed_step} and the user replied "
        "with the message below. Name the single step where the underlying "
        "problem lives (it is never later than the failed step).\n"
        'Reply with only this JSON: {{"step": "<step name>", "rationale": "<one sentence>"}}.\n'
        "User message: {message}"
    ),
    TASK_SUGGEST_FIX: (
        "You are helping reproduce a computational experiment. The pipeline "
        "failed with this error:\n{error}\n"
        "The user replied with the message below. Propose one concrete fix.\n"
        "Reply with only a JSON object whose \"action\" is one of: "
        "add_package, add_system_package, pin_language, change_base_image, "
        "prepend_command, add_package_line. Include the fields that action "
        "needs (manager/name/version, language/version, image, or payload).\n"
        "User message: {message}"
    ),
    TASK_REFINE_ENVIRONMENT: (
        "You are helping reproduce a computational experiment. Below are the "
        "inferred environment and the first lines of the project's files. "
        "Add anything clearly missing (packages, system libraries, a better "
        "base image). Never remove existing entries.\n"
        'Reply with only this JSON: {{"add_packages": [{{"manager": "pip", '
        '"name": "...", "version": null}}], "add_system_packages": [], '
        '"base_image_hint": null}}.\n'
        "Environment:\n{environment}\n"
        "Files:\n{files}\n"
        "Snippets:\n{snippets}"
    ),
}


def build_prompt(request: TaskRequest) -> str:
    template = _PROMPTS.get(request.task)
    if template is None:
        raise ValueError(f"unknown task {request.task!r}")
    context = dict(request.context)
    if request.task == TASK_INFER_PROBLEM_STEP:
        context["steps"] = "\n".join(f"- {name}" for name in context["steps"])
    if request.task == TASK_REFINE_ENVIRONMENT:
        context["files"] = "\n".join(context["files"])
    return template.format(**context)


# --- backends -----------------------------------------------------------------

class ScriptedBackend:
    """Deterministic lookup table: (task, canonical context key) -> response."""

    kind = "scripted"

    def __init__(self, entries: list[dict] | None = None) -> None:
        self.table: dict[tuple[str, str], dict] = {}
        for entry in entries or []:
            key = (entry["task"], canonical_key(entry["context_key"]))
            self.table[key] = entry["response"]

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def extended(self, entries: list[dict]) -> "ScriptedBackend":
        merged = ScriptedBackend()
        merged.table = dict(self.table)
        for entry in entries:
            key = (entry["task"], canonical_key(entry["context_key"]))
            merged.table[key] = entry["response"]
        return merged

    def ask(self, request: TaskRequest) -> str:
        key = (request.task, request.context_key())
        if key not in self.table:
            same_task = [k[1] for k in self.table if k[0] == request.task]
            nearest = difflib.get_close_matches(key[1], same_task, n=3, cutoff=0.3)
            raise UnparseableReply(
                f"no scripted entry for {key!r}; nearest keys: {nearest}"
            )
        return json.dumps(self.table[key])


class RemoteBackend:
    """Generic chat-completion endpoint speaking strict JSON."""

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        timeout_s: float = 60.0,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s

    @classmethod
    def from_env(cls, timeout_s: float = 60.0) -> "RemoteBackend":
        endpoint = os.environ.get("ASSISTANT_API_URL", "")
        if not endpoint:
            raise AssistantUnavailable("ASSISTANT_API_URL is not set")
        return cls(
            endpoint=endpoint,
            model=os.environ.get("ASSISTANT_MODEL", "gpt-4-turbo"),
            api_key=os.environ.get("ASSISTANT_API_KEY", ""),
            timeout_s=timeout_s,
        )

    def ask(self, request: TaskRequest, prompt_suffix: str = "") -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "user", "content": build_prompt(request) + prompt_suffix}
            ],
            "temperature": 0,
        }
        try:
            resp = requests.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout_s
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except requests.RequestException as exc:
            raise AssistantUnavailable(str(exc)) from None
        except (KeyError, IndexError, ValueError) as exc:
            raise AssistantUnavailable(f"malformed completion envelope: {exc}") from None


AssistantBackend = ScriptedBackend | RemoteBackend


def _parse_json_reply(raw: str) -> dict:
    text = raw.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            raise UnparseableReply("reply is not JSON", raw=raw) from None
        try:
            parsed = json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            raise UnparseableReply("reply is not JSON", raw=raw) from None
    if not isinstance(parsed, dict):
        raise UnparseableReply("reply JSON is not an object", raw=raw)
    return parsed


def _validate(task: str, result: dict, raw: str) -> dict:
    try:
        if task == TASK_CLASSIFY_TONE:
            tone = str(result["tone"]).lower()
            if tone not in {"positive", "negative"}:
                raise KeyError("tone")
        elif task == TASK_INFER_PROBLEM_STEP:
            step = step_from_name(str(result["step"]))
            if step is Step.WAIT_FOR_CHAT:
                raise KeyError("step")
        elif task == TASK_SUGGEST_FIX:
            if str(result.get("action")) not in _FIX_ACTIONS:
                raise KeyError("action")
        elif task == TASK_REFINE_ENVIRONMENT:
            if not isinstance(result.get("add_packages", []), list):
                raise KeyError("add_packages")
            if not isinstance(result.get("add_system_packages", []), list):
                raise KeyError("add_system_packages")
    except (KeyError, TypeError, ValueError) as exc:
        raise UnparseableReply(f"reply lacks valid fields for {task}: {exc}", raw=raw) from None
    return result


def query(request: TaskRequest, backend: AssistantBackend) -> TaskResponse:
    """Run one task against the backend and validate the structured reply."""
    if isinstance(backend, ScriptedBackend):
        raw = backend.ask(request)
        return TaskResponse(request.task, raw, _validate(request.task, _parse_json_reply(raw), raw))
    raw = backend.ask(request)
    try:
        result = _validate(request.task, _parse_json_reply(raw), raw)
    except UnparseableReply:
        # One re-ask with an explicit reminder, then give up.
        raw = backend.ask(request, prompt_suffix="\nReply with only valid JSON.")
        result = _validate(request.task, _parse_json_reply(raw), raw)
    return TaskResponse(request.task, raw, result)


# --- task helpers ----------------------------------------------------------------

def _keyword_tone(text: str) -> str:
    tokens = {token.strip(".,!?;:'\"()") for token in text.lower().split()}
    if tokens & _NEGATIVE_WORDS:
        return TONE_NEGATIVE
    if tokens & _AFFIRMATIVE_WORDS:
        return TONE_POSITIVE
    return TONE_NEGATIVE  # ambiguity reads as "still broken"


def classify_tone(text: str, backend: AssistantBackend) -> str:
    """Binary tone of a recovery message. Total for any plain text."""
    request = TaskRequest(TASK_CLASSIFY_TONE, {"message": text})
    try:
        response = query(request, backend)
    except UnparseableReply:
        return _keyword_tone(text)
    tone = str(response.result["tone"]).lower()
    return TONE_POSITIVE if tone == "positive" else TONE_NEGATIVE


def infer_problem_step(
    text: str, state: SessionState, backend: AssistantBackend
) -> tuple[Step, str]:
    """Locate the process step where the reported problem lives.

    An unusable reply falls back to the failed step itself, so recovery can
    always proceed.  Requires the session to be waiting in the failure state.
    """
    if state.failed_step is None:
        raise ValueError("infer_problem_step requires a failed session")
    request = TaskRequest(
        TASK_INFER_PROBLEM_STEP,
        {
            "message": text,
            "failed_step": state.failed_step.value,
            "steps": [step.value for step in PROCESS_STEPS],
        },
    )
    try:
        response = query(request, backend)
        step = step_from_name(str(response.result["step"]))
        rationale = str(response.result.get("rationale", ""))
        return step, rationale
    except UnparseableReply:
        return (
            state.failed_step,
            "no better guess was available, so the failed step is retried",
        )


def suggest_fix(
    text: str, error: str, backend: AssistantBackend
) -> Optional[dict]:
    """Ask for a concrete fix directive; None when nothing usable came back."""
    request = TaskRequest(TASK_SUGGEST_FIX, {"message": text, "error": error})
    try:
        response = query(request, backend)
    except UnparseableReply:
        return None
    return response.result


def refine_environment(
    spec: EnvironmentSpec, snippets: SnippetBundle, backend: AssistantBackend
) -> EnvironmentDelta:
    """Additive refinement of a heuristic environment.

    Raises RefinementUnavailable on any backend trouble; the caller keeps the
    heuristic spec in that case.
    """
    files = sorted(s.relative_path for s in snippets.snippets)
    request = TaskRequest(
        TASK_REFINE_ENVIRONMENT,
        {
            "files": files,
            "environment": spec.to_json(),
            "snippets": "\n\n".join(
                f"--- {s.relative_path} ---\n{s.text}" for s in snippets.snippets
            ),
        },
    )
    try:
        response = query(request, backend)
    except (AssistantUnavailable, UnparseableReply) as exc:
        raise RefinementUnavailable(str(exc)) from None

    delta = EnvironmentDelta()
    try:
        for item in response.result.get("add_packages", []):
            delta.add_packages.append(
                PackageReq(
                    manager=str(item["manager"]),
                    name=str(item["name"]),
                    version=item.get("version"),
                    provenance=PROVENANCE_ASSISTANT,
                )
            )
        for name in response.result.get("add_system_packages", []):
            delta.add_system_packages.append(str(name))
        hint = response.result.get("base_image_hint")
        delta.base_image_hint = str(hint) if hint else None
    except (KeyError, TypeError, ValueError) as exc:
        raise RefinementUnavailable(f"refinement reply malformed: {exc}") from None
    return delta
