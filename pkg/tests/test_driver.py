"""End-to-end session driving with fake engine and scripted assistant."""

import json

import pytest

from conftest import load_case, make_zip, runtime_for
from sciconv import driver
from sciconv.assistant import TASK_CLASSIFY_TONE, ScriptedBackend
from sciconv.errors import TooLarge
from sciconv.workflow import (
    RECOVERY_QUESTION,
    PipelineEvent,
    Role,
    Step,
    TurnKind,
    fold_history,
)

SIMPLE_PROJECT = {"main.py": "print('hello')\n"}
OK_ENGINE = {"builds": [{"success": True}], "runs": [{"exit_code": 0, "stdout": "hello\n"}]}


def run_simple(tmp_path, engine=None, recovery=(), commands=("python main.py",)):
    runtime = runtime_for(tmp_path, engine or OK_ENGINE)
    outcome = driver.run_headless(
        runtime, make_zip(SIMPLE_PROJECT), list(commands), recovery
    )
    return runtime, outcome


class TestHappyPath:
    def test_completes(self, tmp_path):
        runtime, outcome = run_simple(tmp_path)
        assert outcome.completed
        assert outcome.interactions == 0
        assert runtime.state.current is Step.COMPLETED

    def test_package_written(self, tmp_path):
        runtime, outcome = run_simple(tmp_path)
        assert runtime.state.package_path is not None
        assert runtime.state.package_path.is_file()

    def test_stdout_captured(self, tmp_path):
        _, outcome = run_simple(tmp_path)
        assert outcome.stdout == "hello\n"

    def test_transcript_ends_with_result(self, tmp_path):
        runtime, _ = run_simple(tmp_path)
        assert runtime.state.transcript[-1].kind is TurnKind.RESULT

    def test_history_replays(self, tmp_path):
        runtime, _ = run_simple(tmp_path)
        assert fold_history(runtime.state.history) is Step.COMPLETED

    def test_user_turns_recorded(self, tmp_path):
        runtime, _ = run_simple(tmp_path)
        user_turns = [t for t in runtime.state.transcript if t.role is Role.USER]
        assert [t.text for t in user_turns] == ["python main.py"]


class TestUploadGuard:
    def test_oversized_upload_rejected(self, tmp_path):
        runtime = runtime_for(tmp_path, OK_ENGINE, max_upload_bytes=10)
        with pytest.raises(TooLarge):
            driver.submit_upload(runtime, b"x" * 100)

    def test_bad_zip_becomes_chat_error(self, tmp_path):
        runtime = runtime_for(tmp_path, OK_ENGINE)
        turns = driver.submit_upload(runtime, b"definitely not a zip")
        assert runtime.state.current is Step.WAIT_FOR_CHAT
        error_turns = [t for t in turns if t.kind is TurnKind.ERROR]
        assert error_turns and "MalformedArchive" in error_turns[0].text


class TestFailureConversation:
    FAILING = {
        "builds": [{"success": True}],
        "runs": [{"exit_code": 2, "stderr": "everything broke\n"}],
    }

    def test_error_turn_then_recovery_prompt(self, tmp_path):
        runtime, outcome = run_simple(tmp_path, engine=self.FAILING)
        assert not outcome.completed
        kinds = [t.kind for t in runtime.state.transcript[-2:]]
        assert kinds == [TurnKind.ERROR, TurnKind.EXAMPLES_AVAILABLE]
        assert runtime.state.transcript[-1].text == RECOVERY_QUESTION

    def test_recovery_prompt_has_examples(self, tmp_path):
        runtime, _ = run_simple(tmp_path, engine=self.FAILING)
        prompt = runtime.state.transcript[-1]
        assert prompt.examples
        assert any("chardet" in e for e in prompt.examples)

    def test_error_carries_stderr_tail(self, tmp_path):
        runtime, _ = run_simple(tmp_path, engine=self.FAILING)
        error_turn = [t for t in runtime.state.transcript if t.kind is TurnKind.ERROR][0]
        assert "everything broke" in error_turn.text
        assert "exit 2" in error_turn.text

    def test_build_failure_reports_log_tail(self, tmp_path):
        engine = {"builds": [{"success": False, "log": "l1\nl2\nfatal: no such base\n"}]}
        runtime, outcome = run_simple(tmp_path, engine=engine)
        assert not outcome.completed
        assert "fatal: no such base" in outcome.error
        assert runtime.state.failed_step is Step.BUILD_DOCKER_IMAGE


class TestPositiveToneResume:
    def test_retry_same_step(self, tmp_path):
        # First run fails, user says "continue", second run succeeds.
        engine = {
            "builds": [{"success": True}],
            "runs": [
                {"exit_code": 1, "stderr": "flaky\n"},
                {"exit_code": 0, "stdout": "fine\n"},
            ],
        }
        backend = ScriptedBackend(
            [
                {
                    "task": TASK_CLASSIFY_TONE,
                    "context_key": "continue",
                    "response": {"tone": "positive"},
                }
            ]
        )
        runtime = runtime_for(tmp_path, engine, backend=backend)
        outcome = driver.run_headless(
            runtime, make_zip(SIMPLE_PROJECT), ["python main.py"], ["continue"]
        )
        assert outcome.completed
        assert outcome.interactions == 1
        # the image was NOT rebuilt: resume went straight to RunContainer
        assert outcome.stdout == "fine\n"


class TestNegativeToneRecovery:
    def test_chardet_flow(self, tmp_path):
        case = load_case("F3")
        runtime = runtime_for(tmp_path, case.engine_script)
        outcome = driver.run_headless(
            runtime, case.project_zip(), case.commands, case.user_turns
        )
        assert outcome.completed
        assert outcome.interactions == 1
        assert outcome.stdout == "encoding=ascii\n"

    def test_amendment_lands_in_dockerfile(self, tmp_path):
        case = load_case("F3")
        runtime = runtime_for(tmp_path, case.engine_script)
        driver.run_headless(runtime, case.project_zip(), case.commands, case.user_turns)
        assert "chardet" in runtime.dockerfile_text
        assert any(a.name == "chardet" for a in runtime.amendments)

    def test_amendment_survives_reinference(self, tmp_path):
        # Failure forces a second pass through environment inference; the
        # user-added package must still be present afterwards.
        case = load_case("F3")
        engine = {
            "builds": [{"success": True}, {"success": True}, {"success": True}],
            "runs": [
                {"exit_code": 1, "stderr": "No module named 'chardet'\n"},
                {"exit_code": 1, "stderr": "No module named 'chardet'\n"},
                {"exit_code": 0, "stdout": "encoding=ascii\n"},
            ],
        }
        backend = ScriptedBackend.from_file(driver.default_transcript_path()).extended(
            [
                {
                    "task": "InferProblemStep",
                    "context_key": "try the configuration scan again",
                    "response": {"step": "FindConfigurations", "rationale": "rescan"},
                },
            ]
        )
        runtime = runtime_for(tmp_path, engine, backend=backend)
        outcome = driver.run_headless(
            runtime,
            case.project_zip(),
            case.commands,
            ["I want to add chardet dependency", "try the configuration scan again"],
        )
        assert outcome.completed
        assert "chardet" in runtime.dockerfile_text
        pkg_names = [p.name for p in runtime.env.packages]
        assert "chardet" in pkg_names

    def test_assistant_unavailable_stays_waiting(self, tmp_path):
        from sciconv.assistant import RemoteBackend

        engine = {
            "builds": [{"success": True}],
            "runs": [{"exit_code": 1, "stderr": "broken\n"}],
        }
        backend = RemoteBackend(endpoint="http://127.0.0.1:9/none", model="m", timeout_s=0.2)
        runtime = runtime_for(tmp_path, engine, backend=backend)
        outcome = driver.run_headless(
            runtime, make_zip(SIMPLE_PROJECT), ["python main.py"], ["something is wrong"]
        )
        assert not outcome.completed
        assert runtime.state.current is Step.WAIT_FOR_CHAT
        # the outage is reported as an Error turn, not silence
        last = runtime.state.transcript[-1]
        assert last.kind is TurnKind.ERROR
        assert "unreachable" in last.text


class TestCorrectedCommands:
    def test_reprompt_consumes_next_turn_as_commands(self, tmp_path):
        # The inferred problem step is ParametersToUse, so the pipeline asks
        # for commands again; the next scripted turn is the corrected line.
        engine = {
            "builds": [{"success": True}, {"success": True}],
            "runs": [
                {"exit_code": 127, "stderr": "sh: python3: not found\n"},
                {"exit_code": 0, "stdout": "ok\n"},
            ],
        }
        runtime = runtime_for(tmp_path, engine)
        outcome = driver.run_headless(
            runtime,
            make_zip(SIMPLE_PROJECT),
            ["python3 main.py"],
            ["the build command was wrong", "python main.py"],
        )
        assert outcome.completed
        assert outcome.interactions == 2
        assert runtime.state.commands == ("python main.py",)


class TestSnippetBudget:
    def test_budget_failure_reaches_chat(self, tmp_path):
        case = load_case("F6")
        runtime = runtime_for(tmp_path, case.engine_script)
        outcome = driver.run_headless(runtime, case.project_zip(), case.commands, [])
        assert not outcome.completed
        assert outcome.error.startswith("SnippetBudgetExceeded")
        assert runtime.state.failed_step is Step.FIND_CONFIGURATIONS


class TestDeterminism:
    def test_two_runs_identical_artifacts(self, tmp_path):
        runtime_a, _ = run_simple(tmp_path / "a")
        runtime_b, _ = run_simple(tmp_path / "b")
        assert runtime_a.env.to_json() == runtime_b.env.to_json()
        assert runtime_a.dockerfile_text == runtime_b.dockerfile_text
