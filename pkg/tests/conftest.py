import io
import zipfile
from pathlib import Path

import pytest

from sciconv import driver, evaluate
from sciconv.assistant import ScriptedBackend
from sciconv.runner import FakeEngine
from sciconv.workflow import SessionConfig

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"


def make_zip(files: dict[str, bytes | str]) -> bytes:
    """In-memory zip with fixed timestamps, for upload fixtures."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, content in sorted(files.items()):
            if isinstance(content, str):
                content = content.encode("utf-8")
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, content)
    return buffer.getvalue()


@pytest.fixture
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture
def scripted_backend() -> ScriptedBackend:
    return ScriptedBackend.from_file(driver.default_transcript_path())


def load_case(name: str) -> evaluate.CorpusCase:
    return evaluate.CorpusCase.load(CORPUS_DIR / name)


def runtime_for(
    tmp_path: Path,
    engine_script: dict | None = None,
    backend: ScriptedBackend | None = None,
    **config_kwargs,
) -> driver.SessionRuntime:
    config = SessionConfig(workdir=tmp_path, **config_kwargs)
    return driver.create_runtime(
        config,
        engine=FakeEngine(engine_script or {}),
        backend=backend or ScriptedBackend.from_file(driver.default_transcript_path()),
    )
