"""Command line front door: serve the API, run a pipeline, verify, evaluate."""

from __future__ import annotations

import argparse
import hashlib
import io
import sys
import tempfile
import zipfile
from pathlib import Path

from . import driver as driver_mod
from . import evaluate as evaluate_mod
from . import packager as packager_mod
from .errors import SciconvError
from .workflow import Role, SessionConfig


def _derive_session_id(zip_bytes: bytes, commands: list[str]) -> str:
    digest = hashlib.sha256()
    digest.update(zip_bytes)
    for command in commands:
        digest.update(command.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()[:12]


def _derive_created_utc(zip_bytes: bytes) -> str:
    """Stamp the package with the newest archive entry time, not the wallclock.

    Two runs over the same inputs must produce the same bytes, so nothing
    time-of-day dependent may leak into the manifest.
    """
    try:
        with zipfile.ZipFile(io.BytesIO(zip_bytes)) as zf:
            stamps = [info.date_time for info in zf.infolist()]
    except zipfile.BadZipFile:
        stamps = []
    if not stamps:
        return "1980-01-01T00:00:00Z"
    y, mo, d, h, mi, s = max(stamps)
    return f"{y:04d}-{mo:02d}-{d:02d}T{h:02d}:{mi:02d}:{s:02d}Z"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sciconv",
        description=(
            "Convert a code+data archive into a portable, re-runnable "
            "Docker-based package."
        ),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_serve = sub.add_parser("serve", help="start the HTTP API")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--workdir", type=Path, default=None)
    p_serve.add_argument("--engine", choices=["docker", "fake"], default="docker")
    p_serve.add_argument(
        "--assistant", choices=["scripted", "remote"], default="scripted"
    )
    p_serve.add_argument("--no-network", action="store_true")

    p_run = sub.add_parser("run", help="run the whole pipeline on one archive")
    p_run.add_argument("archive", type=Path, help="project zip to convert")
    p_run.add_argument(
        "--command",
        action="append",
        required=True,
        dest="commands",
        help="execution command; repeat for multi-step runs",
    )
    p_run.add_argument("--out", type=Path, default=Path("package.zip"))
    p_run.add_argument("--engine", choices=["docker", "fake"], default="docker")
    p_run.add_argument(
        "--assistant", choices=["scripted", "remote"], default="scripted"
    )
    p_run.add_argument(
        "--recovery-turn",
        action="append",
        default=[],
        dest="recovery_turns",
        help="scripted chat reply used if the pipeline stops with an error",
    )
    p_run.add_argument("--workdir", type=Path, default=None)
    p_run.add_argument("--embed-image", action="store_true")
    p_run.add_argument("--no-network", action="store_true")
    p_run.add_argument(
        "--session-id", default=None, help="override the derived session id"
    )

    p_verify = sub.add_parser("verify", help="check a produced package")
    p_verify.add_argument("package", type=Path)

    p_eval = sub.add_parser("eval", help="replay the fixture corpus and score it")
    p_eval.add_argument("--corpus", type=Path, default=Path("corpus"))
    p_eval.add_argument("--workdir", type=Path, default=None)

    return parser


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="sciconv-serve-"))
    config = SessionConfig(
        workdir=workdir,
        engine=args.engine,
        assistant=args.assistant,
        network=not args.no_network,
    )
    serve(host=args.host, port=args.port, config=config)
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        zip_bytes = args.archive.read_bytes()
    except OSError as exc:
        print(f"cannot read {args.archive}: {exc}", file=sys.stderr)
        return 1

    commands = [c for c in args.commands if c.strip()]
    if not commands:
        print("at least one non-empty --command is required", file=sys.stderr)
        return 1

    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="sciconv-run-"))
    config = SessionConfig(
        workdir=workdir,
        engine=args.engine,
        assistant=args.assistant,
        network=not args.no_network,
        embed_image=args.embed_image,
        session_id=args.session_id or _derive_session_id(zip_bytes, commands),
        created_utc=_derive_created_utc(zip_bytes),
    )
    try:
        runtime = driver_mod.create_runtime(config)
        outcome = driver_mod.run_headless(
            runtime, zip_bytes, commands, args.recovery_turns
        )
    except SciconvError as exc:
        print(exc.as_chat_text(), file=sys.stderr)
        return 1

    for turn in outcome.state.transcript:
        prefix = "you" if turn.role is Role.USER else "sciconv"
        print(f"[{prefix}] {turn.text}")

    if not outcome.completed:
        print(f"pipeline stopped: {outcome.error}", file=sys.stderr)
        return 1

    package_bytes = Path(runtime.package_path).read_bytes()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(package_bytes)
    print(f"package written to {args.out} ({len(package_bytes)} bytes)")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    try:
        data = args.package.read_bytes()
    except OSError as exc:
        print(f"cannot read {args.package}: {exc}", file=sys.stderr)
        return 1
    report = packager_mod.verify_package(data)
    print(report.format())
    return 0 if report.ok else 1


def _cmd_eval(args: argparse.Namespace) -> int:
    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="sciconv-eval-"))
    try:
        report = evaluate_mod.run_corpus(args.corpus, workdir)
    except SciconvError as exc:
        print(exc.as_chat_text(), file=sys.stderr)
        return 1
    print(report.format())
    return 0 if report.all_as_expected else 1


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "serve": _cmd_serve,
        "run": _cmd_run,
        "verify": _cmd_verify,
        "eval": _cmd_eval,
    }
    return handlers[args.subcommand](args)


if __name__ == "__main__":
    sys.exit(main())
