"""Package assembly, launcher scripts, and the verifier."""

import io
import json
import zipfile

import pytest

from sciconv.errors import ImageExportFailed, PackagingFailed
from sciconv.inference import (
    PROVENANCE_IMPORT_SCAN,
    EnvironmentSpec,
    LanguagePin,
)
from sciconv.packager import (
    DOCKER_REQUIRED_MESSAGE,
    SCHEMA_VERSION,
    build_manifest,
    emit_launchers,
    package,
    project_tree_sha256,
    verify_package,
)
from sciconv.runner import FakeEngine


def env_spec():
    spec = EnvironmentSpec()
    spec.languages.append(LanguagePin("Python", "3.11", PROVENANCE_IMPORT_SCAN))
    return spec


def make_package(tmp_path, commands=("python main.py",), embed_image=False, **kwargs):
    project = tmp_path / "project"
    project.mkdir(parents=True, exist_ok=True)
    (project / "main.py").write_text("print('hello')\n")
    return package(
        session_id="s1",
        created_utc="2020-01-01T00:00:00Z",
        commands=tuple(commands),
        env=env_spec(),
        project_dir=project,
        dockerfile_text="FROM python:3.11-slim\nCOPY project/ /app\nWORKDIR /app\n",
        image_tag="sciconv/s1:latest",
        engine=FakeEngine(),
        embed_image=embed_image,
        **kwargs,
    )


def zip_of(pkg):
    return zipfile.ZipFile(io.BytesIO(pkg.zip_bytes))


class TestTreeHash:
    def test_order_independent(self):
        a = project_tree_sha256([("a.txt", b"1"), ("b.txt", b"2")])
        b = project_tree_sha256([("b.txt", b"2"), ("a.txt", b"1")])
        assert a == b

    def test_content_sensitive(self):
        a = project_tree_sha256([("a.txt", b"1")])
        b = project_tree_sha256([("a.txt", b"2")])
        assert a != b

    def test_path_sensitive(self):
        a = project_tree_sha256([("a.txt", b"1")])
        b = project_tree_sha256([("b.txt", b"1")])
        assert a != b


class TestManifest:
    def test_canonical_json(self):
        text = build_manifest(
            "s1",
            "2020-01-01T00:00:00Z",
            ("make",),
            env_spec(),
            "sciconv/s1:latest",
            "0" * 64,
            True,
        )
        doc = json.loads(text)
        assert list(doc.keys()) == sorted(doc.keys())
        assert text == json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def test_required_fields(self):
        doc = json.loads(
            build_manifest(
                "s1", "2020-01-01T00:00:00Z", ("make",), env_spec(),
                "sciconv/s1:latest", "0" * 64, False,
            )
        )
        assert doc["schema_version"] == SCHEMA_VERSION
        assert doc["engine_requirement"] == "docker"
        assert doc["resolution"] == "manager-at-build-time"
        assert doc["commands"] == ["make"]
        assert doc["network"] is False
        assert doc["environment"]["languages"][0]["name"] == "Python"


class TestLaunchers:
    def test_sh_is_posix_lf(self):
        run_sh, _ = emit_launchers("t:1", ("make",), embedded=False)
        assert run_sh.startswith("#!/bin/sh\n")
        assert "\r" not in run_sh

    def test_bat_is_crlf(self):
        _, run_bat = emit_launchers("t:1", ("make",), embedded=False)
        body = run_bat.encode("utf-8")
        assert body.count(b"\n") == body.count(b"\r\n")
        assert run_bat.splitlines()[0].strip() == "@echo off"

    def test_both_check_for_docker(self):
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=False)
        assert DOCKER_REQUIRED_MESSAGE in run_sh
        assert DOCKER_REQUIRED_MESSAGE in run_bat
        assert "command -v docker" in run_sh
        assert "where docker" in run_bat

    def test_build_mode_builds(self):
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=False)
        assert "docker build -t t:1 ." in run_sh
        assert "docker build -t t:1 ." in run_bat
        assert "docker load" not in run_sh

    def test_embedded_mode_loads(self):
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=True)
        assert "docker load -i image.tar" in run_sh
        assert "docker load -i image.tar" in run_bat
        assert "docker build" not in run_sh

    def test_commands_run_in_one_chain(self):
        run_sh, run_bat = emit_launchers("t:1", ("make", "./sim x"), embedded=False)
        assert "make && ./sim x" in run_sh
        assert "make && ./sim x" in run_bat

    def test_container_removed_after_run(self):
        run_sh, _ = emit_launchers("t:1", ("make",), embedded=False)
        assert "docker run --rm" in run_sh

    def test_image_prep_noise_kept_off_stdout(self):
        # launcher stdout must be exactly the experiment's stdout
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=False)
        assert "docker build -t t:1 . >&2" in run_sh
        assert "docker build -t t:1 . 1>&2" in run_bat
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=True)
        assert "docker load -i image.tar >&2" in run_sh
        assert "docker load -i image.tar 1>&2" in run_bat

    def test_results_mounted(self):
        run_sh, run_bat = emit_launchers("t:1", ("make",), embedded=False)
        assert "results" in run_sh and "/app/results" in run_sh
        assert "results" in run_bat and "/app/results" in run_bat


class TestPackageAssembly:
    def test_exact_top_level_contents(self, tmp_path):
        pkg = make_package(tmp_path)
        names = set(zip_of(pkg).namelist())
        assert names == {
            "Dockerfile",
            "README.md",
            "manifest.json",
            "run.bat",
            "run.sh",
            "project/main.py",
        }

    def test_deterministic_bytes(self, tmp_path):
        a = make_package(tmp_path / "a")
        b = make_package(tmp_path / "b")
        assert a.zip_bytes == b.zip_bytes

    def test_zip_timestamps_fixed(self, tmp_path):
        pkg = make_package(tmp_path)
        for info in zip_of(pkg).infolist():
            assert info.date_time == (1980, 1, 1, 0, 0, 0)

    def test_run_sh_has_exec_bit(self, tmp_path):
        pkg = make_package(tmp_path)
        info = zip_of(pkg).getinfo("run.sh")
        assert (info.external_attr >> 16) & 0o111

    def test_out_path_written(self, tmp_path):
        out = tmp_path / "dist" / "package.zip"
        pkg = make_package(tmp_path, out_path=out)
        assert out.read_bytes() == pkg.zip_bytes
        assert pkg.path == out

    def test_empty_commands_rejected(self, tmp_path):
        with pytest.raises(PackagingFailed):
            make_package(tmp_path, commands=())

    def test_empty_project_rejected(self, tmp_path):
        project = tmp_path / "project"
        project.mkdir()
        with pytest.raises(PackagingFailed):
            package(
                session_id="s1",
                created_utc="2020-01-01T00:00:00Z",
                commands=("make",),
                env=env_spec(),
                project_dir=project,
                dockerfile_text="FROM x\n",
                image_tag="t:1",
                engine=FakeEngine(),
            )

    def test_fake_engine_cannot_embed(self, tmp_path):
        with pytest.raises(ImageExportFailed):
            make_package(tmp_path, embed_image=True)

    def test_manifest_hash_matches_tree(self, tmp_path):
        pkg = make_package(tmp_path)
        with zip_of(pkg) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            files = [
                (n.removeprefix("project/"), zf.read(n))
                for n in zf.namelist()
                if n.startswith("project/")
            ]
        assert manifest["project_sha256"] == project_tree_sha256(files)


class TestVerifier:
    def test_valid_package_passes_all_checks(self, tmp_path):
        report = verify_package(make_package(tmp_path).zip_bytes)
        assert report.ok
        assert all(c.passed for c in report.checks)

    def test_garbage_fails_fast(self):
        report = verify_package(b"not a zip at all")
        assert not report.ok

    def rebuild(self, pkg, mutate):
        """Re-write the zip applying `mutate(name, data) -> data | None`."""
        src = zipfile.ZipFile(io.BytesIO(pkg.zip_bytes))
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as out:
            for info in src.infolist():
                data = mutate(info.filename, src.read(info))
                if data is not None:
                    out.writestr(info, data)
        return buffer.getvalue()

    def test_tampered_project_file_fails_hash(self, tmp_path):
        pkg = make_package(tmp_path)
        tampered = self.rebuild(
            pkg, lambda n, d: b"print('evil')\n" if n == "project/main.py" else d
        )
        report = verify_package(tampered)
        failing = [c.name for c in report.checks if not c.passed]
        assert "project hash matches" in failing

    def test_missing_required_file_fails(self, tmp_path):
        pkg = make_package(tmp_path)
        tampered = self.rebuild(pkg, lambda n, d: None if n == "run.bat" else d)
        report = verify_package(tampered)
        assert not report.ok

    def test_unexpected_file_fails(self, tmp_path):
        pkg = make_package(tmp_path)
        src = zipfile.ZipFile(io.BytesIO(pkg.zip_bytes))
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as out:
            for info in src.infolist():
                out.writestr(info, src.read(info))
            out.writestr("extra.txt", "surprise")
        report = verify_package(buffer.getvalue())
        failing = [c.name for c in report.checks if not c.passed]
        assert "no unexpected files" in failing

    def test_non_canonical_manifest_fails(self, tmp_path):
        pkg = make_package(tmp_path)
        doc = json.loads(zip_of(pkg).read("manifest.json"))
        # same content, different serialization
        loose = json.dumps(doc, indent=4)
        tampered = self.rebuild(
            pkg, lambda n, d: loose.encode() if n == "manifest.json" else d
        )
        report = verify_package(tampered)
        failing = [c.name for c in report.checks if not c.passed]
        assert "manifest canonical form" in failing

    def test_crlf_run_sh_fails_posix_check(self, tmp_path):
        pkg = make_package(tmp_path)
        tampered = self.rebuild(
            pkg,
            lambda n, d: d.replace(b"\n", b"\r\n") if n == "run.sh" else d,
        )
        report = verify_package(tampered)
        failing = [c.name for c in report.checks if not c.passed]
        assert "run.sh is POSIX" in failing

    def test_report_format_lines(self, tmp_path):
        report = verify_package(make_package(tmp_path).zip_bytes)
        text = report.format()
        assert "ok   zip readable" in text
        assert text.strip().endswith("package is valid")
