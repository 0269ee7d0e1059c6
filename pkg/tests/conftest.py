import os
import shutil
from pathlib import Path

import pytest

from decompeval.binpipe import ToolchainConfig

FIXTURES = Path(__file__).parent / "fixtures"
FAKE_BIN = FIXTURES / "bin"


def real_dart() -> str | None:
    """A Dart SDK able to AOT-compile, if one is installed."""
    path = os.environ.get("DECOMPEVAL_DART") or shutil.which("dart")
    if not path or Path(path).resolve().parent == FAKE_BIN.resolve():
        return None
    import subprocess
    try:
        out = subprocess.run([path, "compile", "--help"], capture_output=True, text=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired):
        return None
    return path if out.returncode == 0 and "aot-snapshot" in out.stdout + out.stderr else None


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def fake_toolchain(tmp_path) -> ToolchainConfig:
    """Stand-in compilers (tree-sitter check + gcc) with a private scratch root."""
    return ToolchainConfig.from_mapping(
        {"dart": str(FAKE_BIN / "dart"), "swift": str(FAKE_BIN / "swiftc"),
         "scratch_root": str(tmp_path / "scratch"), "timeout": 30}, env={})


@pytest.fixture
def offline_toolchain(tmp_path) -> ToolchainConfig:
    return ToolchainConfig(dart_compiler=None, swift_compiler=None,
                           scratch_root=tmp_path / "scratch")


@pytest.fixture(scope="session")
def dart_sdk():
    path = real_dart()
    if path is None:
        pytest.skip("no Dart SDK with `dart compile aot-snapshot` on this machine")
    return path


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
