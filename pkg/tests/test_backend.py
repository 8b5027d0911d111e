import os
import subprocess
import sys
from pathlib import Path

import pytest

from manyserver import _backend

ROOT = Path(__file__).resolve().parents[1]


def test_python_always_available():
    assert "python" in _backend.available()
    assert _backend.get("python") is not None
    assert _backend.get() is _backend.get(_backend.NAME)


@pytest.mark.parametrize("want", ["python", "nonexistent"])
def test_env_override(want):
    env = dict(os.environ, MANYSERVER_BACKEND=want)
    out = subprocess.run([sys.executable, "-c", "from manyserver import _backend; print(_backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    expected = "python" if want == "python" else ("cython" if "cython" in _backend.available() else "python")
    assert out.stdout.strip() == expected


def test_benchmark_quick():
    out = subprocess.run([sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--quick"],
                         capture_output=True, text=True, check=True)
    assert "psi" in out.stdout
    if "cython" in _backend.available():
        assert "bitwise equal: psi True, des True" in out.stdout
