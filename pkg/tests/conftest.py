import os
import sys

import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return str(path)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML body to a temp file and return its path."""
    def _write(body: str, name: str = "cfg.toml") -> str:
        path = tmp_path / name
        path.write_text(body, encoding="utf-8")
        return str(path)
    return _write
