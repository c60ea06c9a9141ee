"""Shared pytest fixtures."""

from pathlib import Path

import pytest

from core.label_parser import load_rules
from tests import synthetic

EXPLOIT_RULES = "enga\tTOK:TOK/TOK.TOK\tFIXED:BEH;FIXED:PLAT;CHOICE:@vuln->VULN|DEFAULT:FAM;FIXED:SUF\n"


@pytest.fixture
def write_file(tmp_path):
    """Write text to a file under tmp_path and return its path as a string."""

    def _write(name: str, text: str) -> str:
        path = Path(tmp_path) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def exploit_rules(write_file):
    return load_rules(write_file("exploit.rules", EXPLOIT_RULES))


@pytest.fixture
def synthetic_inputs(write_file, tmp_path):
    """Rules, correlations and wordlist files for the planted-truth corpus."""
    return {
        "rules": write_file("synthetic.rules", synthetic.rules_text()),
        "correlations": write_file("synthetic.correlations", synthetic.correlations_text()),
        "wordlist": write_file("synthetic.wordlist", "generic\tGEN\n"),
        "output_dir": str(tmp_path / "out"),
    }
