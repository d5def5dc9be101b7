"""Acceptance suite: one test per numbered check, each printing a PASS/FAIL line."""
import subprocess
import sys

import pytest

from treepoincare.acceptance import CHECKS, run_check


def _report(capsys, line):
    with capsys.disabled():
        print("\n" + line)


@pytest.mark.parametrize("number", [n for n, _, _ in CHECKS],
                         ids=[f"{n:02d}-{title.replace(' ', '-')}" for n, title, _ in CHECKS])
def test_acceptance_row(number, capsys):
    result = run_check(number, seed=0)
    _report(capsys, result.line())
    assert result.passed, result.details


def test_acceptance_row_15_reproducible_reports(tmp_path, capsys):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        res = subprocess.run([sys.executable, "-m", "treepoincare", "verify-all", "--out", str(out),
                              "--seed", "0"], capture_output=True, text=True, timeout=900)
        assert res.returncode == 0, res.stdout + res.stderr
        outs.append((out / "report.json").read_bytes())
    same = outs[0] == outs[1]
    _report(capsys, f"[{'PASS' if same else 'FAIL'}] 15. reproducible verify-all reports")
    assert same
