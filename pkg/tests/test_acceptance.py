"""The acceptance criteria, one test each, with the tolerances pinned in ``stickymfg.acceptance``.

The full suite runs once in-process (criteria 1-10); criterion 11 reruns it
through the command line and compares the report bytes.
"""

from __future__ import annotations

import subprocess
import sys

import pytest

from stickymfg import acceptance, io

SEED = 42


@pytest.fixture(scope="module")
def results():
    return {n: acceptance.run_criterion(n, None, SEED) for n in acceptance.FULL}


@pytest.mark.parametrize("number", acceptance.FULL)
def test_criterion(number, results, acceptance_lines):
    r = results[number]
    acceptance_lines[number] = r.line()
    assert r.error is None, r.error
    assert r.passed, r.details
    assert r.within_budget, f"{r.wall_time:.1f}s > {r.budget}s"


def test_criterion_11_full_selftest_is_deterministic(results, tmp_path, acceptance_lines):
    inproc = io.dumps(acceptance.suite_report([results[n] for n in acceptance.FULL], "full", SEED)).encode()
    proc = subprocess.run(
        [sys.executable, "-m", "stickymfg", "selftest", "full", "--seed", str(SEED), "--out-dir", str(tmp_path)],
        capture_output=True, text=True, timeout=900,
    )
    cli = (tmp_path / "selftest_report.json").read_bytes()
    same = cli == inproc
    flag = "PASS" if same and proc.returncode == 0 else "FAIL"
    acceptance_lines[11] = f"[{flag}] criterion 11: full selftest twice with seed {SEED} gives identical bytes"
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert same
