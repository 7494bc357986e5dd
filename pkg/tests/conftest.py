"""Shared fixtures plus a suite-wide balance audit.

Every partition returned by a pipeline entry point is checked with
``is_balanced`` whenever its input was feasible; a violation fails the test
that produced it. The audit patches the functions in every loaded
``mlpart`` module before test modules import them.
"""

from __future__ import annotations

import functools
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import mlpart  # noqa: F401  (loads every submodule the audit patches)
import mlpart.cli  # noqa: F401
from mlpart import driver, fm, initial, refinement
from mlpart.graph import Partition, is_balanced

settings.register_profile("suite", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")

AUDIT = {"checked": 0, "violations": []}


def _record(name, p):
    if isinstance(p, Partition):
        AUDIT["checked"] += 1
        if not is_balanced(p):
            AUDIT["violations"].append((name, p.block_weights.tolist(), p.max_block_weight))


def _wrap_result(name, fn, pick):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        out = fn(*args, **kwargs)
        _record(name, pick(out))
        return out
    return inner


def _wrap_inplace(name, fn):
    """Refiners mutate the partition argument; audit it when it started feasible."""
    @functools.wraps(fn)
    def inner(g, p, *args, **kwargs):
        feasible = is_balanced(p)
        out = fn(g, p, *args, **kwargs)
        if feasible:
            _record(name, p)
        return out
    return inner


_PATCHES = {
    driver.partition: _wrap_result("partition", driver.partition, lambda out: out[0]),
    initial.initial_partition: _wrap_result("initial_partition", initial.initial_partition,
                                            lambda out: out),
    refinement.lp_refine: _wrap_inplace("lp_refine", refinement.lp_refine),
    fm.fm_refine: _wrap_inplace("fm_refine", fm.fm_refine),
}

for _name, _mod in list(sys.modules.items()):
    if _name == "mlpart" or _name.startswith("mlpart."):
        for _attr, _val in list(vars(_mod).items()):
            try:
                hit = _val in _PATCHES
            except TypeError:
                hit = False
            if hit:
                setattr(_mod, _attr, _PATCHES[_val])


@pytest.fixture(autouse=True)
def balance_audit():
    before = len(AUDIT["violations"])
    yield
    new = AUDIT["violations"][before:]
    assert not new, f"unbalanced partitions emitted: {new}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting -------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """``record(criterion, ok, detail)`` for the end-of-session summary."""
    def record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    if 11 in ACCEPTANCE:
        ok, detail = ACCEPTANCE[11]
        bad = len(AUDIT["violations"])
        ACCEPTANCE[11] = (ok and not bad, f"{detail}; suite-wide audit: {AUDIT['checked']} "
                                          f"partitions checked, {bad} unbalanced")
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
