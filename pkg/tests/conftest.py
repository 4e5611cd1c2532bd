"""Shared fixtures and helpers for the test suite."""

import time

import numpy as np
import pytest

from ldqbd import BlockSet, ParamQbdModel, QbdModel

_SESSION_START = time.perf_counter()
_SUITE_BUDGET_SECONDS = 120.0


def mm12_model() -> QbdModel:
    """Single-server queue with capacity 2, arrivals 1, service 2 at any level."""
    return QbdModel(
        (1, 1, 1),
        diag=([[-1.0]], [[-3.0]], [[-2.0]]),
        up=([[1.0]], [[1.0]]),
        down=([[2.0]], [[2.0]]),
    )


def mm12_param_model() -> ParamQbdModel:
    """The capacity-2 queue with arrival and service rates as parameters."""
    return ParamQbdModel(
        mm12_model(),
        ("lambda", "mu"),
        (
            BlockSet(
                ([[-1.0]], [[-1.0]], [[0.0]]),
                ([[1.0]], [[1.0]]),
                ([[0.0]], [[0.0]]),
            ),
            BlockSet(
                ([[0.0]], [[-1.0]], [[-1.0]]),
                ([[0.0]], [[0.0]]),
                ([[1.0]], [[1.0]]),
            ),
        ),
    )


@pytest.fixture
def mm12() -> QbdModel:
    return mm12_model()


@pytest.fixture
def mm12_param() -> ParamQbdModel:
    return mm12_param_model()


def random_model(rng, max_levels=6, max_phases=4, rate_lo=0.1, rate_hi=5.0) -> QbdModel:
    """A random valid irreducible model.

    Up and down blocks are strictly positive, which forces strong
    connectivity; within-level transitions are sparse at random.
    """
    top = int(rng.integers(1, max_levels + 1))
    counts = [int(rng.integers(1, max_phases + 1)) for _ in range(top + 1)]
    up = [rng.uniform(rate_lo, rate_hi, (counts[n], counts[n + 1])) for n in range(top)]
    down = [
        rng.uniform(rate_lo, rate_hi, (counts[n + 1], counts[n])) for n in range(top)
    ]
    diag = []
    for n in range(top + 1):
        p = counts[n]
        off = rng.uniform(rate_lo, rate_hi, (p, p)) * (rng.random((p, p)) < 0.5)
        np.fill_diagonal(off, 0.0)
        row = off.sum(axis=1)
        if n > 0:
            row = row + down[n - 1].sum(axis=1)
        if n < top:
            row = row + up[n].sum(axis=1)
        d = off.copy()
        d[np.arange(p), np.arange(p)] = -row
        diag.append(d)
    return QbdModel(tuple(counts), tuple(diag), tuple(up), tuple(down))


def rel_err(got, want, floor=1e-10) -> float:
    """Max absolute deviation scaled by the reference magnitude."""
    got = np.asarray(got)
    want = np.asarray(want)
    return float(np.max(np.abs(got - want))) / max(float(np.max(np.abs(want))), floor)


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _SESSION_START
    ok = elapsed < _SUITE_BUDGET_SECONDS
    print(
        f"\nACCEPTANCE 9b: full suite wall time {elapsed:.1f}s "
        f"(< {_SUITE_BUDGET_SECONDS:.0f}s required): {'PASS' if ok else 'FAIL'}"
    )
    if not ok and exitstatus == 0:
        session.exitstatus = 1
