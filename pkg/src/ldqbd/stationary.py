"""Stationary analysis of bounded and truncated level-dependent QBDs.

The long-run distribution is computed from a family of sojourn-ratio
matrices built level by level from the bottom: entry ``(i, j)`` of the
family member for level ``n`` is the expected time spent in ``(n, j)`` per
unit time spent in ``(n+1, i)`` before returning to level ``n+1``.  The top
segment solves a small singular balance system closed by the normalization
condition; all lower segments follow by right-multiplication.

Sensitivities with respect to model parameters propagate through the same
recursion in bundle arithmetic, including the differentiated boundary
system (the normalization column is differentiated as well, which the
balance equations alone would miss).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import NoConvergenceError, SingularMatrixError
from .linalg import (
    DerivBundle,
    bundle_add,
    bundle_const,
    bundle_mul,
    bundle_neg,
    bundle_solve_right,
    inf_norm_diff,
    lu_apply,
    lu_factor,
)
from .model import LevelVector, LevelVectorBundle, ParamQbdModel, QbdModel


@dataclass(frozen=True)
class RhatFamily:
    """Sojourn-ratio matrices for one evaluation point.

    ``matrices[n]`` has shape ``(phase_counts[n+1], phase_counts[n])`` for
    ``n = 0..N-1``.  At ``s = 0`` all entries are real and nonnegative
    (expected sojourn times).
    """

    s: complex
    matrices: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class TruncationResult:
    """Outcome of the truncation-level search."""

    level: int
    gap: float


def _shift_bundle(b: DerivBundle, s) -> DerivBundle:
    """``b - s*I`` with unchanged partials (``s`` is not a model parameter)."""
    eye = np.eye(b.shape[0])
    return DerivBundle(b.value - s * eye, b.partials, b.params)


def rhat_bundles(model, s=0.0) -> list[DerivBundle]:
    """Sojourn-ratio family with parameter partials, bottom level first.

    Accepts either a plain model (empty parameter list) or a parameterized
    one.  ``s`` may be complex with nonnegative real part.
    """
    top = model.top_level
    family = []
    inner = _shift_bundle(model.diag_bundle(0), s)
    family.append(bundle_solve_right(bundle_neg(model.down_bundle(1)), inner))
    for n in range(1, top):
        inner = bundle_add(
            bundle_mul(family[n - 1], model.up_bundle(n - 1)),
            _shift_bundle(model.diag_bundle(n), s),
        )
        family.append(bundle_solve_right(bundle_neg(model.down_bundle(n + 1)), inner))
    return family


def rhat_family(model: QbdModel, s=0.0) -> RhatFamily:
    """Sojourn-ratio matrices for all levels at one evaluation point."""
    mats = tuple(b.value for b in rhat_bundles(model, s))
    return RhatFamily(s, mats)


def _boundary_bundles(model, rhat: list[DerivBundle]):
    """Top-level balance matrix and normalization column, as bundles.

    The balance matrix is singular with a one-dimensional left null space;
    the normalization column is ``1`` plus the row sums of the cumulative
    sojourn-ratio products down to every level.
    """
    top = model.top_level
    p_top = model.phase_counts[top]
    params = model.params
    balance = bundle_add(
        bundle_mul(rhat[top - 1], model.up_bundle(top - 1)),
        model.diag_bundle(top),
    )
    norm = bundle_const(np.ones((p_top, 1)), params)
    acc = None
    for n in range(top - 1, -1, -1):
        acc = rhat[n] if acc is None else bundle_mul(acc, rhat[n])
        ones = bundle_const(np.ones((model.phase_counts[n], 1)), params)
        norm = bundle_add(norm, bundle_mul(acc, ones))
    return balance, norm


def _solve_boundary(balance: DerivBundle, norm: DerivBundle) -> DerivBundle:
    """Top-level segment and its partials from the closed boundary system.

    One column of the singular balance matrix is replaced by the
    normalization column, making the system square and nonsingular; the
    replaced system is then differentiated as a whole.
    """
    p = balance.shape[0]
    params = balance.params
    last_err = None
    for col in range(p):
        m = balance.value.copy()
        m[:, col] = norm.value[:, 0]
        try:
            factor = lu_factor(m.T)
        except SingularMatrixError as err:
            last_err = err
            continue
        rhs = np.zeros((p, 1))
        rhs[col, 0] = 1.0
        pi_top = lu_apply(factor, rhs).T
        partials = []
        for pb, pn in zip(balance.partials, norm.partials):
            dm = pb.copy()
            dm[:, col] = pn[:, 0]
            partials.append(lu_apply(factor, -(pi_top @ dm).T).T)
        return DerivBundle(pi_top, partials, params)
    raise SingularMatrixError(
        f"boundary system is singular for every normalization column: {last_err}"
    )


def pi_bundles(model) -> list[DerivBundle]:
    """Per-level stationary row segments with partials, level 0 first."""
    rhat = rhat_bundles(model, 0.0)
    balance, norm = _boundary_bundles(model, rhat)
    segments = [None] * (model.top_level + 1)
    segments[model.top_level] = _solve_boundary(balance, norm)
    for n in range(model.top_level - 1, -1, -1):
        segments[n] = bundle_mul(segments[n + 1], rhat[n])
    return segments


def stationary_distribution(model: QbdModel) -> LevelVector:
    """Long-run state probabilities of a valid irreducible model.

    Returns
    -------
    LevelVector
        Strictly positive masses summing to one (the normalization is part
        of the boundary solve, not a post hoc rescale).
    """
    return LevelVector(tuple(b.value[0] for b in pi_bundles(model)))


def stationary_sensitivity(model: ParamQbdModel) -> LevelVectorBundle:
    """Stationary distribution and its gradient per model parameter.

    The gradient segments satisfy the differentiated balance and
    normalization conditions, so the per-parameter total mass derivative is
    zero.
    """
    segments = pi_bundles(model)
    value = LevelVector(tuple(b.value[0] for b in segments))
    partials = tuple(
        LevelVector(tuple(b.partials[i][0] for b in segments))
        for i in range(len(model.params))
    )
    return LevelVectorBundle(value, partials, model.params)


def find_truncation_level(
    family: Callable[[int], QbdModel],
    eps: float,
    probe_levels: Iterable[int] | None = None,
    l_max: int = 100,
) -> TruncationResult:
    """Smallest bound at which the truncated stationary solution stabilizes.

    For successive bounds ``L`` the stationary segments of the models
    truncated at ``L`` and ``L - 1`` are compared in the max-row-sum norm at
    the probe levels (restricted to levels both truncations define).  The
    search accepts the first ``L`` whose largest probe gap falls below
    ``eps``; the returned model bound can then stand in for the unbounded
    model at those levels.

    The probe segments are the right convergence gauge here: the
    sojourn-ratio matrices themselves only involve blocks at or below the
    probe level, so they are identical across truncations and carry no
    boundary signal; all truncation sensitivity of the stationary solution
    enters through the top-level balance and normalization.

    Parameters
    ----------
    family : callable
        Maps a bound ``L`` to the model truncated at top level ``L``.
    eps : float
        Acceptance threshold on the probe gap.
    probe_levels : iterable of int, optional
        Levels to compare; defaults to ``0..min(5, L-2)`` at each ``L``.
    l_max : int
        Search cap.

    Raises
    ------
    NoConvergenceError
        If the cap is reached first (tolerance too small, or the family
        does not stabilize).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    probes = None if probe_levels is None else sorted(set(int(n) for n in probe_levels))

    def solved(level):
        m = family(level)
        if isinstance(m, ParamQbdModel):
            m = m.base
        return stationary_distribution(m)

    prev = None
    for level in range(2, l_max + 1):
        if prev is None:
            prev = solved(level - 1)
        cur = solved(level)
        if probes is None:
            shared = list(range(min(5, level - 2) + 1))
        else:
            shared = [n for n in probes if n < level - 1]
        if shared:
            gap = max(
                inf_norm_diff(
                    cur.segment(n)[np.newaxis, :], prev.segment(n)[np.newaxis, :]
                )
                for n in shared
            )
            if gap < eps:
                return TruncationResult(level, gap)
        prev = cur
    raise NoConvergenceError(
        f"no truncation level up to {l_max} meets eps={eps:g}"
    )
