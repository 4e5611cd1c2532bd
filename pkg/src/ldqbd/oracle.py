"""Brute-force reference computations on the assembled dense generator.

Everything here works on the full dense generator with textbook methods
(null spaces, Poisson mixtures of a stochastic matrix, absorbing-chain
resolvents, difference quotients) and never calls the level-recursive
solver paths, so agreement between the two is evidence rather than
tautology.  Complexity is cubic in the state count; intended for tests and
the ``verify`` command only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import poisson

from .errors import SingularSystemError
from .model import QbdModel, assemble_full_generator

#: Poisson tail mass discarded by the uniformization truncation.
POISSON_TAIL = 1e-12


def direct_stationary(q: np.ndarray) -> np.ndarray:
    """Stationary row vector of an irreducible generator via its null space.

    Parameters
    ----------
    q : (n, n) array_like
        Generator matrix (zero row sums, nonnegative off-diagonals).

    Returns
    -------
    (n,) ndarray
        The normalized left null vector.

    Raises
    ------
    SingularSystemError
        If the null space is not one-dimensional (reducible input).
    """
    q = np.asarray(q, dtype=float)
    basis = scipy.linalg.null_space(q.T)
    if basis.shape[1] != 1:
        raise SingularSystemError(
            f"left null space has dimension {basis.shape[1]}, expected 1"
        )
    vec = basis[:, 0]
    vec = vec / vec.sum()
    if np.any(vec < -1e-10):
        raise SingularSystemError("null vector changes sign; generator not irreducible")
    return np.clip(vec, 0.0, None) / np.clip(vec, 0.0, None).sum()


def uniformization(q: np.ndarray, p0: np.ndarray, t: float) -> np.ndarray:
    """Distribution at time ``t`` as a Poisson mixture of jump-chain powers.

    The uniformization rate is inflated 5% above the largest exit rate so
    the discrete kernel keeps a strictly positive diagonal; the Poisson
    series is truncated once its remaining tail mass drops below
    ``POISSON_TAIL``.
    """
    q = np.asarray(q, dtype=float)
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    rate = 1.05 * np.max(np.abs(np.diag(q)))
    if t == 0 or rate == 0:
        return p
    mu = rate * t
    kernel = np.eye(q.shape[0]) + q / rate
    k_max = int(poisson.isf(POISSON_TAIL, mu)) + 10
    weights = poisson.pmf(np.arange(k_max + 1), mu)
    out = weights[0] * p
    for k in range(1, k_max + 1):
        p = p @ kernel
        out = out + weights[k] * p
    return out


@dataclass(frozen=True)
class AbsorbingSlice:
    """Dense sub-generator for a passage query.

    ``generator`` covers the states the process can visit strictly before
    absorption, ``exit`` holds the rates into the target level's phases,
    and ``row_levels`` records the level of each retained row.
    """

    generator: np.ndarray
    exit: np.ndarray
    row_levels: tuple[int, ...]


def absorbing_slice(model: QbdModel, from_level: int, to_level: int) -> AbsorbingSlice:
    """Restrict the assembled generator to the states alive before absorption."""
    if from_level == to_level:
        raise ValueError("passage requires distinct start and target levels")
    q = assemble_full_generator(model)
    offs = model.offsets()
    counts = model.phase_counts
    if from_level > to_level:
        levels = range(to_level + 1, model.top_level + 1)
    else:
        levels = range(0, to_level)
    keep = np.concatenate(
        [np.arange(offs[n], offs[n] + counts[n]) for n in levels]
    )
    row_levels = tuple(n for n in levels for _ in range(counts[n]))
    sub = q[np.ix_(keep, keep)]
    target = np.arange(offs[to_level], offs[to_level] + counts[to_level])
    # Block tridiagonality puts all exit rates in the layer next to the target.
    exit_block = q[np.ix_(keep, target)]
    return AbsorbingSlice(sub, exit_block, row_levels)


def absorbing_passage(
    model: QbdModel,
    from_level: int,
    to_level: int,
    taboo,
    s=0.0,
    moment: int = 0,
) -> np.ndarray:
    """Passage transform or expected taboo time from the dense slice.

    The transform kills paths at rate ``s`` only while the current level is
    in the taboo set: ``(s D - T)^{-1} exit`` with ``D`` the taboo-membership
    diagonal.  The first moment is the taboo occupancy of the absorbing
    chain applied to the passage-probability matrix.
    """
    sl = absorbing_slice(model, from_level, to_level)
    mask = np.diag([1.0 if n in taboo else 0.0 for n in sl.row_levels])
    rows = [i for i, n in enumerate(sl.row_levels) if n == from_level]
    if moment == 0:
        full = np.linalg.solve(s * mask - sl.generator, sl.exit)
    elif moment == 1:
        probs = np.linalg.solve(-sl.generator, sl.exit)
        full = np.linalg.solve(-sl.generator, mask @ probs)
    else:
        raise ValueError(f"moment must be 0 or 1, got {moment}")
    return full[rows, :]


def finite_difference(fn, theta, h: float = 1e-5) -> list[np.ndarray]:
    """Central difference quotients of a vector- or matrix-valued map.

    Returns one difference array per coordinate of ``theta``:
    ``(fn(theta + h e_i) - fn(theta - h e_i)) / (2 h)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = []
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        hi = np.asarray(fn(theta + step), dtype=float)
        lo = np.asarray(fn(theta - step), dtype=float)
        out.append((hi - lo) / (2.0 * h))
    return out
