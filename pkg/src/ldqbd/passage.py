"""First-passage transforms between levels, with taboo clocks and moments.

For a passage from one level to another, the transform matrix entry
``(i, j)`` is ``E[exp(-s * tau_A); arrive in phase j | start in phase i]``
where ``tau_A`` is the time accumulated in a chosen *taboo set* of levels
before the target level is first reached.  Step matrices between adjacent
levels satisfy a one-sweep recursion (downward steps from the top, upward
steps from the bottom); multi-level passages are ordered products of steps.

The expected taboo time is the negated derivative of the transform at
``s = 0`` and is obtained by carrying an exact d/ds direction through the
same recursion.  Parameter sensitivities ride through in bundle arithmetic;
the moment's parameter sensitivities carry both directions at once via the
block-triangular packing from :mod:`ldqbd.linalg`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linalg import (
    DerivBundle,
    bundle_add,
    bundle_const,
    bundle_mul,
    bundle_neg,
    bundle_solve,
    dual_pack,
    dual_parts,
)
from .model import ParamQbdModel, QbdModel


@dataclass(frozen=True)
class TabooSet:
    """The set of levels whose occupation time drives the transform clock."""

    levels: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "levels", frozenset(int(n) for n in self.levels))

    @classmethod
    def of(cls, levels: Iterable[int]) -> "TabooSet":
        return cls(frozenset(levels))

    @classmethod
    def span(cls, lo: int, hi: int) -> "TabooSet":
        """All levels from ``lo`` to ``hi`` inclusive."""
        return cls(frozenset(range(lo, hi + 1)))

    @classmethod
    def full(cls, top_level: int) -> "TabooSet":
        """Every level: the clock simply measures the passage time."""
        return cls.span(0, top_level)

    def __contains__(self, n: int) -> bool:
        return n in self.levels

    def __iter__(self):
        return iter(sorted(self.levels))


@dataclass(frozen=True)
class PassageResult:
    """Passage transform between two levels with optional extras."""

    from_level: int
    to_level: int
    taboo: TabooSet
    s: complex
    matrix: np.ndarray
    moment1: np.ndarray | None = None
    sensitivities: DerivBundle | None = None


class _ModelSource:
    """Step-recursion inputs straight from a (possibly parameterized) model."""

    def __init__(self, model):
        self._model = model
        self.params = model.params
        self.phase_counts = model.phase_counts
        self.top_level = model.top_level

    def diag(self, n):
        return self._model.diag_bundle(n)

    def up(self, n):
        return self._model.up_bundle(n)

    def down(self, n):
        return self._model.down_bundle(n)

    def clock_shift(self, n, s, ticking):
        """The ``-s I`` diagonal shift applied while the clock runs at level n."""
        p = self.phase_counts[n]
        value = -s * np.eye(p) if ticking else np.zeros((p, p))
        return bundle_const(value, self.params)


class _ClockRateSource(_ModelSource):
    """Carries d/ds as the single bundle parameter; blocks are constant in s."""

    def __init__(self, model):
        base = model.base if isinstance(model, ParamQbdModel) else model
        super().__init__(base)
        self.params = ("s",)

    def diag(self, n):
        return bundle_const(self._model.diag[n], self.params)

    def up(self, n):
        return bundle_const(self._model.up[n], self.params)

    def down(self, n):
        return bundle_const(self._model.down[n - 1], self.params)

    def clock_shift(self, n, s, ticking):
        p = self.phase_counts[n]
        eye = np.eye(p)
        if not ticking:
            return bundle_const(np.zeros((p, p)), self.params)
        return DerivBundle(-s * eye, [-eye], self.params)


class _DualSource:
    """Parameter bundles over matrices packed with an extra d/ds direction."""

    def __init__(self, model: ParamQbdModel):
        self._model = model
        self.params = model.params
        self.phase_counts = model.phase_counts
        self.top_level = model.top_level

    @staticmethod
    def _pack(bundle: DerivBundle) -> DerivBundle:
        zero = np.zeros_like(bundle.value)
        return DerivBundle(
            dual_pack(bundle.value, zero),
            [dual_pack(p, np.zeros_like(p)) for p in bundle.partials],
            bundle.params,
        )

    def diag(self, n):
        return self._pack(self._model.diag_bundle(n))

    def up(self, n):
        return self._pack(self._model.up_bundle(n))

    def down(self, n):
        return self._pack(self._model.down_bundle(n))

    def clock_shift(self, n, s, ticking):
        p = self.phase_counts[n]
        eye = np.eye(p)
        zero = np.zeros((p, p))
        value = dual_pack(-s * eye, -eye) if ticking else dual_pack(zero, zero)
        return bundle_const(value, self.params)


def _check_query(model, taboo: TabooSet, s):
    top = model.top_level
    bad = [n for n in taboo.levels if n < 0 or n > top]
    if bad:
        raise ValueError(f"taboo levels {sorted(bad)} outside 0..{top}")
    if np.real(s) < 0:
        raise ValueError(f"need Re(s) >= 0, got s={s}")


def _down_steps(src, taboo: TabooSet, s) -> dict[int, DerivBundle]:
    """Adjacent downward step bundles keyed by upper level, computed top-down."""
    steps = {}
    for n in range(src.top_level, 0, -1):
        inner = bundle_add(src.diag(n), src.clock_shift(n, s, n in taboo))
        if n < src.top_level:
            inner = bundle_add(inner, bundle_mul(src.up(n), steps[n + 1]))
        steps[n] = bundle_solve(inner, bundle_neg(src.down(n)))
    return steps


def _up_steps(src, taboo: TabooSet, s) -> dict[int, DerivBundle]:
    """Adjacent upward step bundles keyed by lower level, computed bottom-up."""
    steps = {}
    for n in range(0, src.top_level):
        inner = bundle_add(src.diag(n), src.clock_shift(n, s, n in taboo))
        if n > 0:
            inner = bundle_add(inner, bundle_mul(src.down(n), steps[n - 1]))
        steps[n] = bundle_solve(inner, bundle_neg(src.up(n)))
    return steps


def _passage_bundle(src, from_level, to_level, taboo, s) -> DerivBundle:
    if from_level == to_level:
        raise ValueError("passage requires distinct start and target levels")
    for name, level in (("from", from_level), ("to", to_level)):
        if not 0 <= level <= src.top_level:
            raise ValueError(f"{name} level {level} outside 0..{src.top_level}")
    acc = None
    if from_level > to_level:
        steps = _down_steps(src, taboo, s)
        order = range(from_level, to_level, -1)
    else:
        steps = _up_steps(src, taboo, s)
        order = range(from_level, to_level)
    for n in order:
        acc = steps[n] if acc is None else bundle_mul(acc, steps[n])
    return acc


def g_step_family(model: QbdModel, taboo: TabooSet, s=0.0) -> list[np.ndarray]:
    """Downward adjacent-step transforms, ordered from the top level.

    Element ``i`` maps level ``N - i`` to ``N - i - 1``.
    """
    _check_query(model, taboo, s)
    steps = _down_steps(_ModelSource(model), taboo, s)
    return [steps[n].value for n in range(model.top_level, 0, -1)]


def h_step_family(model: QbdModel, taboo: TabooSet, s=0.0) -> list[np.ndarray]:
    """Upward adjacent-step transforms, ordered from the bottom level.

    Element ``i`` maps level ``i`` to ``i + 1``.
    """
    _check_query(model, taboo, s)
    steps = _up_steps(_ModelSource(model), taboo, s)
    return [steps[n].value for n in range(model.top_level)]


def passage_transform(
    model: QbdModel, from_level: int, to_level: int, taboo: TabooSet, s=0.0
) -> PassageResult:
    """Taboo-time transform of the first passage between two levels.

    At ``s = 0`` with certain absorption the matrix is stochastic; rows
    then hold arrival-phase probabilities.
    """
    _check_query(model, taboo, s)
    acc = _passage_bundle(_ModelSource(model), from_level, to_level, taboo, s)
    return PassageResult(from_level, to_level, taboo, s, acc.value)


def passage_moment1(
    model: QbdModel, from_level: int, to_level: int, taboo: TabooSet
) -> np.ndarray:
    """Expected taboo time accumulated before absorption, per phase pair.

    Entry ``(i, j)`` is the expected time spent in the taboo set before the
    target level is first entered, restricted to paths arriving in phase
    ``j``; row sums give expected taboo times irrespective of the arrival
    phase.
    """
    _check_query(model, taboo, 0.0)
    acc = _passage_bundle(_ClockRateSource(model), from_level, to_level, taboo, 0.0)
    return -acc.partials[0]


def passage_sensitivity(
    model: ParamQbdModel,
    from_level: int,
    to_level: int,
    taboo: TabooSet,
    s=0.0,
    moment: int = 0,
) -> DerivBundle:
    """Parameter derivatives of the passage transform or of its first moment.

    With ``moment=0`` the bundle value is the transform at ``s`` and the
    partials are its parameter derivatives.  With ``moment=1`` (requires
    ``s = 0``) the value is the expected-taboo-time matrix and the partials
    are its parameter derivatives.
    """
    _check_query(model, taboo, s)
    if moment not in (0, 1):
        raise ValueError(f"moment must be 0 or 1, got {moment}")
    if moment == 0:
        return _passage_bundle(_ModelSource(model), from_level, to_level, taboo, s)
    if s != 0:
        raise ValueError("the first moment is defined at s = 0")
    acc = _passage_bundle(_DualSource(model), from_level, to_level, taboo, 0.0)
    value = -dual_parts(acc.value)[1]
    partials = [-dual_parts(p)[1] for p in acc.partials]
    return DerivBundle(value, partials, acc.params)
