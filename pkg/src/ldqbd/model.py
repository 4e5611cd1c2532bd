"""Block-tridiagonal Markov models on a (level, phase) state space.

A model holds one generator block per level pair ``(n, n')`` with
``|n - n'| <= 1``: transitions only reach neighbouring levels.  Parameterized
models additionally carry, for every named parameter, the elementwise
derivative of each block, so downstream solvers can propagate sensitivities
analytically.

Three builders cover common parameterizations: a queue driven by a Markovian
environment (per-phase arrival and per-customer service rates), a two-class
loss system whose phase counts grow with the level, and an additive
perturbation of an arbitrary base generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from .errors import (
    DimensionMismatchError,
    InvalidPerturbationError,
    InvalidRateError,
    InvalidSubgeneratorError,
    ModelValidationError,
)
from .linalg import DerivBundle

#: Tolerance on generator row sums (and on row sums of parameter partials).
ROW_SUM_TOL = 1e-10

#: Tolerance below which an off-diagonal entry counts as negative.
SIGN_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _frozen_blocks(blocks, shapes, kind) -> tuple[np.ndarray, ...]:
    blocks = tuple(blocks)
    if len(blocks) != len(shapes):
        raise DimensionMismatchError(
            f"expected {len(shapes)} {kind} blocks, got {len(blocks)}"
        )
    out = []
    for idx, (block, shape) in enumerate(zip(blocks, shapes)):
        arr = _frozen(block)
        if arr.ndim != 2 or arr.shape != shape:
            raise DimensionMismatchError(
                f"{kind} block {idx}: expected shape {shape}, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{kind} block {idx} contains non-finite entries")
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True)
class QbdModel:
    """A bounded level-dependent QBD generator.

    Attributes
    ----------
    phase_counts : tuple of int
        Number of phases at each level ``0..N``.
    diag : tuple of ndarray
        Within-level blocks; ``diag[n]`` maps level ``n`` to itself.
    up : tuple of ndarray
        ``up[n]`` maps level ``n`` to ``n + 1``, for ``n = 0..N-1``.
    down : tuple of ndarray
        ``down[n]`` maps level ``n + 1`` to ``n``, for ``n = 0..N-1``.
    """

    phase_counts: tuple[int, ...]
    diag: tuple[np.ndarray, ...]
    up: tuple[np.ndarray, ...]
    down: tuple[np.ndarray, ...]

    def __post_init__(self):
        p = tuple(int(c) for c in self.phase_counts)
        if len(p) < 2:
            raise DimensionMismatchError("a model needs at least two levels")
        if any(c < 1 for c in p):
            raise DimensionMismatchError(f"phase counts must be >= 1, got {p}")
        n_levels = len(p)
        diag = _frozen_blocks(self.diag, [(c, c) for c in p], "diag")
        up = _frozen_blocks(
            self.up, [(p[n], p[n + 1]) for n in range(n_levels - 1)], "up"
        )
        down = _frozen_blocks(
            self.down, [(p[n + 1], p[n]) for n in range(n_levels - 1)], "down"
        )
        object.__setattr__(self, "phase_counts", p)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "down", down)

    @property
    def top_level(self) -> int:
        return len(self.phase_counts) - 1

    @property
    def num_states(self) -> int:
        return int(sum(self.phase_counts))

    def offsets(self) -> tuple[int, ...]:
        """Start index of each level in the flattened (level-major) state order."""
        return tuple(np.concatenate([[0], np.cumsum(self.phase_counts)[:-1]]).astype(int))

    def diag_block(self, n: int) -> np.ndarray:
        return self.diag[n]

    def up_block(self, n: int) -> np.ndarray:
        """Block from level ``n`` to ``n + 1``."""
        return self.up[n]

    def down_block(self, n: int) -> np.ndarray:
        """Block from level ``n`` to ``n - 1``."""
        return self.down[n - 1]

    # Zero-parameter bundles let the same recursion code serve plain solves.
    def diag_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(self.diag[n])

    def up_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(self.up[n])

    def down_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(self.down[n - 1])

    @property
    def params(self) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class BlockSet:
    """One block-tridiagonal array of matrices, conformable with a model.

    Used both for per-parameter generator derivatives and for perturbation
    directions.  Row sums across a full block row must vanish, as for the
    generator itself.
    """

    diag: tuple[np.ndarray, ...]
    up: tuple[np.ndarray, ...]
    down: tuple[np.ndarray, ...]

    def conform(self, model: QbdModel, label: str) -> "BlockSet":
        """Freeze and shape-check against ``model``; returns the frozen set."""
        p = model.phase_counts
        n_levels = len(p)
        diag = _frozen_blocks(self.diag, [(c, c) for c in p], f"{label} diag")
        up = _frozen_blocks(
            self.up, [(p[n], p[n + 1]) for n in range(n_levels - 1)], f"{label} up"
        )
        down = _frozen_blocks(
            self.down, [(p[n + 1], p[n]) for n in range(n_levels - 1)], f"{label} down"
        )
        return BlockSet(diag, up, down)

    def row_sum_errors(self) -> np.ndarray:
        """Per-state absolute row sums across the full block row."""
        sums = []
        n_levels = len(self.diag)
        for n in range(n_levels):
            s = self.diag[n].sum(axis=1)
            if n > 0:
                s = s + self.down[n - 1].sum(axis=1)
            if n < n_levels - 1:
                s = s + self.up[n].sum(axis=1)
            sums.append(np.abs(s))
        return np.concatenate(sums)


def _zero_blockset(model: QbdModel) -> BlockSet:
    p = model.phase_counts
    n_levels = len(p)
    return BlockSet(
        tuple(np.zeros((c, c)) for c in p),
        tuple(np.zeros((p[n], p[n + 1])) for n in range(n_levels - 1)),
        tuple(np.zeros((p[n + 1], p[n])) for n in range(n_levels - 1)),
    )


@dataclass(frozen=True)
class ParamQbdModel:
    """A QBD generator evaluated at a parameter point, with exact partials.

    ``partials[i]`` holds the blockwise derivative of the generator with
    respect to ``params[i]``.  Partial block rows must sum to zero, since the
    generator's zero row sums hold identically in the parameters.
    """

    base: QbdModel
    params: tuple[str, ...]
    partials: tuple[BlockSet, ...]

    def __post_init__(self):
        params = tuple(str(name) for name in self.params)
        if len(set(params)) != len(params):
            raise ValueError(f"duplicate parameter names in {params}")
        if len(self.partials) != len(params):
            raise DimensionMismatchError(
                f"{len(self.partials)} partial block sets for {len(params)} parameters"
            )
        frozen = []
        for name, blockset in zip(params, self.partials):
            bs = blockset.conform(self.base, f"partial[{name}]")
            worst = bs.row_sum_errors().max() if self.base.num_states else 0.0
            if worst > ROW_SUM_TOL:
                raise ModelValidationError(
                    [f"partial[{name}]: block row sums reach {worst:.3e}"]
                )
            frozen.append(bs)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "partials", tuple(frozen))

    @property
    def top_level(self) -> int:
        return self.base.top_level

    @property
    def phase_counts(self) -> tuple[int, ...]:
        return self.base.phase_counts

    def diag_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(
            self.base.diag[n], [bs.diag[n] for bs in self.partials], self.params
        )

    def up_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(
            self.base.up[n], [bs.up[n] for bs in self.partials], self.params
        )

    def down_bundle(self, n: int) -> DerivBundle:
        return DerivBundle(
            self.base.down[n - 1], [bs.down[n - 1] for bs in self.partials], self.params
        )

    def shifted(self, param: str, h: float) -> QbdModel:
        """The generator with one parameter moved by ``h`` along its partial.

        Exact for the affine parameterizations produced by the builders;
        used for finite-difference cross-checks of analytic sensitivities.
        """
        bs = self.partials[self.params.index(param)]
        return QbdModel(
            self.base.phase_counts,
            tuple(d + h * pd for d, pd in zip(self.base.diag, bs.diag)),
            tuple(u + h * pu for u, pu in zip(self.base.up, bs.up)),
            tuple(d + h * pd for d, pd in zip(self.base.down, bs.down)),
        )


@dataclass(frozen=True)
class LevelVector:
    """A row vector partitioned by level (stationary or time-t masses)."""

    segments: tuple[np.ndarray, ...]

    def __post_init__(self):
        segs = []
        for seg in self.segments:
            arr = np.atleast_1d(np.asarray(seg))
            if arr.ndim != 1:
                raise DimensionMismatchError("level segments must be 1-D")
            arr = arr.copy()
            arr.setflags(write=False)
            segs.append(arr)
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def from_flat(cls, flat, phase_counts) -> "LevelVector":
        flat = np.atleast_1d(np.asarray(flat))
        bounds = np.cumsum(phase_counts)
        if flat.size != bounds[-1]:
            raise DimensionMismatchError(
                f"flat vector of length {flat.size} for {bounds[-1]} states"
            )
        return cls(tuple(np.split(flat, bounds[:-1])))

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.segments)

    def segment(self, n: int) -> np.ndarray:
        return self.segments[n]

    def total(self):
        return self.flatten().sum()


@dataclass(frozen=True)
class LevelVectorBundle:
    """A level-partitioned vector with one partial vector per parameter."""

    value: LevelVector
    partials: tuple[LevelVector, ...]
    params: tuple[str, ...]

    def partial(self, name: str) -> LevelVector:
        return self.partials[self.params.index(name)]


def validate(model: QbdModel) -> list[str]:
    """Check generator invariants; returns one diagnostic per violation.

    An empty list means the model is a valid irreducible generator: block
    shapes conform (enforced at construction), off-diagonal entries are
    nonnegative, every global row sums to zero, and the transition graph is
    strongly connected.
    """
    issues = []
    n_levels = len(model.phase_counts)
    for n in range(n_levels):
        d = model.diag[n]
        off = d - np.diag(np.diag(d))
        for i, j in zip(*np.where(off < -SIGN_TOL)):
            issues.append(
                f"diag block {n}: negative off-diagonal {d[i, j]:.6g} at ({i},{j})"
            )
    for n in range(n_levels - 1):
        for kind, block in (("up", model.up[n]), ("down", model.down[n])):
            for i, j in zip(*np.where(block < -SIGN_TOL)):
                issues.append(
                    f"{kind} block {n}: negative entry {block[i, j]:.6g} at ({i},{j})"
                )
    for n in range(n_levels):
        s = model.diag[n].sum(axis=1)
        if n > 0:
            s = s + model.down[n - 1].sum(axis=1)
        if n < n_levels - 1:
            s = s + model.up[n].sum(axis=1)
        for i in np.where(np.abs(s) > ROW_SUM_TOL)[0]:
            issues.append(f"row sum violation at level {n}, phase {i}: {s[i]:.6g}")
    if not issues:
        q = assemble_full_generator(model)
        adjacency = scipy.sparse.csr_matrix(np.abs(q) > SIGN_TOL)
        n_comp, _ = scipy.sparse.csgraph.connected_components(
            adjacency, directed=True, connection="strong"
        )
        if n_comp != 1:
            issues.append(
                f"transition graph is not strongly connected ({n_comp} components)"
            )
    return issues


def assemble_full_generator(model: QbdModel) -> np.ndarray:
    """The dense generator in level-major state order ``(0,0)..(N,m_N)``."""
    total = model.num_states
    offs = model.offsets()
    q = np.zeros((total, total))
    for n, p in enumerate(model.phase_counts):
        r = offs[n]
        q[r : r + p, r : r + p] = model.diag[n]
        if n < model.top_level:
            c = offs[n + 1]
            q[r : r + p, c : c + model.phase_counts[n + 1]] = model.up[n]
        if n > 0:
            c = offs[n - 1]
            q[r : r + p, c : c + model.phase_counts[n - 1]] = model.down[n - 1]
    return q


def _require_positive(name, values):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise InvalidRateError(f"{name} must be positive and finite, got {arr}")
    return arr


def build_mmpp_queue(T, lambdas, mus, N: int) -> ParamQbdModel:
    """A capacity-``N`` queue modulated by a k-phase Markov environment.

    The environment moves between phases with generator ``T``.  In phase
    ``i``, customers arrive at rate ``lambdas[i]`` (while the level is below
    ``N``) and each of the ``n`` present customers is served at rate
    ``mus[i]``, so the aggregate service rate at level ``n`` is
    ``n * mus[i]``.

    Parameters
    ----------
    T : (k, k) array_like
        Environment generator; zero row sums, nonnegative off-diagonals.
    lambdas, mus : length-k array_like
        Positive per-phase arrival and per-customer service rates.
    N : int
        Capacity (top level).

    Returns
    -------
    ParamQbdModel
        With parameters ``lambda1..lambdak, mu1..muk`` and exact partial
        blocks: moving ``lambda_i`` shifts the up-block and diagonal entries
        of phase ``i`` by ±1 below the top level; moving ``mu_i`` shifts the
        down-block and diagonal entries of phase ``i`` by ±n at level ``n``.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise InvalidSubgeneratorError(f"environment generator must be square, got {T.shape}")
    k = T.shape[0]
    off = T - np.diag(np.diag(T))
    if np.any(off < -SIGN_TOL):
        raise InvalidSubgeneratorError("environment generator has negative off-diagonals")
    if np.max(np.abs(T.sum(axis=1))) > ROW_SUM_TOL:
        raise InvalidSubgeneratorError("environment generator rows must sum to zero")
    lambdas = _require_positive("arrival rates", lambdas)
    mus = _require_positive("service rates", mus)
    if len(lambdas) != k or len(mus) != k:
        raise DimensionMismatchError(
            f"need {k} arrival and service rates, got {len(lambdas)} and {len(mus)}"
        )
    if N < 1:
        raise InvalidRateError(f"level bound must be >= 1, got {N}")

    eye = np.eye(k)
    diag, up, down = [], [], []
    for n in range(N + 1):
        arr = lambdas if n < N else np.zeros(k)
        srv = n * mus
        diag.append(T - np.diag(arr) - np.diag(srv))
        if n < N:
            up.append(np.diag(lambdas))
        if n > 0:
            down.append(np.diag(srv))

    base = QbdModel([k] * (N + 1), diag, up, down)

    params = [f"lambda{i + 1}" for i in range(k)] + [f"mu{i + 1}" for i in range(k)]
    partials = []
    for i in range(k):
        unit = np.outer(eye[i], eye[i])
        pd = [(-unit if n < N else np.zeros((k, k))) for n in range(N + 1)]
        pu = [unit for _ in range(N)]
        pdown = [np.zeros((k, k)) for _ in range(N)]
        partials.append(BlockSet(tuple(pd), tuple(pu), tuple(pdown)))
    for i in range(k):
        unit = np.outer(eye[i], eye[i])
        pd = [-n * unit for n in range(N + 1)]
        pu = [np.zeros((k, k)) for _ in range(N)]
        pdown = [(n + 1) * unit for n in range(N)]
        partials.append(BlockSet(tuple(pd), tuple(pu), tuple(pdown)))

    return ParamQbdModel(base, tuple(params), tuple(partials))


def build_two_class(lambda1, lambda2, mu1, mu2, N: int) -> ParamQbdModel:
    """A capacity-``N`` system with two customer classes.

    The level counts all customers; the phase ``i`` at level ``n`` counts
    those of the class tracked by the phase coordinate (``0 <= i <= n``),
    so level ``n`` has ``n + 1`` phases.  From state ``(n, i)``: arrivals at
    rates ``lambda1`` (to ``(n+1, i)``) and ``lambda2`` (to ``(n+1, i+1)``)
    while ``n < N``; departures at rates ``(n - i) * mu1`` (to ``(n-1, i)``)
    and ``i * mu2`` (to ``(n-1, i-1)``).

    The four parameters are affine in the generator; the partial blocks hold
    the corresponding unit patterns, with occupancy factors ``n - i`` and
    ``i`` on the service sides.
    """
    for name, rate in (("lambda1", lambda1), ("lambda2", lambda2),
                       ("mu1", mu1), ("mu2", mu2)):
        _require_positive(name, rate)
    if N < 1:
        raise InvalidRateError(f"level bound must be >= 1, got {N}")

    phase_counts = [n + 1 for n in range(N + 1)]

    def level_blocks(l1, l2, m1, m2):
        diag, up, down = [], [], []
        for n in range(N + 1):
            p = n + 1
            d = np.zeros((p, p))
            for i in range(p):
                out = 0.0
                if n < N:
                    out += l1 + l2
                out += (n - i) * m1 + i * m2
                d[i, i] = -out
            diag.append(d)
            if n < N:
                u = np.zeros((p, n + 2))
                for i in range(p):
                    u[i, i] = l1
                    u[i, i + 1] = l2
                up.append(u)
            if n > 0:
                dn = np.zeros((p, n))
                for i in range(p):
                    if i < n:
                        dn[i, i] = (n - i) * m1
                    if i > 0:
                        dn[i, i - 1] = i * m2
                down.append(dn)
        return diag, up, down

    base = QbdModel(phase_counts, *level_blocks(lambda1, lambda2, mu1, mu2))

    # Partial patterns are the blocks at unit rate with the other three zero.
    partial_sets = []
    for unit in (
        level_blocks(1.0, 0.0, 0.0, 0.0),
        level_blocks(0.0, 1.0, 0.0, 0.0),
        level_blocks(0.0, 0.0, 1.0, 0.0),
        level_blocks(0.0, 0.0, 0.0, 1.0),
    ):
        partial_sets.append(BlockSet(tuple(unit[0]), tuple(unit[1]), tuple(unit[2])))

    return ParamQbdModel(
        base, ("lambda1", "lambda2", "mu1", "mu2"), tuple(partial_sets)
    )


def build_perturbed(base: QbdModel, directions, epsilon, names=None) -> ParamQbdModel:
    """A generator perturbed additively along fixed block directions.

    The result evaluates ``base + sum_i epsilon[i] * directions[i]``; the
    partial with respect to each ``epsilon[i]`` is the constant direction
    itself.

    Raises
    ------
    InvalidPerturbationError
        If a direction has nonzero row sums, or the perturbed generator
        leaves the admissible region (negative off-diagonal rates or a
        disconnected transition graph).
    """
    directions = [d.conform(base, f"direction {idx}") for idx, d in enumerate(directions)]
    epsilon = np.atleast_1d(np.asarray(epsilon, dtype=float))
    if len(epsilon) != len(directions):
        raise DimensionMismatchError(
            f"{len(epsilon)} coefficients for {len(directions)} directions"
        )
    if names is None:
        names = [f"eps{i + 1}" for i in range(len(directions))]
    for idx, d in enumerate(directions):
        worst = d.row_sum_errors().max()
        if worst > ROW_SUM_TOL:
            raise InvalidPerturbationError(
                f"direction {idx}: block row sums reach {worst:.3e}"
            )

    def combine(blocks, pick):
        out = []
        for n, b in enumerate(blocks):
            total = b.astype(float).copy()
            for e, d in zip(epsilon, directions):
                total += e * pick(d)[n]
            out.append(total)
        return tuple(out)

    model = QbdModel(
        base.phase_counts,
        combine(base.diag, lambda d: d.diag),
        combine(base.up, lambda d: d.up),
        combine(base.down, lambda d: d.down),
    )
    issues = validate(model)
    if issues:
        raise InvalidPerturbationError(
            "perturbation leaves the admissible region: " + "; ".join(issues)
        )
    return ParamQbdModel(model, tuple(names), tuple(directions))
