"""Dense small-matrix kernels and the derivative-bundle algebra.

Every recursion in this package reduces to sums, products and inverses of
small dense blocks over real or complex doubles.  Parameter derivatives are
propagated through those recursions as :class:`DerivBundle` values: a matrix
paired with one partial-derivative matrix per parameter, combined by the
product rule and the derivative-of-inverse identity.

A second derivative direction (used for moment/parameter cross terms) is
carried by packing a matrix and its derivative into the block-triangular
form ``[[X, dX], [0, X]]``; block products and inverses of that form apply
the same calculus automatically.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, ParamMismatchError, SingularMatrixError

#: Relative pivot threshold below which a matrix is reported as singular.
PIVOT_RTOL = 1e-12


def _as_matrix(a) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a))
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


def lu_factor(a: np.ndarray):
    """LU-factor a square matrix, rejecting near-singular input.

    Returns the opaque factorization accepted by :func:`lu_apply`.

    Raises
    ------
    SingularMatrixError
        If the smallest pivot magnitude falls below ``PIVOT_RTOL * max|a|``.
    """
    a = _as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionMismatchError(f"matrix is {n}x{m}, expected square")
    with warnings.catch_warnings():
        # scipy warns on exactly-zero pivots; the pivot check below covers it.
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(a)
    scale = np.max(np.abs(a))
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or np.min(pivots) < PIVOT_RTOL * scale:
        raise SingularMatrixError(
            f"{n}x{n} matrix is singular to working precision "
            f"(min pivot {np.min(pivots):.3e}, scale {scale:.3e})"
        )
    return lu, piv


def lu_apply(factor, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` given a factorization from :func:`lu_factor`."""
    b = _as_matrix(b)
    lu, piv = factor
    if b.shape[0] != lu.shape[0]:
        raise DimensionMismatchError(
            f"rhs has {b.shape[0]} rows, factor expects {lu.shape[0]}"
        )
    if np.iscomplexobj(b) and not np.iscomplexobj(lu):
        # scipy's lu_solve keeps the factor dtype; split the rhs instead.
        return scipy.linalg.lu_solve(factor, b.real) + 1j * scipy.linalg.lu_solve(
            factor, b.imag
        )
    return scipy.linalg.lu_solve(factor, b)


def lu_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by LU factorization with partial pivoting.

    Parameters
    ----------
    a : (n, n) array_like
        Square coefficient matrix, real or complex.
    b : (n, m) array_like
        Right-hand side.

    Returns
    -------
    (n, m) ndarray

    Raises
    ------
    SingularMatrixError
        If a pivot falls below ``PIVOT_RTOL`` times ``max|a|``.
    DimensionMismatchError
        If ``a`` is not square or ``b`` has the wrong row count.
    """
    return lu_apply(lu_factor(a), b)


def solve_right(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Solve ``x @ a = b`` via the transposed system."""
    return lu_solve(_as_matrix(a).T, _as_matrix(b).T).T


def inv(a: np.ndarray) -> np.ndarray:
    """Inverse of a square matrix through :func:`lu_solve`."""
    a = _as_matrix(a)
    return lu_solve(a, np.eye(a.shape[0], dtype=a.dtype))


def inf_norm_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Maximum absolute row sum of ``a - b``.

    Zero exactly when the two matrices are identical.
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b).sum(axis=1)))


class DerivBundle:
    """A matrix together with its partial derivatives per parameter.

    Attributes
    ----------
    value : (r, c) ndarray
        The matrix itself.
    partials : tuple of (r, c) ndarray
        One partial-derivative matrix per parameter, same shape as ``value``.
    params : tuple of str
        Parameter names, in the order the partials are stored.
    """

    __slots__ = ("value", "partials", "params")

    def __init__(self, value, partials=(), params=()):
        value = _as_matrix(value)
        partials = tuple(_as_matrix(p) for p in partials)
        params = tuple(params)
        if len(partials) != len(params):
            raise ParamMismatchError(
                f"{len(partials)} partials for {len(params)} parameter names"
            )
        for name, p in zip(params, partials):
            if p.shape != value.shape:
                raise DimensionMismatchError(
                    f"partial for {name!r} has shape {p.shape}, value is {value.shape}"
                )
        self.value = value
        self.partials = partials
        self.params = params

    @property
    def shape(self):
        return self.value.shape

    def partial(self, name: str) -> np.ndarray:
        """The partial-derivative matrix for one named parameter."""
        return self.partials[self.params.index(name)]

    def map(self, fn) -> "DerivBundle":
        """Apply an entrywise linear map to the value and every partial."""
        return DerivBundle(fn(self.value), [fn(p) for p in self.partials], self.params)

    def __repr__(self):
        r, c = self.value.shape
        return f"DerivBundle({r}x{c}, params={list(self.params)})"


def bundle_const(value, params=()) -> DerivBundle:
    """Wrap a parameter-independent matrix (all partials zero)."""
    value = _as_matrix(value)
    zero = np.zeros_like(value)
    return DerivBundle(value, [zero] * len(tuple(params)), params)


def _check_params(x: DerivBundle, y: DerivBundle):
    if x.params != y.params:
        raise ParamMismatchError(f"{list(x.params)} vs {list(y.params)}")


def bundle_add(x: DerivBundle, y: DerivBundle) -> DerivBundle:
    """Sum of two bundles (derivative is the sum of derivatives)."""
    _check_params(x, y)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"shape mismatch: {x.shape} vs {y.shape}")
    return DerivBundle(
        x.value + y.value,
        [px + py for px, py in zip(x.partials, y.partials)],
        x.params,
    )


def bundle_neg(x: DerivBundle) -> DerivBundle:
    return x.map(np.negative)


def bundle_mul(x: DerivBundle, y: DerivBundle) -> DerivBundle:
    """Matrix product of two bundles under the product rule.

    ``partial_i = x.partial_i @ y.value + x.value @ y.partial_i``.
    """
    _check_params(x, y)
    if x.shape[1] != y.shape[0]:
        raise DimensionMismatchError(
            f"inner dimensions differ: {x.shape} @ {y.shape}"
        )
    return DerivBundle(
        x.value @ y.value,
        [px @ y.value + x.value @ py for px, py in zip(x.partials, y.partials)],
        x.params,
    )


def bundle_solve(a: DerivBundle, b: DerivBundle) -> DerivBundle:
    """Solve ``a @ x = b`` in bundle arithmetic.

    The partials follow from differentiating ``a x = b``:
    ``partial_i(x) = a^{-1} (partial_i(b) - partial_i(a) @ x)``.
    """
    _check_params(a, b)
    factor = lu_factor(a.value)
    x = lu_apply(factor, b.value)
    partials = [
        lu_apply(factor, pb - pa @ x) for pa, pb in zip(a.partials, b.partials)
    ]
    return DerivBundle(x, partials, a.params)


def bundle_solve_right(b: DerivBundle, a: DerivBundle) -> DerivBundle:
    """Solve ``x @ a = b`` in bundle arithmetic (transposed system)."""
    _check_params(a, b)
    at = DerivBundle(a.value.T, [p.T for p in a.partials], a.params)
    bt = DerivBundle(b.value.T, [p.T for p in b.partials], b.params)
    xt = bundle_solve(at, bt)
    return DerivBundle(xt.value.T, [p.T for p in xt.partials], xt.params)


def bundle_inv(x: DerivBundle) -> DerivBundle:
    """Inverse of a bundle.

    ``value = x.value^{-1}``; each partial is
    ``-x.value^{-1} @ x.partial_i @ x.value^{-1}``.
    """
    eye = bundle_const(np.eye(x.shape[0], dtype=x.value.dtype), x.params)
    if x.shape[0] != x.shape[1]:
        raise DimensionMismatchError(f"cannot invert a {x.shape} bundle")
    return bundle_solve(x, eye)


def dual_pack(value: np.ndarray, deriv: np.ndarray) -> np.ndarray:
    """Pack a matrix and a derivative direction as ``[[X, dX], [0, X]]``.

    Products and inverses of matrices in this form propagate the packed
    derivative by the product rule and the derivative-of-inverse identity,
    so an extra differentiation direction rides along through any chain of
    bundle operations.
    """
    value = _as_matrix(value)
    deriv = _as_matrix(deriv)
    if deriv.shape != value.shape:
        raise DimensionMismatchError(f"{value.shape} value, {deriv.shape} derivative")
    zero = np.zeros_like(value)
    return np.block([[value, deriv], [zero, value]])


def dual_parts(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a packed matrix back into (value, derivative)."""
    m = _as_matrix(m)
    r, c = m.shape
    if r % 2 or c % 2:
        raise DimensionMismatchError(f"packed matrix has odd shape {m.shape}")
    return m[: r // 2, : c // 2], m[: r // 2, c // 2 :]
