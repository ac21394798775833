"""Small dense linear-algebra kernels.

Everything here operates on matrices of at most a few dozen rows (state plus
input dimensions), so the implementations favour determinism and robustness
over asymptotic speed: a cyclic Jacobi eigensolver, eigenvalue-floor
regularization, a floored square-root factorization, and LU solves with
partial pivoting.  All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError, SingularMatrixError

# Jacobi iteration limits: 50 cyclic sweeps is far beyond what n <= 8
# symmetric matrices need (quadratic convergence sets in after ~3 sweeps).
_JACOBI_MAX_SWEEPS = 50
_JACOBI_REL_TOL = 1e-14

# A pivot below this fraction of the largest input entry is treated as an
# exact zero during elimination.
_PIVOT_REL_TOL = 1e-14

# Below this size the pure-Python elimination beats numpy's per-call
# overhead; above it the sliced-row updates win.
_SMALL_N = 8


def _offdiag_max(m, n: int) -> float:
    off = 0.0
    for p in range(n - 1):
        row = m[p]
        for q in range(p + 1, n):
            val = abs(row[q])
            if val > off:
                off = val
    return off


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted in descending order; column i of eigenvectors
    pairs with eigenvalues[i], and the eigenvector matrix is a proper
    rotation (orthogonal, determinant +1).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eig(a) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (A + Aᵀ)/2 first, so round-off asymmetry on
    the order of machine precision is harmless.

    Args:
        a: square matrix, symmetric up to round-off.

    Returns:
        SymEig with descending eigenvalues.

    Raises:
        DimensionError: if a is not square.
        NumericalError: if the off-diagonal has not converged after the
            sweep cap (does not happen for sane inputs; kept as a guard).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return SymEig(np.array([a[0, 0]]), np.array([[1.0]]))

    # Work on plain lists: for n <= 8 this is several times faster than
    # elementwise numpy indexing, and this routine sits on the solver's
    # hottest path (one call per regularized Q-term evaluation).
    m = ((a + a.T) * 0.5).tolist()
    v = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    fro = math.sqrt(sum(m[i][j] * m[i][j] for i in range(n) for j in range(n)))
    thresh = _JACOBI_REL_TOL * fro

    converged = False
    for _ in range(_JACOBI_MAX_SWEEPS):
        if _offdiag_max(m, n) <= thresh:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p][q]
                if abs(apq) <= thresh:
                    continue
                # Rotation angle via the stable smaller-root formula.
                tau = (m[q][q] - m[p][p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    mk = m[k]
                    akp = mk[p]
                    akq = mk[q]
                    mk[p] = c * akp - s * akq
                    mk[q] = s * akp + c * akq
                mp = m[p]
                mq = m[q]
                for k in range(n):
                    akp = mp[k]
                    akq = mq[k]
                    mp[k] = c * akp - s * akq
                    mq[k] = s * akp + c * akq
                for k in range(n):
                    vk = v[k]
                    vkp = vk[p]
                    vkq = vk[q]
                    vk[p] = c * vkp - s * vkq
                    vk[q] = s * vkp + c * vkq
    if not converged:
        converged = _offdiag_max(m, n) <= thresh  # the last sweep may have finished the job

    if not converged:
        raise NumericalError(
            f"Jacobi eigensolver did not converge in {_JACOBI_MAX_SWEEPS} sweeps"
        )

    w = [m[i][i] for i in range(n)]
    # Descending order; the stable sort keeps the Jacobi output order on ties.
    order = sorted(range(n), key=lambda i: -w[i])
    eigenvalues = np.array([w[i] for i in order])
    eigenvectors = np.array([[v[r][i] for i in order] for r in range(n)])

    # Jacobi rotations have determinant +1, so the sign of det(V) is exactly
    # the parity of the sorting permutation; flip one column to keep V a
    # proper rotation (downstream square-root factors need det(P) > 0).
    inversions = 0
    for i in range(n):
        for j in range(i + 1, n):
            if order[i] > order[j]:
                inversions += 1
    if inversions % 2 == 1:
        eigenvectors[:, -1] = -eigenvectors[:, -1]

    return SymEig(eigenvalues, eigenvectors)


def regularize_floor(a, floor: float) -> np.ndarray:
    """Raise every eigenvalue of a symmetric matrix to at least `floor`.

    Returns V Λ' Vᵀ with Λ'ᵢ = max(λᵢ, floor).  When all eigenvalues already
    satisfy the floor this is the identity map up to reconstruction
    round-off, and the operation is idempotent.
    """
    if floor < 0.0:
        raise ValueError("floor must be nonnegative")
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        off = arr.copy()
        np.fill_diagonal(off, 0.0)
        if not off.any():
            # Diagonal input: the eigenvalues are the diagonal entries, so
            # the reconstruction reduces to clipping them in place.  This
            # is the hot case (separable cost Hessians) and skips the
            # Jacobi sweep entirely.
            return np.diag(np.maximum(np.diagonal(arr), floor))
    e = sym_eig(arr)
    w = np.maximum(e.eigenvalues, floor)
    out = (e.eigenvectors * w) @ e.eigenvectors.T
    return (out + out.T) * 0.5


def sqrt_factor_floor(a, sqrt_floor: float) -> np.ndarray:
    """Factor a symmetric matrix as P = V Λ'^½ with a floored spectrum.

    Negative eigenvalues are clamped to zero before the square root, then
    every √λᵢ is raised to at least sqrt_floor, so P Pᵀ is symmetric
    positive-definite with minimum eigenvalue ≥ sqrt_floor² and P is always
    invertible (det P ≥ sqrt_floorⁿ since V is a proper rotation).
    """
    if sqrt_floor <= 0.0:
        raise ValueError("sqrt_floor must be positive")
    e = sym_eig(a)
    d = np.sqrt(np.maximum(e.eigenvalues, 0.0))
    d = np.maximum(d, sqrt_floor)
    return e.eigenvectors * d


def solve_linear(a, b) -> np.ndarray:
    """Solve A X = B by LU factorization with partial pivoting.

    Args:
        a: square matrix.
        b: right-hand side, vector or matrix with matching row count.

    Returns:
        X with the same dimensionality as b.

    Raises:
        DimensionError: on shape mismatch.
        SingularMatrixError: when a pivot falls below 1e-14·‖A‖_max.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if b.shape[:1] != (n,):
        raise DimensionError(
            f"right-hand side has {b.shape[0] if b.ndim else 0} rows, expected {n}"
        )

    if n == 1:
        # The pivot equals the matrix norm here, so only an exact zero is
        # singular under the relative threshold.
        if a[0, 0] == 0.0:
            raise SingularMatrixError("1x1 system with zero pivot")
        return b / a[0, 0]

    if n <= _SMALL_N:
        anorm = float(np.max(np.abs(a)))
        if anorm == 0.0:
            raise SingularMatrixError("zero matrix")
        tol = _PIVOT_REL_TOL * anorm
        if b.ndim == 1:
            return np.array(_gauss_vec(a.tolist(), b.tolist(), n, tol))
        return np.array(_gauss_rows(a.tolist(), b.tolist(), n, tol))

    lu, piv = lu_factor(a)
    return lu_solve(lu, piv, b)


def lu_factor(a) -> tuple[np.ndarray, list[int]]:
    """LU factorization with partial pivoting (Doolittle, in place).

    Returns (lu, piv) where lu packs L (unit lower) and U, and piv is the
    row-swap record consumed by lu_solve.  Factor once and reuse when the
    same matrix serves several right-hand sides.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    anorm = float(np.max(np.abs(a))) if a.size else 0.0
    if anorm == 0.0:
        raise SingularMatrixError("zero matrix")
    tol = _PIVOT_REL_TOL * anorm

    if n <= _SMALL_N:
        return _lu_factor_small(a, n, tol)

    lu = a.copy()
    piv = list(range(n))
    for k in range(n):
        j = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[j, k]) < tol:
            raise SingularMatrixError(f"pivot {lu[j, k]:.3e} below threshold {tol:.3e}")
        if j != k:
            lu[[k, j]] = lu[[j, k]]
            piv[k], piv[j] = piv[j], piv[k]
        lu[k + 1 :, k] /= lu[k, k]
        lu[k + 1 :, k + 1 :] -= lu[k + 1 :, k, None] * lu[k, k + 1 :]
    return lu, piv


def _lu_factor_small(a: np.ndarray, n: int, tol: float):
    m, piv = _lu_factor_lists(a.tolist(), n, tol)
    return np.array(m), piv


def _lu_factor_lists(m: list, n: int, tol: float):
    piv = list(range(n))
    for k in range(n):
        jmax = k
        vmax = abs(m[k][k])
        for i in range(k + 1, n):
            vi = abs(m[i][k])
            if vi > vmax:
                vmax = vi
                jmax = i
        if vmax < tol:
            raise SingularMatrixError(f"pivot {vmax:.3e} below threshold {tol:.3e}")
        if jmax != k:
            m[k], m[jmax] = m[jmax], m[k]
            piv[k], piv[jmax] = piv[jmax], piv[k]
        mk = m[k]
        inv = 1.0 / mk[k]
        for i in range(k + 1, n):
            mi = m[i]
            lik = mi[k] * inv
            mi[k] = lik
            for j in range(k + 1, n):
                mi[j] -= lik * mk[j]
    return m, piv


def lu_solve(lu: np.ndarray, piv: list[int], b) -> np.ndarray:
    """Back-substitution companion to lu_factor."""
    b = np.asarray(b, dtype=float)
    n = lu.shape[0]
    if n <= _SMALL_N:
        return _lu_solve_lists(lu.tolist(), piv, b)
    if b.ndim == 1:
        x = b[piv].astype(float, copy=True)
        for k in range(n):
            x[k + 1 :] -= lu[k + 1 :, k] * x[k]
        for k in range(n - 1, -1, -1):
            x[k] = (x[k] - lu[k, k + 1 :] @ x[k + 1 :]) / lu[k, k]
        return x
    x = b[piv].astype(float, copy=True)
    for k in range(n):
        x[k + 1 :] -= lu[k + 1 :, k, None] * x[k]
    for k in range(n - 1, -1, -1):
        x[k] -= lu[k, k + 1 :] @ x[k + 1 :]
        x[k] /= lu[k, k]
    return x


def _gauss_vec(m: list, x: list, n: int, tol: float) -> list:
    """Augmented partial-pivot elimination, vector right-hand side.

    Same pivoting and update order as _lu_factor_lists followed by
    _lu_solve_lists; fusing skips the intermediate factor object on the
    one-shot solve path.
    """
    for k in range(n):
        jmax = k
        vmax = abs(m[k][k])
        for i in range(k + 1, n):
            vi = abs(m[i][k])
            if vi > vmax:
                vmax = vi
                jmax = i
        if vmax < tol:
            raise SingularMatrixError(f"pivot {vmax:.3e} below threshold {tol:.3e}")
        if jmax != k:
            m[k], m[jmax] = m[jmax], m[k]
            x[k], x[jmax] = x[jmax], x[k]
        mk = m[k]
        xk = x[k]
        inv = 1.0 / mk[k]
        for i in range(k + 1, n):
            mi = m[i]
            lik = mi[k] * inv
            if lik != 0.0:
                for j in range(k + 1, n):
                    mi[j] -= lik * mk[j]
                x[i] -= lik * xk
    for k in range(n - 1, -1, -1):
        row = m[k]
        acc = x[k]
        for j in range(k + 1, n):
            acc -= row[j] * x[j]
        x[k] = acc / row[k]
    return x


def _gauss_rows(m: list, xs: list, n: int, tol: float) -> list:
    """As _gauss_vec but for a matrix right-hand side (rows of columns)."""
    ncol = len(xs[0])
    for k in range(n):
        jmax = k
        vmax = abs(m[k][k])
        for i in range(k + 1, n):
            vi = abs(m[i][k])
            if vi > vmax:
                vmax = vi
                jmax = i
        if vmax < tol:
            raise SingularMatrixError(f"pivot {vmax:.3e} below threshold {tol:.3e}")
        if jmax != k:
            m[k], m[jmax] = m[jmax], m[k]
            xs[k], xs[jmax] = xs[jmax], xs[k]
        mk = m[k]
        xk = xs[k]
        inv = 1.0 / mk[k]
        for i in range(k + 1, n):
            mi = m[i]
            lik = mi[k] * inv
            if lik != 0.0:
                for j in range(k + 1, n):
                    mi[j] -= lik * mk[j]
                xi = xs[i]
                for c in range(ncol):
                    xi[c] -= lik * xk[c]
    for k in range(n - 1, -1, -1):
        row = m[k]
        xk = xs[k]
        for j in range(k + 1, n):
            ukj = row[j]
            if ukj != 0.0:
                xj = xs[j]
                for c in range(ncol):
                    xk[c] -= ukj * xj[c]
        pk = row[k]
        for c in range(ncol):
            xk[c] /= pk
    return xs


def _lu_solve_lists(m: list, piv: list[int], b: np.ndarray) -> np.ndarray:
    """Substitution on plain lists; at n ≤ 8 array dispatch costs more than
    the arithmetic it would vectorize."""
    n = len(m)
    if b.ndim == 1:
        x = [float(b[piv[k]]) for k in range(n)]
        for k in range(n):
            xk = x[k]
            if xk != 0.0:
                for i in range(k + 1, n):
                    x[i] -= m[i][k] * xk
        for k in range(n - 1, -1, -1):
            row = m[k]
            acc = x[k]
            for j in range(k + 1, n):
                acc -= row[j] * x[j]
            x[k] = acc / row[k]
        return np.array(x)
    xs = [b[piv[k]].tolist() for k in range(n)]
    ncol = len(xs[0])
    for k in range(n):
        xk = xs[k]
        for i in range(k + 1, n):
            lik = m[i][k]
            if lik != 0.0:
                xi = xs[i]
                for c in range(ncol):
                    xi[c] -= lik * xk[c]
    for k in range(n - 1, -1, -1):
        row = m[k]
        xk = xs[k]
        for j in range(k + 1, n):
            ukj = row[j]
            if ukj != 0.0:
                xj = xs[j]
                for c in range(ncol):
                    xk[c] -= ukj * xj[c]
        pk = row[k]
        for c in range(ncol):
            xk[c] /= pk
    return np.array(xs)
