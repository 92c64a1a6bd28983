"""Complex sparse kernel: Kronecker products, matrix exponentials and
resolvent solves.

Matrices are ``scipy.sparse.csr_matrix`` objects with ``complex128`` entries,
canonicalised on construction (sorted indices, duplicates summed, explicit
zeros dropped). Vectors are one-dimensional complex ``numpy`` arrays.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_EXPM_CAP = 4096
DIRECT_SOLVE_CAP = 20_000
EXPMV_TOL = 1e-10
RESOLVENT_RTOL = 1e-8

_INDEX_MAX = np.iinfo(np.int64).max


class NumericalError(RuntimeError):
    """Base class for numerical failures raised by the kernel."""


class ExpmvError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularShiftError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SolverError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def csparse(a, shape=None) -> sp.csr_matrix:
    """Coerce ``a`` (dense array, sparse matrix or COO triplets) to canonical
    complex CSR form.

    Triplets are given as ``(rows, cols, values)`` together with ``shape``;
    duplicate entries are summed.
    """
    if isinstance(a, tuple) and len(a) == 3:
        if shape is None:
            raise ValueError("shape is required for triplet input")
        rows, cols, vals = (np.asarray(x) for x in a)
        m = sp.coo_matrix((vals.astype(complex), (rows, cols)), shape=shape)
    elif sp.issparse(a):
        m = a
    else:
        m = sp.csr_matrix(np.asarray(a, dtype=complex))
    m = sp.csr_matrix(m, dtype=complex)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def identity(n: int) -> sp.csr_matrix:
    return sp.identity(n, dtype=complex, format="csr")


def zeros(n: int, m: int | None = None) -> sp.csr_matrix:
    return sp.csr_matrix((n, n if m is None else m), dtype=complex)


def kron(a, b) -> sp.csr_matrix:
    """Kronecker product with the first argument as the slow index."""
    a, b = csparse(a), csparse(b)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows > _INDEX_MAX or cols > _INDEX_MAX:
        raise OverflowError(f"Kronecker product dimension {rows}x{cols} exceeds index range")
    return csparse(sp.kron(a, b, format="csr"))


def kron_all(*factors) -> sp.csr_matrix:
    out = csparse(factors[0])
    for f in factors[1:]:
        out = kron(out, f)
    return out


def norm1(a) -> float:
    """Maximum absolute column sum."""
    if sp.issparse(a):
        if a.nnz == 0:
            return 0.0
        return float(abs(a).sum(axis=0).max())
    return float(np.abs(np.asarray(a)).sum(axis=0).max()) if np.size(a) else 0.0


def expm(a, cap: int = DENSE_EXPM_CAP) -> np.ndarray:
    """Dense matrix exponential by scaling and squaring with a Pade core."""
    shape = a.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {shape}")
    if shape[0] > cap:
        raise ValueError(
            f"dimension {shape[0]} exceeds the dense exponential cap {cap}; use expmv"
        )
    dense = a.toarray() if sp.issparse(a) else np.asarray(a)
    return scipy.linalg.expm(dense.astype(complex))


def _krylov_start_step(anorm, beta, m, tol):
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    return (1.0 / anorm) * ((fact * tol) / (4.0 * beta * anorm)) ** (1.0 / m)


def expmv(a, v, t: float = 1.0, tol: float = EXPMV_TOL, krylov_dim: int = 30,
          max_steps: int = 1_000_000) -> np.ndarray:
    """Return ``exp(a*t) @ v`` without forming the exponential.

    Arnoldi projection with adaptive time stepping and the a-posteriori local
    error estimate of Sidje's EXPOKIT. Local errors are held below
    ``tol * |w| * step / t`` so that the accumulated relative error stays
    within ``tol``.
    """
    a = a if sp.isspmatrix_csr(a) else csparse(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"expmv needs a square matrix, got shape {a.shape}")
    v = np.asarray(v, dtype=complex).ravel()
    if v.size != n:
        raise ValueError(f"vector length {v.size} does not match matrix dimension {n}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t < 0:
        a, t = -a, -t
    beta = np.linalg.norm(v)
    anorm = norm1(a)
    if t == 0 or beta == 0 or anorm == 0:
        return v.copy()

    m = min(krylov_dim, n)
    breakdown_tol = anorm * 1e-14
    gamma, delta = 0.9, 1.2
    w = v.copy()
    t_now = 0.0
    tau = min(t, _krylov_start_step(anorm, beta, max(m, 1), tol))
    steps = 0
    err_total = 0.0
    V = np.zeros((m + 1, n), dtype=complex)

    while t_now < t:
        steps += 1
        if steps > max_steps:
            raise ExpmvError(
                f"expmv did not reach t={t:g} within {max_steps} steps (t={t_now:g})",
                residual=err_total,
            )
        H = np.zeros((m + 2, m + 2), dtype=complex)
        V[0] = w / beta
        happy = False
        mb = m
        for j in range(m):
            p = a @ V[j]
            h = V[: j + 1].conj() @ p
            p -= h @ V[: j + 1]
            h2 = V[: j + 1].conj() @ p
            p -= h2 @ V[: j + 1]
            H[: j + 1, j] = h + h2
            s = np.linalg.norm(p)
            if s < breakdown_tol:
                happy = True
                mb = j + 1
                break
            H[j + 1, j] = s
            V[j + 1] = p / s
        if happy:
            tau = t - t_now
            F = scipy.linalg.expm(tau * H[:mb, :mb])
            w = (beta * F[:, 0]) @ V[:mb]
            t_now = t
            break
        H[m + 1, m] = 1.0
        avnorm = np.linalg.norm(a @ V[m])
        rejections = 0
        while True:
            F = scipy.linalg.expm(tau * H)
            p1 = abs(beta * F[m, 0])
            p2 = abs(beta * F[m + 1, 0] * avnorm)
            if p1 > 10 * p2:
                err, xm = p2, 1.0 / m
            elif p1 > p2:
                err, xm = p1 * p2 / (p1 - p2), 1.0 / m
            else:
                err, xm = p1, 1.0 / max(m - 1, 1)
            allowed = delta * tol * beta * tau / t
            if err <= allowed:
                break
            rejections += 1
            if rejections > 50 or not np.isfinite(err):
                raise ExpmvError(
                    f"expmv step control failed at t={t_now:g} (local error {err:.3e})",
                    residual=err,
                )
            tau = gamma * tau * (tau * tol * beta / t / err) ** xm
            tau = float(f"{tau:.2g}")
        w = (beta * F[: m + 1, 0]) @ V[: m + 1]
        err_total += err
        t_now += tau
        beta = np.linalg.norm(w)
        if beta == 0:
            break
        tau_new = gamma * tau * (tau * tol * beta / t / max(err, 1e-300)) ** xm
        tau = min(t - t_now, float(f"{min(tau_new, 10 * tau):.2g}"))
        if tau <= 0 and t_now < t:
            tau = t - t_now
    return w


def shifted_solve(f, omega: float, b, *, direct_cap: int = DIRECT_SOLVE_CAP,
                  rtol: float = RESOLVENT_RTOL) -> np.ndarray:
    """Solve ``(f + omega*I) x = b``.

    Sparse LU below ``direct_cap``; restarted GMRES with an incomplete LU
    preconditioner above it. The relative residual of every returned solution
    is checked against ``rtol``.
    """
    f = f if sp.isspmatrix_csr(f) else csparse(f)
    n = f.shape[0]
    if f.shape[1] != n:
        raise ValueError(f"shifted_solve needs a square matrix, got shape {f.shape}")
    b = np.asarray(b, dtype=complex).ravel()
    if b.size != n:
        raise ValueError(f"right-hand side length {b.size} does not match dimension {n}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n, dtype=complex)
    m = (f + omega * identity(n)).tocsc()

    if n <= direct_cap:
        try:
            lu = spla.splu(m)
        except RuntimeError as exc:
            raise SingularShiftError(
                f"shifted matrix is singular at omega={omega:g}: {exc}", condition=np.inf
            ) from exc
        x = lu.solve(b)
        res = np.linalg.norm(m @ x - b) / bnorm if np.all(np.isfinite(x)) else np.inf
        if not res <= rtol:
            # one step of iterative refinement before giving up
            if np.isfinite(res):
                x = x + lu.solve(b - m @ x)
                res = np.linalg.norm(m @ x - b) / bnorm
            if not res <= rtol:
                raise SingularShiftError(
                    f"shifted matrix is near-singular at omega={omega:g} "
                    f"(residual {res:.2e})",
                    condition=_condest(m, lu),
                )
        return x

    try:
        ilu = spla.spilu(m, drop_tol=1e-6, fill_factor=20)
    except RuntimeError as exc:
        raise SingularShiftError(
            f"incomplete factorisation failed at omega={omega:g}: {exc}", condition=np.inf
        ) from exc
    prec = spla.LinearOperator(m.shape, ilu.solve, dtype=complex)
    x, info = spla.gmres(m, b, M=prec, rtol=rtol * 0.1, atol=0.0, restart=60, maxiter=200)
    res = np.linalg.norm(m @ x - b) / bnorm
    if info != 0 or not res <= rtol:
        raise SolverError(
            f"GMRES did not converge at omega={omega:g} (residual {res:.2e})", residual=res
        )
    return x


def _condest(m, lu) -> float:
    inv = spla.LinearOperator(m.shape, matvec=lu.solve,
                              rmatvec=lambda y: lu.solve(y, trans="H"), dtype=complex)
    try:
        return float(norm1(m) * spla.onenormest(inv))
    except Exception:  # noqa: BLE001 - estimate is advisory only
        return float("inf")
