"""Sparse linear algebra for the continuation engine.

Wraps a sparse LU factorization with determinant-sign tracking (sign and
log magnitude from the pivots and permutation parities, so determinants
of large Jacobians never overflow), bordered solves for the arc-length
Newton system, and shifted inverse iteration for eigenvalues near a
target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_PIVOT_TOL = 1e-14


class StructurallySingularError(Exception):
    pass


class SingularFactorizationError(Exception):
    pass


class BorderedSingularError(Exception):
    pass


class EigenConvergenceError(Exception):
    pass


def _perm_parity(perm) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass
class Factorization:
    lu: object  # SuperLU handle, or None when numerically singular
    n: int
    det_sign: int
    log_abs_det: float
    inf_norm: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.lu is None or self.det_sign == 0:
            raise SingularFactorizationError("matrix is numerically singular")
        return self.lu.solve(np.asarray(b, dtype=float))


def factorize(A) -> Factorization:
    """LU-factorize a sparse matrix and record its determinant sign.

    det_sign is 0 when any pivot falls below 1e-14 times the matrix
    infinity norm.  Structural singularity (an empty row or column) is
    reported separately.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix entries must be finite")
    counts_col = np.diff(A.indptr)
    counts_row = np.bincount(A.indices, minlength=n) if A.nnz else np.zeros(n, int)
    if n and (counts_col.min() == 0 or counts_row.min() == 0):
        raise StructurallySingularError("matrix has an empty row or column")
    inf_norm = float(np.max(np.abs(A).sum(axis=1))) if A.nnz else 0.0
    try:
        lu = spla.splu(A)
    except RuntimeError:
        return Factorization(None, n, 0, -np.inf, inf_norm)
    diag = lu.U.diagonal()
    if np.abs(diag).min() < _PIVOT_TOL * max(inf_norm, 1e-300):
        return Factorization(None, n, 0, -np.inf, inf_norm)
    sign = _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    sign *= int(np.prod(np.sign(diag)))
    log_abs = float(np.sum(np.log(np.abs(diag))))
    return Factorization(lu, n, sign, log_abs, inf_norm)


def solve(F: Factorization, b: np.ndarray) -> np.ndarray:
    return F.solve(b)


def solve_bordered(J, f_lambda, udot, lamdot, r_top, r_bot, factorization=None):
    """Solve [[J, f_lambda], [udot, lamdot]] (du, dlam) = (r_top, r_bot).

    Block elimination reuses the factorization of J with one step of
    iterative refinement; if J itself is numerically singular (a fold),
    the assembled bordered matrix is factorized instead, which stays
    regular at simple folds.
    """
    f_lambda = np.asarray(f_lambda, dtype=float)
    udot = np.asarray(udot, dtype=float)
    r_top = np.asarray(r_top, dtype=float)
    n = len(f_lambda)

    def full_residual(du, dlam):
        top = r_top - (J @ du + f_lambda * dlam)
        bot = r_bot - (udot @ du + lamdot * dlam)
        return top, bot

    F = factorization
    if F is None:
        try:
            F = factorize(J)
        except StructurallySingularError:
            F = Factorization(None, n, 0, -np.inf, 0.0)
    if F.det_sign != 0:
        du, dlam = _bordered_block(F, f_lambda, udot, lamdot, r_top, r_bot)
        if du is not None:
            top, bot = full_residual(du, dlam)
            cd, cl = _bordered_block(F, f_lambda, udot, lamdot, top, bot)
            if cd is not None:
                du, dlam = du + cd, dlam + cl
            scale = max(np.linalg.norm(np.append(r_top, r_bot)), 1e-300)
            top, bot = full_residual(du, dlam)
            if np.linalg.norm(np.append(top, bot)) <= 1e-9 * scale:
                return du, dlam
    # fold or ill-conditioned block elimination: solve the full system
    M = sp.bmat(
        [[sp.csr_matrix(J), f_lambda[:, None]], [udot[None, :], np.array([[lamdot]])]],
        format="csc",
    )
    try:
        Fb = factorize(M)
        x = Fb.solve(np.append(r_top, r_bot))
    except (SingularFactorizationError, StructurallySingularError) as exc:
        raise BorderedSingularError("bordered system is singular") from exc
    return x[:n], float(x[n])


def _bordered_block(F, f_lambda, udot, lamdot, r_top, r_bot):
    z1 = F.solve(r_top)
    z2 = F.solve(f_lambda)
    denom = lamdot - udot @ z2
    if abs(denom) < 1e-14 * (abs(lamdot) + np.linalg.norm(udot) * np.linalg.norm(z2) + 1e-300):
        return None, None
    dlam = (r_bot - udot @ z1) / denom
    return z1 - dlam * z2, float(dlam)


def _inverse_iterate(A, F, shift, x0, inf_norm, against=(), tol_factor=1e-8, maxiter=400):
    """Inverse iteration on (A - shift I); returns (mu, v) or None.

    Orthogonalizes every iterate against the vectors in ``against`` so
    repeated calls can walk through a cluster of eigenvalues.
    """
    x = x0.copy()
    for v in against:
        x -= (v @ x) * v
    nrm = np.linalg.norm(x)
    if nrm == 0:
        return None
    x /= nrm
    tol = tol_factor * max(inf_norm, 1e-300)
    mu = None
    for _ in range(maxiter):
        try:
            y = F.solve(x)
        except SingularFactorizationError:
            return None
        for v in against:
            y -= (v @ y) * v
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return None
        y /= nrm
        mu = float(y @ (A @ y))
        if np.linalg.norm(A @ y - mu * y) <= tol:
            return mu, y
        x = y
    return None


def _shift_factor(A, shift, inf_norm):
    n = A.shape[0]
    s = shift
    for bump in (0.0, 1e-12, 1e-9, 1e-6):
        s = shift + bump * max(inf_norm, 1.0)
        M = A - s * sp.identity(n, format="csc") if s != 0.0 else A
        F = factorize(sp.csc_matrix(M))
        if F.det_sign != 0:
            return F, s
    raise EigenConvergenceError("could not factorize shifted matrix")


def eigenpairs_near(A, shift: float, k: int = 1, factorization=None,
                    tol_factor: float = 1e-8, maxiter: int = 400):
    """The k eigenpairs nearest the shift, by shifted inverse iteration.

    Restarts with orthogonalization against previously found vectors;
    returns the pairs sorted by distance from the shift (fewer than k if
    iterations stagnate).
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    k = min(k, n)
    inf_norm = float(np.max(np.abs(A).sum(axis=1))) if A.nnz else 0.0
    if factorization is not None and factorization.det_sign != 0 and shift == 0.0:
        F, _ = factorization, shift
    else:
        F, _ = _shift_factor(A, shift, inf_norm)
    rng = np.random.default_rng(271828)
    found = []
    vecs = []
    for _ in range(k):
        got = None
        for _attempt in range(3):
            x0 = rng.standard_normal(n)
            got = _inverse_iterate(A, F, shift, x0, inf_norm, against=vecs,
                                   tol_factor=tol_factor, maxiter=maxiter)
            if got is not None:
                break
            # Rayleigh-quotient restart: refactor at the stagnation point
            y = rng.standard_normal(n)
            for v in vecs:
                y -= (v @ y) * v
            y /= max(np.linalg.norm(y), 1e-300)
            for _ in range(8):
                try:
                    y = F.solve(y)
                except SingularFactorizationError:
                    break
                for v in vecs:
                    y -= (v @ y) * v
                y /= max(np.linalg.norm(y), 1e-300)
            mu_guess = float(y @ (A @ y))
            try:
                F2, _ = _shift_factor(A, mu_guess, inf_norm)
            except EigenConvergenceError:
                continue
            got = _inverse_iterate(A, F2, mu_guess, y, inf_norm, against=vecs,
                                   tol_factor=tol_factor, maxiter=maxiter)
            if got is not None:
                break
        if got is None:
            break
        mu, v = got
        found.append((mu, v))
        vecs.append(v)
    found.sort(key=lambda p: (abs(p[0] - shift), p[0]))
    return found


def smallest_eigenpair(A, shift: float = 0.0, tol_factor: float = 1e-8):
    """Eigenvalue nearest the shift; ties resolved toward the smaller one.

    Runs shifted inverse iteration, then restarts once at the mirror
    point below the shift to catch an algebraically smaller eigenvalue at
    the same distance.
    """
    pairs = eigenpairs_near(A, shift, k=1, tol_factor=tol_factor)
    if not pairs:
        raise EigenConvergenceError("inverse iteration did not converge")
    mu, v = pairs[0]
    if mu > shift:
        mirror = eigenpairs_near(A, shift - (mu - shift) * (1 + 1e-10), k=1,
                                 tol_factor=tol_factor)
        if mirror:
            mu2, v2 = mirror[0]
            if mu2 < mu and abs(mu2 - shift) <= abs(mu - shift) * (1 + 1e-8):
                return mu2, v2
    return mu, v
