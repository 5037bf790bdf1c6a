"""Sparse linear algebra: SPD and saddle-point solves, extreme generalized eigenpairs."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10
EIG_MAXITER = 500


class ConvergenceError(RuntimeError):
    """Iteration cap reached; ``residual`` holds the last residual measure."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def as_sparse_sym(A, rtol=1e-14) -> sp.csr_matrix:
    """Return ``A`` as CSR after checking it is symmetric to ``rtol``."""
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is not square: {A.shape}")
    scale = abs(A).max() if A.nnz else 0.0
    if A.nnz and abs(A - A.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return A


def solve_spd(A, b, tol=DEFAULT_TOL, maxiter=None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Stops once ``||A x - b|| <= tol ||b||``; the default cap is ten
    iterations per unknown.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("SPD solve needs a positive diagonal")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for _ in range(maxiter):
        if res <= tol:
            return x
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("matrix is not positive definite along a search direction", res)
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res <= tol:
        return x
    raise ConvergenceError(f"CG did not converge in {maxiter} iterations", res)


class SaddleFactorization:
    """Sparse LU of an indefinite (block) matrix after row/column equilibration.

    The smallest pivot of the equilibrated factor is kept as a
    nonsingularity diagnostic; a factor whose pivots fall below
    ``pivot_tol`` relative to the largest one is treated as singular.
    """

    # Threshold partial pivoting that prefers diagonal pivots; strict
    # partial pivoting multiplies the fill of bordered systems by ~5.
    DIAG_PIVOT_THRESH = 0.01

    def __init__(self, K, pivot_tol=1e-13):
        K = sp.csc_matrix(K, dtype=float)
        if K.shape[0] != K.shape[1]:
            raise ValueError(f"matrix is not square: {K.shape}")
        self.shape = K.shape
        self._K = K
        row = abs(K).max(axis=1).toarray().ravel()
        if np.any(row == 0):
            raise SingularMatrixError(f"zero row {int(np.flatnonzero(row == 0)[0])}")
        self._r = 1.0 / row
        K1 = sp.diags(self._r) @ K
        col = abs(K1).max(axis=0).toarray().ravel()
        if np.any(col == 0):
            raise SingularMatrixError(f"zero column {int(np.flatnonzero(col == 0)[0])}")
        self._c = 1.0 / col
        Ks = sp.csc_matrix(K1 @ sp.diags(self._c))
        try:
            self._lu = spla.splu(Ks, permc_spec="COLAMD", diag_pivot_thresh=self.DIAG_PIVOT_THRESH,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from None
        pivots = np.abs(self._lu.U.diagonal())
        self.max_pivot = float(pivots.max())
        self.min_pivot = float(pivots.min())
        if not self.min_pivot > pivot_tol * self.max_pivot:
            raise SingularMatrixError(
                f"numerically singular: pivot ratio {self.min_pivot / self.max_pivot:.2e}"
            )

    @property
    def pivot_ratio(self) -> float:
        return self.min_pivot / self.max_pivot

    def solve(self, b, tol=None, refine=2) -> np.ndarray:
        """Solve ``K x = b`` (b may hold several columns).

        With ``tol`` given, iterative refinement is applied and a relative
        residual above ``tol`` raises :class:`ConvergenceError`.  The
        residual is measured after row equilibration, so rows carrying
        large coefficients do not dominate it.
        """
        b = np.asarray(b, dtype=float)
        cols = b if b.ndim == 2 else b[:, None]
        x = self._raw(cols)
        if tol is not None:
            bn = np.linalg.norm(self._r[:, None] * cols, axis=0)
            bn[bn == 0] = 1.0
            for _ in range(refine + 1):
                r = cols - self._K @ x
                res = float((np.linalg.norm(self._r[:, None] * r, axis=0) / bn).max())
                if res <= tol:
                    break
                x = x + self._raw(r)
            else:
                raise ConvergenceError("saddle solve did not reach tolerance", res)
        return x if b.ndim == 2 else x[:, 0]

    def _raw(self, cols):
        y = self._lu.solve(self._r[:, None] * cols)
        return self._c[:, None] * y


def solve_saddle(K, b, tol=DEFAULT_TOL) -> np.ndarray:
    """Direct solve of a nonsingular symmetric or nonsymmetric block system."""
    return SaddleFactorization(K).solve(b, tol=tol)


def _m_orthonormal(V, M):
    G = V.T @ (M @ V)
    R = np.linalg.cholesky(G)
    return np.linalg.solve(R, V.T).T


def eig_extremes(A, M, which="largest", kernel=None, tol=DEFAULT_TOL, maxiter=EIG_MAXITER,
                 preconditioner=None, seed=0):
    """Extreme generalized eigenpair of ``A x = theta M x``.

    Parameters
    ----------
    A : sparse matrix, dense array or LinearOperator
        Symmetric positive semidefinite.
    M : sparse matrix or dense array
        Symmetric positive definite.
    which : {"largest", "smallest", "smallest-nonzero"}
        "smallest-nonzero" deflates the columns of ``kernel`` (required).
    kernel : (n, k) array, optional
        Known null space of ``A``; eigenvectors are kept M-orthogonal to it.

    Returns
    -------
    theta : float
    x : ndarray, M-normalized eigenvector.

    The pair satisfies ``||A x - theta M x||_{M^-1} <= tol * max(1, theta)``,
    otherwise :class:`ConvergenceError` is raised.
    """
    if which not in ("largest", "smallest", "smallest-nonzero"):
        raise ValueError(f"unknown selector {which!r}")
    if which == "smallest-nonzero" and kernel is None:
        raise ValueError("smallest-nonzero needs the kernel of A")
    Msp = sp.csc_matrix(M, dtype=float)
    n = Msp.shape[0]
    A_op = spla.aslinearoperator(A)
    M_lu = spla.splu(Msp)
    Y = None
    if kernel is not None and which != "largest":
        Y = _m_orthonormal(np.asarray(kernel, dtype=float).reshape(n, -1), Msp)
    nfree = n - (0 if Y is None else Y.shape[1])
    if nfree < 1:
        raise ValueError("no eigenvectors left after deflation")
    largest = which == "largest"

    if nfree < 12:
        theta, x = _dense_extreme(A_op, Msp, Y, largest)
    else:
        k = min(3, nfree // 5)
        if preconditioner is None:
            preconditioner = _default_preconditioner(A, Msp, M_lu, largest)
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, k))
        if Y is not None:
            X -= Y @ (Y.T @ (Msp @ X))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vecs = spla.lobpcg(A_op, X, B=Msp, M=preconditioner, Y=Y, tol=tol, maxiter=maxiter, largest=largest)
        idx = int(np.argmax(vals)) if largest else int(np.argmin(vals))
        x = vecs[:, idx]
        x = x / np.sqrt(x @ (Msp @ x))
        theta = float(x @ (A_op @ x))
    res = _residual(A_op, Msp, M_lu, theta, x)
    if res > tol * max(1.0, abs(theta)):
        if nfree <= 2000:
            theta, x = _dense_extreme(A_op, Msp, Y, largest)
            res = _residual(A_op, Msp, M_lu, theta, x)
        if res > tol * max(1.0, abs(theta)):
            raise ConvergenceError("generalized eigensolver did not converge", res)
    return theta, x


def _residual(A_op, M, M_lu, theta, x):
    r = A_op @ x - theta * (M @ x)
    return float(np.sqrt(max(r @ M_lu.solve(r), 0.0)))


def _default_preconditioner(A, M, M_lu, largest):
    if not largest and sp.issparse(A):
        shift = 1e-8 * abs(A.diagonal()).max() / abs(M.diagonal()).max()
        lu = spla.splu(sp.csc_matrix(A + shift * M))
        return spla.LinearOperator(M.shape, matvec=lu.solve, matmat=lu.solve)
    return spla.LinearOperator(M.shape, matvec=M_lu.solve, matmat=M_lu.solve)


def _dense_extreme(A_op, M, Y, largest):
    n = M.shape[0]
    Ad = A_op @ np.eye(n)
    Ad = 0.5 * (Ad + Ad.T)
    Md = M.toarray()
    if Y is not None:
        # basis of the M-orthogonal complement of the kernel
        Q = sla.null_space((Md @ Y).T)
        Ad, Md = Q.T @ Ad @ Q, Q.T @ Md @ Q
    vals, vecs = sla.eigh(Ad, Md)
    idx = -1 if largest else 0
    x = vecs[:, idx]
    if Y is not None:
        x = Q @ x
    x = x / np.sqrt(x @ (M @ x))
    return float(vals[idx]), x
