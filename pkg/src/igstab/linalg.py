"""Dense matrix kernels for the LQ study.

Matrices are plain ``numpy.ndarray`` values (row-major, float64).  Everything
here is deliberately small-scale (n <= ~32): the Riccati equation is solved by
fixed-point iteration and the spectral radius by a norm growth-rate estimate,
which keeps the package free of a general nonsymmetric eigensolver.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, DimensionError, PreconditionError

# Exponent used by the growth-rate spectral radius estimate: rho(A) is read
# off from ||A^m||_2^(1/m) with m = 2**GROWTH_DOUBLINGS.
GROWTH_DOUBLINGS = 11  # m = 2048


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(name, "2-D", arr.shape)
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} contains non-finite entries")
    return arr


def require_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(name, "square", a.shape)
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_positive_definite(a: np.ndarray) -> bool:
    """Cholesky-based PD test for a symmetric matrix."""
    try:
        np.linalg.cholesky(symmetrize(np.asarray(a, dtype=float)))
        return True
    except np.linalg.LinAlgError:
        return False


def spectral_radius(a) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Computed as ``||A^m||_2^(1/m)`` with m = 2048 via repeated squaring with
    per-step normalization (safe against over/underflow).  This handles
    rotational / tied spectra where plain power iteration stalls; accuracy is
    limited by the finite m, roughly ``rho * (kappa)^(1/m)`` for some modest
    condition factor, which is ample for the n <= 32 matrices used here.
    """
    a = require_square(a, "A")
    if a.shape[0] == 0:
        return 0.0
    norm = float(np.linalg.norm(a, 2))
    if norm == 0.0:
        return 0.0
    b = a / norm
    log_norm = math.log(norm)  # log ||A^(2^k)|| accumulated, k = 0 so far
    for _ in range(GROWTH_DOUBLINGS):
        b = b @ b
        c = float(np.linalg.norm(b, 2))
        if c == 0.0:
            # Nilpotent: A^m vanishes exactly, so every eigenvalue is zero.
            return 0.0
        log_norm = 2.0 * log_norm + math.log(c)
        b = b / c
    m = 2 ** GROWTH_DOUBLINGS
    return math.exp(log_norm / m)


def power_iteration_radius(
    a, restarts: int = 5, steps: int = 10_000, seed: int = 0, tol: float = 1e-12
) -> float:
    """Cross-check estimate of the spectral radius by power iteration.

    Tracks the geometric mean growth of ``||A x_k||`` (robust to complex
    dominant pairs, where the per-step growth oscillates).  Restarted from
    several random vectors; the largest estimate wins.  Documented accuracy is
    ~1e-6 relative when a dominant eigenvalue exists.
    """
    a = require_square(a, "A")
    n = a.shape[0]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    best = 0.0
    burn = min(100, steps // 10)
    for _ in range(restarts):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        log_growth = 0.0
        count = 0
        prev_rate = None
        for k in range(steps):
            y = a @ x
            g = float(np.linalg.norm(y))
            if g == 0.0:
                log_growth, count = 0.0, 1  # hit the nullspace: growth 0
                break
            x = y / g
            if k >= burn:
                log_growth += math.log(g)
                count += 1
                rate = log_growth / count
                if prev_rate is not None and abs(rate - prev_rate) < tol:
                    break
                prev_rate = rate
        est = math.exp(log_growth / count) if count else 0.0
        best = max(best, est)
    return best


def solve_discrete_lyapunov(a, q) -> np.ndarray:
    """Solve ``A^T X A - X + Q = 0`` for stable A by the doubling iteration.

    X is the series sum_{k>=0} (A^T)^k Q A^k, accumulated with A squared each
    round, so convergence is quadratic in the number of rounds.
    """
    a = require_square(a, "A")
    q = require_square(q, "Q")
    if a.shape != q.shape:
        raise DimensionError("Q", a.shape, q.shape)
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise PreconditionError(
            f"discrete Lyapunov equation needs rho(A) < 1, got rho = {rho:.6g}"
        )
    x = q.copy()
    m = a.copy()
    for _ in range(200):
        term = m.T @ x @ m
        x = x + term
        update = float(np.linalg.norm(term, "fro"))
        if update < max(1e-14, 8 * np.finfo(float).eps * np.linalg.norm(x, "fro")):
            break
        m = m @ m
    else:  # pragma: no cover - rho < 1 guarantees termination far earlier
        raise ConvergenceError("discrete Lyapunov doubling did not terminate")
    x = symmetrize(x)
    residual = float(np.linalg.norm(a.T @ x @ a - x + q, "fro"))
    if residual > 1e-10 * max(1.0, float(np.linalg.norm(q, "fro"))):
        raise ConvergenceError(
            f"discrete Lyapunov residual {residual:.3g} above tolerance"
        )
    return x


def dare_residual(a, b, q, r, p) -> float:
    """Frobenius norm of the defining Riccati equation at P."""
    a, b, q, r, p = (np.asarray(m, dtype=float) for m in (a, b, q, r, p))
    btpb = r + b.T @ p @ b
    gain_term = a.T @ p @ b @ np.linalg.solve(btpb, b.T @ p @ a)
    return float(np.linalg.norm(q + a.T @ p @ a - gain_term - p, "fro"))


def solve_dare(a, b, q, r, max_iter: int = 100_000, tol: float = 1e-12) -> np.ndarray:
    """Discrete algebraic Riccati equation by fixed-point iteration from P0 = Q.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` until successive
    iterates differ by less than ``tol`` in Frobenius norm (with a relative
    floor of a few ulps of ||P|| so large-norm solutions can still terminate).
    Convergence is linear at rate ~rho(A_cl)^2; failure to converge is reported
    as a likely non-stabilizable pair.
    """
    a = require_square(a, "A")
    b = as_matrix(b, "B")
    q = require_square(q, "Q")
    r = require_square(r, "R")
    n, d = b.shape
    if a.shape[0] != n:
        raise DimensionError("B", (n, "d"), b.shape)
    if q.shape[0] != n:
        raise DimensionError("Q", (n, n), q.shape)
    if r.shape[0] != d:
        raise DimensionError("R", (d, d), r.shape)
    if np.linalg.norm(q - q.T, "fro") > 1e-10 * max(1.0, np.linalg.norm(q, "fro")):
        raise PreconditionError("Q must be symmetric")
    if not is_positive_definite(r):
        raise PreconditionError("R must be symmetric positive definite")

    p = q.copy()
    best_diff = math.inf
    stagnant = 0
    for _ in range(max_iter):
        btpb = r + b.T @ p @ b
        btpa = b.T @ p @ a
        p_next = q + a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(btpb, btpa)
        p_next = symmetrize(p_next)
        if not np.all(np.isfinite(p_next)):
            raise ConvergenceError(
                "Riccati iteration diverged; (A, B) is likely not stabilizable"
            )
        diff = float(np.linalg.norm(p_next - p, "fro"))
        p = p_next
        if diff < max(tol, 8 * np.finfo(float).eps * np.linalg.norm(p, "fro")):
            break
        # Fragile instances stall at a rounding floor above the tolerance;
        # accept once the updates stop shrinking (the residual gate below
        # still decides whether the fixed point is good enough).
        if diff < 0.9 * best_diff:
            best_diff = diff
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= 50 and diff < 1e-6 * max(1.0, np.linalg.norm(p, "fro")):
                break
    else:
        raise ConvergenceError(
            "Riccati iteration did not converge; (A, B) is likely not stabilizable"
        )
    residual = dare_residual(a, b, q, r, p)
    if residual > 1e-8 * max(1.0, float(np.linalg.norm(p, "fro"))):
        raise ConvergenceError(f"Riccati residual {residual:.3g} above tolerance")
    return p


def lqr_gain(a, b, q, r) -> np.ndarray:
    """Optimal state feedback K with u = K x; closed loop A + BK is stable.

    With B = 0 the gain degenerates to the zero matrix (no actuation).
    """
    a = require_square(a, "A")
    b = as_matrix(b, "B")
    p = solve_dare(a, b, q, r)
    r = as_matrix(r, "R")
    return -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)


def save_matrix_csv(path, a) -> None:
    """Write a matrix as CSV, one row per matrix row."""
    np.savetxt(path, as_matrix(a), delimiter=",")


def load_matrix_csv(path) -> np.ndarray:
    """Read a matrix from CSV; dimensions are inferred from the file."""
    return np.loadtxt(path, delimiter=",", ndmin=2)
