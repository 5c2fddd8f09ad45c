"""
Dense real-matrix numerics for the control and estimation designs.

Matrix exponential and zero-order-hold discretization, eigenvalues with a
residual certificate, and discrete algebraic Riccati equation (DARE) solvers
in control form (LQR) and filter form (steady-state Kalman gain).
Every function is pure; nothing here keeps state between calls.
"""

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy import linalg as la

from src.utils.config import config
from src.utils.errors import ConfigError, ConvergenceError, DimensionError, NumericalError
from src.utils.logger import logger

EIG_RESIDUAL_TOL = 1e-8
DARE_RESIDUAL_TOL = 1e-8
# eigenvalues within this of the unit circle count as marginal, not stable
STABILITY_MARGIN = 1e-12
NEWTON_STEPS = 4


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce scalars, vectors and nested lists to a finite 2-D float array"""
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} has non-finite entries", {"shape": arr.shape})
    return arr


def _require_square(a: np.ndarray, name: str) -> int:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a.shape[0]


def expm(A, t: float = 1.0) -> np.ndarray:
    """e^{A t} by scaling-and-squaring Padé (scipy)"""
    A = as_matrix(A, "A")
    n = _require_square(A, "A")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if t == 0:
        return np.eye(n)
    return la.expm(A * t)


def zoh_discretize(A, B, Ts: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact zero-order-hold discretization of dx/dt = A x + B u.

    Uses the augmented exponential
        expm([[A, B], [0, 0]] Ts) = [[Ad, Bd], [0, I]]
    so Bd = ∫₀^Ts e^{Aτ} dτ B without inverting A.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = _require_square(A, "A")
    if B.shape[0] != n:
        # a 1-D input vector arrives as a row; accept it as a column
        if B.shape == (1, n):
            B = B.T
        else:
            raise DimensionError(f"B must have {n} rows to match A, got shape {B.shape}")
    if Ts <= 0:
        raise ValueError(f"Ts must be positive, got {Ts}")

    m = B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    Md = la.expm(M * Ts)
    return Md[:n, :n], Md[:n, n:]


@dataclass(frozen=True)
class EigenSpectrum:
    """Eigenvalues of a square real matrix"""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[complex]:
        return iter(self.values)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(self.magnitudes))

    def is_schur_stable(self) -> bool:
        """All eigenvalues strictly inside the unit circle, with a rounding margin"""
        return self.spectral_radius < 1.0 - STABILITY_MARGIN

    def is_hurwitz(self) -> bool:
        return bool(np.all(self.values.real < 0.0))

    def as_rows(self):
        return [
            {"index": i, "real": float(v.real), "imag": float(v.imag), "magnitude": float(abs(v))}
            for i, v in enumerate(self.values)
        ]


def _eig2(A: np.ndarray) -> np.ndarray:
    # closed-form roots of λ² − tr·λ + det
    half_tr = 0.5 * (A[0, 0] + A[1, 1])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = half_tr * half_tr - det
    if disc >= 0:
        root = np.sqrt(disc)
        return np.array([half_tr + root, half_tr - root], dtype=complex)
    # complex pair: |λ|² = det exactly, so build it in polar form
    mag = np.sqrt(det)
    angle = np.arctan2(np.sqrt(-disc), half_tr)
    return np.array([mag * np.exp(1j * angle), mag * np.exp(-1j * angle)])


def eigvals(A) -> EigenSpectrum:
    """
    Eigenvalues of a small dense matrix.

    2×2 matrices use the quadratic formula. Larger ones go through LAPACK's
    shifted QR (scipy.linalg.eig) and every eigenpair is checked against
    ‖A v − λ v‖ ≤ 1e-8·‖A‖.
    """
    A = as_matrix(A, "A")
    n = _require_square(A, "A")
    if n == 1:
        return EigenSpectrum(np.array([complex(A[0, 0])]))
    if n == 2:
        return EigenSpectrum(_eig2(A))

    try:
        w, V = la.eig(A)
    except la.LinAlgError as e:
        logger.error(f"Eigen-decomposition failed: {e}")
        raise NumericalError("QR iteration did not converge", {"n": n}) from e

    scale = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
    residuals = np.linalg.norm(A @ V - V * w, axis=0)
    worst = float(np.max(residuals))
    if worst > EIG_RESIDUAL_TOL * scale:
        raise NumericalError(
            "eigenpair residual above tolerance",
            {"n": n, "residual": worst, "norm": scale},
        )
    return EigenSpectrum(np.asarray(w, dtype=complex))


def spectral_radius(A) -> float:
    return eigvals(A).spectral_radius


def _check_weights(Q: np.ndarray, R: np.ndarray, n: int, m: int) -> None:
    if Q.shape != (n, n):
        raise DimensionError(f"Q must be {n}x{n}, got {Q.shape}")
    if R.shape != (m, m):
        raise DimensionError(f"R must be {m}x{m}, got {R.shape}")
    q_scale = max(np.abs(Q).max(), 1.0)
    if not np.allclose(Q, Q.T, atol=1e-12 * q_scale):
        raise ConfigError("must be symmetric", field="Q")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12 * q_scale:
        raise ConfigError("must be positive semi-definite", field="Q")
    if not np.allclose(R, R.T, atol=1e-12 * max(np.abs(R).max(), 1.0)):
        raise ConfigError("must be symmetric", field="R")
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError:
        raise ConfigError("must be positive definite", field="R")


def dare_residual(Ad, Bd, Q, R, S) -> float:
    """Frobenius norm of AᵀSA − S − AᵀSB(R + BᵀSB)⁻¹BᵀSA + Q"""
    Ad, Bd, Q, R, S = (np.asarray(M, dtype=float) for M in (Ad, Bd, Q, R, S))
    Ad, Bd, Q, R, S = (np.atleast_2d(M) for M in (Ad, Bd, Q, R, S))
    BtSA = Bd.T @ S @ Ad
    gain_term = BtSA.T @ np.linalg.solve(R + Bd.T @ S @ Bd, BtSA)
    return float(np.linalg.norm(Ad.T @ S @ Ad - S - gain_term + Q))


def _residual_bound(Ad: np.ndarray, S: np.ndarray, q_norm: float) -> float:
    # products like AᵀSA carry rounding of order eps·‖S‖·‖A‖², which no solver can beat
    rounding = 1e3 * np.finfo(float).eps * float(np.linalg.norm(S)) * max(1.0, float(np.linalg.norm(Ad))) ** 2
    return max(DARE_RESIDUAL_TOL * q_norm, rounding)


def _newton_refine(Ad, Bd, Q, R, S: np.ndarray, steps: int = NEWTON_STEPS) -> np.ndarray:
    """
    Newton (Hewer) steps on a DARE solution.

    Each step solves the closed-loop Lyapunov equation for the current gain;
    a step is kept only if it lowers the residual.
    """
    best = S
    best_res = dare_residual(Ad, Bd, Q, R, S)
    for _ in range(steps):
        K = np.linalg.solve(R + Bd.T @ best @ Bd, Bd.T @ best @ Ad)
        Ac = Ad - Bd @ K
        try:
            S_new = la.solve_discrete_lyapunov(Ac.T, Q + K.T @ R @ K)
        except (la.LinAlgError, ValueError):
            break
        S_new = 0.5 * (S_new + S_new.T)
        if not np.all(np.isfinite(S_new)):
            break
        res = dare_residual(Ad, Bd, Q, R, S_new)
        if res >= best_res:
            break
        best, best_res = S_new, res
    return best


def _riccati_iteration(Ad, Bd, Q, R, tol: float, max_iter: int) -> np.ndarray:
    S = Q.copy()
    for k in range(1, max_iter + 1):
        BtSA = Bd.T @ S @ Ad
        S_next = Ad.T @ S @ Ad - BtSA.T @ np.linalg.solve(R + Bd.T @ S @ Bd, BtSA) + Q
        S_next = 0.5 * (S_next + S_next.T)
        step = np.abs(S_next - S).max()
        if not np.isfinite(step):
            raise NumericalError("Riccati recursion produced non-finite values", {"iteration": k})
        S = S_next
        if step <= tol * max(1.0, np.abs(S).max()):
            logger.debug(f"Riccati recursion converged in {k} iterations")
            return S
    raise ConvergenceError(
        "Riccati recursion hit the iteration cap",
        {"iterations": max_iter, "last_step": float(step)},
    )


def solve_dare(
    Ad,
    Bd,
    Q,
    R,
    method: Optional[str] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    Stabilizing solution S of the discrete algebraic Riccati equation.

    Args:
        Ad, Bd: discrete system and input matrices
        Q: state weight, symmetric PSD
        R: input weight, symmetric PD
        method: "schur" (scipy), "iteration" (fixed-point Riccati recursion)
            or "auto" (schur, falling back to iteration); default from config
        tol: recursion stop threshold on ‖S_{k+1} − S_k‖∞ (relative to ‖S‖ above 1)
        max_iter: recursion cap

    Returns:
        Symmetric PSD S whose DARE residual is at most 1e-8·‖Q‖, or the
        floating-point floor 1e3·eps·‖S‖·‖A‖² when that is larger
    """
    Ad = as_matrix(Ad, "Ad")
    Bd = as_matrix(Bd, "Bd")
    n = _require_square(Ad, "Ad")
    if Bd.shape[0] != n:
        raise DimensionError(f"Bd must have {n} rows, got shape {Bd.shape}")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    _check_weights(Q, R, n, Bd.shape[1])

    method = method or config.DARE_METHOD
    tol = config.DARE_TOLERANCE if tol is None else tol
    max_iter = config.DARE_MAX_ITER if max_iter is None else max_iter

    q_norm = float(np.linalg.norm(Q))
    if q_norm == 0.0:
        return np.zeros((n, n))

    S = None
    if method in ("auto", "schur"):
        try:
            S = la.solve_discrete_are(Ad, Bd, Q, R)
            S = _newton_refine(Ad, Bd, Q, R, 0.5 * (S + S.T))
            if dare_residual(Ad, Bd, Q, R, S) > _residual_bound(Ad, S, q_norm):
                raise NumericalError("structured solution misses the residual bound")
        except (la.LinAlgError, ValueError, NumericalError) as e:
            if method == "schur":
                logger.error(f"Structured DARE solve failed: {e}")
                raise NumericalError("scipy DARE solver failed", {"reason": str(e)}) from e
            logger.debug(f"Structured DARE solve rejected ({e}); falling back to recursion")
            S = None
    elif method != "iteration":
        raise ConfigError(f"unknown DARE method {method!r}", field="method")

    if S is None:
        S = _newton_refine(Ad, Bd, Q, R, _riccati_iteration(Ad, Bd, Q, R, tol, max_iter))

    residual = dare_residual(Ad, Bd, Q, R, S)
    bound = _residual_bound(Ad, S, q_norm)
    if residual > bound:
        raise NumericalError(
            "DARE solution fails its residual certificate",
            {"residual": residual, "bound": bound, "method": method},
        )
    if bound > DARE_RESIDUAL_TOL * q_norm:
        logger.debug(f"DARE certified at the rounding floor {bound:.3g} (‖S‖ = {np.linalg.norm(S):.3g})")
    return S


def lqr_gain(Ad, Bd, Q, R, S: Optional[np.ndarray] = None, **dare_kwargs) -> np.ndarray:
    """
    Discrete LQR gain K = (R + BᵀSB)⁻¹BᵀSA for the law u = −K x.

    Pass a Riccati solution ``S`` to skip the solve.
    """
    Ad = as_matrix(Ad, "Ad")
    Bd = as_matrix(Bd, "Bd")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    if S is None:
        S = solve_dare(Ad, Bd, Q, R, **dare_kwargs)
    K = np.linalg.solve(R + Bd.T @ S @ Bd, Bd.T @ S @ Ad)

    radius = spectral_radius(Ad - Bd @ K)
    if radius >= 1.0:
        logger.warning(f"LQR closed loop is not Schur-stable (spectral radius {radius:.6f})")
    return K


def lqr_gain_continuous(A, B, Q, R) -> np.ndarray:
    """Continuous-time gain K = R⁻¹BᵀS from the continuous ARE, for comparison reports"""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    try:
        S = la.solve_continuous_are(A, B, Q, R)
    except (la.LinAlgError, ValueError) as e:
        raise NumericalError("continuous ARE solve failed", {"reason": str(e)}) from e
    return la.solve(R, B.T @ S)


def kalman_steady_gain(Ad, Cd, Qp, Rm, **dare_kwargs) -> Tuple[np.ndarray, np.ndarray]:
    """
    Steady-state Kalman gain from the filter-form DARE.

    Returns:
        (K, P) with P the steady prediction covariance and
        K = P Cᵀ (C P Cᵀ + R)⁻¹
    """
    Ad = as_matrix(Ad, "Ad")
    Cd = as_matrix(Cd, "Cd")
    Qp = as_matrix(Qp, "Qp")
    Rm = as_matrix(Rm, "Rm")
    # duality: the filter Riccati equation is the control one for (Aᵀ, Cᵀ)
    P = solve_dare(Ad.T, Cd.T, Qp, Rm, **dare_kwargs)
    innovation_cov = Cd @ P @ Cd.T + Rm
    K = la.solve(innovation_cov, Cd @ P, assume_a="sym").T
    return K, P


def kalman_recursive_gain(
    Ad,
    Cd,
    Qp,
    Rm,
    P0=None,
    tol: float = 1e-14,
    max_iter: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Limit of the time-varying Kalman recursion started from P0 (identity by default).

    Iterates predict/update on the covariance until successive gains differ
    by at most ``tol``; returns (K, P) in the same convention as
    ``kalman_steady_gain``.
    """
    Ad = as_matrix(Ad, "Ad")
    Cd = as_matrix(Cd, "Cd")
    Qp = as_matrix(Qp, "Qp")
    Rm = as_matrix(Rm, "Rm")
    n = _require_square(Ad, "Ad")
    max_iter = config.DARE_MAX_ITER if max_iter is None else max_iter
    P_post = np.eye(n) if P0 is None else as_matrix(P0, "P0")
    I = np.eye(n)

    K_prev = None
    for k in range(1, max_iter + 1):
        P_prior = Ad @ P_post @ Ad.T + Qp
        K = la.solve(Cd @ P_prior @ Cd.T + Rm, Cd @ P_prior, assume_a="sym").T
        P_post = (I - K @ Cd) @ P_prior
        P_post = 0.5 * (P_post + P_post.T)
        if K_prev is not None and np.abs(K - K_prev).max() <= tol:
            logger.debug(f"Kalman recursion converged in {k} iterations")
            return K, P_prior
        K_prev = K
    raise ConvergenceError("Kalman covariance recursion hit the iteration cap", {"iterations": max_iter})
