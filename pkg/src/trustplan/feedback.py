"""One-step feedback law: existence certificates and the execution-time solve.

Inside the trusted domain the model at a perturbed state x~ in B_eps(x_k) is
g(x~, u) = g0(x_k) + D0 + (g1(x_k) + D1) u with ||D0|| <= L_g0 * eps and
||D1|| <= L_g1 * eps. The feedback control solving the perturbed linear
equation deviates from the nominal one by at most

    u_pert = ||g1+|| (||D1|| ||u_k|| + ||D0||) / (1 - ||g1+|| ||D1||),

so a step is certified when the denominator is positive and the u_pert-inflated
box around u_k stays inside the control box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import TrustedDomain, in_d_epsilon
from .model import ControlAffineModel, eval_g0, eval_g1

# sigma_min below this fraction of sigma_max counts as rank deficient
_RANK_RTOL = 1e-10


class FeedbackSolveError(RuntimeError):
    """Raised when the one-step linear solve is rank deficient or inaccurate."""

    def __init__(self, message, sigma_min=None):
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass
class OneStepCertificate:
    """Existence certificate for the one-step feedback law at a plan step."""

    exists: bool
    u_pert: float
    sigma_min: float
    nonsingular_margin: float
    control_ok: bool
    in_domain: bool = True
    u_nominal: np.ndarray | None = None

    def to_dict(self):
        return {
            "exists": bool(self.exists),
            "u_pert": float(self.u_pert),
            "sigma_min": float(self.sigma_min),
            "nonsingular_margin": float(self.nonsingular_margin),
            "control_ok": bool(self.control_ok),
            "in_domain": bool(self.in_domain),
        }


def singular_values_jacobi(mat) -> np.ndarray:
    """All singular values of a small dense matrix by one-sided Jacobi.

    Rotations orthogonalize the columns of M^T (rows of M); the resulting
    column norms are the singular values. Converges to relative accuracy
    ~1e-15 on the sizes used here (<= 8).
    """
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    # Work on the tall orientation so columns (not rows) get orthogonalized.
    b = (m if m.shape[0] >= m.shape[1] else m.T).copy()
    ncol = b.shape[1]
    if ncol == 1:
        return np.array([np.linalg.norm(b[:, 0])])

    for _ in range(60):
        off = 0.0
        for p in range(ncol - 1):
            for q in range(p + 1, ncol):
                app = b[:, p] @ b[:, p]
                aqq = b[:, q] @ b[:, q]
                apq = b[:, p] @ b[:, q]
                off = max(off, abs(apq) / max(np.sqrt(app * aqq), 1e-300))
                if abs(apq) <= 1e-30 * max(np.sqrt(app * aqq), 1e-300):
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                bp = b[:, p].copy()
                b[:, p] = cs * bp - sn * b[:, q]
                b[:, q] = sn * bp + cs * b[:, q]
        if off < 1e-15:
            break
    return np.sort(np.linalg.norm(b, axis=0))[::-1]


def smallest_singular_value(mat) -> float:
    """sigma_min of a dim_x x dim_u control matrix (dim_u >= dim_x)."""
    m = np.asarray(mat, dtype=float)
    if m.shape[0] > m.shape[1]:
        raise ValueError(f"expected at least as many columns as rows, got {m.shape}")
    return float(singular_values_jacobi(m)[-1])


def cert_from_singulars(svals, u_k, td: TrustedDomain, control_box) -> OneStepCertificate:
    """Existence certificate given precomputed singular values of g1(x_k).

    Uses the worst-case perturbations ||D1|| = L_g1 * eps, ||D0|| = L_g0 * eps
    and ||g1+|| = 1/sigma_min. The control check conservatively requires the
    per-coordinate box u_k +/- u_pert inside the control box (the infinity
    ball contains the 2-norm deviation).
    """
    u_k = np.asarray(u_k, dtype=float)
    eps = td.epsilon
    sigma_min, sigma_max = float(svals[-1]), float(svals[0])
    d1 = td.l_g1.l_hat * eps
    d0 = td.l_g0.l_hat * eps

    if sigma_min <= _RANK_RTOL * max(sigma_max, 1.0):
        return OneStepCertificate(False, np.inf, sigma_min, -np.inf,
                                  control_ok=False, u_nominal=u_k)

    pinv_norm = 1.0 / sigma_min
    margin = 1.0 - pinv_norm * d1
    if margin <= 0.0:
        return OneStepCertificate(False, np.inf, sigma_min, margin,
                                  control_ok=False, u_nominal=u_k)

    u_pert = pinv_norm * (d1 * np.linalg.norm(u_k) + d0) / margin
    control_ok = bool(
        np.all(u_k - u_pert >= control_box[:, 0])
        and np.all(u_k + u_pert <= control_box[:, 1])
    )
    return OneStepCertificate(
        exists=control_ok,
        u_pert=float(u_pert),
        sigma_min=sigma_min,
        nonsingular_margin=float(margin),
        control_ok=control_ok,
        u_nominal=u_k,
    )


def one_step_exists(m: ControlAffineModel, td: TrustedDomain, x_k, u_k,
                    x_next=None) -> OneStepCertificate:
    """Certify that a valid feedback control exists around step (x_k, u_k)."""
    x_k = np.asarray(x_k, dtype=float)
    svals = singular_values_jacobi(eval_g1(m, x_k))
    return cert_from_singulars(svals, u_k, td, m.system.control_box)


def solve_one_step(m: ControlAffineModel, x_tilde, x_target) -> np.ndarray:
    """Minimum-norm control u with g1(x~) u = x_target - g0(x~).

    Exact solve when g1 is square; least-norm solution otherwise. Raises
    FeedbackSolveError (carrying sigma_min) on rank deficiency or when the
    residual exceeds 1e-9 * (1 + ||b||).
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    x_target = np.asarray(x_target, dtype=float)
    a = eval_g1(m, x_tilde)
    b = x_target - eval_g0(m, x_tilde)

    svals = singular_values_jacobi(a)
    sigma_min, sigma_max = float(svals[-1]), float(svals[0])
    if sigma_min <= _RANK_RTOL * max(sigma_max, 1.0):
        raise FeedbackSolveError(
            f"control matrix is rank deficient (sigma_min={sigma_min:.3e})",
            sigma_min=sigma_min,
        )

    if a.shape[0] == a.shape[1]:
        u = np.linalg.solve(a, b)
    else:
        u = a.T @ np.linalg.solve(a @ a.T, b)

    resid = np.linalg.norm(a @ u - b)
    if resid > 1e-9 * (1.0 + np.linalg.norm(b)):
        raise FeedbackSolveError(
            f"one-step solve residual {resid:.3e} too large", sigma_min=sigma_min)
    return u


def goal_invariance_check(m: ControlAffineModel, td: TrustedDomain, x_goal,
                          u_hold_norm_bound=None) -> OneStepCertificate:
    """Certify that the terminal state can be re-reached from itself.

    Solves for the stationary control u_st with g(x_K, u_st) = x_K, requires
    the pair (x_K, u_st) in D_eps, and runs the same existence check as a
    regular step with u_st as the nominal control.
    """
    x_goal = np.asarray(x_goal, dtype=float)
    try:
        u_st = solve_one_step(m, x_goal, x_goal)
    except FeedbackSolveError as exc:
        return OneStepCertificate(False, np.inf, exc.sigma_min or 0.0, -np.inf,
                                  control_ok=False, in_domain=False)
    if u_hold_norm_bound is not None and np.linalg.norm(u_st) > u_hold_norm_bound:
        return OneStepCertificate(False, np.inf, 0.0, -np.inf,
                                  control_ok=False, in_domain=False, u_nominal=u_st)
    cert = one_step_exists(m, td, x_goal, u_st, x_next=x_goal)
    cert.in_domain = in_d_epsilon((x_goal, u_st), td)
    cert.exists = bool(cert.exists and cert.in_domain)
    cert.u_nominal = u_st
    return cert
