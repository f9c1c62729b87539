"""Kinodynamic RRT constrained to the trusted domain.

Tree growth follows the usual sample / nearest-node / steer pattern, but a
candidate expansion must (a) keep the state-control pair within r - eps of
the filtered training pairs, (b) admit a one-step feedback law, (c) land on a
state that optimistically re-enters the domain, (d) improve distance to the
goal among the sampled controls, and (e) keep an eps-inflated ball collision
free. The naive baseline skips (a)-(c) and the domain gate on sampled states,
planning with the bare learned model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .domain import TrustedDomain, in_d_epsilon
from .feedback import OneStepCertificate, goal_invariance_check, one_step_exists, \
    singular_values_jacobi, cert_from_singulars
from .model import ControlAffineModel, eval_g1, eval_model


class PlanError(ValueError):
    """Invalid planning inputs (bad tolerance, colliding start, missing domain)."""


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned box obstacle over the position coordinates."""

    low: np.ndarray
    high: np.ndarray

    @staticmethod
    def make(low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        if low.shape != high.shape or np.any(high < low):
            raise PlanError(f"invalid box: low={low}, high={high}")
        return AxisBox(low, high)

    def to_dict(self):
        return {"min": self.low.tolist(), "max": self.high.tolist()}


def point_box_distance(p, box: AxisBox):
    """Euclidean distance from points to a box (0 inside); batched."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    excess = np.maximum(np.maximum(box.low - p, p - box.high), 0.0)
    return np.linalg.norm(excess, axis=1)


def in_collision(x, eps, obstacles, position_dims=None) -> bool:
    """True iff the eps-ball around the position projection touches any box."""
    x = np.asarray(x, dtype=float)
    pos = x if position_dims is None else x[np.asarray(position_dims)]
    for box in obstacles:
        if point_box_distance(pos, box)[0] <= eps:
            return True
    return False


def _collision_mask(states, eps, obstacles, position_dims):
    states = np.atleast_2d(states)
    pos = states if position_dims is None else states[:, np.asarray(position_dims)]
    mask = np.zeros(len(pos), dtype=bool)
    for box in obstacles:
        mask |= point_box_distance(pos, box) <= eps
    return mask


@dataclass
class PlanProblem:
    x_i: np.ndarray
    x_g: np.ndarray
    lam: float
    obstacles: list
    system: object

    def __post_init__(self):
        self.x_i = np.asarray(self.x_i, dtype=float)
        self.x_g = np.asarray(self.x_g, dtype=float)
        if self.lam <= 0:
            raise PlanError("goal tolerance lambda must be positive")
        if self.x_i.shape != (self.system.dim_x,) or self.x_g.shape != (self.system.dim_x,):
            raise PlanError("start/goal dimension mismatch")


@dataclass
class PlannerConfig:
    n_samples: int = 20
    goal_bias: float = 0.1
    sampling: str = "train-perturb"     # or "uniform"
    max_iters: int = 200_000
    seed: int = 0
    naive_mode: bool = False
    collision_radius_extra: float = 0.0  # bounding-sphere radius added to eps
    max_state_rejects: int = 200         # inner sampling loop cap per expansion

    def __post_init__(self):
        if self.n_samples < 1:
            raise PlanError("n_samples must be at least 1")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise PlanError("goal_bias must lie in [0, 1]")
        if self.sampling not in ("uniform", "train-perturb"):
            raise PlanError(f"unknown sampling strategy {self.sampling!r}")


@dataclass
class Trajectory:
    """A nominal plan: model-consistent states, controls and per-step certificates."""

    states: np.ndarray
    controls: np.ndarray
    certificates: list
    goal_cert: OneStepCertificate | None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.controls)


@dataclass
class PlanTimeout:
    """Search exhausted max_iters without a certified goal connection."""

    iters: int
    tree_size: int
    best_goal_distance: float


def sample_state(prob: PlanProblem, cfg: PlannerConfig, td: TrustedDomain | None, rng):
    """Goal-biased state sampling, uniform over the box or perturbed from S_X."""
    if rng.uniform() < cfg.goal_bias:
        return prob.x_g.copy()
    if cfg.sampling == "train-perturb" and td is not None:
        base = td.index_x.points[rng.integers(0, len(td.index_x))]
        d = len(base)
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        radius = td.margin * rng.uniform() ** (1.0 / d)
        return base + radius * direction
    box = prob.system.state_box
    return rng.uniform(box[:, 0], box[:, 1])


def _sample_control_uniform(box, rng):
    return rng.uniform(box[:, 0], box[:, 1])


def _sample_control_perturb(td: TrustedDomain, x_near, candidates, box, rng):
    """Control near a training pair whose state is close to x_near.

    The joint perturbation stays within the membership margin by
    construction; the explicit pair check still runs afterwards.
    """
    if not candidates:
        return _sample_control_uniform(box, rng)
    j = candidates[rng.integers(0, len(candidates))]
    pair = td.index.points[j]
    dim_x = td.s_d.x.shape[1]
    u_bar = pair[dim_x:]
    d_x = np.linalg.norm(x_near - pair[:dim_x])
    rad2 = td.margin ** 2 - d_x ** 2
    if rad2 <= 0:
        return np.clip(u_bar, box[:, 0], box[:, 1])
    m = len(u_bar)
    direction = rng.standard_normal(m)
    direction /= np.linalg.norm(direction)
    radius = 0.999 * np.sqrt(rad2) * rng.uniform() ** (1.0 / m)
    return np.clip(u_bar + radius * direction, box[:, 0], box[:, 1])


def plan(m: ControlAffineModel, td: TrustedDomain | None, prob: PlanProblem,
         cfg: PlannerConfig):
    """Search for a certified trajectory from prob.x_i to within lam of prob.x_g.

    Returns a Trajectory or a PlanTimeout. In the default (trusted) mode the
    search only terminates on a goal-ball state whose hold certificate passes,
    so the returned plan satisfies the invariance condition as well.
    """
    if td is None and not cfg.naive_mode:
        raise PlanError("trusted-domain planning requires a TrustedDomain")
    rng = np.random.default_rng(cfg.seed)
    sysspec = prob.system
    eps_plan = 0.0 if td is None else td.epsilon
    eps_coll = eps_plan + cfg.collision_radius_extra
    pos_dims = sysspec.position_dims or None
    t0 = time.perf_counter()

    if in_collision(prob.x_i, eps_coll, prob.obstacles, pos_dims):
        raise PlanError("start state collides under the eps-inflated check")

    # Trivial query: already at the goal.
    if np.linalg.norm(prob.x_i - prob.x_g) <= prob.lam:
        goal_cert = None
        if not cfg.naive_mode:
            goal_cert = goal_invariance_check(m, td, prob.x_i)
        if cfg.naive_mode or goal_cert.exists:
            return Trajectory(
                states=prob.x_i[None, :].copy(),
                controls=np.empty((0, sysspec.dim_u)),
                certificates=[],
                goal_cert=goal_cert,
                meta={"iters": 0, "tree_size": 1, "seed": cfg.seed,
                      "naive": cfg.naive_mode, "wall_time": 0.0},
            )

    states = [prob.x_i.copy()]
    parents = [-1]
    controls = [None]
    certs = [None]
    tree = np.array(states)

    best_goal_dist = float(np.linalg.norm(prob.x_i - prob.x_g))

    for it in range(cfg.max_iters):
        # --- sample a domain-admissible state (line gate skipped when naive)
        x_new = None
        for _ in range(cfg.max_state_rejects):
            cand = sample_state(prob, cfg, td, rng)
            if cfg.naive_mode:
                x_new = cand
                break
            d_sx, _ = td.index_x.query(cand)
            if d_sx <= td.margin:
                x_new = cand
                break
        if x_new is None:
            continue

        near_idx = int(np.argmin(np.linalg.norm(tree - x_new[None, :], axis=1)))
        x_near = tree[near_idx]

        if not cfg.naive_mode:
            svals = singular_values_jacobi(eval_g1(m, x_near))
            perturb_candidates = (
                td.index_x.indices_within(x_near, td.margin)
                if cfg.sampling == "train-perturb" else None
            )

        u_best = None
        x_best = None
        cert_best = None
        d_best = np.inf

        for _ in range(cfg.n_samples):
            if cfg.naive_mode or cfg.sampling == "uniform":
                u = _sample_control_uniform(sysspec.control_box, rng)
            else:
                u = _sample_control_perturb(td, x_near, perturb_candidates,
                                            sysspec.control_box, rng)
            if not cfg.naive_mode:
                d_pair, _ = td.index.query(np.concatenate([x_near, u]))
                if d_pair > td.margin:
                    continue
            x_next = eval_model(m, x_near, u)
            cert = None
            if not cfg.naive_mode:
                cert = cert_from_singulars(svals, u, td, sysspec.control_box)
                if not cert.exists:
                    continue
                d_sx, _ = td.index_x.query(x_next)
                if d_sx > td.margin:
                    continue
            dist_goal = float(np.linalg.norm(x_next - prob.x_g))
            if dist_goal >= d_best:
                continue
            if in_collision(x_next, eps_coll, prob.obstacles, pos_dims):
                continue
            u_best, x_best, cert_best, d_best = u, x_next, cert, dist_goal

        if u_best is None:
            continue

        states.append(x_best)
        parents.append(near_idx)
        controls.append(u_best)
        certs.append(cert_best)
        tree = np.vstack([tree, x_best[None, :]])
        best_goal_dist = min(best_goal_dist, d_best)

        if d_best <= prob.lam:
            goal_cert = None
            if not cfg.naive_mode:
                goal_cert = goal_invariance_check(m, td, x_best)
                if not goal_cert.exists:
                    continue
            return _construct(states, parents, controls, certs, len(states) - 1,
                              goal_cert, it + 1, cfg, t0)

    return PlanTimeout(iters=cfg.max_iters, tree_size=len(states),
                       best_goal_distance=best_goal_dist)


def _construct(states, parents, controls, certs, leaf, goal_cert, iters, cfg, t0):
    chain = []
    node = leaf
    while node != -1:
        chain.append(node)
        node = parents[node]
    chain.reverse()
    xs = np.array([states[i] for i in chain])
    us = np.array([controls[i] for i in chain[1:]]) if len(chain) > 1 \
        else np.empty((0, len(states[0])))
    cs = [certs[i] for i in chain[1:]]
    return Trajectory(
        states=xs,
        controls=us,
        certificates=cs if not cfg.naive_mode else [],
        goal_cert=goal_cert,
        meta={"iters": iters, "tree_size": len(states), "seed": cfg.seed,
              "naive": cfg.naive_mode, "wall_time": time.perf_counter() - t0},
    )


def audit_trajectory(m: ControlAffineModel, td: TrustedDomain | None,
                     prob: PlanProblem, traj: Trajectory,
                     collision_extra: float = 0.0) -> list:
    """Independent re-validation of a returned plan; returns violation strings."""
    issues = []
    xs, us = traj.states, traj.controls
    if not np.allclose(xs[0], prob.x_i):
        issues.append("trajectory does not start at x_i")
    if np.linalg.norm(xs[-1] - prob.x_g) > prob.lam:
        issues.append("terminal state misses the goal tolerance")
    pos_dims = prob.system.position_dims or None
    eps = 0.0 if td is None else td.epsilon
    for k in range(len(us)):
        x_pred = eval_model(m, xs[k], us[k])
        if not np.array_equal(x_pred, xs[k + 1]):
            issues.append(f"step {k}: stored successor differs from the model")
        if in_collision(xs[k + 1], eps + collision_extra, prob.obstacles, pos_dims):
            issues.append(f"step {k}: successor collides with inflation {eps + collision_extra}")
        if td is not None and not traj.meta.get("naive", False):
            if not in_d_epsilon((xs[k], us[k]), td):
                issues.append(f"step {k}: pair outside D_eps")
            cert = one_step_exists(m, td, xs[k], us[k], xs[k + 1])
            if not cert.exists:
                issues.append(f"step {k}: one-step certificate does not hold")
    if td is not None and not traj.meta.get("naive", False):
        goal_cert = goal_invariance_check(m, td, xs[-1])
        if not goal_cert.exists:
            issues.append("goal invariance certificate does not hold")
    return issues
