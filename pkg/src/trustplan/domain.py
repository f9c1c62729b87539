"""Trusted-domain construction around filtered training data.

The trusted domain D is a union of r-balls about the filtered training pairs
S_D in joint state-control space. Inside D the one-step model error is
bounded by eps = L_fg * r + e_T (r is used as the dispersion bound: with no
filtering r equals the dispersion, and filtering only shrinks it, so the
bound errs conservative). Membership in the eroded set D_eps reduces to a
single nearest-neighbor test once L_fg < 1 and r > eps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .lipschitz import (
    LipschitzEstimate,
    SlopeSampleConfig,
    WeibullFit,
    estimate_lipschitz,
    estimate_report,
)
from .model import ControlAffineModel, Dataset, eval_g1, eval_model

DOMAIN_FORMAT_VERSION = 1

# Below this size a linear scan beats tree construction and is trivially exact.
_BRUTE_FORCE_MAX = 64


class DomainError(ValueError):
    """Invalid inputs to domain construction (empty filter result, bad radii)."""


class DomainFailure(RuntimeError):
    """Distinguished failure outcome of the radius-selection loop.

    reason is one of "lipschitz_ge_one", "ks_rejected", "max_iters",
    "expand_infeasible"; estimate carries the offending Lipschitz estimate
    when there is one.
    """

    def __init__(self, reason: str, message: str, estimate: LipschitzEstimate | None = None):
        super().__init__(message)
        self.reason = reason
        self.estimate = estimate


class NnIndex:
    """Exact nearest-neighbor queries over a fixed point set.

    Uses a k-d tree above 64 points and a brute-force scan below; both routes
    return exact results (the acceptance suite cross-checks them).
    """

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(self.points) == 0:
            raise DomainError("cannot index an empty point set")
        self._tree = cKDTree(self.points) if len(self.points) > _BRUTE_FORCE_MAX else None

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def query(self, q):
        """Nearest neighbor of each query row: (distances, indices)."""
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        qb = q[None, :] if single else q
        if self._tree is not None:
            d, i = self._tree.query(qb)
        else:
            diffs = qb[:, None, :] - self.points[None, :, :]
            dist = np.linalg.norm(diffs, axis=2)
            i = np.argmin(dist, axis=1)
            d = dist[np.arange(len(qb)), i]
        return (float(d[0]), int(i[0])) if single else (d, i)

    def count_within(self, q, radius):
        """Number of indexed points within radius (inclusive) of each query row."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if self._tree is not None:
            return np.asarray(self._tree.query_ball_point(q, radius, return_length=True))
        dist = np.linalg.norm(q[:, None, :] - self.points[None, :, :], axis=2)
        return (dist <= radius).sum(axis=1)

    def indices_within(self, q, radius):
        """Indices of points within radius of a single query point."""
        q = np.asarray(q, dtype=float)
        if self._tree is not None:
            return sorted(self._tree.query_ball_point(q, radius))
        dist = np.linalg.norm(self.points - q[None, :], axis=1)
        return list(np.nonzero(dist <= radius)[0])


class BallUnionSampler:
    """Uniform sampler over a union of equal-radius balls.

    Draws a ball uniformly, a point uniformly inside it, then corrects for
    overlap by accepting with probability 1 / (number of covering balls).
    """

    def __init__(self, points, r, index: NnIndex | None = None):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.r = float(r)
        self.index = index if index is not None else NnIndex(self.points)

    def __call__(self, rng, k):
        n, d = self.points.shape
        out = np.empty((k, d))
        filled = 0
        while filled < k:
            need = k - filled
            centers = self.points[rng.integers(0, n, size=need)]
            dirs = rng.standard_normal((need, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            radii = self.r * rng.uniform(0.0, 1.0, size=need) ** (1.0 / d)
            cand = centers + dirs * radii[:, None]
            counts = np.maximum(self.index.count_within(cand, self.r), 1)
            keep = rng.uniform(size=need) < 1.0 / counts
            kept = cand[keep]
            out[filled:filled + len(kept)] = kept
            filled += len(kept)
        return out

    def sample_pairs(self, rng, k, span=None):
        """Jointly sampled near pairs: z1 uniform over the union, z2 uniform
        over B_span(z1) intersected with the union (overlap corrected).

        The slope bound is applied over distances up to r, so pairs separated
        by at most span = 2r probe the estimator at the relevant scale; it
        also keeps pairs inside one connected patch when the union is sparse.
        """
        if span is None:
            span = 2.0 * self.r
        n, d = self.points.shape
        z1 = np.empty((k, d))
        z2 = np.empty((k, d))
        filled = 0
        while filled < k:
            need = k - filled
            first = self(rng, need)
            dirs = rng.standard_normal((need, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            radii = span * rng.uniform(0.0, 1.0, size=need) ** (1.0 / d)
            second = first + dirs * radii[:, None]
            counts = self.index.count_within(second, self.r)
            inside = counts > 0
            accept = inside & (rng.uniform(size=need) < 1.0 / np.maximum(counts, 1))
            kept = int(accept.sum())
            z1[filled:filled + kept] = first[accept]
            z2[filled:filled + kept] = second[accept]
            filled += kept
        return z1, z2


def error_stats(S: Dataset, m: ControlAffineModel):
    """Per-sample one-step error norms with their population mean and std."""
    if len(S) == 0:
        raise DomainError("error_stats needs a nonempty dataset")
    errors = np.linalg.norm(eval_model(m, S.x, S.u) - S.y, axis=1)
    return float(errors.mean()), float(errors.std()), errors


def filter_sd(S: Dataset, errors, mu, sigma, a):
    """Keep samples with error <= mu + a*sigma; returns (S_D, kept indices)."""
    if a < 0:
        raise DomainError("filter multiplier a must be nonnegative")
    idx = np.nonzero(np.asarray(errors) <= mu + a * sigma)[0]
    if len(idx) == 0:
        raise DomainError("filtering removed every sample; cannot build a domain")
    return S.subset(idx), idx


def compute_epsilon(l_fg: float, b: float, e_t: float) -> float:
    """Uniform model-error bound eps = l_fg * b + e_t."""
    if l_fg < 0 or b < 0 or e_t < 0:
        raise DomainError("epsilon inputs must be nonnegative")
    return l_fg * b + e_t


@dataclass
class TrustedDomain:
    """A validated trusted domain with its Lipschitz estimates.

    index covers the joint (x, u) pairs of S_D, index_x their state
    projections S_X. margin = r - epsilon is the Lemma 1 membership radius.
    """

    s_d: Dataset
    index: NnIndex
    index_x: NnIndex
    r: float
    epsilon: float
    e_t: float
    l_fg: LipschitzEstimate
    l_g0: LipschitzEstimate
    l_g1: LipschitzEstimate
    a: float
    rho: float
    r_min: float
    sd_indices: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.r > self.epsilon:
            raise DomainError(f"invalid domain: r={self.r} <= epsilon={self.epsilon}")
        if not self.l_fg.l_hat < 1.0:
            raise DomainError(f"invalid domain: L_fg={self.l_fg.l_hat} >= 1")

    @property
    def margin(self) -> float:
        return self.r - self.epsilon

    @property
    def rho_cubed(self) -> float:
        return self.rho ** 3


def in_d_epsilon(q, td: TrustedDomain) -> bool:
    """Sufficient membership test for D_eps (Lemma 1).

    True iff some training pair lies within r - eps of the query (closed
    inequality). Sufficient but not necessary: points of D_eps covered only
    by several balls jointly are missed.
    """
    q = np.concatenate([np.asarray(p, dtype=float).ravel() for p in q]) \
        if isinstance(q, tuple) else np.asarray(q, dtype=float)
    d, _ = td.index.query(q)
    return bool(d <= td.margin)


def state_in_domain(x, td: TrustedDomain) -> bool:
    """State-space analogue used by the planner: distance to S_X <= r - eps."""
    d, _ = td.index_x.query(np.asarray(x, dtype=float))
    return bool(d <= td.margin)


def dispersion_brute(sd_points, d_sampler, n_probe, rng, index: NnIndex | None = None):
    """Monte-Carlo lower bound on the dispersion of S_D in D (test oracle)."""
    if n_probe < 1:
        raise DomainError("n_probe must be positive")
    idx = index if index is not None else NnIndex(sd_points)
    probes = d_sampler(rng, n_probe)
    d, _ = idx.query(probes)
    return float(np.max(d))


# ---------------------------------------------------------------------------
# Radius selection (growing r until r > eps or L_fg >= 1)
# ---------------------------------------------------------------------------


def _exact_identity_estimate(rho) -> LipschitzEstimate:
    """L_g0 for a known-identity drift: exactly 1, no statistical fit needed."""
    fit = WeibullFit(gamma_hat=1.0, alpha_hat=1e-300, beta_hat=1.0, xi=0.0,
                     ks_p=1.0, n_samples=0, degenerate=True)
    return LipschitzEstimate(l_hat=1.0, c=0.0, rho=rho, fit=fit, target="g0")


def _default_estimator(model, dynamics_fn, psi=None):
    """Build the estimator closure used by the selection loop.

    target is "fg", "g0" or "g1"; points are ball centers (joint pairs for
    "fg", state projections otherwise); returns a LipschitzEstimate.
    """
    dim_x = model.system.dim_x

    def h_fg(z):
        x, u = z[:, :dim_x], z[:, dim_x:]
        return dynamics_fn(x, u) - eval_model(model, x, u)

    def h_g0(z):
        return model.g0.forward(z)

    def h_g1(z):
        return eval_g1(model, z)

    hs = {"fg": h_fg, "g0": h_g0, "g1": h_g1}

    def estimator(target, points, r, cfg: SlopeSampleConfig, rho, seed):
        if target == "g0" and model.g0_is_identity:
            return _exact_identity_estimate(rho)
        run_cfg = SlopeSampleConfig(n_s=cfg.n_s, n_l=cfg.n_l,
                                    strategy=cfg.strategy, seed=seed)
        if cfg.strategy == "psi":
            if psi is None:
                raise DomainError("psi strategy requires a psi dataset")
            pool = psi.xu if target == "fg" else psi.x
            centers = NnIndex(points)
            dist, _ = centers.query(pool)
            inside = pool[dist <= r]
            if len(inside) < 2:
                raise DomainFailure(
                    "max_iters", f"psi restricted to D has {len(inside)} points")
            sampler = lambda rng, k: inside[rng.integers(0, len(inside), size=k)]
            est = estimate_lipschitz(hs[target], sampler, run_cfg, rho, target=target)
            est.fit.n_samples = run_cfg.n_s
            est.meta = {"psi_in_domain": int(len(inside))}
            return est
        sampler = BallUnionSampler(points, r)
        pairs = sampler.sample_pairs if cfg.strategy == "local" else None
        return estimate_lipschitz(hs[target], sampler, run_cfg, rho, target=target,
                                  sample_pairs=pairs)

    return estimator


def _seed_for(base, tag, iteration):
    ss = np.random.SeedSequence([int(base) & 0x7FFFFFFF, hash(tag) & 0xFFFF, iteration])
    return int(ss.generate_state(1)[0])


def _assemble(s_d, sd_idx, e_t, r, r_min, l_fg, estimator, cfg, rho, a, seed, meta):
    eps = compute_epsilon(l_fg.l_hat, r, e_t)
    l_g0 = estimator("g0", s_d.x, r, cfg, rho, _seed_for(seed, "g0", 0))
    l_g1 = estimator("g1", s_d.x, r, cfg, rho, _seed_for(seed, "g1", 0))
    for est in (l_g0, l_g1):
        if not est.ks_pass:
            raise DomainFailure(
                "ks_rejected",
                f"KS rejected the {est.target} slope fit (p={est.fit.ks_p:.4g})",
                est,
            )
    return TrustedDomain(
        s_d=s_d,
        index=NnIndex(s_d.xu),
        index_x=NnIndex(s_d.x),
        r=r,
        epsilon=eps,
        e_t=e_t,
        l_fg=l_fg,
        l_g0=l_g0,
        l_g1=l_g1,
        a=a,
        rho=rho,
        r_min=r_min,
        sd_indices=np.asarray(sd_idx),
        seed=seed,
        meta=meta,
    )


def select_r_and_domain(s_d: Dataset, sd_idx, e_t, model, dynamics_fn, mu, sigma, a,
                        cfg: SlopeSampleConfig, rho, alpha_step=None, psi=None,
                        estimator=None, max_iters=50) -> TrustedDomain:
    """Grow the ball radius until r > eps, re-estimating L_fg each round.

    Starts at r = mu + a*sigma and iterates r <- eps + alpha_step. Raises
    DomainFailure when L_fg >= 1, when the KS test rejects a fit, or when the
    iteration cap is hit. The returned domain uses the first radius with
    r > eps (the minimal one up to alpha_step); see expand_radius for growing
    it afterwards.
    """
    if len(s_d) == 0:
        raise DomainError("S_D is empty")
    if estimator is None:
        estimator = _default_estimator(model, dynamics_fn, psi=psi)
    r = mu + a * sigma
    if r <= 0:
        raise DomainError("initial radius mu + a*sigma must be positive")
    if alpha_step is None:
        alpha_step = 1e-3 * r
    if alpha_step <= 0:
        raise DomainError("alpha_step must be positive")

    joint = s_d.xu
    for it in range(max_iters):
        l_fg = estimator("fg", joint, r, cfg, rho, _seed_for(cfg.seed, "fg", it))
        if not l_fg.ks_pass:
            raise DomainFailure(
                "ks_rejected",
                f"KS rejected the error slope fit at r={r:.6g} (p={l_fg.fit.ks_p:.4g})",
                l_fg,
            )
        if l_fg.l_hat >= 1.0:
            raise DomainFailure(
                "lipschitz_ge_one",
                f"estimated L_fg={l_fg.l_hat:.4g} >= 1 at r={r:.6g}",
                l_fg,
            )
        eps = compute_epsilon(l_fg.l_hat, r, e_t)
        if r > eps:
            meta = {"iterations": it + 1, "strategy": cfg.strategy}
            return _assemble(s_d, sd_idx, e_t, r, r, l_fg, estimator, cfg, rho, a,
                             cfg.seed, meta)
        r = eps + alpha_step

    raise DomainFailure("max_iters", f"radius selection did not terminate in {max_iters} iterations")


def expand_radius(td: TrustedDomain, r_new, model, dynamics_fn, cfg: SlopeSampleConfig,
                  psi=None, estimator=None) -> TrustedDomain:
    """Re-validate the domain at a larger radius.

    A larger r is admissible as long as L_fg is re-estimated over the larger
    union and r > eps still holds; this is what makes the planner's
    membership margin r - eps usable in practice.
    """
    if r_new < td.r:
        raise DomainError(f"expand_radius: r_new={r_new} < current r={td.r}")
    if estimator is None:
        estimator = _default_estimator(model, dynamics_fn, psi=psi)
    l_fg = estimator("fg", td.s_d.xu, r_new, cfg, td.rho, _seed_for(cfg.seed, "fg-expand", 0))
    if not l_fg.ks_pass:
        raise DomainFailure(
            "ks_rejected",
            f"KS rejected the error slope fit at expanded r={r_new:.6g} "
            f"(p={l_fg.fit.ks_p:.4g})",
            l_fg,
        )
    if l_fg.l_hat >= 1.0:
        raise DomainFailure(
            "lipschitz_ge_one", f"estimated L_fg={l_fg.l_hat:.4g} >= 1 at r={r_new:.6g}", l_fg)
    eps = compute_epsilon(l_fg.l_hat, r_new, td.e_t)
    if not r_new > eps:
        raise DomainFailure(
            "expand_infeasible", f"expanded radius {r_new:.6g} <= epsilon {eps:.6g}", l_fg)
    meta = dict(td.meta)
    meta["expanded_from"] = td.r
    return _assemble(td.s_d, td.sd_indices, td.e_t, r_new, td.r_min, l_fg, estimator,
                     cfg, td.rho, td.a, cfg.seed, meta)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def domain_summary(td: TrustedDomain) -> dict:
    return {
        "r": td.r,
        "epsilon": td.epsilon,
        "e_t": td.e_t,
        "a": td.a,
        "n_sd": len(td.s_d),
        "l_fg": estimate_report(td.l_fg),
        "l_g0": estimate_report(td.l_g0),
        "l_g1": estimate_report(td.l_g1),
        "rho": td.rho,
        "rho_cubed": td.rho_cubed,
        "seed": td.seed,
        "r_min": td.r_min,
    }


def save_domain(td: TrustedDomain, path):
    doc = {
        "version": DOMAIN_FORMAT_VERSION,
        "summary": domain_summary(td),
        "sd_indices": td.sd_indices.tolist(),
        "meta": td.meta,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _estimate_from_report(rep) -> LipschitzEstimate:
    fit = WeibullFit(
        gamma_hat=rep["gamma_hat"],
        alpha_hat=rep["alpha_hat"],
        beta_hat=rep["beta_hat"],
        xi=rep["xi"],
        ks_p=rep["ks_p"],
        n_samples=rep["n_s"],
    )
    return LipschitzEstimate(
        l_hat=rep["l_hat"], c=rep["c"], rho=rep["rho"], fit=fit,
        target=rep["target"], n_l=rep["n_l"], seed=rep["seed"],
    )


def load_domain(path, train: Dataset) -> TrustedDomain:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != DOMAIN_FORMAT_VERSION:
        raise DomainError(f"domain format version {doc.get('version')!r} != {DOMAIN_FORMAT_VERSION}")
    s = doc["summary"]
    idx = np.array(doc["sd_indices"], dtype=int)
    s_d = train.subset(idx)
    return TrustedDomain(
        s_d=s_d,
        index=NnIndex(s_d.xu),
        index_x=NnIndex(s_d.x),
        r=s["r"],
        epsilon=s["epsilon"],
        e_t=s["e_t"],
        l_fg=_estimate_from_report(s["l_fg"]),
        l_g0=_estimate_from_report(s["l_g0"]),
        l_g1=_estimate_from_report(s["l_g1"]),
        a=s["a"],
        rho=s["rho"],
        r_min=s["r_min"],
        sd_indices=idx,
        seed=s["seed"],
        meta=doc.get("meta", {}),
    )
