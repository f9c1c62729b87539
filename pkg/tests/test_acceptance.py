"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py -v` to see the per-criterion
lines. The two pipeline fixtures (sinusoid, quadrotor) are session-scoped;
criteria 6-8 share the sinusoid run and criterion 9 owns the quadrotor run.
"""

import numpy as np
import pytest

from trustplan.domain import NnIndex, TrustedDomain, compute_epsilon, in_d_epsilon
from trustplan.feedback import smallest_singular_value, solve_one_step
from trustplan.lipschitz import (
    SlopeSampleConfig,
    WeibullFit,
    assemble_estimate,
    estimate_lipschitz,
    fit_reverse_weibull,
    inv_normal_cdf,
)
from trustplan.model import Dataset

from test_domain import fake_estimate
from test_feedback import gauss_solve
from test_lipschitz import rw_sample
from test_model import constant_g1_model


def _report(num, ok, detail=""):
    print(f"\ncriterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def test_criterion_01_epsilon_formula():
    got = compute_epsilon(0.1919, 0.3633, 0.1161)
    _report(1, abs(got - 0.1859) <= 5e-4,
            f"compute_epsilon(0.1919, 0.3633, 0.1161) = {got:.6f} (target 0.1859 +/- 5e-4)")


def test_criterion_02_confidence_interval_assembly():
    rho = 0.975
    z = inv_normal_cdf(rho)
    results = []
    for gamma, c, expect in ((0.117, 6.85e-4, 0.117685), (0.205, 0.011, 0.216)):
        fit = WeibullFit(gamma_hat=gamma, alpha_hat=0.1, beta_hat=2.0,
                         xi=c / z, ks_p=1.0, n_samples=50)
        est = assemble_estimate(fit, rho)
        results.append((est.l_hat, expect))
    ok = all(abs(got - expect) <= 1e-9 for got, expect in results)
    _report(2, ok, "; ".join(f"L_hat={got:.9f} (target {expect})" for got, expect in results))


def test_criterion_03_overestimation_calibration():
    h = lambda z: 2.0 * z
    sampler = lambda rng, k: rng.uniform(0.0, 1.0, size=(k, 10))
    over = within = 0
    for seed in range(100):
        cfg = SlopeSampleConfig(n_s=50, n_l=1000, seed=seed)
        est = estimate_lipschitz(h, sampler, cfg, 0.975)
        if est.l_hat >= 2.0:
            over += 1
        if est.l_hat <= 2.2:
            within += 1
    _report(3, over >= 90 and within >= 95,
            f"h(z)=2z on [0,1]^10: L_hat >= 2 in {over}/100 (need >= 90), "
            f"<= 2.2 in {within}/100 (need >= 95)")


def test_criterion_04_weibull_recovery():
    rng = np.random.default_rng(0)
    s = rw_sample(1.0, 0.5, 2.0, 10000, rng)
    fit = fit_reverse_weibull(s)
    gamma_ok = 0.97 <= fit.gamma_hat <= 1.03
    ks_pass = 0
    for seed in range(50):
        s = rw_sample(1.0, 0.5, 2.0, 10000, np.random.default_rng(seed))
        if fit_reverse_weibull(s).ks_p >= 0.05:
            ks_pass += 1
    _report(4, gamma_ok and ks_pass >= 45,
            f"gamma_hat={fit.gamma_hat:.4f} (target [0.97, 1.03]); "
            f"KS p >= 0.05 in {ks_pass}/50 repeats (need >= 45)")


def test_criterion_05_lemma1_soundness():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(200, 4))
    s_d = Dataset(pts[:, :2], pts[:, 2:], pts[:, :2])
    td = TrustedDomain(
        s_d=s_d, index=NnIndex(pts), index_x=NnIndex(pts[:, :2]),
        r=0.7, epsilon=0.3, e_t=0.1,
        l_fg=fake_estimate(0.28), l_g0=fake_estimate(1.0, "g0"),
        l_g1=fake_estimate(0.3, "g1"), a=3.0, rho=0.975, r_min=0.7,
        sd_indices=np.arange(len(pts)),
    )
    accepted = 0
    violations = 0
    while accepted < 1000:
        q = pts[rng.integers(0, len(pts))] + rng.normal(size=4) * 0.2
        d, j = td.index.query(q)
        if d > td.margin:
            continue
        assert in_d_epsilon(q, td)
        accepted += 1
        dirs = rng.normal(size=(1000, 4))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        probes = q[None, :] + td.epsilon * dirs
        dist_to_neighbor = np.linalg.norm(probes - pts[j][None, :], axis=1)
        violations += int(np.sum(dist_to_neighbor > td.r + 1e-12))
    _report(5, violations == 0,
            f"{accepted} accepted queries x 1000 eps-sphere probes: "
            f"{violations} probes beyond r of the certifying neighbor (need 0)")


def test_criterion_06_tracking_bound_sinusoid(sinusoid_run):
    s = sinusoid_run["summary"]
    eps = s["epsilon"]
    errs = [r["max_track_err_cl"] for r in s["runs"]]
    audits = [issue for r in s["runs"] for issue in r["audit_issues"]]
    solver_flags = [r for r in s["runs"] if r["cl_solve_failed_at"] is not None]
    clamped = [r for r in s["runs"] if r["cl_clamped_steps"]]
    ok = (len(errs) == s["n_pairs"] and max(errs) <= eps and not audits
          and not solver_flags and not clamped)
    _report(6, ok,
            f"{len(errs)} closed-loop runs: worst tracking error {max(errs):.4f} "
            f"<= eps_hat {eps:.4f}; audit issues {len(audits)}; "
            f"solver failures {len(solver_flags)}; clamped runs {len(clamped)}")


def test_criterion_07_goal_invariance(sinusoid_run):
    s = sinusoid_run["summary"]
    bound = s["epsilon"] + s["lambda"]
    worst = max(r["hold_max_dist_to_goal"] for r in s["runs"])
    failures = [r for r in s["runs"]
                if r["hold_max_dist_to_goal"] > bound or r["hold_solve_failed_at"] is not None]
    _report(7, not failures,
            f"100-step holds on {len(s['runs'])} plans: worst distance to goal "
            f"{worst:.4f} <= eps+lambda {bound:.4f}; violations {len(failures)}")


def test_criterion_08_baseline_contrast(sinusoid_run):
    s = sinusoid_run["summary"]
    trusted = [r["max_track_err_cl"] for r in s["runs"]]
    naive = [r["naive_max_track_err_cl"] for r in s["runs"]
             if "naive_max_track_err_cl" in r]
    ok = len(naive) >= max(1, len(trusted) // 2) and \
        float(np.median(naive)) > float(np.median(trusted))
    _report(8, ok,
            f"median closed-loop max tracking error: naive {np.median(naive):.4f} "
            f"vs trusted {np.median(trusted):.4f} over {len(naive)} shared queries")


def test_criterion_09_quadrotor_safety(quadrotor_run):
    s = quadrotor_run["summary"]
    n = s["n_pairs"]
    audits = [issue for r in s["runs"] for issue in r["audit_issues"]]
    plan_collisions = [i for i in audits if "collides" in i]
    exec_collisions = [r for r in s["runs"] if r["cl_collided_at"] is not None]
    ok = (n == 20 and not plan_collisions and not exec_collisions and not audits)
    _report(9, ok,
            f"{n} planned queries in the 3-box scene: nominal eps-ball collisions "
            f"{len(plan_collisions)}, executed closed-loop collisions "
            f"{len(exec_collisions)}, other audit issues "
            f"{len(audits) - len(plan_collisions)} (need all 0)")


def test_criterion_10_exact_nn_oracle():
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(10):
        n = int(rng.integers(40, 800))
        dim = int(rng.integers(2, 7))
        pts = rng.normal(size=(n, dim))
        idx = NnIndex(pts)
        queries = rng.normal(size=(1000, dim))
        d, i = idx.query(queries)
        brute = np.linalg.norm(queries[:, None, :] - pts[None, :, :], axis=2)
        bd = brute.min(axis=1)
        mismatches += int(np.sum(np.abs(d - bd) > 0))
    _report(10, mismatches == 0,
            f"10 datasets x 1000 queries: {mismatches} tree/brute-force distance "
            f"mismatches (need 0)")


def test_criterion_11_linear_algebra_oracles():
    rng = np.random.default_rng(13)
    sv_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        mcols = int(rng.integers(n, 9))
        mat = rng.normal(size=(n, mcols))
        got = smallest_singular_value(mat)
        expect = np.sqrt(max(np.linalg.eigvalsh(mat @ mat.T).min(), 0.0))
        if abs(got - expect) > 1e-9 * (1.0 + expect):
            sv_bad += 1
    solve_bad = 0
    for _ in range(1000):
        q1, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        q2, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        a = q1 @ np.diag(rng.uniform(0.2, 5.0, 2)) @ q2
        model = constant_g1_model(a)
        x = rng.normal(size=2)
        target = rng.normal(size=2)
        got = solve_one_step(model, x, target)
        expect = gauss_solve(a, target - x)
        if np.max(np.abs(got - expect)) > 1e-9:
            solve_bad += 1
    _report(11, sv_bad == 0 and solve_bad == 0,
            f"1000 random matrices each: sigma_min mismatches {sv_bad}, "
            f"one-step solve mismatches {solve_bad} at 1e-9 (need 0)")
