import numpy as np
import pytest

from trustplan.dynamics import SINUSOID_SPEC
from trustplan.domain import (
    BallUnionSampler,
    DomainError,
    DomainFailure,
    NnIndex,
    TrustedDomain,
    compute_epsilon,
    dispersion_brute,
    error_stats,
    filter_sd,
    in_d_epsilon,
    load_domain,
    save_domain,
    select_r_and_domain,
    state_in_domain,
)
from trustplan.lipschitz import LipschitzEstimate, WeibullFit
from trustplan.model import Dataset

from test_model import constant_g1_model


def fake_estimate(l_hat, target="fg", rho=0.975, ks_p=1.0):
    fit = WeibullFit(gamma_hat=l_hat, alpha_hat=1e-3, beta_hat=1.5, xi=0.0,
                     ks_p=ks_p, n_samples=50)
    return LipschitzEstimate(l_hat=l_hat, c=0.0, rho=rho, fit=fit, target=target)


def stub_estimator(l_fg, ks_p=1.0):
    def estimator(target, points, r, cfg, rho, seed):
        if target == "fg":
            return fake_estimate(l_fg, "fg", rho, ks_p)
        return fake_estimate(0.5, target, rho)
    return estimator


def random_dataset(rng, n=100):
    x = rng.uniform(-1, 1, (n, 2))
    u = rng.uniform(-1, 1, (n, 2))
    return Dataset(x, u, x + 0.2 * u)


def make_domain(points_xu, r, eps, rho=0.975, a=3.0):
    """Small synthetic TrustedDomain for geometric tests."""
    d = points_xu.shape[1]
    half = d // 2
    s_d = Dataset(points_xu[:, :half], points_xu[:, half:], points_xu[:, :half])
    l_fg = fake_estimate((eps * 0.5) / r if r else 0.0)
    return TrustedDomain(
        s_d=s_d,
        index=NnIndex(points_xu),
        index_x=NnIndex(points_xu[:, :half]),
        r=r,
        epsilon=eps,
        e_t=eps * 0.5,
        l_fg=l_fg,
        l_g0=fake_estimate(1.0, "g0"),
        l_g1=fake_estimate(0.3, "g1"),
        a=a,
        rho=rho,
        r_min=r,
        sd_indices=np.arange(len(points_xu)),
    )


class TestErrorStats:
    def test_perfect_model_gives_zeros(self):
        m = constant_g1_model(0.2 * np.eye(2))
        rng = np.random.default_rng(0)
        S = random_dataset(rng)
        mu, sigma, errors = error_stats(S, m)
        assert mu == pytest.approx(0.0, abs=1e-12)
        assert sigma == pytest.approx(0.0, abs=1e-12)
        assert np.all(errors <= 1e-12)

    def test_constant_errors(self):
        # model off by a constant vector: every error equals its norm
        m = constant_g1_model(0.2 * np.eye(2))
        m.g1.b2 = np.array([0.2, 0.0, 0.0, 0.2])
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (50, 2))
        u = np.tile([1.0, 0.0], (50, 1))
        y = x + 0.2 * u + np.array([0.5, 0.0])
        mu, sigma, errors = error_stats(Dataset(x, u, y), m)
        assert mu == pytest.approx(0.5, abs=1e-12)
        assert sigma == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_recomputation(self):
        from trustplan.model import eval_model
        rng = np.random.default_rng(2)
        m = constant_g1_model(0.1 * np.eye(2))
        m.g1.b2 = rng.normal(size=4) * 0.1
        S = random_dataset(rng)
        mu, sigma, errors = error_stats(S, m)
        direct = np.array([
            np.sqrt(np.sum((eval_model(m, S.x[i], S.u[i]) - S.y[i]) ** 2))
            for i in range(len(S))
        ])
        assert errors == pytest.approx(direct, abs=1e-12)
        assert mu == pytest.approx(direct.mean(), abs=1e-12)
        assert sigma == pytest.approx(direct.std(), abs=1e-12)


class TestFilterSd:
    def test_zero_sigma_keeps_all(self):
        rng = np.random.default_rng(3)
        S = random_dataset(rng, 20)
        errors = np.full(20, 0.7)
        s_d, idx = filter_sd(S, errors, 0.7, 0.0, 3.0)
        assert len(s_d) == 20
        assert np.array_equal(idx, np.arange(20))

    def test_drops_outlier(self):
        rng = np.random.default_rng(4)
        S = random_dataset(rng, 3)
        errors = np.array([0.1, 0.2, 10.0])
        mu, sigma = errors.mean(), errors.std()
        s_d, idx = filter_sd(S, errors, mu, sigma, 1.0)
        assert idx.tolist() == [0, 1]

    def test_order_preserving(self):
        rng = np.random.default_rng(5)
        S = random_dataset(rng, 10)
        errors = np.array([0.1, 5.0, 0.2, 5.0, 0.3, 0.1, 5.0, 0.2, 0.1, 0.4])
        _, idx = filter_sd(S, errors, 0.5, 0.1, 1.0)
        assert np.all(np.diff(idx) > 0)

    def test_all_filtered_is_error(self):
        rng = np.random.default_rng(6)
        S = random_dataset(rng, 5)
        with pytest.raises(DomainError):
            filter_sd(S, np.full(5, 2.0), 1.0, 0.1, 0.0)


class TestComputeEpsilon:
    def test_paper_figure_values(self):
        assert compute_epsilon(0.1919, 0.3633, 0.1161) == pytest.approx(0.1859, abs=5e-4)

    def test_zero_lipschitz(self):
        assert compute_epsilon(0.0, 5.0, 0.25) == 0.25

    def test_unit_case(self):
        assert compute_epsilon(1.0, 1.0, 0.0) == 1.0

    def test_negative_inputs_rejected(self):
        with pytest.raises(DomainError):
            compute_epsilon(-0.1, 1.0, 0.0)


class TestNnIndex:
    def test_matches_brute_force_both_regimes(self):
        rng = np.random.default_rng(7)
        for n in (10, 63, 64, 65, 500):       # spans brute-force and tree paths
            pts = rng.normal(size=(n, 3))
            idx = NnIndex(pts)
            queries = rng.normal(size=(200, 3))
            d, i = idx.query(queries)
            brute = np.linalg.norm(queries[:, None, :] - pts[None, :, :], axis=2)
            bi = brute.argmin(axis=1)
            assert np.array_equal(i, bi) or np.allclose(d, brute[np.arange(200), bi])
            assert d == pytest.approx(brute.min(axis=1), abs=1e-12)

    def test_count_within(self):
        pts = np.array([[0.0], [1.0], [2.0]])
        idx = NnIndex(pts)
        assert idx.count_within(np.array([[0.5]]), 0.6)[0] == 2
        assert idx.count_within(np.array([[0.5]]), 0.5)[0] == 2  # inclusive
        assert idx.count_within(np.array([[-1.0]]), 0.5)[0] == 0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            NnIndex(np.empty((0, 2)))


class TestBallUnionSampler:
    def test_samples_lie_in_union(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(20, 3))
        sampler = BallUnionSampler(pts, 0.5)
        out = sampler(np.random.default_rng(9), 500)
        idx = NnIndex(pts)
        d, _ = idx.query(out)
        assert np.all(d <= 0.5 + 1e-12)

    def test_overlap_correction_is_roughly_uniform(self):
        # two overlapping 1-D balls: the overlap region must not be double weighted
        pts = np.array([[0.0], [0.5]])
        sampler = BallUnionSampler(pts, 0.5)
        out = sampler(np.random.default_rng(10), 20000).ravel()
        # union is [-0.5, 1.0]; overlap [0, 0.5]
        frac_overlap = np.mean((out >= 0.0) & (out <= 0.5))
        assert frac_overlap == pytest.approx(1.0 / 3.0, abs=0.02)


class TestInDEpsilon:
    def test_training_point_is_inside(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(30, 4))
        td = make_domain(pts, r=0.5, eps=0.2)
        q = pts[7]
        assert in_d_epsilon(q, td)

    def test_boundary_is_closed(self):
        pts = np.zeros((1, 4))
        td = make_domain(pts, r=0.5, eps=0.2)
        q = np.zeros(4)
        q[0] = td.margin        # distance exactly r - eps
        assert in_d_epsilon(q, td)
        q[0] = td.margin + 1e-9
        assert not in_d_epsilon(q, td)

    def test_tuple_query(self):
        pts = np.zeros((1, 4))
        td = make_domain(pts, r=0.5, eps=0.1)
        assert in_d_epsilon((np.zeros(2), np.zeros(2)), td)

    def test_epsilon_ball_probes_stay_within_r(self):
        # Lemma 1 geometry: every point of the eps-sphere around an accepted
        # query is within r of the certifying neighbor
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(50, 4))
        td = make_domain(pts, r=0.6, eps=0.25)
        accepted = 0
        for _ in range(200):
            base = pts[rng.integers(0, 50)]
            q = base + rng.normal(size=4) * 0.1
            d, j = td.index.query(q)
            if d > td.margin:
                continue
            accepted += 1
            dirs = rng.normal(size=(100, 4))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            probes = q[None, :] + td.epsilon * dirs
            dists = np.linalg.norm(probes - pts[j][None, :], axis=1)
            assert np.all(dists <= td.r + 1e-12)
        assert accepted > 50

    def test_monotone_in_r(self):
        # growing r (same eps) never flips true -> false
        rng = np.random.default_rng(13)
        pts = rng.normal(size=(30, 4))
        td_small = make_domain(pts, r=0.5, eps=0.2)
        td_big = make_domain(pts, r=0.8, eps=0.2)
        for _ in range(100):
            q = rng.normal(size=4)
            if in_d_epsilon(q, td_small):
                assert in_d_epsilon(q, td_big)

    def test_state_projection_check(self):
        pts = np.zeros((1, 4))
        td = make_domain(pts, r=0.5, eps=0.2)
        assert state_in_domain(np.array([0.29, 0.0]), td)
        assert not state_in_domain(np.array([0.31, 0.0]), td)


class TestDispersion:
    def test_single_ball_dispersion_approaches_r(self):
        pts = np.zeros((1, 2))
        sampler = BallUnionSampler(pts, 1.0)
        b = dispersion_brute(pts, sampler, 20000, np.random.default_rng(14))
        assert 0.95 <= b <= 1.0

    def test_grid_covering_bound(self):
        # grid of spacing d covering a box: dispersion <= d * sqrt(dim) / 2 inside
        xs = np.linspace(0, 1, 11)
        grid = np.array([[a, b] for a in xs for b in xs])
        sampler = lambda rng, k: rng.uniform(0, 1, size=(k, 2))
        b = dispersion_brute(grid, sampler, 5000, np.random.default_rng(15))
        assert b <= 0.1 * np.sqrt(2) / 2 + 1e-9

    def test_never_exceeds_r(self):
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(40, 3))
        sampler = BallUnionSampler(pts, 0.7)
        b = dispersion_brute(pts, sampler, 5000, np.random.default_rng(17))
        assert b <= 0.7 + 1e-12


def _select(l_fg, e_t=0.1, mu=0.04, sigma=0.01, ks_p=1.0, alpha=None, max_iters=50):
    rng = np.random.default_rng(18)
    s_d = random_dataset(rng, 40)
    m = constant_g1_model(0.2 * np.eye(2))
    from trustplan.lipschitz import SlopeSampleConfig

    cfg = SlopeSampleConfig(n_s=20, n_l=10, seed=0)
    return select_r_and_domain(
        s_d, np.arange(40), e_t, m, None, mu, sigma, 3.0, cfg, 0.975,
        alpha_step=alpha, estimator=stub_estimator(l_fg, ks_p), max_iters=max_iters,
    )


class TestSelectRAndDomain:
    def test_perfect_model_terminates_first_iteration(self):
        td = _select(l_fg=0.01, e_t=0.0, mu=0.04, sigma=0.01)
        assert td.r == pytest.approx(0.04 + 3 * 0.01)
        assert td.epsilon == pytest.approx(0.01 * td.r)
        assert td.r > td.epsilon
        assert td.r_min == td.r

    def test_lipschitz_at_least_one_fails(self):
        with pytest.raises(DomainFailure) as exc:
            _select(l_fg=1.2)
        assert exc.value.reason == "lipschitz_ge_one"

    def test_ks_rejection_fails(self):
        with pytest.raises(DomainFailure) as exc:
            _select(l_fg=0.5, ks_p=0.01)
        assert exc.value.reason == "ks_rejected"

    def test_loop_converges_to_fixed_point(self):
        # stub L=0.5, e_T=0.1, initial r=0.05: fixed point r* = e_T/(1-L) = 0.2
        alpha = 1e-4
        td = _select(l_fg=0.5, e_t=0.1, mu=0.04, sigma=0.01 / 3.0, alpha=alpha)
        assert td.r == pytest.approx(0.2, abs=0.01)
        assert td.r > td.epsilon
        assert td.epsilon == pytest.approx(0.5 * td.r + 0.1, rel=1e-12)

    def test_max_iters_cap(self):
        # L = 1 - tiny with alpha so small the loop cannot terminate in time
        with pytest.raises(DomainFailure) as exc:
            _select(l_fg=0.999, e_t=0.1, alpha=1e-12, max_iters=5)
        assert exc.value.reason == "max_iters"

    def test_empty_sd_rejected(self):
        from trustplan.lipschitz import SlopeSampleConfig
        empty = Dataset(np.empty((0, 2)), np.empty((0, 2)), np.empty((0, 2)))
        m = constant_g1_model(0.2 * np.eye(2))
        with pytest.raises(DomainError):
            select_r_and_domain(empty, np.array([]), 0.0, m, None, 0.1, 0.01, 3.0,
                                SlopeSampleConfig(n_s=20, n_l=10, seed=0), 0.975,
                                estimator=stub_estimator(0.5))


class TestDomainInvariantsAndIO:
    def test_domain_invariants_enforced(self):
        rng = np.random.default_rng(19)
        pts = rng.normal(size=(10, 4))
        with pytest.raises(DomainError):
            make_domain(pts, r=0.2, eps=0.3)       # r <= eps

    def test_rho_cubed(self):
        rng = np.random.default_rng(20)
        td = make_domain(rng.normal(size=(10, 4)), r=0.5, eps=0.1)
        assert td.rho_cubed == pytest.approx(0.975 ** 3)
        assert td.rho_cubed == pytest.approx(0.9269, abs=2e-4)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        train = random_dataset(rng, 60)
        idx = np.arange(0, 60, 2)
        s_d = train.subset(idx)
        td = TrustedDomain(
            s_d=s_d, index=NnIndex(s_d.xu), index_x=NnIndex(s_d.x),
            r=0.4, epsilon=0.15, e_t=0.05,
            l_fg=fake_estimate(0.25), l_g0=fake_estimate(1.1, "g0"),
            l_g1=fake_estimate(0.4, "g1"), a=3.0, rho=0.975, r_min=0.3,
            sd_indices=idx, seed=5,
        )
        path = tmp_path / "domain.json"
        save_domain(td, path)
        back = load_domain(path, train)
        assert back.r == td.r
        assert back.epsilon == td.epsilon
        assert back.l_fg.l_hat == td.l_fg.l_hat
        assert np.array_equal(back.sd_indices, idx)
        assert np.array_equal(back.index.points, td.index.points)
        q = s_d.xu[3]
        assert in_d_epsilon(q, back) == in_d_epsilon(q, td)
