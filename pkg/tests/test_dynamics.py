import math

import numpy as np
import pytest

from trustplan.dynamics import (
    DynamicsError,
    QUADROTOR_SPEC,
    SINUSOID_SPEC,
    SystemSpec,
    get_system,
    quadrotor_control_matrix,
    step_quadrotor,
    step_sinusoid,
)


def sinusoid_oracle(x, y, ux, uy):
    """Scalar-arithmetic transcription of the 2D closed form (independent path)."""
    ax = 0.3 * (x + 4.5)
    ay = 0.3 * (y + 4.5)
    d1 = 3.0 * math.sin(ax) * abs(math.sin(ay))
    d2 = 3.0 * math.sin(ay) * abs(math.sin(ax))
    return (
        x + 0.2 * (d1 + (1.0 + 0.05 * math.cos(y)) * ux),
        y + 0.2 * (d2 + (1.0 + 0.05 * math.sin(x)) * uy),
    )


class TestSinusoid:
    def test_fixed_point_at_corner(self):
        out = step_sinusoid(np.array([-4.5, -4.5]), np.zeros(2))
        assert np.array_equal(out, np.array([-4.5, -4.5]))

    def test_unit_control_from_corner(self):
        out = step_sinusoid(np.array([-4.5, -4.5]), np.array([1.0, 0.0]))
        # frozen from the scalar oracle
        assert out[0] == pytest.approx(-4.302107957994307, abs=1e-15)
        assert out[1] == -4.5

    def test_origin_drift(self):
        out = step_sinusoid(np.zeros(2), np.zeros(2))
        assert out == pytest.approx((0.5712216426051183, 0.5712216426051183), abs=1e-14)

    def test_matches_oracle_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x = rng.uniform(-5, 5, 2)
            u = rng.uniform(-1, 1, 2)
            expect = sinusoid_oracle(x[0], x[1], u[0], u[1])
            assert step_sinusoid(x, u) == pytest.approx(expect, abs=1e-13)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        xs = rng.uniform(-5, 5, (50, 2))
        us = rng.uniform(-1, 1, (50, 2))
        batch = step_sinusoid(xs, us)
        for i in range(50):
            assert np.array_equal(batch[i], step_sinusoid(xs[i], us[i]))

    def test_determinism(self):
        x = np.array([1.3, -2.7])
        u = np.array([0.4, -0.9])
        assert np.array_equal(step_sinusoid(x, u), step_sinusoid(x, u))

    def test_control_gain_bounds(self):
        # f1 diagonal entries stay within dt * [0.95, 1.05]
        rng = np.random.default_rng(9)
        for _ in range(200):
            x = rng.uniform(-5, 5, 2)
            base = step_sinusoid(x, np.zeros(2))
            for j in range(2):
                e = np.zeros(2)
                e[j] = 1.0
                gain = (step_sinusoid(x, e) - base)[j]
                assert 0.2 * 0.95 - 1e-12 <= gain <= 0.2 * 1.05 + 1e-12
                other = (step_sinusoid(x, e) - base)[1 - j]
                assert other == pytest.approx(0.0, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DynamicsError):
            step_sinusoid(np.zeros(3), np.zeros(2))
        with pytest.raises(DynamicsError):
            step_sinusoid(np.zeros(2), np.zeros(1))

    def test_nonfinite_rejected(self):
        with pytest.raises(DynamicsError):
            step_sinusoid(np.array([np.nan, 0.0]), np.zeros(2))


class TestQuadrotor:
    def test_zero_is_fixed_point(self):
        assert np.array_equal(step_quadrotor(np.zeros(6), np.zeros(6)), np.zeros(6))

    def test_identity_gain_at_zero_attitude(self):
        # f1(0) = dt * I
        for j in range(6):
            u = np.zeros(6)
            u[j] = 1.0
            expect = np.zeros(6)
            expect[j] = 0.1
            assert step_quadrotor(np.zeros(6), u) == pytest.approx(expect, abs=1e-15)

    def test_zero_attitude_arbitrary_control(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            u = rng.uniform(-1, 1, 6)
            assert step_quadrotor(np.zeros(6), u) == pytest.approx(0.1 * u, abs=1e-15)

    def test_rolled_attitude_second_column(self):
        x = np.array([0.0, 0.0, 0.0, np.pi / 20, 0.0, 0.0])
        u = np.zeros(6)
        u[1] = 1.0
        # x plus the second matrix column, frozen from an independent trig evaluation
        expect = x + np.array([0.0, 0.09876883405951378, 0.01564344650402309, 0.0, 0.0, 0.0])
        assert step_quadrotor(x, u) == pytest.approx(expect, abs=1e-15)

    def test_matrix_matches_trig_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = np.zeros(6)
            x[:3] = rng.uniform(-1, 1, 3)
            x[3:] = rng.uniform(-np.pi / 20, np.pi / 20, 3)
            phi, th, psi = x[3], x[4], x[5]
            c, s, t = math.cos, math.sin, math.tan
            rot = [
                [c(th) * c(psi), -c(phi) * s(psi) + c(psi) * s(phi) * s(th),
                 s(psi) * s(phi) + c(phi) * c(psi) * s(th)],
                [c(th) * s(psi), c(phi) * c(psi) + s(phi) * s(psi) * s(th),
                 -c(psi) * s(phi) + c(phi) * s(psi) * s(th)],
                [-s(th), c(th) * s(phi), c(phi) * c(th)],
            ]
            euler = [
                [1.0, s(phi) * t(th), c(phi) * t(th)],
                [0.0, c(phi), -s(phi)],
                [0.0, s(phi) / c(th), c(phi) / c(th)],
            ]
            expect = np.zeros((6, 6))
            expect[:3, :3] = rot
            expect[3:, 3:] = euler
            got = quadrotor_control_matrix(x)
            assert got == pytest.approx(0.1 * expect, abs=1e-14)

    def test_position_does_not_affect_dynamics(self):
        rng = np.random.default_rng(5)
        ang = rng.uniform(-np.pi / 20, np.pi / 20, 3)
        u = rng.uniform(-1, 1, 6)
        x1 = np.concatenate([[0.1, 0.2, 0.3], ang])
        x2 = np.concatenate([[-0.7, 0.9, 0.0], ang])
        d1 = step_quadrotor(x1, u) - x1
        d2 = step_quadrotor(x2, u) - x2
        assert d1 == pytest.approx(d2, abs=1e-15)

    def test_singular_attitude_rejected(self):
        x = np.zeros(6)
        x[4] = np.pi / 2
        with pytest.raises(DynamicsError):
            step_quadrotor(x, np.zeros(6))


class TestSystemSpec:
    def test_registry(self):
        spec, step = get_system("sinusoid2d")
        assert spec is SINUSOID_SPEC and step is step_sinusoid
        spec, step = get_system("quadrotor6d")
        assert spec is QUADROTOR_SPEC and step is step_quadrotor
        with pytest.raises(DynamicsError):
            get_system("unicycle")

    def test_underactuated_rejected(self):
        with pytest.raises(DynamicsError):
            SystemSpec(
                name="bad", dim_x=3, dim_u=2,
                state_box=np.zeros((3, 2)), control_box=np.zeros((2, 2)), dt=0.1,
            )

    def test_empty_box_rejected(self):
        with pytest.raises(DynamicsError):
            SystemSpec(
                name="bad", dim_x=1, dim_u=1,
                state_box=np.array([[1.0, -1.0]]), control_box=np.array([[-1.0, 1.0]]),
                dt=0.1,
            )
