import math

import numpy as np
import pytest

from src import numerics
from src.frames import rotation_generator, rotation_matrix
from src.utils.errors import ConfigError, DimensionError

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def test_expm_of_rotation_generator_is_rotation():
    omega, Ts = 2 * math.pi * 50, 1e-4
    Ad = numerics.expm(rotation_generator(omega), Ts)
    np.testing.assert_allclose(Ad, rotation_matrix(omega * Ts), atol=1e-12)
    np.testing.assert_allclose(Ad.T @ Ad, np.eye(2), atol=1e-12)


def test_expm_at_zero_time_is_identity():
    np.testing.assert_array_equal(numerics.expm([[1.0, 2.0], [3.0, 4.0]], 0.0), np.eye(2))


def test_zoh_first_order_lag():
    a, Ts = 3.0, 0.1
    Ad, Bd = numerics.zoh_discretize([[-a]], [[1.0]], Ts)
    assert Ad[0, 0] == pytest.approx(math.exp(-a * Ts), abs=1e-12)
    assert Bd[0, 0] == pytest.approx((1.0 - math.exp(-a * Ts)) / a, abs=1e-12)


def test_zoh_pure_integrator():
    Ad, Bd = numerics.zoh_discretize([[0.0]], [[1.0]], 0.25)
    assert Ad[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert Bd[0, 0] == pytest.approx(0.25, abs=1e-12)


def test_zoh_rejects_mismatched_input():
    with pytest.raises(DimensionError):
        numerics.zoh_discretize(np.eye(2), np.ones((3, 1)), 0.1)


@pytest.mark.parametrize("method", ["schur", "iteration", "auto"])
def test_scalar_dare_golden_ratio(method):
    S = numerics.solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]], method=method)
    assert S[0, 0] == pytest.approx(GOLDEN, abs=1e-9)
    K = numerics.lqr_gain([[1.0]], [[1.0]], [[1.0]], [[1.0]], S=S)
    assert K[0, 0] == pytest.approx(GOLDEN - 1.0, abs=1e-9)


def test_dare_residual_certificate():
    rng = np.random.default_rng(3)
    Ad = rng.normal(size=(4, 4)) * 0.5
    Bd = rng.normal(size=(4, 2))
    Q = np.eye(4)
    R = 0.1 * np.eye(2)
    S = numerics.solve_dare(Ad, Bd, Q, R)
    assert numerics.dare_residual(Ad, Bd, Q, R, S) <= 1e-8 * np.linalg.norm(Q)
    np.testing.assert_allclose(S, S.T, atol=1e-10)


def test_dare_zero_state_weight_gives_zero_solution():
    S = numerics.solve_dare(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    np.testing.assert_array_equal(S, np.zeros((2, 2)))


def test_dare_rejects_indefinite_input_weight():
    with pytest.raises(ConfigError) as err:
        numerics.solve_dare([[1.0]], [[1.0]], [[1.0]], [[0.0]])
    assert err.value.field == "R"


def test_dare_rejects_asymmetric_state_weight():
    with pytest.raises(ConfigError):
        numerics.solve_dare(np.eye(2), np.eye(2), [[1.0, 1.0], [0.0, 1.0]], np.eye(2))


def test_unknown_dare_method():
    with pytest.raises(ConfigError):
        numerics.solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]], method="bogus")


def test_expensive_control_shrinks_gain():
    Ad, Bd = numerics.zoh_discretize([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.01)
    small = numerics.lqr_gain(Ad, Bd, np.eye(2), [[1e6]])
    large = numerics.lqr_gain(Ad, Bd, np.eye(2), [[1e-2]])
    assert np.linalg.norm(small) < np.linalg.norm(large)


def test_kalman_steady_gain_matches_recursion():
    Ad = rotation_matrix(2 * math.pi * 50 * 1e-4)
    Qp, Rm = 1e-5 * np.eye(2), np.eye(2)
    K_dare, _ = numerics.kalman_steady_gain(Ad, np.eye(2), Qp, Rm)
    K_rec, _ = numerics.kalman_recursive_gain(Ad, np.eye(2), Qp, Rm)
    np.testing.assert_allclose(K_dare, K_rec, atol=1e-9)


def test_eigvals_closed_form_two_by_two():
    spectrum = numerics.eigvals([[0.0, 1.0], [-2.0, -3.0]])
    assert sorted(v.real for v in spectrum) == pytest.approx([-2.0, -1.0])
    assert spectrum.is_hurwitz()


def test_eigvals_complex_pair():
    spectrum = numerics.eigvals(rotation_matrix(0.3))
    assert spectrum.spectral_radius == pytest.approx(1.0, abs=1e-12)
    assert not spectrum.is_schur_stable()


def test_eigvals_larger_matrix():
    spectrum = numerics.eigvals(np.diag([0.5, -0.25, 0.9]))
    assert sorted(v.real for v in spectrum) == pytest.approx([-0.25, 0.5, 0.9])
    assert spectrum.is_schur_stable()
    assert numerics.spectral_radius(np.diag([0.5, -0.25, 0.9])) == pytest.approx(0.9)


def test_expm_semigroup():
    A = np.array([[-0.4, 2.0, 0.0], [-2.0, -0.1, 0.5], [0.3, 0.0, -1.2]])
    np.testing.assert_allclose(
        numerics.expm(A, 0.3) @ numerics.expm(A, 0.45), numerics.expm(A, 0.75), atol=1e-12
    )


def test_expm_determinant_is_exponential_of_trace():
    A = np.array([[-0.4, 2.0, 0.0], [-2.0, -0.1, 0.5], [0.3, 0.0, -1.2]])
    t = 0.6
    assert np.linalg.det(numerics.expm(A, t)) == pytest.approx(math.exp(np.trace(A) * t), rel=1e-12)


@pytest.mark.parametrize("angle", [1e-3, 0.0314159, 0.3, 2.5])
def test_pure_rotation_is_marginal_not_stable(angle):
    spectrum = numerics.eigvals(rotation_matrix(angle))
    assert not spectrum.is_schur_stable()
    assert spectrum.spectral_radius == pytest.approx(1.0, abs=1e-15)


def test_contracted_rotation_is_stable():
    spectrum = numerics.eigvals(0.999 * rotation_matrix(0.0314159))
    assert spectrum.is_schur_stable()
    assert spectrum.spectral_radius == pytest.approx(0.999, abs=1e-12)


def test_expensive_control_certifies_at_rounding_floor():
    Ad, Bd = numerics.zoh_discretize([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.01)
    Q, R = np.eye(2), np.array([[1e6]])
    S = numerics.solve_dare(Ad, Bd, Q, R)
    residual = numerics.dare_residual(Ad, Bd, Q, R, S)
    floor = 1e3 * np.finfo(float).eps * np.linalg.norm(S) * np.linalg.norm(Ad) ** 2
    assert residual <= max(1e-8 * np.linalg.norm(Q), floor)
    K = numerics.lqr_gain(Ad, Bd, Q, R, S=S)
    assert numerics.eigvals(Ad - Bd @ K).is_schur_stable()


def test_newton_refinement_never_worsens_residual():
    Ad, Bd = numerics.zoh_discretize([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.01)
    Q, R = np.eye(2), np.array([[1e6]])
    rough = numerics.solve_dare(Ad, Bd, Q, R) * (1.0 + 1e-6)
    refined = numerics._newton_refine(Ad, Bd, Q, R, rough)
    assert numerics.dare_residual(Ad, Bd, Q, R, refined) <= numerics.dare_residual(Ad, Bd, Q, R, rough)
