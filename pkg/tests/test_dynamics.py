import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from core.dynamics import (
    BoxSet,
    ControlAffineSystem,
    available_systems,
    eval_rhs,
    eval_state_jacobian,
    finite_difference_jacobian,
    linear_growth_constant,
    make_system,
    project_box,
    register_system,
)


def test_vanderpol_rhs_example(vanderpol):
    assert_allclose(eval_rhs(vanderpol, np.array([1.0, 2.0]), np.array([0.5])), [2.0, -0.5], atol=1e-15)


def test_pendulum_rhs_example(pendulum):
    out = eval_rhs(pendulum, np.array([math.pi / 2, 1.0]), np.array([0.0]))
    assert_allclose(out, [1.0, -9.81 - 0.1], rtol=1e-12)


def test_vanderpol_jacobian_at_origin(vanderpol):
    J = eval_state_jacobian(vanderpol, np.zeros(2), np.zeros(1))
    assert_array_equal(J, [[0.0, 1.0], [-1.0, 1.0]])


@pytest.mark.parametrize("name", available_systems())
def test_rhs_is_affine_in_control(name, rng):
    system = make_system(name)
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, size=system.d)
        u1, u2 = rng.uniform(-1.0, 1.0, size=(2, system.m))
        a = rng.uniform(-2.0, 3.0)
        mixed = eval_rhs(system, x, a * u1 + (1.0 - a) * u2)
        assert_allclose(mixed, a * eval_rhs(system, x, u1) + (1.0 - a) * eval_rhs(system, x, u2),
                        rtol=1e-12, atol=1e-12)
        assert_allclose(eval_rhs(system, x, u1) - eval_rhs(system, x, np.zeros(system.m)),
                        system.control_matrix(x) @ u1, rtol=1e-12, atol=1e-12)


def test_pendulum_jacobian_at_origin(pendulum):
    J = eval_state_jacobian(pendulum, np.zeros(2), np.zeros(1))
    assert_allclose(J, [[0.0, 1.0], [-9.81, -0.1]], rtol=1e-15, atol=0)


@pytest.mark.parametrize("name", [n for n in available_systems() if make_system(n).constant_control_fields])
def test_jacobian_ignores_control_for_constant_fields(name, rng):
    system = make_system(name)
    x = rng.uniform(-2.0, 2.0, size=system.d)
    assert_array_equal(eval_state_jacobian(system, x, np.zeros(system.m)),
                       eval_state_jacobian(system, x, np.full(system.m, 0.7)))


def test_rhs_is_vectorized(vanderpol, rng):
    x = rng.uniform(-2, 2, size=(7, 2))
    u = rng.uniform(-1, 1, size=(7, 1))
    batched = eval_rhs(vanderpol, x, u)
    single = np.array([eval_rhs(vanderpol, x[i], u[i]) for i in range(7)])
    assert_allclose(batched, single, rtol=0, atol=0)


@pytest.mark.parametrize("name", available_systems())
def test_state_jacobian_matches_finite_differences(name, rng):
    system = make_system(name)
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, size=system.d)
        u = rng.uniform(-1.0, 1.0, size=system.m)
        J = eval_state_jacobian(system, x, u)
        fd = finite_difference_jacobian(system, x, u)
        scale = max(1.0, float(np.max(np.abs(J))))
        assert np.max(np.abs(J - fd)) / scale <= 1e-5


def test_control_dependent_fields_enter_jacobian():
    unicycle = make_system("unicycle")
    x = np.array([0.0, 0.0, 0.3])
    J = eval_state_jacobian(unicycle, x, np.array([2.0, 0.0]))
    assert_allclose(J[0, 2], -2.0 * math.sin(0.3))
    assert_allclose(J[1, 2], 2.0 * math.cos(0.3))


@pytest.mark.parametrize("x, u", [
    (np.zeros(3), np.zeros(1)),
    (np.zeros(2), np.zeros(2)),
])
def test_dimension_mismatch_rejected(vanderpol, x, u):
    with pytest.raises(ValueError, match="维度不匹配"):
        eval_rhs(vanderpol, x, u)


def test_project_box_example():
    box = BoxSet.cube(2)
    assert_array_equal(project_box(np.array([2.0, -3.0]), box), [1.0, -1.0])


def test_project_box_wrong_dimension():
    with pytest.raises(ValueError):
        project_box(np.zeros(3), BoxSet.cube(2))


def test_box_bounds_validated():
    with pytest.raises(ValueError, match="lower <= upper"):
        BoxSet([1.0], [0.0])
    with pytest.raises(ValueError):
        BoxSet([0.0, 0.0], [1.0])
    with pytest.raises(ValueError):
        BoxSet([0.0], [math.inf])


def test_degenerate_box_samples_its_point(rng):
    box = BoxSet([0.5, -0.25], [0.5, -0.25])
    assert_array_equal(box.sample(rng, 4), np.tile([0.5, -0.25], (4, 1)))
    assert box.volume == 0.0


_BOX = BoxSet([-1.0, -2.0], [1.0, 0.5])
_points = arrays(np.float64, (6, 2), elements=st.floats(-1e6, 1e6))


@given(_points)
def test_projection_is_idempotent_and_feasible(points):
    once = project_box(points, _BOX)
    assert_array_equal(project_box(once, _BOX), once)
    assert np.all(_BOX.contains(once))


@given(_points, _points)
@settings(max_examples=50)
def test_projection_is_nonexpansive(p, q):
    dp = np.linalg.norm(project_box(p, _BOX) - project_box(q, _BOX), axis=1)
    assert np.all(dp <= np.linalg.norm(p - q, axis=1) * (1 + 1e-12) + 1e-12)


def test_unknown_system_and_parameters():
    with pytest.raises(ValueError, match="未知系统"):
        make_system("lorenz")
    with pytest.raises(ValueError, match="不支持参数"):
        make_system("vanderpol", {"omega": 2.0})
    with pytest.raises(ValueError):
        make_system("pendulum", {"l": 0.0})


def test_parameters_override_defaults():
    system = make_system("vanderpol", {"mu": 2.5})
    assert system.params["mu"] == 2.5
    assert make_system("pendulum").params["g"] == 9.81


def test_systems_are_immutable(vanderpol):
    with pytest.raises(AttributeError):
        vanderpol.name = "other"
    with pytest.raises(TypeError):
        vanderpol.params["mu"] = 3.0


def test_duplicate_registration_rejected():
    with pytest.raises(ValueError, match="重复"):
        @register_system
        class AnotherVanDerPol(ControlAffineSystem):
            name = "vanderpol"


def test_linear_growth_constant_integrator(unit_interval):
    C = linear_growth_constant(make_system("integrator_1d"), unit_interval)
    assert 0.5 <= C <= 1.0


def test_linear_growth_constant_requires_matching_box(vanderpol, unit_interval):
    with pytest.raises(ValueError):
        linear_growth_constant(vanderpol, unit_interval)
