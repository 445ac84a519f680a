import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmpc.errors import ConfigError, SimulationError
from mlmpc.plants import (
    Cartpole,
    CartpoleParams,
    Pendulum,
    PendulumParams,
    ThreeTank,
    ThreeTankParams,
    cartpole_accel,
    cartpole_step,
    make_plant,
    pendulum_step,
    tank_flows,
    tank_rates,
    tank_step,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


# --- pendulum -----------------------------------------------------------------


def test_pendulum_rest_is_fixed_point():
    out = pendulum_step([0.0, 0.0], 0.0, PendulumParams())
    assert out.tolist() == [0.0, 0.0]


def test_pendulum_one_step_matches_hand_euler():
    # a = -9.81 sin(0.1); phi_dot' = 0.05 a; phi' = 0.1 + 0.05 phi_dot'
    p = PendulumParams(m=1, l=1, b=0.1, g=9.81, tau=0.05)
    phi, phi_dot = pendulum_step([0.1, 0.0], 0.0, p)
    assert phi_dot == pytest.approx(-0.048968290865269215, abs=1e-15)
    assert phi == pytest.approx(0.09755158545673655, abs=1e-15)
    assert phi_dot == pytest.approx(-0.0489683, abs=1e-7)
    assert phi == pytest.approx(0.0975516, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(-10, 10))
def test_pendulum_odd_symmetry(phi, phi_dot, u):
    p = PendulumParams()
    a = pendulum_step([phi, phi_dot], u, p)
    b = pendulum_step([-phi, -phi_dot], -u, p)
    np.testing.assert_array_equal(a, -b)


def test_pendulum_input_state_not_mutated():
    s = np.array([0.3, -0.2])
    pendulum_step(s, 1.0, PendulumParams())
    assert s.tolist() == [0.3, -0.2]


def test_pendulum_non_finite_is_a_fault():
    with pytest.raises(SimulationError, match="non-finite"):
        pendulum_step([0.0, 0.0], 1e308, PendulumParams(m=1e-300, l=1.0))


@pytest.mark.parametrize("bad", [dict(m=0), dict(l=-1), dict(b=-0.1), dict(g=0), dict(tau=0)])
def test_pendulum_params_validated(bad):
    with pytest.raises(ConfigError):
        PendulumParams(**bad)


# --- cartpole -----------------------------------------------------------------


def test_cartpole_upright_unforced_has_zero_acceleration():
    th, xdd = cartpole_accel([3.0, -1.0, 0.0, 0.0], 0.0, CartpoleParams())
    assert th == 0.0 and xdd == 0.0


def test_cartpole_accel_matches_hand_evaluation():
    th, xdd = cartpole_accel([0, 0, 0, 0], 10.0, CartpoleParams(m_c=1.0, m_p=0.1, l_p=0.5, g=9.81))
    assert th == pytest.approx(-14.634146341463413, rel=1e-13)
    assert xdd == pytest.approx(9.75609756097561, rel=1e-13)


def test_cartpole_step_matches_hand_euler():
    out = cartpole_step([0, 0, 0, 0], 10.0, CartpoleParams(tau=0.02))
    np.testing.assert_allclose(out, [0.0, 0.1951219512195122, 0.0, -0.2926829268292683], rtol=1e-13, atol=0)


def test_cartpole_step_uses_old_derivatives():
    p = CartpoleParams()
    s = np.array([0.1, 0.5, 0.2, -0.3])
    th, xdd = cartpole_accel(s, 4.0, p)
    out = cartpole_step(s, 4.0, p)
    assert out[0] == s[0] + p.tau * s[1]
    assert out[2] == s[2] + p.tau * s[3]
    assert out[1] == s[1] + p.tau * xdd
    assert out[3] == s[3] + p.tau * th


def test_cartpole_product_denominator_switch():
    p = CartpoleParams(m_c=2.0, m_p=0.3, denominator="product")
    assert p.mass_divisor == pytest.approx(0.6)
    assert CartpoleParams(m_c=2.0, m_p=0.3).mass_divisor == pytest.approx(2.3)
    with pytest.raises(ConfigError):
        CartpoleParams(denominator="sum")


def test_cartpole_zero_tau_rejected_at_construction():
    with pytest.raises(ConfigError, match="tau"):
        CartpoleParams(tau=0.0)


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, finite, st.floats(-20, 20))
def test_cartpole_odd_symmetry(x, xd, th, thd, f):
    p = CartpoleParams()
    a = cartpole_accel([x, xd, th, thd], f, p)
    b = cartpole_accel([-x, -xd, -th, -thd], -f, p)
    assert a[0] == -b[0] and a[1] == -b[1]
    np.testing.assert_array_equal(cartpole_step([x, xd, th, thd], f, p), -cartpole_step([-x, -xd, -th, -thd], -f, p))


# --- three tanks ----------------------------------------------------------------


def test_tank_flows_empty():
    assert [float(q) for q in tank_flows([0, 0, 0], ThreeTankParams())] == [0.0, 0.0, 0.0]


def test_tank_flow_hand_value():
    q12, _, _ = tank_flows([0.5, 0.2, 0.0], ThreeTankParams(alpha12=0.5, a12=5e-5, g=9.81))
    assert q12 == pytest.approx(2.5e-5 * math.sqrt(2 * 9.81 * 0.3), rel=1e-15)
    assert q12 == pytest.approx(6.0653e-5, rel=1e-4)


def test_tank_flow_antisymmetry_and_equal_levels():
    p = ThreeTankParams()
    q_a, _, _ = tank_flows([0.7, 0.1, 0.0], p)
    q_b, _, _ = tank_flows([0.1, 0.7, 0.0], p)
    assert q_a == -q_b
    q12, q23, _ = tank_flows([0.4, 0.4, 0.4], p)
    assert q12 == 0.0 and q23 == 0.0


def test_tank_empty_is_fixed_point():
    assert tank_step([0, 0, 0], [0, 0], ThreeTankParams()).tolist() == [0.0, 0.0, 0.0]


def test_tank_step_matches_hand_euler_and_fine_integration():
    p = ThreeTankParams(tau=1.0)
    out = tank_step([0.5, 0.2, 0.1], [0.0, 0.0], p)
    # hand Euler values computed with scalar math
    np.testing.assert_allclose(out, [0.4960615129962684, 0.20166460047192736, 0.1], rtol=1e-13, atol=1e-15)
    # 1000 substeps of 1 ms (scalar oracle) agree to first order
    fine = [0.49607984073562494, 0.20163698444182393, 0.10000925310555209]
    assert np.max(np.abs(out - fine)) < 1e-4
    assert np.max(np.abs(out - fine)) < 0.05 * np.max(np.abs(out - [0.5, 0.2, 0.1]))


def test_tank_levels_clamped_non_negative():
    p = ThreeTankParams(tau=50.0)
    out = tank_step([0.0, 0.0, 1e-6], [0.0, 0.0], p)
    assert np.all(out >= 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.floats(0, 1e-4), st.floats(0, 1e-4))
def test_tank_volume_bookkeeping(levels, q1, q3in):
    p = ThreeTankParams()
    rates = tank_rates(levels, [q1, q3in], p)
    _, _, q3 = tank_flows(levels, p)
    moved = float(np.sum(p.areas * p.tau * rates))
    expected = p.tau * (q1 + q3in - float(q3))
    assert moved == pytest.approx(expected, rel=1e-12, abs=1e-18)


def test_tank_sealed_system_conserves_volume():
    p = ThreeTankParams(alpha3=0.0, tau=1.0)
    plant = ThreeTank(p, [0.9, 0.1, 0.4])
    v0 = float(np.sum(p.areas * plant.state))
    for _ in range(10_000):
        plant.step([0.0, 0.0])
    assert abs(float(np.sum(p.areas * plant.state)) - v0) <= 1e-9 * v0


def test_tank_alpha_range_validated():
    with pytest.raises(ConfigError):
        ThreeTankParams(alpha3=1.5)


# --- plant objects ----------------------------------------------------------------


def test_observe_projections():
    assert Pendulum(state=[0.3, 7.0]).observe().tolist() == [0.3]
    assert Cartpole(state=[1.0, 2.0, 0.1, 3.0]).observe().tolist() == [1.0, 0.1]
    assert ThreeTank(state=[0.2, 0.3, 0.1]).observe().tolist() == [0.2, 0.3, 0.1]


@pytest.mark.parametrize("kind", ["pendulum", "cartpole", "tanks"])
def test_snapshot_restore_round_trip(kind):
    rng = np.random.default_rng(3)
    plant = make_plant(kind)
    lo, hi = (0.0, 1e-4) if kind == "tanks" else (-5.0, 5.0)
    for _ in range(10):
        plant.step(rng.uniform(lo, hi, plant.n_inputs))
    before = plant.state.copy()
    blob = plant.snapshot()
    for _ in range(100):
        plant.step(rng.uniform(lo, hi, plant.n_inputs))
    plant.restore(blob)
    assert plant.state.tobytes() == before.tobytes()


def test_restore_rejects_foreign_blob():
    blob = Pendulum().snapshot()
    with pytest.raises(ValueError, match="pendulum"):
        Cartpole().restore(blob)
    other = Pendulum(PendulumParams(m=2.0))
    with pytest.raises(ValueError, match="parameters"):
        other.restore(blob)


def test_interleaved_rollouts_are_deterministic():
    rng = np.random.default_rng(11)
    actions = rng.uniform(-10, 10, (2, 30, 1))
    plant = Pendulum(state=[0.2, 0.0])
    runs = []
    for _ in range(2):
        traces = []
        for seq in actions:
            blob = plant.snapshot()
            traces.append(np.array([plant.step(a) for a in seq]))
            plant.restore(blob)
        runs.append(np.concatenate(traces))
    assert runs[0].tobytes() == runs[1].tobytes()


@pytest.mark.parametrize("kind", ["pendulum", "cartpole", "tanks"])
def test_batched_advance_matches_live_steps(kind):
    rng = np.random.default_rng(5)
    plant = make_plant(kind)
    lo, hi = (0.0, 1e-4) if kind == "tanks" else (-5.0, 5.0)
    states = np.repeat(plant.state[None], 16, axis=0)
    actions = rng.uniform(lo, hi, (16, plant.n_inputs))
    batched = plant.advance(states, actions)
    for i in range(16):
        twin = plant.clone()
        twin.step(actions[i])
        assert twin.state.tobytes() == batched[i].tobytes()


@pytest.mark.parametrize(
    "kind, x0, u",
    [
        ("pendulum", [0.4, 0.3], [2.0]),
        ("cartpole", [0.1, 0.2, 0.05, -0.1], [3.0]),
        ("tanks", [0.6, 0.35, 0.15], [5e-5, 2e-5]),
    ],
)
def test_euler_first_order(kind, x0, u):
    base = make_plant(kind).params

    def integrate(step_size, interval):
        plant = make_plant(kind, dataclasses.replace(base, tau=step_size), x0)
        for _ in range(round(interval / step_size)):
            plant.step(u)
        return plant.state

    ref = integrate(base.tau / 1000, base.tau)
    d1 = np.linalg.norm(integrate(base.tau, base.tau) - ref)
    d2 = np.linalg.norm(integrate(base.tau / 2, base.tau) - ref)
    assert 1.8 <= d1 / d2 <= 2.2
