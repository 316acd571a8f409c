import numpy as np
import pytest

from windplan import plant as plant_mod
from windplan.dynamics import ControlInput, QuadState
from windplan.params import PlannerParams
from windplan.plant import ForceObserver, PlantState, observe_force, sim_step, wind_force
from windplan.world import WindZone

P = PlannerParams()
HOVER = ControlInput.hover(P)
ZONE = WindZone([3, 0, 0], [7, 4, 2], [0, 2, 0])


def fly(zones, steps, x0=None, payload=None, inp=HOVER, noise=0.0, seed=0):
    st = PlantState(QuadState.at_rest([1.0, 2.0, 1.0]) if x0 is None else x0, np.zeros(3), 0.0)
    hist, inputs = [st], []
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        st = sim_step(st, inp, zones, P.sim_dt, P, payload, noise, rng)
        hist.append(st)
        inputs.append(inp)
    return hist, inputs


def test_wind_force_examples():
    assert np.allclose(wind_force([ZONE], [1, 1, 1], P.m), 0.0)
    assert np.allclose(wind_force([ZONE], [5, 1, 1], 1.0), [0, 2, 0])
    other = WindZone([4, 0, 0], [6, 4, 2], [1, 0, 0])
    assert np.allclose(wind_force([ZONE, other], [5, 1, 1], 1.0), [1, 2, 0])


def test_hover_stationary():
    hist, _ = fly([], 200)
    assert np.allclose(hist[-1].truth.as_array(), hist[0].truth.as_array(), atol=1e-12)


def test_zone_edge_mid_step_uses_stage_positions():
    # start just outside the zone moving in: the step sees part of the zone force
    x0 = QuadState([2.999, 2.0, 1.0], [1.0, 0.0, 0.0])
    st = PlantState(x0, np.zeros(3), 0.0)
    nxt = sim_step(st, HOVER, [ZONE], P.sim_dt, P)
    vy = nxt.truth.v[1]
    assert 0.0 < vy < 2.0 * P.sim_dt
    assert np.allclose(nxt.applied_force, 0.0)


def test_payload_load():
    hist, _ = fly([], 100, payload=np.array([0.0, 0.0, -1.65]))
    assert hist[-1].truth.v[2] == pytest.approx(-1.65 * 100 * P.sim_dt, rel=0.05)
    assert np.allclose(hist[-1].applied_force, [0, 0, -1.65 * P.m])


def test_observer_hover_zero():
    hist, inputs = fly([], int(3 * P.tau_f / P.sim_dt))
    assert np.allclose(observe_force(hist, inputs, P).F_est, 0.0, atol=1e-9)


def test_observer_step_response_first_order():
    x0 = QuadState.at_rest([5.0, 2.0, 1.0])
    n = int(5 * P.tau_f / P.sim_dt)
    hist, inputs = fly([ZONE], n, x0=x0)
    obs = ForceObserver(P)
    errs = []
    for i in range(n):
        est = obs.update(hist[i].truth, hist[i + 1].truth, inputs[i], P.sim_dt, hist[i + 1].t)
        errs.append(np.linalg.norm(est.F_est - [0, 2 * P.m, 0]))
    t = P.sim_dt * np.arange(1, n + 1)
    bound = 2.0 * np.exp(-t / P.tau_f) + 0.02 * 2.0
    assert np.all(np.array(errs) <= bound)
    assert errs[-1] < 0.1


def test_observer_payload_estimate():
    hist, inputs = fly([], int(8 * P.tau_f / P.sim_dt), payload=np.array([0.0, 0.0, -1.65]))
    assert observe_force(hist, inputs, P).F_est[2] == pytest.approx(-1.65 * P.m, abs=0.02)


def test_noise_reproducible_and_bounded():
    a, _ = fly([], 50, noise=0.5, seed=3)
    b, _ = fly([], 50, noise=0.5, seed=3)
    assert all(np.array_equal(x.truth.as_array(), y.truth.as_array()) for x, y in zip(a, b))
    assert all(np.max(np.abs(s.applied_force)) <= 0.5 * P.m + 1e-12 for s in a)
    with pytest.raises(ValueError):
        sim_step(a[0], HOVER, [], P.sim_dt, P, noise_bound=0.5)


def test_plant_uses_shared_dynamics_step():
    assert plant_mod.step.__module__ == "windplan.dynamics"
