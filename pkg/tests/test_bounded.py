import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffincl.analysis import SublevelSet, inclusion_residual
from diffincl.bounded import (c1_distance, find_bidirectional, find_forward_bounded,
                              h2_seminorm, periodize, shoot_forward)
from diffincl.field import assemble_field
from diffincl.integrate import Trajectory
from diffincl.models import PendulumParams, build_pendulum

UPRIGHT = PendulumParams(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)", K_star=0.2, Phi_star=0.1,
                     eps=0.1, psi_star=0.5)
EQUI = PendulumParams(K="0.5", K_star=0.5)
D = SublevelSet("psi^2", 0.25, [(-2, 2)])


def line(t, x, v, a):
    t = np.asarray(t, dtype=float)
    return Trajectory(t, x, v, a, ["s"] * t.size)


class TestPeriodize:
    def test_restriction(self):
        f = build_pendulum(UPRIGHT)
        pf = periodize(f, 10.0)
        rng = np.random.default_rng(0)
        for t in rng.uniform(-10, 10, 100):
            for y in (0.5, -0.5):
                assert pf(t, [0.3], [y])[0] == f(t, [0.3], [y])[0]

    def test_periodic_bitwise(self):
        f = build_pendulum(UPRIGHT)
        pf = periodize(f, 10.0)
        rng = np.random.default_rng(1)
        for t, x, y in zip(rng.uniform(-30, 30, 100), rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100)):
            # dyadic times make t + 2k exact
            t = math.ldexp(round(math.ldexp(t, 20)), -20)
            assert pf(t, [x], [y])[0] == pf(t + 20.0, [x], [y])[0]

    def test_wrap(self):
        f = build_pendulum(UPRIGHT)
        pf = periodize(f, 10.0)
        assert pf(23.0, [0.1], [1.0])[0] == f(3.0, [0.1], [1.0])[0]
        assert pf(3.0, [0.1], [1.0])[0] == f(3.0, [0.1], [1.0])[0]

    def test_time_constant_with_mollification(self):
        f = build_pendulum(EQUI)
        pf = periodize(f, 5.0, l=4)
        assert pf(2.0, [0.3], [1.0])[0] == f(2.0, [0.3], [1.0])[0]
        g = pf.as_field()
        assert g(1.0, [0.3], [1.0])[0] == f(1.0, [0.3], [1.0])[0]

    def test_time_mollification_averages(self):
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["t"]}]})
        pf = periodize(f, 10.0, l=2)
        # a linear function is reproduced by the symmetric average
        assert pf(1.0, [0.0], [0.0])[0] == pytest.approx(1.0, abs=1e-12)
        assert pf.as_field()(1.0, [0.0], [0.0])[0] == pytest.approx(1.0, abs=1e-12)

    def test_bad_args(self):
        f = build_pendulum(EQUI)
        with pytest.raises(ValueError):
            periodize(f, 0.0)
        with pytest.raises(ValueError):
            periodize(f, 1.0, -1)


class TestShoot:
    def test_equilibrium(self):
        et, tr = shoot_forward(build_pendulum(EQUI), D, [0.0], [0.0], 20.0)
        assert et == 20.0 and np.all(tr.x == 0.0)

    def test_escape(self):
        f = build_pendulum(PendulumParams(K="0", K_star=0.0))
        et, tr = shoot_forward(f, D, [0.3], [1.0], 20.0)
        assert et < 20.0
        # escape time against a fine fixed-step oracle of psi'' = sin(psi)
        from scipy.integrate import solve_ivp
        sol = solve_ivp(lambda t, y: [y[1], math.sin(y[0])], (0, 5), [0.3, 1.0],
                        events=lambda t, y: y[0] - 0.5, rtol=1e-12, atol=1e-12)
        assert abs(et - sol.t_events[0][0]) < 1e-8

    def test_outside(self):
        with pytest.raises(ValueError):
            shoot_forward(build_pendulum(EQUI), D, [0.9], [0.0], 1.0)

    def test_monotone_windows(self):
        f = build_pendulum(UPRIGHT)
        for x0, v0 in [(0.0, 0.0), (0.3, 0.4), (-0.2, -1.0), (0.45, 0.1)]:
            long_et, _ = shoot_forward(f, D, [x0], [v0], 20.0)
            for T in (5.0, 10.0):
                et, _ = shoot_forward(f, D, [x0], [v0], T)
                assert et == min(long_et, T)


class TestSearch:
    def test_equilibrium_forward(self):
        r = find_forward_bounded(build_pendulum(EQUI), D, 20.0)
        assert r.found and r.margin == 0.25
        assert np.all(r.trajectory.x == 0.0)

    def test_upright_forward(self):
        f = build_pendulum(UPRIGHT)
        r = find_forward_bounded(f, D, 20.0)
        assert r.found and np.abs(r.trajectory.x).max() <= 0.5
        assert r.margin >= 0
        assert inclusion_residual(r.trajectory, f)["max_residual"] <= 1e-6

    def test_not_found(self):
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["1"]}]})
        r = find_forward_bounded(f, D, 5.0)
        assert not r.found and r.diagnostics["refined"]
        assert r.exit_time < 5.0

    def test_bidirectional_equilibrium(self):
        r = find_bidirectional(build_pendulum(EQUI), D, [5, 10, 20])
        assert r.found and r.diagnostics["cauchy_distances"] == [0.0, 0.0]
        assert r.trajectory.t0 == -20.0 and r.trajectory.t1 == 20.0

    def test_bidirectional_upright(self):
        f = build_pendulum(UPRIGHT)
        r = find_bidirectional(f, D, [5, 10, 20])
        assert r.found and np.abs(r.trajectory.x).max() <= 0.5 + 1e-6
        assert inclusion_residual(r.trajectory, f)["max_residual"] <= 1e-6
        # h2 grows at most linearly with the window
        h = [h2_seminorm(r.trajectory, (-T, T)) for T in (5, 10, 20)]
        slope = h[-1] / 20.0
        assert all(hv <= 1.2 * slope * T + 1e-12 for hv, T in zip(h, (5, 10, 20)))

    def test_bidirectional_no_bounded_solution(self):
        # constant acceleration pushes every start out of the domain
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["0.5"]}]})
        r = find_bidirectional(f, D, [5, 10])
        assert not r.found
        assert r.diagnostics["windows"][0]["exit_time"] < 10.0

    def test_windows_validated(self):
        with pytest.raises(ValueError):
            find_bidirectional(build_pendulum(EQUI), D, [10, 5])


class TestNorms:
    def test_c1_examples(self):
        t = np.linspace(0, 1, 2001)
        a = line(t, np.sin(t), np.cos(t), -np.sin(t))
        z = line(t, 0 * t, 0 * t, 0 * t)
        assert c1_distance(a, a, (0, 1)) == 0.0
        shifted = line(t, np.sin(t) + 0.1, np.cos(t), -np.sin(t))
        assert c1_distance(a, shifted, (0, 1)) == pytest.approx(0.1, abs=1e-11)
        assert c1_distance(a, z, (0, 1)) == pytest.approx(math.sin(1) + 1, abs=1e-12)

    def test_c1_not_covered(self):
        t = np.linspace(0, 1, 11)
        a = line(t, t, t, t)
        with pytest.raises(ValueError):
            c1_distance(a, a, (0, 2))

    def test_h2_examples(self):
        t = np.linspace(0, 1, 10001)
        assert h2_seminorm(line(t, 0 * t, 0 * t, 0 * t), (0, 1)) == 0.0
        assert h2_seminorm(line(t, 1 + 0 * t, 0 * t, 0 * t), (0, 1)) == pytest.approx(1.0, abs=1e-14)
        assert h2_seminorm(line(t, t, 1 + 0 * t, 0 * t), (0, 1)) == pytest.approx(
            math.sqrt(1 / 3), abs=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_c1_symmetric_triangle(self, c1, c2):
        t = np.linspace(0, 1, 101)
        a = line(t, np.sin(t), np.cos(t), -np.sin(t))
        b = line(t, c1 * t, c1 + 0 * t, 0 * t)
        c = line(t, c2 * t ** 2, 2 * c2 * t, 2 * c2 + 0 * t)
        dab, dba = c1_distance(a, b, (0, 1)), c1_distance(b, a, (0, 1))
        assert dab == dba
        assert c1_distance(a, c, (0, 1)) <= dab + c1_distance(b, c, (0, 1)) + 1e-12
