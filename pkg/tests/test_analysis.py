import math

import numpy as np
import pytest

from diffincl.analysis import (SublevelSet, boundary_points, boundedness_report,
                               check_boundary_hessian, check_inflow, check_sublevel_domain,
                               inclusion_residual)
from diffincl.errors import DegenerateBoundaryError
from diffincl.field import assemble_field
from diffincl.integrate import Trajectory, integrate_filippov
from diffincl.models import PendulumParams, build_pendulum, check_pendulum_condition

UPRIGHT = dict(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)", K_star=0.2, Phi_star=0.1, eps=0.1,
           psi_star=0.5)
CLOSED = 2 * 0.5 * (math.sin(0.4) - 0.3)


def pendulum_domain():
    return SublevelSet("psi^2", 0.25, [(-2, 2)])


class TestDomain:
    def test_pass(self):
        r = check_sublevel_domain(pendulum_domain())
        assert r.passed and r.to_json()["assumed"] == ["d2"]

    def test_exits_box(self):
        assert not check_sublevel_domain(SublevelSet("psi^2", 10, [(-2, 2)]))

    def test_unbounded(self):
        r = check_sublevel_domain(SublevelSet("-psi^2", -1, [(-2, 2)]))
        assert not r.passed and r.witness["point"] in ([-2.0], [2.0])

    def test_json_schema_order(self):
        keys = list(check_sublevel_domain(pendulum_domain()).to_json())
        assert keys[:6] == ["check", "pass", "witness", "assumed", "samples", "tolerance"]


class TestHessian:
    def test_square(self):
        r = check_boundary_hessian(pendulum_domain())
        assert r.passed and r.witness["value"] == 2.0

    def test_concave(self):
        D = SublevelSet("-x1^2 - x2^2", -1, [(-2, 2), (-2, 2)])
        assert not check_boundary_hessian(D)

    def test_quartic(self):
        D = SublevelSet("x1^2 + x2^4", 1, [(-2, 2), (-2, 2)])
        r = check_boundary_hessian(D, 64)
        assert r.passed and r.samples == 64

    def test_boundary_on_level(self):
        D = SublevelSet("x1^2 + x2^4", 1, [(-2, 2), (-2, 2)])
        B = boundary_points(D, 32)
        np.testing.assert_allclose(D.values(B), 1.0, atol=1e-12)

    def test_degenerate(self):
        # |dF| vanishes on the level set {x^3 = 0}
        with pytest.raises(DegenerateBoundaryError):
            check_boundary_hessian(SublevelSet("x1^3", 0.0, [(-1, 1.3)]))


class TestInflow:
    def test_closed_form_convergence(self):
        f = build_pendulum(PendulumParams(**UPRIGHT))
        errs = [check_inflow(f, pendulum_domain(), n_samples=n).details["min_value"] - CLOSED
                for n in (256, 512, 1024, 2048)]
        assert all(e >= 0 for e in errs)
        for a, b in zip(errs, errs[1:]):
            assert b <= a / 2
        assert errs[-1] < 1e-6

    def test_strong_friction_fails(self):
        f = build_pendulum(PendulumParams(**{**UPRIGHT, "K": "1.5", "K_star": 1.5}))
        r = check_inflow(f, pendulum_domain())
        assert not r.passed and abs(abs(r.witness["x"][0]) - 0.5) < 1e-12

    def test_gradient_field(self):
        f = assemble_field({"dim": 2, "surfaces": [], "pieces": [{"signs": "", "f": ["2*x1", "4*x2^3"]}]})
        assert check_inflow(f, SublevelSet("x1^2 + x2^4", 1, [(-2, 2), (-2, 2)]), n_samples=4)

    def test_variant(self):
        f = build_pendulum(PendulumParams(**UPRIGHT))
        a = check_inflow(f, pendulum_domain(), n_samples=64).details["min_value"]
        b = check_inflow(f, pendulum_domain(), n_samples=64, variant=True).details["min_value"]
        assert b == pytest.approx(a + 1.0, abs=1e-14)

    @pytest.mark.parametrize("psi_star, K", [(0.5, 0.2), (0.7, 0.3), (0.4, 0.1), (0.3, 0.3)])
    def test_consistent_with_parameter_check(self, psi_star, K):
        p = PendulumParams(**{**UPRIGHT, "K": str(K), "K_star": K, "psi_star": psi_star})
        D = SublevelSet("psi^2", psi_star ** 2, [(-2, 2)])
        if check_pendulum_condition(p)["pass"]:
            assert check_inflow(build_pendulum(p), D)


class TestResidual:
    def test_stick_zero(self):
        f = build_pendulum(PendulumParams(K="1.0", omega="0.1*cos(t)", Phi="0.1*sin(t)",
                                          K_star=1.0, Phi_star=0.1, eps=0.1))
        tr = integrate_filippov(f, (0.0, [0.2], [0.0]), 5.0)
        assert inclusion_residual(tr, f)["max_residual"] == 0.0

    def test_corrupted(self):
        f = build_pendulum(PendulumParams(**UPRIGHT))
        tr = integrate_filippov(f, (0.0, [0.1], [0.5]), 5.0)
        a = tr.a.copy()
        a[7] += 1.0
        bad = Trajectory(tr.t, tr.x, tr.v, a, tr.mode)
        r = inclusion_residual(bad, f)
        assert r["max_residual"] >= 1.0 - 0.4 - 1e-12 and r["worst_t"] == tr.t[7]

    def test_monotone_in_radius(self):
        f = build_pendulum(PendulumParams(**{**UPRIGHT, "K": "0.2 + 0.05*cos(psi)", "K_star": 0.25}))
        rng = np.random.default_rng(4)
        for _ in range(10):
            x0, v0 = rng.uniform(-0.5, 0.5), rng.uniform(-1, 1)
            tr = integrate_filippov(f, (0.0, [x0], [v0]), 3.0)
            a = tr.a + rng.normal(scale=0.05, size=tr.a.shape)
            noisy = Trajectory(tr.t, tr.x, tr.v, a, tr.mode)
            r = [inclusion_residual(noisy, f, rad)["max_residual"] for rad in (0.0, 1e-2, 1e-1)]
            assert r[0] >= r[1] >= r[2]


class TestBoundedness:
    def test_zero(self):
        tr = Trajectory([0, 1], [[0], [0]], [[0], [0]], [[0], [0]], ["s", "s"])
        r = boundedness_report(tr, pendulum_domain())
        assert r["sup_F"] == 0.0 and r["contained"]

    def test_escape(self):
        f = build_pendulum(PendulumParams(K="0", K_star=0.0))
        tr = integrate_filippov(f, (0.0, [0.0], [3.0]), 2.0)
        assert not boundedness_report(tr, pendulum_domain())["contained"]
