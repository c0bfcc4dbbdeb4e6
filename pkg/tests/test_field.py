import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffincl.errors import CoverError, DimensionError, FieldError, OnSurfaceError
from diffincl.field import (MollifierSpec, PiecewiseSmoothField, assemble_field, bound_constant,
                            bump_mass, mollify_eval)
from diffincl.models import PendulumParams, build_pendulum


def coulomb(K=0.2, drive="0"):
    return assemble_field({"dim": 1, "surfaces": ["y1"],
                           "pieces": [{"signs": "+", "f": [f"{drive} - {K}"]},
                                      {"signs": "-", "f": [f"{drive} + {K}"]}]})


class TestAssemble:
    def test_pendulum_shape(self):
        f = build_pendulum(PendulumParams())
        assert f.dim == 1 and f.n_surfaces == 1
        assert set(f.pieces) == {"+", "-"}

    def test_smooth(self):
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["-x"]}]})
        assert f.is_smooth
        assert f(0.0, [2.0], [5.0])[0] == -2.0

    def test_duplicate_pattern(self):
        with pytest.raises(CoverError):
            assemble_field({"dim": 1, "surfaces": ["y1"],
                            "pieces": [{"signs": "+", "f": ["1"]}, {"signs": "+", "f": ["2"]}]})

    def test_missing_pattern(self):
        with pytest.raises(CoverError):
            assemble_field({"dim": 1, "surfaces": ["y1"], "pieces": [{"signs": "+", "f": ["1"]}]})

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            assemble_field({"dim": 2, "surfaces": [], "pieces": [{"signs": "", "f": ["1"]}]})

    def test_surface_must_use_velocity_only(self):
        with pytest.raises(FieldError):
            assemble_field({"dim": 1, "surfaces": ["x1 + y1"],
                            "pieces": [{"signs": "+", "f": ["1"]}, {"signs": "-", "f": ["1"]}]})

    def test_unknown_key(self):
        with pytest.raises(FieldError):
            assemble_field({"dim": 1, "pieces": [{"signs": "", "f": ["1"]}], "colour": 1})

    def test_degenerate_surface(self):
        with pytest.raises(FieldError):
            assemble_field({"dim": 1, "surfaces": ["(y1 - 1)^3"],
                            "pieces": [{"signs": "+", "f": ["1"]}, {"signs": "-", "f": ["1"]}]})

    def test_model_hash_stable(self):
        assert coulomb().model_hash == coulomb().model_hash
        assert coulomb(0.2).model_hash != coulomb(0.3).model_hash


class TestEval:
    def test_sides(self):
        f = coulomb(0.2, "0.5")
        assert f(0.0, [0.0], [0.1])[0] == pytest.approx(0.3, abs=1e-15)
        assert f(0.0, [0.0], [-0.1])[0] == pytest.approx(0.7, abs=1e-15)

    def test_on_surface(self):
        with pytest.raises(OnSurfaceError):
            coulomb()(0.0, [0.0], [0.0])


class TestMollifier:
    @pytest.mark.parametrize("k", [1, 4, 16, 64])
    def test_mass_1d(self, k):
        assert abs(MollifierSpec(k).mass() - 1.0) < 1e-10
        assert abs(MollifierSpec(k).mass(breaks=[0.3, -0.7]) - 1.0) < 1e-10

    def test_mass_2d(self):
        pts, w = MollifierSpec(8).rule_2d()
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w >= 0) and np.all(np.linalg.norm(pts, axis=1) < 1.0)

    def test_bump_mass_oracle(self):
        from scipy.integrate import quad
        ref = quad(lambda s: np.exp(-1.0 / (1.0 - s * s)), -1, 1, epsabs=1e-14)[0]
        assert abs(bump_mass(1) - ref) < 1e-12

    @pytest.mark.parametrize("k", [1, 8, 64])
    def test_odd_at_zero(self, k):
        assert abs(mollify_eval(coulomb(), MollifierSpec(k), 0.0, [0.0], [0.0])[0]) < 1e-15

    @pytest.mark.parametrize("k", [4, 32])
    def test_support_misses_surface(self, k):
        v = mollify_eval(coulomb(), MollifierSpec(k), 0.0, [0.0], [2.0 / k])[0]
        assert abs(v + 0.2) < 1e-10

    def test_smooth_field(self):
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["-x"]}]})
        assert abs(mollify_eval(f, MollifierSpec(5), 0.0, [1.0], [0.3])[0] + 1.0) < 1e-10

    def test_linear_in_y(self):
        # convolution of a linear function with a symmetric kernel reproduces it
        f = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["3*y1 + 1"]}]})
        assert abs(mollify_eval(f, MollifierSpec(2), 0.0, [0.0], [0.4])[0] - 2.2) < 1e-12

    def test_2d(self):
        f = assemble_field({"dim": 2, "surfaces": ["y1", "y2"], "pieces": [
            {"signs": s1 + s2, "f": [f"{'-' if s1 == '+' else ''}1", f"{'-' if s2 == '+' else ''}1"]}
            for s1 in "+-" for s2 in "+-"]})
        np.testing.assert_allclose(mollify_eval(f, MollifierSpec(4), 0, [0, 0], [0, 0]), 0,
                                   atol=1e-12)
        np.testing.assert_allclose(mollify_eval(f, MollifierSpec(4), 0, [0, 0], [1, 1]), -1,
                                   atol=1e-12)

    def test_dimension_limit(self):
        f = assemble_field({"dim": 3, "surfaces": ["y1"], "pieces": [
            {"signs": "+", "f": ["1", "1", "1"]}, {"signs": "-", "f": ["1", "1", "1"]}]},
            check=False)
        with pytest.raises(DimensionError):
            mollify_eval(f, MollifierSpec(4), 0, [0, 0, 0], [0, 0, 0])

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-3, 3), st.sampled_from([2, 8, 32]))
    def test_consistency_away_from_surface(self, y, k):
        f = build_pendulum(PendulumParams(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)",
                                          K_star=0.2, Phi_star=0.1, eps=0.1), verify=False)
        if abs(y) <= 1.0 / k + 1e-9:
            return
        exact = f(0.7, [0.3], [y])
        moll = mollify_eval(f, MollifierSpec(k), 0.7, [0.3], [y])
        assert abs(moll[0] - exact[0]) < 1e-9


class TestBoundConstant:
    def test_pendulum_range(self):
        p = PendulumParams(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)", K_star=0.2,
                           Phi_star=0.1, eps=0.1)
        f = build_pendulum(p)
        c = bound_constant(f, {"t": (-10, 10), "x": [(-np.pi, np.pi)]})
        assert 1.0 <= c <= 1.3

    def test_constant_and_zero(self):
        five = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["5"]}]})
        zero = assemble_field({"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["0"]}]})
        box = {"t": (0, 1), "x": [(-1, 1)]}
        assert bound_constant(five, box) == 5.0
        assert bound_constant(zero, box) == 0.0

    def test_uniform_bound_on_mollified(self):
        p = PendulumParams(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)", K_star=0.2,
                           Phi_star=0.1, eps=0.1)
        f = build_pendulum(p)
        c = bound_constant(f, {"t": (-10, 10), "x": [(0.0, 0.0)]})
        rng = np.random.default_rng(3)
        spec = MollifierSpec(8)
        for t, y in zip(rng.uniform(-10, 10, 1000), rng.uniform(-1, 1, 1000)):
            assert abs(mollify_eval(f, spec, t, [0.0], [y])[0]) <= c + 1e-9

    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            bound_constant(coulomb(), {"t": (0, 1), "x": [(0, 1)]}, samples=0)
