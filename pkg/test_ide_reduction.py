"""
Tests for the IDE-to-ODE reduction
"""
import math

import numpy as np
import pytest
import sympy

from ide_reduction import (U, audit_reduction, build_reduced_ode, convolve_operators, printed_coefficients,
                           proposition1_rhs, proposition2_rhs, symbolic_reduced_ode, verify_identity_on_testfn,
                           verify_proposition)
from rational_jump_laws import erlang_law, exp_law
from utils import QuadratureError, ReductionError


class TestOperatorProduct:
    def test_exponential_pair(self):
        assert convolve_operators(exp_law(2.0), exp_law(3.0)) == (6.0, 1.0, -1.0)
        assert convolve_operators(exp_law(1.0), exp_law(1.0)) == (1.0, 0.0, -1.0)

    def test_swapping_laws_flips_odd_terms(self, erlang21, hyperexp2):
        forward = convolve_operators(erlang21, hyperexp2)
        backward = convolve_operators(hyperexp2, erlang21)
        assert len(forward) == 5
        for m, (t, s) in enumerate(zip(forward, backward)):
            assert t == pytest.approx((-1) ** m * s)


class TestKernelCoefficients:
    def test_exponential(self, exp2):
        assert proposition1_rhs(exp2, 0) == 2.0
        assert proposition2_rhs(exp2, 0) == 2.0

    def test_erlang(self, erlang21):
        assert proposition1_rhs(erlang21, 0) == 1.0
        assert proposition1_rhs(erlang21, 1) == 0.0

    def test_premium_side_alternates(self, hyperexp2):
        assert proposition1_rhs(hyperexp2, 1) == pytest.approx(2.4)
        assert proposition2_rhs(hyperexp2, 1) == pytest.approx(-2.4)

    def test_order_out_of_range(self, erlang21):
        with pytest.raises(ValueError):
            proposition1_rhs(erlang21, 2)


class TestReducedODE:
    def test_exponential_pair_coefficients(self, ac3_params):
        red = build_reduced_ode(ac3_params)
        assert red.order == 4
        assert red.operator == (1.0, 0.0, -1.0)
        assert red[4].a == pytest.approx(-0.02)
        assert red[3].c == pytest.approx(-1.0)
        assert red[0].d == pytest.approx(-2.0)
        assert red[0].g == pytest.approx(2.0)
        assert red[0].c == pytest.approx(0.0, abs=1e-14)
        assert "negative" in red.notes[0]
        assert len(red.table()) == 5

    def test_structure_on_random_models(self, random_models):
        for params in random_models:
            red = build_reduced_ode(params)
            n1, n2 = params.law1.order, params.law2.order
            lead = params.law1.ode_coeffs[-1] * params.law2.ode_coeffs[-1] * (-1) ** n2
            assert red.order == n1 + n2 + 2
            q0 = red[0]
            scale = max(max(abs(q.a), abs(q.b), abs(q.c), abs(q.d), abs(q.g)) for q in red.coeffs)
            assert max(abs(q0.a), abs(q0.b), abs(q0.c)) <= 1e-12 * scale
            assert red[red.order].b == 0.0
            assert red[red.order].c == 0.0
            assert red[red.order].a == pytest.approx(0.5 * params.sigma ** 2 * lead, rel=1e-12)
            assert red[red.order - 1].c == pytest.approx(params.c * lead, rel=1e-12)

    def test_printed_formulas_agree(self, random_models):
        for params in random_models:
            audit = audit_reduction(params)
            assert audit.passed, audit.summary()

    def test_printed_table_is_padded(self, erlang_params):
        table = printed_coefficients(erlang_params)
        assert len(table["a"]) == 7
        red = build_reduced_ode(erlang_params)
        np.testing.assert_allclose([q.b for q in red.coeffs], table["b"][:red.order + 1], rtol=1e-12, atol=1e-12)

    def test_evaluate_sums_the_terms(self, ac3_params):
        red = build_reduced_ode(ac3_params)
        derivatives = [1.0, -1.0, 1.0, -1.0, 1.0]
        expected = math.fsum(q(2.0) * d for q, d in zip(red.coeffs, derivatives))
        assert red.evaluate(2.0, derivatives) == pytest.approx(expected)

    def test_needs_volatility(self, classical_params):
        with pytest.raises(ReductionError):
            build_reduced_ode(classical_params)


class TestSymbolicReduction:
    def test_lowest_coefficient(self):
        q = symbolic_reduced_ode(1)
        lam1, lam2 = sympy.symbols('lambda1 lambda2')
        a10, a11, a20, a21 = sympy.symbols('alpha1_0 alpha1_1 alpha2_0 alpha2_1')
        f10, f20 = sympy.symbols('f1_0 f2_0')
        expected = lam1 * a20 * (a11 * f10 - a10) + lam2 * a10 * (a21 * f20 - a20)
        assert sympy.expand(q[0] - expected) == 0
        assert U not in q[0].free_symbols

    def test_unequal_orders(self):
        q = symbolic_reduced_ode(2, 1)
        assert sorted(q) == list(range(6))
        sigma = sympy.Symbol('sigma')
        a12, a21 = sympy.symbols('alpha1_2 alpha2_1')
        assert sympy.expand(q[5] + sigma ** 2 / 2 * a12 * a21 * U ** 2) == 0

    def test_matches_numeric_build(self, ac3_params):
        q = symbolic_reduced_ode(1)
        values = {'a': 0.03, 'sigma': 0.2, 'c': 1.0, 'lambda1': 1.0, 'lambda2': 1.0,
                  'alpha1_0': 1.0, 'alpha1_1': 1.0, 'alpha2_0': 1.0, 'alpha2_1': 1.0, 'f1_0': 1.0, 'f2_0': 1.0}
        subs = {sympy.Symbol(name): value for name, value in values.items()}
        subs[U] = 2.0
        red = build_reduced_ode(ac3_params)
        for j in range(red.order + 1):
            assert float(q[j].subs(subs)) == pytest.approx(red[j](2.0), abs=1e-12)


class TestIdentities:
    def test_reduced_identity_exponential_laws(self, identity_params):
        report = verify_identity_on_testfn(identity_params)
        assert len(report.rows) == 4
        assert report.max_residual <= 1e-6, report.summary()

    def test_reduced_identity_erlang_laws(self, erlang_params):
        report = verify_identity_on_testfn(erlang_params, "exp(-u)", u_points=[0.5, 1.0, 2.0, 5.0])
        assert report.max_residual <= 1e-6, report.summary()

    def test_zero_test_function(self, identity_params):
        report = verify_identity_on_testfn(identity_params, "0")
        assert report.max_residual == 0.0
        assert report.max_abs_residual == 0.0

    @pytest.mark.parametrize("law, side", [(exp_law(2.0), "claims"), (erlang_law(2, 3.0), "claims"),
                                           (erlang_law(2, 1.0), "premiums"), (exp_law(0.5), "premiums")])
    def test_kernel_identities(self, law, side):
        report = verify_proposition(law, side)
        assert report.max_abs_residual <= 1e-7, report.summary()

    def test_other_test_function(self, hyperexp2):
        report = verify_proposition(hyperexp2, "premiums", "exp(-2*u)", u_points=[1.0, 2.0])
        assert report.max_abs_residual <= 1e-7, report.summary()

    def test_growing_integrand_is_reported(self, erlang21):
        with pytest.raises(QuadratureError):
            verify_proposition(erlang21, "claims")

    def test_bad_arguments(self, exp2):
        with pytest.raises(ValueError):
            verify_proposition(exp2, "both")
        with pytest.raises(ValueError):
            verify_proposition(exp2, "claims", "exp(-x)")
