"""Scale function calculus: evaluation, inversion, certification, Phi,
the chain transform, and the variational suprema."""
import json
import math

import numpy as np
import pytest

from hklab import (
    NumericalFailure,
    ScaleFunction,
    apply_chain_transform,
    certify_doubling,
    composed_beta_bounds,
    invert_chain_transform,
    minimax_window,
    phi_from_scales,
    variational_sup,
)

BETA_STAR = math.log(3) / math.log(5 / 3) + 1.0
GAMMA1 = math.log(2) / math.log(5 / 3)
R0 = math.exp(-2.0 / BETA_STAR)


# ---------------------------------------------------------------------------
# evaluation and inversion
# ---------------------------------------------------------------------------

def test_power_evaluation():
    f = ScaleFunction.power(2.0)
    assert f(3.0) == pytest.approx(9.0, rel=1e-14)


def test_power_log_at_cutoff():
    f = ScaleFunction.power_log(BETA_STAR, 2.0, R0)
    expected = R0 ** BETA_STAR * (2.0 / BETA_STAR) ** 2
    assert f(R0) == pytest.approx(expected, rel=1e-12)


def test_tabulated_loglog_interpolation():
    f = ScaleFunction.tabulated([(1.0, 1.0), (2.0, 4.0)])
    assert f(1.5) == pytest.approx(2.25, rel=1e-12)


def test_evaluate_rejects_nonfinite():
    f = ScaleFunction.power(2.0)
    with pytest.raises(ValueError):
        f(math.inf)
    with pytest.raises(ValueError):
        f(math.nan)


def test_power_inverse():
    assert ScaleFunction.power(2.0).inverse(9.0) == pytest.approx(3.0, rel=1e-12)


def test_power_fixed_point_inverse():
    f = ScaleFunction.power(BETA_STAR)
    assert f.inverse(1.0) == pytest.approx(1.0, rel=1e-12)


def test_power_log_inverse_of_r2_log():
    # r^2 log(1/r) below the e^{-1} cutoff; at e^{-2} the value is 2e^{-4}
    f = ScaleFunction.power_log(2.0, 1.0, math.exp(-1.0))
    assert f.inverse(2.0 * math.exp(-4.0)) == pytest.approx(math.exp(-2.0),
                                                            rel=1e-10)


def test_inverse_roundtrip_on_probe_grids():
    scales = [
        ScaleFunction.power(1.3569),
        ScaleFunction.power_log(2.0, 2.0, math.exp(-1.0)),
        ScaleFunction.power_log(BETA_STAR, 2.0, R0, A=0.54),
        ScaleFunction.tabulated([(r, r ** 2.2) for r in np.geomspace(1e-6, 10, 40)]),
    ]
    grid = np.geomspace(1e-5, 5.0, 60)
    for f in scales:
        for r in grid:
            assert f.inverse(float(f(r))) == pytest.approx(float(r), rel=1e-10)


def test_strictly_increasing():
    for f in (ScaleFunction.power(0.7),
              ScaleFunction.power_log(2.0, -1.5, 0.2),
              ScaleFunction.power_log(3.15, 2.0, 0.5)):
        grid = np.geomspace(1e-7, 1e3, 200)
        vals = np.array([float(f(r)) for r in grid])
        assert np.all(np.diff(vals) > 0.0)


def test_json_roundtrip():
    f = ScaleFunction.power_log(3.1507, 2.0, 0.5299)
    d = json.loads(f.to_json())
    assert d["kind"] == "power_log"
    g = ScaleFunction.from_json(f.to_json())
    for r in (1e-4, 0.3, 7.0):
        assert g(r) == pytest.approx(f(r), rel=1e-14)
    t = ScaleFunction.tabulated([(1.0, 1.0), (2.0, 4.0)])
    t2 = ScaleFunction.from_json(t.to_json())
    assert t2(1.5) == pytest.approx(2.25, rel=1e-12)


# ---------------------------------------------------------------------------
# doubling certificates
# ---------------------------------------------------------------------------

def test_certify_pure_power():
    cert = certify_doubling(ScaleFunction.power(2.0), np.geomspace(1e-4, 1e2, 33))
    assert cert.beta1 == pytest.approx(2.0, abs=2e-3)
    assert cert.beta2 == pytest.approx(2.0, abs=2e-3)
    assert cert.C == pytest.approx(1.0, abs=1e-6)


def test_certify_power_log_brackets_exponent():
    cert = certify_doubling(ScaleFunction.power_log(2.0, 2.0, math.exp(-1.0)),
                            np.geomspace(1e-6, 1e1, 40))
    assert cert.beta1 <= 2.0 <= cert.beta2
    assert cert.C > 1.0


def test_certify_gamma_power():
    cert = certify_doubling(ScaleFunction.power(GAMMA1), np.geomspace(1e-5, 1e2, 40))
    assert cert.beta1 == pytest.approx(GAMMA1, abs=2e-3)
    assert cert.beta2 == pytest.approx(GAMMA1, abs=2e-3)


def test_certificate_bounds_hold_on_grid():
    f = ScaleFunction.power_log(2.0, 2.0, math.exp(-1.0))
    grid = np.geomspace(1e-6, 1e1, 40)
    cert = certify_doubling(f, grid)
    vals = np.array([float(f(r)) for r in grid])
    for i in range(len(grid)):
        for j in range(i + 1, len(grid)):
            q = grid[j] / grid[i]
            ratio = vals[j] / vals[i]
            assert ratio >= q ** cert.beta1 / cert.C * (1 - 1e-9)
            assert ratio <= q ** cert.beta2 * cert.C * (1 + 1e-9)


def test_non_monotone_table_rejected():
    with pytest.raises(ValueError, match="not a scale function"):
        ScaleFunction.tabulated([(1.0, 1.0), (2.0, 0.5), (3.0, 2.0)])


# ---------------------------------------------------------------------------
# subordination scale Phi
# ---------------------------------------------------------------------------

def test_phi_log_corrected_jump_scale():
    # psi_j carries the squared log; the integral telescopes to 1/log(1/r)
    # and Phi comes out as r^{beta*} log(1/r) below the cutoff
    psi_c = ScaleFunction.power(BETA_STAR)
    psi_j = ScaleFunction.power_log(BETA_STAR, 2.0, R0)
    phi = phi_from_scales(psi_c, psi_j)
    for r in np.geomspace(1e-6, R0, 25):
        expected = r ** BETA_STAR * math.log(1.0 / r)
        assert float(phi(r)) == pytest.approx(expected, rel=0.01)


def test_phi_quadratic_case_at_e_minus_2():
    psi_c = ScaleFunction.power(2.0)
    psi_j = ScaleFunction.power_log(2.0, 2.0, math.exp(-1.0))
    phi = phi_from_scales(psi_c, psi_j)
    assert float(phi(math.exp(-2.0))) == pytest.approx(2.0 * math.exp(-4.0),
                                                       rel=0.01)


def test_phi_divergent_integral_rejected():
    # equal scales make the integrand 1/s, so the integral diverges at zero
    with pytest.raises(NumericalFailure, match="scl-int violated"):
        phi_from_scales(ScaleFunction.power(2.0), ScaleFunction.power(2.0))
    # jump scale above the diffusion scale diverges even faster
    with pytest.raises(NumericalFailure, match="scl-int violated"):
        phi_from_scales(ScaleFunction.power(1.0), ScaleFunction.power(2.0))


def test_phi_dominated_by_jump_scale():
    psi_c = ScaleFunction.power(BETA_STAR)
    psi_j = ScaleFunction.power_log(BETA_STAR, 2.0, R0)
    phi = phi_from_scales(psi_c, psi_j)
    rep = phi.report
    assert rep.comp_jump_C < math.inf
    for r in np.geomspace(1e-7, 10.0, 50):
        assert float(phi(r)) <= rep.comp_jump_C * float(psi_j(r)) * (1 + 1e-9)


# ---------------------------------------------------------------------------
# the chain transform F_{rho,eps}
# ---------------------------------------------------------------------------

def test_transform_below_cutoff_is_identity():
    rho = ScaleFunction.power(2.0)
    assert apply_chain_transform(rho, 1.0, 0.5) == pytest.approx(0.5, rel=1e-14)


def test_transform_straightens_above_cutoff():
    rho = ScaleFunction.power(2.0)
    assert apply_chain_transform(rho, 1.0, 4.0) == pytest.approx(2.0, rel=1e-12)


def test_transform_fixed_point_at_cutoff():
    rho = ScaleFunction.power(GAMMA1)
    assert apply_chain_transform(rho, 0.1, 0.1) == pytest.approx(0.1, rel=1e-12)


def test_transform_continuous_and_increasing():
    rho = ScaleFunction.power(1.7)
    eps = 0.3
    r = np.geomspace(0.01, 30.0, 300)
    vals = apply_chain_transform(rho, eps, r)
    assert np.all(np.diff(vals) > 0.0)
    lo = apply_chain_transform(rho, eps, eps * (1 - 1e-9))
    hi = apply_chain_transform(rho, eps, eps * (1 + 1e-9))
    assert hi - lo < 1e-6 * eps


def test_transform_inverse_consistency():
    rho = ScaleFunction.power(1.3569)
    eps = 0.25
    for r in (0.01, 0.2, 0.4, 3.0, 50.0):
        y = apply_chain_transform(rho, eps, r)
        assert invert_chain_transform(rho, eps, y) == pytest.approx(r, rel=1e-10)


def test_composed_beta_bounds_piecewise_powers():
    grid = np.geomspace(1e-3, 1e3, 25)
    cert, checks = composed_beta_bounds(ScaleFunction.power(4.0),
                                        ScaleFunction.power(2.0), 1.0, grid)
    assert cert.beta1 >= 2.0 - 5e-3
    assert cert.beta2 <= 4.0 + 5e-3
    assert checks["lower_ok"] and checks["upper_ok"]


def test_composed_beta_bounds_self_composition():
    rho = ScaleFunction.power(GAMMA1)
    grid = np.geomspace(1e-3, 1e3, 25)
    cert, checks = composed_beta_bounds(rho, rho, 0.1, grid)
    assert cert.beta2 <= GAMMA1 + 5e-3
    assert checks["upper_ok"]


def test_composed_with_identity_chain_is_unchanged():
    psi = ScaleFunction.power(2.0)
    ident = ScaleFunction.power(1.0)
    grid = np.geomspace(1e-3, 1e3, 25)
    cert, _ = composed_beta_bounds(psi, ident, 0.5, grid)
    assert cert.beta1 == pytest.approx(2.0, abs=2e-3)
    assert cert.beta2 == pytest.approx(2.0, abs=2e-3)


# ---------------------------------------------------------------------------
# variational suprema
# ---------------------------------------------------------------------------

def test_linear_sup_quadratic_oracle():
    res = variational_sup(None, ScaleFunction.power(2.0), 1.0, 1.0, mode="linear")
    assert res.value == pytest.approx(0.25, rel=1e-6)
    assert res.argmax_sigma == pytest.approx(2.0, rel=1e-3)


def test_sup_vanishes_at_zero_distance():
    rho = ScaleFunction.power(GAMMA1)
    phi = ScaleFunction.power(BETA_STAR)
    res = variational_sup(rho, phi, 0.0, 0.37)
    assert res.value == 0.0


def _closed_form(gamma, beta, d, t):
    e = gamma / (beta - gamma)
    return (gamma / beta) ** e * (1.0 - gamma / beta) * (d ** beta / t) ** e


@pytest.mark.parametrize("gamma,beta", [(1.0, 2.0), (1.357, 3.151)])
def test_rho_sup_matches_closed_form(gamma, beta):
    rho = ScaleFunction.power(gamma)
    phi = ScaleFunction.power(beta)
    for d in np.geomspace(0.03, 30.0, 10):
        for t in np.geomspace(0.01, 10.0, 10):
            res = variational_sup(rho, phi, float(d), float(t))
            assert res.value == pytest.approx(_closed_form(gamma, beta, d, t),
                                              rel=1e-6, abs=1e-12)


def test_sup_monotone_in_d_and_t():
    rho = ScaleFunction.power(GAMMA1)
    phi = ScaleFunction.power_log(BETA_STAR, 1.0, R0)
    t = 0.05
    vals = [variational_sup(rho, phi, d, t).value
            for d in np.geomspace(0.01, 3.0, 12)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    d = 0.8
    vals_t = [variational_sup(rho, phi, d, t).value
              for t in np.geomspace(0.002, 2.0, 12)]
    assert all(b <= a + 1e-12 for a, b in zip(vals_t, vals_t[1:]))


def test_sup_modes_validate_inputs():
    phi = ScaleFunction.power(2.0)
    with pytest.raises(ValueError):
        variational_sup(None, phi, 1.0, 1.0, mode="nope")
    with pytest.raises(ValueError):
        variational_sup(None, phi, 1.0, 1.0, mode="rho")
    with pytest.raises(ValueError):
        variational_sup(ScaleFunction.power(1.0), phi, 1.0, 1.0,
                        mode="psi_c_composed")
    with pytest.raises(ValueError):
        variational_sup(None, phi, 1.0, 0.0, mode="linear")


# ---------------------------------------------------------------------------
# minimax window
# ---------------------------------------------------------------------------

def test_minimax_equality_case():
    win = minimax_window(ScaleFunction.power(2.0), 1.0, 1.0)
    assert win.sup_full >= 0.25 - 1e-9


def test_minimax_window_agrees_with_global():
    win = minimax_window(ScaleFunction.power(2.0), 4.0, 1.0)
    assert win.window_applies
    assert win.sup_restricted == pytest.approx(win.sup_full, rel=1e-6)
    assert win.sup_full >= win.lower_bound * (1 - 1e-9)


def test_minimax_c11_all_ones():
    win = minimax_window(ScaleFunction.power(2.0), 4.0, 1.0,
                         beta_star=2.0, C_phi=1.0)
    assert win.c11(1.0, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_minimax_random_cases(rng):
    phi = ScaleFunction.power_log(BETA_STAR, 1.0, R0)
    for _ in range(100):
        t = float(10.0 ** rng.uniform(-5, 0))
        r = 2.0 * phi.inverse(t) * float(10.0 ** rng.uniform(0, 1.5))
        win = minimax_window(phi, r, t)
        assert win.window_applies
        assert win.sup_restricted == pytest.approx(win.sup_full, rel=1e-6)
        assert win.sup_full >= r / (2.0 * phi.inverse(t)) * (1 - 1e-9)
        # the scaling constants stay above 1 and are monotone in the deltas
        assert win.c11(1.0, 1.0) >= 1.0 - 1e-9
        assert win.c11(2.0, 1.0) >= win.c11(1.0, 1.0) - 1e-12
        assert win.c12(4.0) >= win.c12(2.0) - 1e-12


def test_minimax_rejects_sublinear_scale():
    with pytest.raises(NumericalFailure, match="strong uniformity violated"):
        minimax_window(ScaleFunction.power(0.9), 4.0, 1.0)


def test_minimax_scaling_inequalities(rng):
    # phi_*(d1 r, d2 t) <= c11(d1, d2) phi_*(r, t) for r >= 2 phi^{-1}(t),
    # and phi_*(r, t) <= c12(d3) whenever r <= d3 phi^{-1}(t)
    phi = ScaleFunction.power_log(2.4, 1.0, 0.4)
    for _ in range(25):
        t = float(10.0 ** rng.uniform(-4, 0))
        base = 2.0 * phi.inverse(t)
        r = base * float(10.0 ** rng.uniform(0, 1.0))
        win = minimax_window(phi, r, t)
        d1 = float(10.0 ** rng.uniform(-0.3, 0.3))
        d2 = float(10.0 ** rng.uniform(-0.3, 0.3))
        scaled = variational_sup(None, phi, d1 * r, d2 * t, mode="linear")
        assert scaled.value <= win.c11(d1, d2) * win.sup_full * (1 + 1e-6)
        d3 = float(10.0 ** rng.uniform(-1.0, 0.3))
        small = variational_sup(None, phi, d3 * phi.inverse(t), t, mode="linear")
        assert small.value <= win.c12(d3) * (1 + 1e-6)
