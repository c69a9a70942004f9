"""Chain metrics d_eps: distances, profiles, exponent fits, the transform
sandwich, and the implicit eps(t,x,y) equation."""
import io
import math

import numpy as np
import pytest

from hklab import (
    FiniteMetricSpace,
    NumericalFailure,
    ScaleFunction,
    chain_distance,
    chain_profile,
    check_transform_sandwich,
    fit_rho_exponent,
    phi_from_scales,
    sample_interior_pairs,
    solve_epsilon_star,
    space_from_csv,
    space_to_csv,
    variational_sup,
)


@pytest.fixture(scope="module")
def line_space():
    return FiniteMetricSpace.from_coordinates([[0.0], [0.4], [1.0]],
                                              labels=["a", "b", "c"])


# ---------------------------------------------------------------------------
# chain distances on the three-point line
# ---------------------------------------------------------------------------

def test_direct_hop_when_eps_exceeds_distance(line_space):
    assert chain_distance(line_space, 1.1, 0, 2) == pytest.approx(1.0)


def test_two_hop_chain(line_space):
    # hops 0.4 and 0.6 both clear eps = 0.7; total length is still 1.0
    assert chain_distance(line_space, 0.7, 0, 2) == pytest.approx(1.0)


def test_blocked_chain_is_infinite(line_space):
    assert chain_distance(line_space, 0.5, 0, 2) == math.inf


def test_strict_hop_inequality(line_space):
    # eps equal to the 0.6 gap does not open it: hops need d < eps
    assert chain_distance(line_space, 0.6, 0, 2) == math.inf
    assert chain_distance(line_space, 0.6 + 1e-9, 0, 2) == pytest.approx(1.0)


def test_chain_distance_self_is_zero(line_space):
    assert chain_distance(line_space, 0.3, 1, 1) == 0.0


def test_chain_metric_properties(rng):
    pts = rng.uniform(0.0, 1.0, size=(40, 2))
    space = FiniteMetricSpace.from_coordinates(pts)
    eps = 0.25
    from hklab.chain_metric import chain_distances_from
    rows = chain_distances_from(space, eps, list(range(space.n)))
    finite = np.isfinite(rows)
    assert np.allclose(rows, rows.T, atol=1e-12)
    assert np.all(rows >= space.dist - 1e-9)
    # triangle inequality on the eps-connected component
    for _ in range(200):
        i, j, k = rng.integers(0, space.n, size=3)
        if finite[i, j] and finite[j, k]:
            assert rows[i, k] <= rows[i, j] + rows[j, k] + 1e-9


def test_collapse_to_metric_above_diameter(rng):
    pts = rng.uniform(0.0, 1.0, size=(25, 2))
    space = FiniteMetricSpace.from_coordinates(pts)
    eps = space.diameter() * 1.01
    from hklab.chain_metric import chain_distances_from
    rows = chain_distances_from(space, eps, list(range(space.n)))
    assert np.allclose(rows, space.dist, atol=1e-12)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def test_profile_above_diameter_equals_raw(line_space):
    eps = np.geomspace(1.2, 4.0, 10)
    prof = chain_profile(line_space, [(0, 2), (0, 1)], eps)
    assert np.allclose(prof.values[0], 1.0)
    assert np.allclose(prof.values[1], 0.4)


def test_profile_singleton_pair_is_zero(line_space):
    prof = chain_profile(line_space, [(1, 1)], np.geomspace(0.1, 2.0, 10))
    assert np.allclose(prof.values, 0.0)


def test_profile_nonincreasing_in_eps(gasket_of, resistance_of):
    g = gasket_of(0.6, 4)
    R = resistance_of(0.6, 4)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    eps = np.geomspace(0.25, 2.0, 12)
    prof = chain_profile(space, [(g.corners[1], g.corners[2])], eps)
    vals = prof.values[0]
    assert np.all(np.diff(vals) <= 1e-9)
    # ratios d_eps/eps strictly grow as eps shrinks: the chain condition fails
    ratios = vals / eps
    assert ratios[0] > ratios[-1] * 2.0


def test_profile_requires_geometric_grid(line_space):
    bad = np.array([0.1, 0.2, 0.25, 0.4, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0])
    with pytest.raises(ValueError, match="geometric"):
        chain_profile(line_space, [(0, 2)], bad)


# ---------------------------------------------------------------------------
# exponent fitting
# ---------------------------------------------------------------------------

def test_fit_euclidean_segment_is_linear(rng):
    xs = np.sort(rng.uniform(0.0, 1.0, size=120))
    xs[0], xs[-1] = 0.0, 1.0
    space = FiniteMetricSpace.from_coordinates(xs[:, None])
    gap = float(np.diff(xs).max())
    eps = np.geomspace(1.1 * gap, 0.3, 12)
    prof = chain_profile(space, [(0, space.n - 1)], eps)
    fit = fit_rho_exponent(prof)
    assert fit.gamma == pytest.approx(1.0, abs=0.02)
    assert fit.C_minus <= fit.C_plus


def test_fit_gasket_chain_exponent(gasket_of, resistance_of, params06):
    g = gasket_of(0.6, 5)
    R = resistance_of(0.6, 5)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    iu, ju, _ = g.edges()
    gap = float(np.min(R[iu, ju]))
    pairs = [(g.corners[0], g.corners[1]), (g.corners[0], g.corners[2]),
             (g.corners[1], g.corners[2])] + sample_interior_pairs(g, 12, 7)
    prof = chain_profile(space, pairs, np.geomspace(1.05 * gap, 2.0, 18))
    fit = fit_rho_exponent(prof)
    assert fit.gamma == pytest.approx(params06.gamma1, rel=0.05)
    # every sample obeys the fitted envelope constants
    assert np.all(fit.residuals <= math.log(fit.C_plus) + 1e-9)
    assert np.all(fit.residuals >= -math.log(fit.C_minus) - 1e-9)


def test_fit_insufficient_data(line_space):
    prof = chain_profile(line_space, [(0, 1)], np.geomspace(1.2, 3.0, 10))
    with pytest.raises(NumericalFailure, match="insufficient data"):
        fit_rho_exponent(prof)


def test_fit_two_sided_on_uneven_gasket(gasket_of, resistance_of, params08):
    # tau = 0.8 splits the corner races: the bottom pair grows at the
    # bottom-edge Moran rate, the mixed pairs at the slower mixed rate,
    # so the single-exponent fit spreads and the two-sided bracket spans
    # the two roots
    g = gasket_of(0.8, 5)
    R = resistance_of(0.8, 5)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    iu, ju, _ = g.edges()
    gap = float(np.min(R[iu, ju]))
    pairs = [(g.corners[0], g.corners[1]), (g.corners[0], g.corners[2]),
             (g.corners[1], g.corners[2])]
    prof = chain_profile(space, pairs, np.geomspace(1.05 * gap, float(R.max()), 20))
    fit = fit_rho_exponent(prof)
    assert fit.two_sided is not None
    lo, hi = fit.two_sided
    assert lo < hi
    g_small = min(params08.gamma1, params08.gamma2)
    g_large = max(params08.gamma1, params08.gamma2)
    assert lo < g_small * 1.25
    assert hi > g_large * 0.55


# ---------------------------------------------------------------------------
# transform sandwich
# ---------------------------------------------------------------------------

def test_sandwich_trivial_above_diameter(line_space):
    rho = ScaleFunction.power(1.5)
    rep = check_transform_sandwich(line_space, rho, np.geomspace(1.2, 5.0, 10),
                                   [(0, 1), (0, 2), (1, 2)])
    assert rep.forward_min == pytest.approx(1.0, abs=1e-12)
    assert rep.forward_max == pytest.approx(1.0, abs=1e-12)


def test_sandwich_stable_with_correct_rho(gasket_of, resistance_of, params06):
    g = gasket_of(0.6, 5)
    R = resistance_of(0.6, 5)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    iu, ju, _ = g.edges()
    gap = float(np.min(R[iu, ju]))
    pairs = [(g.corners[0], g.corners[1]), (g.corners[1], g.corners[2])] \
        + sample_interior_pairs(g, 10, 11)
    eps = np.geomspace(1.05 * gap, 2.0, 14)
    rep = check_transform_sandwich(space, ScaleFunction.power(params06.gamma1),
                                   eps, pairs)
    consts = list(rep.per_eps_constant.values())
    assert max(consts) / min(consts) < 2.0
    assert rep.forward_constant < 2.5


def test_sandwich_identity_rho_drifts(gasket_of, resistance_of):
    # with rho = id the transform is the identity and the sandwich constant
    # inherits the diverging d_eps/d ratios
    g = gasket_of(0.6, 5)
    R = resistance_of(0.6, 5)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    iu, ju, _ = g.edges()
    gap = float(np.min(R[iu, ju]))
    pairs = [(g.corners[1], g.corners[2])]
    eps = np.geomspace(1.05 * gap, 2.0, 14)
    rep = check_transform_sandwich(space, ScaleFunction.power(1.0), eps, pairs)
    consts = rep.per_eps_constant
    keys = sorted(consts)
    assert consts[keys[0]] > 2.0 * consts[keys[-1]]


# ---------------------------------------------------------------------------
# the implicit eps(t, x, y) equation
# ---------------------------------------------------------------------------

def test_epsilon_star_direct_regime(line_space):
    phi = ScaleFunction.power(2.0)
    assert solve_epsilon_star(line_space, phi, 0, 2, 2.0) == pytest.approx(2.0,
                                                                           rel=1e-6)


def test_epsilon_star_two_hop_regime(line_space):
    phi = ScaleFunction.power(2.0)
    assert solve_epsilon_star(line_space, phi, 0, 2, 0.8) == pytest.approx(0.8,
                                                                           rel=1e-6)


def test_epsilon_star_below_lattice_floor(line_space):
    phi = ScaleFunction.power(2.0)
    with pytest.raises(NumericalFailure, match="time too small for lattice"):
        solve_epsilon_star(line_space, phi, 0, 2, 0.5)


def test_epsilon_star_solution_is_maximal(gasket_of, resistance_of):
    g = gasket_of(0.6, 4)
    R = resistance_of(0.6, 4)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    phi = ScaleFunction.power(2.2)
    x, y = g.corners[1], g.corners[2]
    for t in (0.5, 1.0, 2.5):
        es = solve_epsilon_star(space, phi, x, y, t)
        val = float(phi(es)) / es * chain_distance(space, es, x, y)
        assert val <= t * (1 + 1e-9)
        bumped = es * 1.02
        val_up = float(phi(bumped)) / bumped * chain_distance(space, bumped, x, y)
        assert val_up > t * (1 - 1e-9)


def test_sup_to_chain_bridge(gasket_of, resistance_of, params06):
    # the variational sup with (rho, Phi) tracks d_{eps*}/eps* up to a
    # two-sided constant across pairs and times
    g = gasket_of(0.6, 5)
    R = resistance_of(0.6, 5)
    space = FiniteMetricSpace(labels=list(g.labels), dist=R)
    iu, ju, _ = g.edges()
    gap = float(np.min(R[iu, ju]))
    diam = float(R.max())
    rho = ScaleFunction.power(params06.gamma1)
    r0 = math.exp(-2.0 / params06.beta_star)
    phi = phi_from_scales(ScaleFunction.power(params06.beta_star),
                          ScaleFunction.power_log(params06.beta_star, 2.0, r0))
    pairs = [(g.corners[0], g.corners[1]), (g.corners[1], g.corners[2])] \
        + sample_interior_pairs(g, 6, 3)
    ratios = []
    for a, b in pairs:
        d = float(R[a, b])
        for t in np.geomspace(float(phi(3 * gap)), float(phi(diam / 2)), 6):
            try:
                es = solve_epsilon_star(space, phi, a, b, float(t))
            except NumericalFailure:
                continue
            de = chain_distance(space, es, a, b)
            sup = variational_sup(rho, phi, d, float(t)).value
            if math.isfinite(de) and de > 0.0 and sup > 0.0:
                ratios.append(sup / (de / es))
    ratios = np.asarray(ratios)
    assert ratios.size >= 20
    assert ratios.max() / ratios.min() < 25.0


# ---------------------------------------------------------------------------
# construction and CSV round-trip
# ---------------------------------------------------------------------------

def test_space_validation():
    with pytest.raises(ValueError, match="symmetric"):
        FiniteMetricSpace(labels=["a", "b"], dist=np.array([[0.0, 1.0],
                                                            [2.0, 0.0]]))
    with pytest.raises(ValueError, match="triangle"):
        FiniteMetricSpace(labels=["a", "b", "c"],
                          dist=np.array([[0.0, 1.0, 5.0],
                                         [1.0, 0.0, 1.0],
                                         [5.0, 1.0, 0.0]]))
    with pytest.raises(ValueError, match="zero or negative"):
        FiniteMetricSpace(labels=["a", "b"], dist=np.zeros((2, 2)))


def test_csv_roundtrip(line_space):
    text = space_to_csv(line_space)
    back = space_from_csv(io.StringIO(text))
    assert back.labels == line_space.labels
    assert np.allclose(back.dist, line_space.dist, atol=1e-15)


def test_csv_malformed_rejected():
    with pytest.raises(ValueError):
        space_from_csv(io.StringIO("a,b\n0.0\n"))
