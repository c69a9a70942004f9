r"""Weighted Sierpinski gasket networks and their self-similar exponents.

The gasket carries a one-parameter family of self-similar Dirichlet forms:
the top cell gets form weight :math:`1/\sigma` and the two bottom cells get
:math:`1/\tau`, where :math:`(\sigma,\lambda)` solve the renormalization
system

.. math::

    \lambda\tau(1+\tau-2\sigma) - (1-\tau)\sigma = 0, \qquad
    2(2\tau-1)\sigma^2 + 2(\tau^2-3\tau+1)\sigma + \tau(1-\tau^2) = 0,

with :math:`\sigma \in (1-\tau, 1)`.  Only :math:`1/2 < \tau < 1` admits a
positive solution.  The base cell is the trace of a three-arm star with arm
conductances :math:`(\lambda^{-1}, 1, 1)`, so corner-to-corner resistances
are exact fixed points of the decimation and stay constant across levels.

Volume and resistance growth are governed by the Moran-type roots

.. math::

    \sigma^{\alpha_*} + 2\tau^{\alpha_*} = 1, \qquad
    \sigma^{\gamma_1} + \tau^{\gamma_1} = 1, \qquad 2\tau^{\gamma_2} = 1,

with walk exponent :math:`\beta_* = \alpha_* + 1`.  gamma1 controls chains
that must cross the unevenly weighted top cell, gamma2 chains running along
the evenly weighted bottom edge; whether they coincide decides if a single
chain-scale exists for the whole space.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .numerics import NumericalFailure, bisect_root

_CORNER_COORDS = {
    "1": (0.5, math.sqrt(3.0) / 2.0),
    "2": (0.0, 0.0),
    "3": (1.0, 0.0),
}

MAX_LEVEL = 12


# ---------------------------------------------------------------------------
# renormalization and exponents
# ---------------------------------------------------------------------------

def _renorm_poly(tau: float, sigma: float) -> float:
    return (2.0 * (2.0 * tau - 1.0) * sigma * sigma
            + 2.0 * (tau * tau - 3.0 * tau + 1.0) * sigma
            + tau * (1.0 - tau * tau))


def solve_renormalization(tau: float) -> tuple[float, float]:
    """Solve the gasket renormalization system; returns (sigma, lambda).

    The polynomial has a unique root sigma in (1-tau, 1) for 1/2 < tau < 1;
    outside that range the induced star weight turns nonpositive and no
    admissible resistance form exists.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if tau <= 0.5:
        raise ValueError(
            f"no admissible resistance form: tau = {tau} <= 1/2 forces a "
            "nonpositive top-cell weight")
    sigma = bisect_root(lambda s: _renorm_poly(tau, s), 1.0 - tau, 1.0)
    denom = tau * (1.0 + tau - 2.0 * sigma)
    if denom <= 0.0:
        raise NumericalFailure(
            f"no admissible resistance form: solved sigma = {sigma:.12g} "
            "leaves the weight equation degenerate")
    lam = (1.0 - tau) * sigma / denom
    if lam <= 0.0:
        raise NumericalFailure(
            f"no admissible resistance form: lambda = {lam:.6g} <= 0")
    return sigma, lam


def moran_exponents(sigma: float, tau: float) -> tuple[float, float, float, float]:
    """(alpha_star, beta_star, gamma1, gamma2) for cell weights (sigma, tau, tau)."""
    for name, v in (("sigma", sigma), ("tau", tau)):
        if not (0.0 < v < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {v}")
    alpha = bisect_root(lambda a: sigma ** a + 2.0 * tau ** a - 1.0, 0.05, 40.0)
    gamma1 = bisect_root(lambda g: sigma ** g + tau ** g - 1.0, 0.05, 40.0)
    gamma2 = math.log(2.0) / math.log(1.0 / tau)
    return alpha, alpha + 1.0, gamma1, gamma2


@dataclass
class GasketParams:
    """Solved parameter set for one weighted gasket."""
    tau: float
    sigma: float
    lam: float
    alpha_star: float
    beta_star: float
    gamma1: float
    gamma2: float
    level: Optional[int] = None

    @classmethod
    def solve(cls, tau: float) -> "GasketParams":
        sigma, lam = solve_renormalization(tau)
        alpha, beta, g1, g2 = moran_exponents(sigma, tau)
        return cls(tau=tau, sigma=sigma, lam=lam, alpha_star=alpha,
                   beta_star=beta, gamma1=g1, gamma2=g2)

    def residuals(self) -> dict:
        """Defining-equation residuals; all should be ~ machine precision."""
        return {
            "weight_eq": abs(self.lam * self.tau * (1.0 + self.tau - 2.0 * self.sigma)
                             - (1.0 - self.tau) * self.sigma),
            "renorm_poly": abs(_renorm_poly(self.tau, self.sigma)),
            "moran": abs(self.sigma ** self.alpha_star
                         + 2.0 * self.tau ** self.alpha_star - 1.0),
            "chain_mixed": abs(self.sigma ** self.gamma1
                               + self.tau ** self.gamma1 - 1.0),
            "chain_bottom": abs(2.0 * self.tau ** self.gamma2 - 1.0),
        }

    def races_split(self) -> bool:
        """True when top-crossing and bottom-edge chains grow at different rates."""
        return self.gamma1 > self.gamma2 + 1e-12

    def to_dict(self) -> dict:
        return {"tau": self.tau, "sigma": self.sigma, "lambda": self.lam,
                "alpha_star": self.alpha_star, "beta_star": self.beta_star,
                "gamma1": self.gamma1, "gamma2": self.gamma2,
                "level": self.level}


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def _canonical_address(word: str, corner: str) -> str:
    # F_{u.a.b^k}(p_b) = F_{u.b.a^k}(p_a): every junction has exactly two
    # names, u + a + b^k and u + b + a^k; outer corners a^m have one.
    s = word + corner
    b = s[-1]
    k = 1
    while k < len(s) and s[-k - 1] == b:
        k += 1
    if k == len(s):
        return s
    a = s[-k - 1]
    alt = s[:-k - 1] + b + a * k
    return s if s < alt else alt


@dataclass
class GasketGraph:
    """Finite weighted gasket approximation at a fixed subdivision level."""
    params: GasketParams
    level: int
    labels: list[str]                      # canonical vertex addresses
    coords: np.ndarray                     # (n, 2) Euclidean embedding
    conductance: scipy.sparse.csr_matrix   # symmetric, zero diagonal
    measure: np.ndarray                    # (n,) positive, sums to 1
    corners: tuple[int, int, int]          # indices of the three outer corners

    @property
    def n_vertices(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        return self._index[label]

    def __post_init__(self):
        self._index = {lab: k for k, lab in enumerate(self.labels)}

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(i, j, c) arrays with i < j for every conductance edge."""
        coo = scipy.sparse.triu(self.conductance, k=1).tocoo()
        return coo.row, coo.col, coo.data

    def laplacian(self) -> scipy.sparse.csr_matrix:
        c = self.conductance
        deg = np.asarray(c.sum(axis=1)).ravel()
        return (scipy.sparse.diags(deg) - c).tocsr()

    def to_dict(self) -> dict:
        i, j, c = self.edges()
        return {
            "params": self.params.to_dict(),
            "level": self.level,
            "labels": list(self.labels),
            "coords": [[float(x), float(y)] for x, y in self.coords],
            "edges": [[int(a), int(b), float(w)] for a, b, w in zip(i, j, c)],
            "measure": [float(m) for m in self.measure],
            "corners": list(self.corners),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_gasket(params: GasketParams, level: int) -> GasketGraph:
    """Assemble the level-n network for a solved parameter set.

    Each of the 3^n cells contributes the triangle trace of the weighted
    star (unit current convention: arm conductances (1/lambda, 1, 1)),
    scaled by the product of its cell weights; the measure splits each
    cell's Moran mass equally among its three corners.
    """
    if not isinstance(level, int) or level < 0:
        raise ValueError(f"level must be a nonnegative integer, got {level!r}")
    if level > MAX_LEVEL:
        raise ValueError(f"level {level} exceeds the supported maximum {MAX_LEVEL}")

    a = (1.0 / params.lam, 1.0, 1.0)
    a_sum = sum(a)
    base = {(0, 1): a[0] * a[1] / a_sum,
            (0, 2): a[0] * a[2] / a_sum,
            (1, 2): a[1] * a[2] / a_sum}
    w_letter = {"1": 1.0 / params.sigma, "2": 1.0 / params.tau, "3": 1.0 / params.tau}
    m_letter = {"1": params.sigma ** params.alpha_star,
                "2": params.tau ** params.alpha_star,
                "3": params.tau ** params.alpha_star}

    index: dict[str, int] = {}
    coords: list[tuple[float, float]] = []

    def vertex(word: str, corner: str) -> int:
        addr = _canonical_address(word, corner)
        k = index.get(addr)
        if k is None:
            x, y = _CORNER_COORDS[corner]
            for letter in reversed(word):
                px, py = _CORNER_COORDS[letter]
                x, y = 0.5 * (x + px), 0.5 * (y + py)
            k = len(index)
            index[addr] = k
            coords.append((x, y))
        return k

    rows: list[int] = []
    cols: list[int] = []
    data: list[float] = []
    n_cells = 3 ** level
    mass = np.zeros((3 ** (level + 1) + 3) // 2)

    for cell in itertools.product("123", repeat=level):
        word = "".join(cell)
        w = 1.0
        m = 1.0
        for letter in word:
            w *= w_letter[letter]
            m *= m_letter[letter]
        vids = [vertex(word, c) for c in "123"]
        for (i, j), c in base.items():
            rows.append(vids[i]); cols.append(vids[j]); data.append(w * c)
            rows.append(vids[j]); cols.append(vids[i]); data.append(w * c)
        for v in vids:
            mass[v] += m / 3.0

    n = len(index)
    expected = (3 ** (level + 1) + 3) // 2
    if n != expected:
        raise AssertionError(f"vertex bookkeeping broke: {n} != {expected}")

    # reorder to sorted canonical addresses for a reproducible layout
    labels = sorted(index)
    perm = np.array([index[lab] for lab in labels])
    rank = np.empty_like(perm)
    rank[perm] = np.arange(n)
    cond = scipy.sparse.coo_matrix(
        (data, (rank[np.array(rows)], rank[np.array(cols)])), shape=(n, n)).tocsr()
    cond.sum_duplicates()
    coords_arr = np.asarray(coords)[perm]
    mass = mass[perm]

    corners = tuple(labels.index(c * (level + 1)) for c in "123")
    params_at_level = GasketParams(tau=params.tau, sigma=params.sigma,
                                   lam=params.lam, alpha_star=params.alpha_star,
                                   beta_star=params.beta_star, gamma1=params.gamma1,
                                   gamma2=params.gamma2, level=level)
    total = float(mass.sum())
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"measure normalization drifted: sum = {total!r}")
    return GasketGraph(params=params_at_level, level=level, labels=labels,
                       coords=coords_arr, conductance=cond, measure=mass,
                       corners=corners)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# resistance
# ---------------------------------------------------------------------------

def _grounded_system(graph: GasketGraph, ground: Optional[int] = None):
    if ground is None:
        ground = graph.corners[1]
    L = graph.laplacian().tolil()
    keep = np.ones(graph.n_vertices, dtype=bool)
    keep[ground] = False
    Lg = L[keep][:, keep].tocsr()
    return Lg, keep, ground


def effective_resistance(graph: GasketGraph, x: int, y: int,
                         rel_residual: float = 1e-10) -> float:
    """Two-point effective resistance by conjugate gradients.

    Unit current is injected at x and extracted at y with one corner
    grounded; the solve is verified against the requested relative residual
    and refused if CG stagnates.
    """
    if x == y:
        return 0.0
    Lg, keep, ground = _grounded_system(graph)
    pos = np.cumsum(keep) - 1
    b = np.zeros(int(keep.sum()))
    if x != ground:
        b[pos[x]] = 1.0
    if y != ground:
        b[pos[y]] -= 1.0
    diag = Lg.diagonal()
    M = scipy.sparse.diags(1.0 / diag)
    try:
        u, info = scipy.sparse.linalg.cg(Lg, b, rtol=1e-13, atol=0.0, M=M,
                                         maxiter=40 * Lg.shape[0])
    except TypeError:  # older scipy spells the tolerance differently
        u, info = scipy.sparse.linalg.cg(Lg, b, tol=1e-13, atol=0.0, M=M,
                                         maxiter=40 * Lg.shape[0])
    resid = np.linalg.norm(Lg @ u - b) / np.linalg.norm(b)
    if info != 0 or resid > rel_residual:
        raise NumericalFailure(
            f"effective_resistance: CG residual {resid:.3e} above {rel_residual:g}")
    ux = u[pos[x]] if x != ground else 0.0
    uy = u[pos[y]] if y != ground else 0.0
    return float(ux - uy)


def resistance_matrix(graph: GasketGraph, max_dense: int = 6000) -> np.ndarray:
    """All-pairs effective resistance via one dense Cholesky factorization."""
    n = graph.n_vertices
    if n > max_dense:
        raise NumericalFailure(
            f"resistance_matrix: {n} vertices exceeds dense cutoff {max_dense}; "
            "use effective_resistance per pair")
    Lg, keep, ground = _grounded_system(graph)
    G = Lg.toarray()
    cho = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    Ginv = scipy.linalg.cho_solve(cho, np.eye(n - 1), check_finite=False)
    M = np.zeros((n, n))
    idx = np.where(keep)[0]
    M[np.ix_(idx, idx)] = Ginv
    d = np.diag(M)
    R = d[:, None] + d[None, :] - 2.0 * M
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 0.0)
    return R


def lattice_spacing(graph: GasketGraph, R: np.ndarray) -> float:
    """Largest nearest-neighbor resistance distance: the mesh of the level."""
    i, j, _ = graph.edges()
    return float(np.max(R[i, j]))


def sample_interior_pairs(graph: GasketGraph, count: int, seed: int) -> list[tuple[int, int]]:
    """Deterministic sample of distinct non-corner vertex pairs."""
    rng = np.random.default_rng(seed)
    corner_set = set(graph.corners)
    interior = np.array([k for k in range(graph.n_vertices) if k not in corner_set])
    pairs: list[tuple[int, int]] = []
    seen = set()
    guard = 0
    while len(pairs) < count and guard < 100 * count:
        guard += 1
        a, b = rng.choice(interior, size=2, replace=False)
        key = (min(int(a), int(b)), max(int(a), int(b)))
        if key not in seen:
            seen.add(key)
            pairs.append(key)
    return pairs


def lift_pairs(base: GasketGraph, fine: GasketGraph,
               pairs: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Map vertex pairs of a coarse gasket to the same physical points on a
    finer one.

    A level-k address names a corner of its deepest cell; repeating the last
    letter descends into the sub-cell that keeps that corner fixed, so the
    extended address is the same point of the fractal.  Verified against the
    embedding coordinates, so a non-matching construction fails loudly
    instead of silently comparing different points.
    """
    k = fine.level - base.level
    if k < 0:
        raise ValueError("lift_pairs: fine level below base level")
    out: list[tuple[int, int]] = []
    for a, b in pairs:
        la, lb = base.labels[a], base.labels[b]
        fa, fb = fine.index_of(la + la[-1] * k), fine.index_of(lb + lb[-1] * k)
        if (np.max(np.abs(base.coords[a] - fine.coords[fa])) > 1e-9
                or np.max(np.abs(base.coords[b] - fine.coords[fb])) > 1e-9):
            raise NumericalFailure(
                f"lift_pairs: address lift of ({la}, {lb}) moved the point")
        out.append((fa, fb))
    return out


def corner_resistance_report(graph: GasketGraph) -> dict:
    """Corner-to-corner resistances against the renormalization fixed point.

    The base star has arms (1/lambda, 1, 1), so the limit form predicts
    R(p1,p2) = R(p1,p3) = 1 + lambda and R(p2,p3) = 2 at every level.
    The dilation factor is the measured/predicted ratio; the construction
    realizes the fixed point exactly, so it should be 1 to solver noise.
    """
    lam = graph.params.lam
    predicted = {
        ("p1", "p2"): 1.0 + lam,
        ("p1", "p3"): 1.0 + lam,
        ("p2", "p3"): 2.0,
    }
    corners = {"p1": graph.corners[0], "p2": graph.corners[1], "p3": graph.corners[2]}
    pairs = {}
    ratios = []
    for (na, nb), pred in predicted.items():
        meas = effective_resistance(graph, corners[na], corners[nb])
        pairs[f"{na}:{nb}"] = {"measured": meas, "predicted": pred, "ratio": meas / pred}
        ratios.append(meas / pred)
    return {"pairs": pairs, "dilation": float(np.mean(ratios))}


def _cell_prefixes(label: str) -> set:
    """First letters of all addresses of the vertex (junctions have two)."""
    out = {label[0]}
    b = label[-1]
    k = 1
    while k < len(label) and label[-k - 1] == b:
        k += 1
    if k < len(label):
        a = label[-k - 1]
        out.add((label[:-k - 1] + b + a * k)[0])
    return out


@dataclass
class CornerChainGrowth:
    """Chain-metric growth table R_r(p_i,p_j)/r across levels.

    rows hold (level, pair, r, distance, ratio); fitted maps each pair to
    the growth exponent g in R_r/r ~ (R/r)^g from the finest level, nan
    when the pair has no scaling window at that level (connectivity floor
    within a factor 3*contraction of the distance); the per-level max
    ratios witness divergence (failure of the plain chain condition).
    piecewise carries the crossover diagnostics of the two-race regime
    and is None when gamma1 <= gamma2.
    """

    params: GasketParams
    levels: tuple
    rows: list
    fitted: dict
    max_ratio_by_level: dict
    piecewise: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "levels": list(self.levels),
            "fitted": dict(self.fitted),
            "max_ratio_by_level": {k: list(v) for k, v in self.max_ratio_by_level.items()},
            "piecewise": self.piecewise,
            "rows": [list(r) for r in self.rows],
        }

    def to_csv(self) -> str:
        lines = ["level,pair,r,distance,ratio"]
        for level, pair, r, dist, ratio in self.rows:
            lines.append(f"{level},{pair},{r:.17g},{dist:.17g},{ratio:.17g}")
        return "\n".join(lines) + "\n"


def corner_chain_growth(params: GasketParams, levels) -> CornerChainGrowth:
    """Measure corner-pair chain metrics R_r/r over a staircase of levels.

    The r grid at each level runs geometrically from just above the finest
    edge gap (where the chain metric still resolves detours) up to the
    diameter.  Exponents are fitted per pair on the finest level by
    regressing log(R_r/r) on log(R/r) with a free intercept (for a single
    pair the comparability constant would bias a through-origin fit) over
    a staircase grid r_k = floor * (sigma v tau)^{-k} aligned with the
    self-similar cell contraction; the finest finite step (hop lengths
    saturate at the pair's connectivity floor) and steps within a factor
    3 of the pair distance (plateau transient) are excluded.  In the gamma1 > gamma2 regime the
    piecewise profile

        R_r/r ~ (R/r)^g2 v (Rm(x,q)/r)^g1 v (Rm(y,q)/r)^g1 v 1

    is evaluated, where q is the junction shared by the separating cells,
    Rm(x,q) the least resistance from x to the horizontal line through q
    inside x's cell, and the crossover radius is
    r_inf = (Rm(x,q) v Rm(y,q))^{g1/(g1-g2)} / R^{g2/(g1-g2)}.
    """
    from .chain_metric import FiniteMetricSpace, chain_distances_from, chain_profile
    from .numerics import slope_fit

    levels = tuple(sorted(int(l) for l in levels))
    if not levels:
        raise ValueError("need at least one level")
    pair_names = (("p1", "p2"), ("p1", "p3"), ("p2", "p3"))
    rows = []
    max_ratio_by_level = {f"{a}:{b}": [] for a, b in pair_names}
    finest = {}

    for level in levels:
        graph = build_gasket(params, level)
        R = resistance_matrix(graph)
        space = FiniteMetricSpace(labels=list(graph.labels), dist=R)
        iu, ju, _ = graph.edges()
        gap = float(np.min(R[iu, ju]))
        diam = float(R.max())
        n_pts = max(10, int(math.ceil(8 * math.log10(diam / (1.05 * gap)))))
        eps_grid = np.geomspace(1.05 * gap, diam, n_pts)
        corners = {"p1": graph.corners[0], "p2": graph.corners[1], "p3": graph.corners[2]}
        pairs = [(corners[a], corners[b]) for a, b in pair_names]
        profile = chain_profile(space, pairs, eps_grid)
        for k, (a, b) in enumerate(pair_names):
            key = f"{a}:{b}"
            dist = R[pairs[k]]
            ratios = profile.values[k] / profile.eps_grid
            rows.extend(
                (level, key, float(e), float(dist), float(rt))
                for e, rt in zip(profile.eps_grid, ratios)
            )
            finite = ratios[np.isfinite(ratios)]
            max_ratio_by_level[key].append(float(np.max(finite)) if finite.size else math.inf)
        if level == levels[-1]:
            finest = {"graph": graph, "R": R, "space": space, "gap": gap,
                      "diam": diam, "pairs": pairs, "corners": corners,
                      "profile": profile}

    # staircase fit on the finest level, one step per cell contraction;
    # pairs whose scaling window is thin (slowly contracting cells) get
    # half- or quarter-level steps until enough points survive
    graph, R, space = finest["graph"], finest["R"], finest["space"]
    contraction = max(params.sigma, params.tau)
    floor = 1.05 * finest["gap"]
    diam = finest["diam"]

    def _stair_fit(ia, ib, dist):
        for split in (1, 2, 4):
            ratio = (1.0 / contraction) ** (1.0 / split)
            n_steps = int(math.floor(math.log(diam / floor) / math.log(ratio)))
            stair = floor * ratio ** np.arange(n_steps + 1)
            vals = np.array([chain_distances_from(space, float(e), [ia])[0, ib]
                             for e in stair])
            keep = (stair < dist / 3.0) & np.isfinite(vals)
            finite_idx = np.flatnonzero(keep)
            if not finite_idx.size:
                continue
            # hop lengths saturate within one cell contraction of the
            # pair's connectivity floor; exclude that transient window
            eps_floor = stair[finite_idx[0]]
            keep &= stair >= eps_floor / contraction * (1.0 - 1e-9)
            if keep.sum() >= (4 if split < 4 else 3):
                x = np.log(dist / stair[keep])
                y = np.log(vals[keep] / stair[keep])
                return float(slope_fit(x, y)[0])
        # no scaling window: the connectivity floor sits within a factor
        # 3*contraction of the pair distance at this level
        return math.nan

    fitted = {}
    for k, (a, b) in enumerate(pair_names):
        ia, ib = finest["pairs"][k]
        fitted[f"{a}:{b}"] = _stair_fit(ia, ib, float(R[ia, ib]))

    piecewise = None
    if params.races_split():
        piecewise = {}
        g1, g2 = params.gamma1, params.gamma2
        graph, R = finest["graph"], finest["R"]
        coords = graph.coords
        level = levels[-1]
        for k, (a, b) in enumerate(pair_names):
            key = f"{a}:{b}"
            ia, ib = finest["pairs"][k]
            da, db = graph.labels[ia][0], graph.labels[ib][0]
            q_label = _canonical_address(da, db * level) if level else None
            # level 0 has no junction vertices; piecewise needs level >= 1
            if q_label is None or q_label not in graph.labels:
                continue
            iq = graph.index_of(q_label)
            yq = coords[iq, 1]
            r_minus = {}
            for name, idx, digit in ((a, ia, da), (b, ib, db)):
                on_line = [
                    v for v in range(graph.n_vertices)
                    if abs(coords[v, 1] - yq) <= 1e-9
                    and digit in _cell_prefixes(graph.labels[v])
                ]
                r_minus[name] = float(min(R[idx, v] for v in on_line))
            dist = float(R[ia, ib])
            rm = max(r_minus[a], r_minus[b])
            r_inf = rm ** (g1 / (g1 - g2)) / dist ** (g2 / (g1 - g2)) if rm > 0 else 0.0
            comp = []
            eps = finest["profile"].eps_grid
            vals = finest["profile"].values[k]
            for e, v in zip(eps, vals):
                if not math.isfinite(v) or e >= dist:
                    continue
                pred = max((dist / e) ** g2,
                           (r_minus[a] / e) ** g1 if r_minus[a] > 0 else 0.0,
                           (r_minus[b] / e) ** g1 if r_minus[b] > 0 else 0.0,
                           1.0)
                comp.append((v / e) / pred)
            piecewise[key] = {
                "q": q_label,
                "R_minus": {a: r_minus[a], b: r_minus[b]},
                "r_inf": r_inf,
                "comparability_min": float(min(comp)) if comp else math.nan,
                "comparability_max": float(max(comp)) if comp else math.nan,
            }

    return CornerChainGrowth(
        params=params,
        levels=levels,
        rows=rows,
        fitted=fitted,
        max_ratio_by_level=max_ratio_by_level,
        piecewise=piecewise,
    )
