r"""Epsilon-chain metrics on finite spaces and chain-exponent fitting.

For a finite metric space, the chain distance with mesh :math:`\varepsilon`
is the shortest total length of a path whose every hop is strictly shorter
than :math:`\varepsilon`:

.. math::

    d_\varepsilon(x,y) = \inf\Big\{\sum_i d(\xi_i, \xi_{i+1}) :
        \xi_0 = x,\ \xi_N = y,\ d(\xi_i,\xi_{i+1}) < \varepsilon\Big\},

infinite when no such path exists.  A space satisfies the chain condition
with scale :math:`\rho` when :math:`d_\varepsilon/\varepsilon \asymp
\rho(d)/\rho(\varepsilon)`; for power scales :math:`\rho = r^\gamma`
the exponent is recovered here by a through-origin least-squares fit of
:math:`\log(d_\varepsilon/\varepsilon)` against
:math:`\log(d/\varepsilon)`.  Spaces whose chain growth races at different
rates along different routes get a two-sided (envelope) fit instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from .numerics import NumericalFailure, bisect_root
from .scale_calculus import ScaleFunction, apply_chain_transform, invert_chain_transform

MAX_POINTS = 20_000


# ---------------------------------------------------------------------------
# the substrate
# ---------------------------------------------------------------------------

@dataclass
class FiniteMetricSpace:
    """Point set with a full symmetric distance matrix."""
    labels: list[str]
    dist: np.ndarray

    @property
    def n(self) -> int:
        return len(self.labels)

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        n = len(self.labels)
        if d.shape != (n, n):
            raise ValueError(f"distance matrix shape {d.shape} does not match "
                             f"{n} labels")
        if n > MAX_POINTS:
            raise ValueError(f"{n} points exceeds the supported maximum {MAX_POINTS}")
        if not np.all(np.isfinite(d)):
            raise ValueError("distance matrix must be finite")
        scale = max(1.0, float(d.max())) if n else 1.0
        tol = 1e-9 * scale
        if np.max(np.abs(d - d.T)) > tol:
            raise ValueError("distance matrix is not symmetric")
        d = 0.5 * (d + d.T)
        if np.any(np.diag(d) != 0.0):
            raise ValueError("distance matrix has a nonzero diagonal")
        off = d + np.diag(np.full(n, np.inf))
        if np.any(off <= 0.0):
            raise ValueError("distinct points at zero or negative distance")
        # triangle inequality: full check for small spaces, pivot spot-check
        # beyond 600 points to keep construction O(n^2)-ish
        pivots = range(n) if n <= 600 else np.unique(
            np.linspace(0, n - 1, 64).astype(int))
        for i in pivots:
            viol = d - (d[:, i][:, None] + d[i, :][None, :])
            if float(viol.max()) > tol:
                raise ValueError(
                    f"triangle inequality violated through point {i} "
                    f"by {float(viol.max()):.3e}")
        self.dist = d

    @classmethod
    def from_coordinates(cls, points: Sequence, labels: Optional[list[str]] = None
                         ) -> "FiniteMetricSpace":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(points) == 1:
            pts = pts.T
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=-1))
        if labels is None:
            labels = [str(k) for k in range(pts.shape[0])]
        return cls(labels=labels, dist=d)

    def diameter(self) -> float:
        return float(self.dist.max())


def space_from_csv(source) -> FiniteMetricSpace:
    """Read a distance matrix CSV: header row of labels, then the rows."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ValueError("distance CSV needs a header row and a matrix")
    labels = [c.strip() for c in rows[0]]
    body = rows[1:]
    if len(body) != len(labels):
        raise ValueError(f"distance CSV has {len(body)} rows for "
                         f"{len(labels)} labels")
    d = np.array([[float(c) for c in row] for row in body])
    return FiniteMetricSpace(labels=labels, dist=d)


def space_to_csv(space: FiniteMetricSpace) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(space.labels)
    for row in space.dist:
        w.writerow([f"{v:.17g}" for v in row])
    return out.getvalue()


# ---------------------------------------------------------------------------
# chain distances
# ---------------------------------------------------------------------------

def _proximity_graph(space: FiniteMetricSpace, eps: float) -> scipy.sparse.csr_matrix:
    mask = space.dist < eps
    np.fill_diagonal(mask, False)
    a = np.where(mask, space.dist, 0.0)
    return scipy.sparse.csr_matrix(a)

def chain_distances_from(space: FiniteMetricSpace, eps: float,
                         sources: Sequence[int]) -> np.ndarray:
    """Rows of d_eps from each source to every point (inf when disconnected)."""
    if not (eps > 0.0) or not math.isfinite(eps):
        raise ValueError(f"eps must be a positive finite real, got {eps}")
    if eps > space.diameter():
        # every direct hop is allowed, so the chain metric collapses to d
        return space.dist[np.asarray(sources, dtype=int)].copy()
    g = _proximity_graph(space, eps)
    out = scipy.sparse.csgraph.dijkstra(g, directed=False,
                                        indices=np.asarray(sources, dtype=int))
    return np.atleast_2d(out)


def chain_distance(space: FiniteMetricSpace, eps: float, x: int, y: int) -> float:
    """d_eps(x, y): shortest chain with every hop strictly below eps."""
    n = space.n
    if not (0 <= x < n and 0 <= y < n):
        raise ValueError(f"pair ({x}, {y}) out of range for {n} points")
    if x == y:
        return 0.0
    val = float(chain_distances_from(space, eps, [x])[0, y])
    direct = float(space.dist[x, y])
    if val < direct - 1e-9 * max(1.0, direct):
        raise NumericalFailure(
            f"chain distance {val!r} fell below the metric distance {direct!r}")
    return val


@dataclass
class ChainProfile:
    """d_eps tabulated over pairs x eps grid."""
    space: FiniteMetricSpace
    pairs: list[tuple[int, int]]
    eps_grid: np.ndarray
    values: np.ndarray          # shape (len(pairs), len(eps_grid)); inf allowed
    distances: np.ndarray       # d(x, y) per pair

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["pair", "eps", "chain_distance"])
        for (i, j), d_row in zip(self.pairs, self.values):
            name = f"{self.space.labels[i]}:{self.space.labels[j]}"
            for eps, v in zip(self.eps_grid, d_row):
                w.writerow([name, f"{eps:.17g}",
                            "inf" if math.isinf(v) else f"{v:.17g}"])
        return out.getvalue()


def chain_profile(space: FiniteMetricSpace, pairs: Sequence[tuple[int, int]],
                  eps_grid: Sequence[float]) -> ChainProfile:
    """Batched chain distances over a geometric eps grid (>= 10 points)."""
    eps = np.asarray(sorted(eps_grid), dtype=float)
    if eps.size < 10:
        raise ValueError(f"eps grid needs >= 10 points, got {eps.size}")
    if np.any(eps <= 0.0):
        raise ValueError("eps grid must be positive")
    ratios = np.diff(np.log(eps))
    if ratios.size and (ratios.max() - ratios.min()) > 0.02 * max(1e-12, ratios.mean()):
        raise ValueError("eps grid must be geometric (constant ratio)")
    pairs = [(int(a), int(b)) for a, b in pairs]
    for a, b in pairs:
        if not (0 <= a < space.n and 0 <= b < space.n):
            raise ValueError(f"pair ({a}, {b}) out of range")
    sources = sorted({a for a, _ in pairs})
    src_row = {s: k for k, s in enumerate(sources)}
    values = np.empty((len(pairs), eps.size))
    for j, e in enumerate(eps):
        rows = chain_distances_from(space, float(e), sources)
        for i, (a, b) in enumerate(pairs):
            values[i, j] = rows[src_row[a], b]
    dists = np.array([space.dist[a, b] for a, b in pairs])
    # monotonicity and floor invariants; dijkstra guarantees both up to roundoff
    for j in range(eps.size - 1):
        bad = values[:, j + 1] > values[:, j] * (1.0 + 1e-9) + 1e-12
        if np.any(bad):
            raise NumericalFailure("chain distances increased with eps")
    with np.errstate(invalid="ignore"):
        low = values < (dists[:, None] - 1e-9 * np.maximum(1.0, dists[:, None]))
    if np.any(low):
        raise NumericalFailure("chain distance fell below the metric distance")
    return ChainProfile(space=space, pairs=pairs, eps_grid=eps,
                        values=values, distances=dists)


# ---------------------------------------------------------------------------
# exponent fitting
# ---------------------------------------------------------------------------

@dataclass
class RhoFit:
    """Power chain-scale fit rho = r^gamma with comparability envelope.

    Every retained sample obeys
    C_minus^{-1} (d/eps)^gamma <= d_eps/eps <= C_plus (d/eps)^gamma.
    two_sided carries (gamma_low, gamma_high) when no single exponent fits:
    per-pair growth rates spread wider than the configured threshold.
    """
    gamma: float
    C_minus: float
    C_plus: float
    residuals: np.ndarray = field(repr=False)
    n_samples: int = 0
    per_pair_gamma: dict = field(default_factory=dict)
    two_sided: Optional[tuple[float, float]] = None

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "C_minus": self.C_minus,
            "C_plus": self.C_plus,
            "n_samples": self.n_samples,
            "per_pair_gamma": {f"{a}:{b}": g
                               for (a, b), g in self.per_pair_gamma.items()},
            "two_sided": list(self.two_sided) if self.two_sided else None,
            "residual_range": [float(self.residuals.min()),
                               float(self.residuals.max())]
            if self.n_samples else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_rho_exponent(profile: ChainProfile, rho_family: str = "power",
                     min_ratio: float = 3.0,
                     two_sided_threshold: float = 0.1) -> RhoFit:
    """Fit the chain exponent gamma over all finite profile samples.

    Samples with d/eps below min_ratio are dominated by lattice effects and
    excluded; so are infinite entries and eps >= d.  The envelope constants
    are the extreme observed ratios against the fitted power.
    """
    if rho_family != "power":
        raise ValueError(f"unsupported rho family {rho_family!r}")
    xs: list[float] = []
    ys: list[float] = []
    owner: list[int] = []
    for i, (d, row) in enumerate(zip(profile.distances, profile.values)):
        if d <= 0.0:
            continue
        for eps, v in zip(profile.eps_grid, row):
            if not math.isfinite(v) or eps >= d or d / eps < min_ratio:
                continue
            xs.append(math.log(d / eps))
            ys.append(math.log(v / eps))
            owner.append(i)
    if len(xs) < 5:
        raise NumericalFailure(
            f"insufficient data: {len(xs)} usable samples after filtering "
            f"(need 5)")
    x = np.asarray(xs)
    y = np.asarray(ys)
    gamma = float(x @ y / (x @ x))
    res = y - gamma * x
    C_minus = float(np.exp(-res.min()))
    C_plus = float(max(np.exp(res.max()), C_minus))

    per_pair: dict[tuple[int, int], float] = {}
    owner_arr = np.asarray(owner)
    for i, pair in enumerate(profile.pairs):
        sel = owner_arr == i
        if sel.sum() >= 2:
            xi, yi = x[sel], y[sel]
            per_pair[pair] = float(xi @ yi / (xi @ xi))
    two_sided = None
    if len(per_pair) >= 2:
        slopes = sorted(per_pair.values())
        if slopes[-1] - slopes[0] > two_sided_threshold:
            two_sided = (slopes[0], slopes[-1])
    return RhoFit(gamma=gamma, C_minus=C_minus, C_plus=C_plus, residuals=res,
                  n_samples=len(xs), per_pair_gamma=per_pair,
                  two_sided=two_sided)


# ---------------------------------------------------------------------------
# transform sandwich
# ---------------------------------------------------------------------------

@dataclass
class SandwichReport:
    """Observed comparability of the chain transform against raw distance."""
    forward_min: float          # min over samples of F(d_eps) / d
    forward_max: float
    inverse_min: float          # min over samples of F^{-1}(d) / d_eps
    inverse_max: float
    per_eps_constant: dict      # eps -> max(ratio, 1/ratio) for the forward map
    n_samples: int

    @property
    def forward_constant(self) -> float:
        return max(self.forward_max, 1.0 / self.forward_min)

    @property
    def inverse_constant(self) -> float:
        return max(self.inverse_max, 1.0 / self.inverse_min)

    def to_dict(self) -> dict:
        return {"forward_min": self.forward_min, "forward_max": self.forward_max,
                "inverse_min": self.inverse_min, "inverse_max": self.inverse_max,
                "forward_constant": self.forward_constant,
                "inverse_constant": self.inverse_constant,
                "per_eps_constant": {f"{e:.17g}": c
                                     for e, c in self.per_eps_constant.items()},
                "n_samples": self.n_samples}


def check_transform_sandwich(space: FiniteMetricSpace, rho: ScaleFunction,
                             eps_grid: Sequence[float],
                             pairs: Sequence[tuple[int, int]]) -> SandwichReport:
    """Measure how tightly F_{rho,eps} sandwiches chain against raw distance.

    On a space satisfying the rho-chain condition, F(d_eps)/d and
    F^{-1}(d)/d_eps stay within constants independent of eps; the per-eps
    table lets callers watch for drift across decades.
    """
    profile = chain_profile(space, pairs, eps_grid)
    fwd: list[float] = []
    inv: list[float] = []
    per_eps: dict[float, float] = {}
    for j, eps in enumerate(profile.eps_grid):
        col_ratios: list[float] = []
        for i, (d, v) in enumerate(zip(profile.distances, profile.values[:, j])):
            if d <= 0.0 or not math.isfinite(v):
                continue
            f = float(apply_chain_transform(rho, float(eps), v))
            fi = float(invert_chain_transform(rho, float(eps), d))
            fwd.append(f / d)
            inv.append(fi / v)
            col_ratios.append(f / d)
        if col_ratios:
            lo, hi = min(col_ratios), max(col_ratios)
            per_eps[float(eps)] = max(hi, 1.0 / lo)
    if not fwd:
        raise NumericalFailure("insufficient data: no finite chain samples")
    return SandwichReport(forward_min=min(fwd), forward_max=max(fwd),
                          inverse_min=min(inv), inverse_max=max(inv),
                          per_eps_constant=per_eps, n_samples=len(fwd))


# ---------------------------------------------------------------------------
# the implicit eps(t, x, y) equation
# ---------------------------------------------------------------------------

def solve_epsilon_star(space: FiniteMetricSpace, phi: ScaleFunction,
                       x: int, y: int, t: float,
                       points_per_decade: int = 48) -> float:
    """Largest eps with (phi(eps)/eps) * d_eps(x,y) <= t.

    d_eps is piecewise constant in eps, so the search scans a geometric grid
    from the top and refines between the first feasible grid point and its
    infeasible upper neighbor by bisection, holding d_eps frozen at the
    feasible plateau (monotonicity makes the refined value safe).  Requires
    phi(r)/r nondecreasing, true for any walk scale with beta1 >= 1.
    """
    if not (t > 0.0) or not math.isfinite(t):
        raise ValueError(f"t must be a positive finite real, got {t}")
    d_direct = float(space.dist[x, y])
    if d_direct <= 0.0:
        raise ValueError("points coincide; eps equation is degenerate")

    def ratio(e: float) -> float:
        return float(phi(e)) / e

    off = space.dist[np.triu_indices(space.n, k=1)]
    d_min = float(off[off > 0.0].min())
    diam = space.diameter()
    n_pts = max(2, int(math.ceil(points_per_decade
                                 * math.log10(diam / (0.5 * d_min)))) + 1)
    grid = np.geomspace(0.5 * d_min, diam, n_pts)
    ratios = np.array([ratio(float(g)) for g in grid])
    if np.any(np.diff(ratios) < -1e-9 * np.maximum(ratios[1:], ratios[:-1])):
        raise NumericalFailure(
            "phi(r)/r decreases across the lattice scales; the eps equation "
            "is not unimodal for this scale function")

    def refine(lo: float, hi: float, plateau: float) -> float:
        # largest eps in [lo, hi] with ratio(eps) * plateau <= t; feasibility
        # at lo is already established
        if ratio(hi) * plateau <= t:
            return hi
        f = lambda e: ratio(e) * plateau - t
        if f(lo) >= 0.0:
            return lo
        return bisect_root(f, lo, hi)

    # top regime: for eps > diam every hop is allowed and d_eps = d exactly
    if ratio(diam) * d_direct <= t:
        e = max(diam, 1.0)
        for _ in range(200):
            if ratio(e) * d_direct > t:
                break
            e *= 2.0
        else:
            return math.inf  # linear scale: the budget never binds above
        return refine(diam, e, d_direct)

    upper = diam
    for k in range(n_pts - 2, -1, -1):
        e = float(grid[k])
        plateau = float(chain_distances_from(space, e, [x])[0, y])
        if math.isfinite(plateau) and ratio(e) * plateau <= t:
            return refine(e, upper, plateau)
        upper = e
    raise NumericalFailure(
        "time too small for lattice: no eps admits a chain within the "
        "time budget at this resolution")
