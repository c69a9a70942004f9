"""Discrete heat kernels for local and jump-type forms on gasket graphs.

A Dirichlet operator on a finite vertex set is encoded by a symmetric
conductance matrix c and a measure mu.  The generator acts as

    (Lf)(x) = mu(x)^{-1} sum_y c_xy (f(x) - f(y)),

which is self-adjoint in ell^2(mu) and nonnegative definite.  For jump
forms the conductance comes from a kernel J(x,y) against the resistance
metric, c_xy = J(x,y) mu(x) mu(y).  Heat kernels are densities with
respect to mu,

    p_t(x,y) = sum_k e^{-t lam_k} phi_k(x) phi_k(y) / sqrt(mu(x) mu(y)),

computed from the spectral decomposition of the mu-symmetrized matrix
A = D^{-1/2} (Deg - c) D^{-1/2}.  Orthonormality of the eigenbasis makes
the semigroup identities exact up to rounding, which is what the Markov
check suite leans on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .gasket import GasketGraph, lattice_spacing, resistance_matrix
from .numerics import NumericalFailure, slope_fit
from .scale_calculus import ScaleFunction

__all__ = [
    "DirichletOperator",
    "HeatKernelGrid",
    "local_generator",
    "jump_generator",
    "heat_kernel",
    "ball_volume",
    "markov_checks",
    "valid_time_window",
    "exit_time",
    "calibrate_time_scale",
    "nle_statistic",
    "ondiagonal_slope",
    "grid_to_csv",
    "grid_to_binary",
    "operator_to_json",
]

# Dense spectral path is exact and cheap up to a few thousand vertices;
# beyond that fall back to scaling-and-squaring on the sparse matrix.
DENSE_EIGH_LIMIT = 4000
MAX_OPERATOR_DIM = 10_000

ScaleLike = Union[ScaleFunction, Callable[[float], float]]


def _as_scale_callable(scale: ScaleLike) -> Callable[[float], float]:
    if isinstance(scale, ScaleFunction):
        return scale
    return scale


@dataclass
class DirichletOperator:
    """Conservative symmetric Markov generator on a finite vertex set.

    kind is one of {"local", "jump", "truncated_jump"}.  conductance is
    the symmetric off-diagonal rate matrix c_xy (zero diagonal), measure
    the vertex weights, metric the resistance matrix the kernel was
    built against (None for local operators built without one).
    """

    kind: str
    conductance: np.ndarray
    measure: np.ndarray
    metric: Optional[np.ndarray] = None
    labels: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.kind not in ("local", "jump", "truncated_jump"):
            raise ValueError(f"unknown operator kind: {self.kind!r}")
        c = np.asarray(self.conductance, dtype=float)
        mu = np.asarray(self.measure, dtype=float)
        n = mu.size
        if c.shape != (n, n):
            raise ValueError("conductance/measure dimension mismatch")
        if n > MAX_OPERATOR_DIM:
            raise ValueError(f"operator dimension {n} exceeds {MAX_OPERATOR_DIM}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(mu)):
            raise ValueError("non-finite operator data")
        if np.any(mu <= 0.0):
            raise ValueError("measure must be strictly positive")
        scale = float(np.abs(c).max()) if c.size else 0.0
        if float(np.abs(c - c.T).max()) > 1e-12 * max(1.0, scale):
            raise ValueError("conductance matrix is not symmetric")
        if float(np.abs(np.diag(c)).max() if n else 0.0) != 0.0:
            raise ValueError("conductance diagonal must be zero")
        if float(c.min()) < -1e-12 * max(1.0, scale):
            raise ValueError("negative off-diagonal rate")
        # store exactly symmetrized copies; everything downstream assumes it
        self.conductance = 0.5 * (c + c.T)
        np.fill_diagonal(self.conductance, 0.0)
        self.measure = mu

    @property
    def n(self) -> int:
        return self.measure.size

    def generator_matrix(self) -> np.ndarray:
        """Dense matrix of L = D^{-1} (Deg - c).  Row sums are zero."""
        deg = self.conductance.sum(axis=1)
        L = -self.conductance / self.measure[:, None]
        L[np.diag_indices(self.n)] = deg / self.measure
        return L

    def symmetrized(self) -> np.ndarray:
        """A = D^{-1/2} (Deg - c) D^{-1/2}, exactly symmetric entrywise."""
        s = 1.0 / np.sqrt(self.measure)
        A = -self.conductance * np.outer(s, s)
        A[np.diag_indices(self.n)] = self.conductance.sum(axis=1) / self.measure
        return A

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return (self.conductance.sum(axis=1) * f - self.conductance @ f) / self.measure

    def invariant_report(self) -> dict:
        """Max violations of the generator invariants (all should be ~0)."""
        A = self.symmetrized()
        L = self.generator_matrix()
        off = self.conductance[~np.eye(self.n, dtype=bool)] if self.n > 1 else np.zeros(0)
        return {
            "symmetrized_asymmetry": float(np.abs(A - A.T).max()),
            "row_sum": float(np.abs(L.sum(axis=1)).max()),
            "min_off_diagonal_rate": float(off.min()) if off.size else 0.0,
        }

    def to_dict(self) -> dict:
        if self.n > 400:
            raise ValueError("operator too large for JSON export")
        return {
            "kind": self.kind,
            "labels": list(self.labels) if self.labels is not None else None,
            "measure": self.measure.tolist(),
            "conductance": self.conductance.tolist(),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def local_generator(graph: GasketGraph) -> DirichletOperator:
    """Wrap the graph's own conductances as a local Dirichlet operator."""
    c = np.asarray(graph.conductance.todense(), dtype=float)
    return DirichletOperator(
        kind="local",
        conductance=c,
        measure=graph.measure.copy(),
        metric=None,
        labels=tuple(graph.labels),
    )


def jump_generator(
    graph: GasketGraph,
    psi_j: ScaleLike,
    c_norm: float = 1.0,
    R: Optional[np.ndarray] = None,
    truncate: Optional[float] = None,
) -> DirichletOperator:
    """Jump operator with J(x,y) = c_norm / (V(x,R(x,y)) psi_j(R(x,y))).

    The raw kernel is not symmetric because V(x,r) depends on the base
    point; it is symmetrized by the arithmetic mean of the (x,y) and
    (y,x) evaluations.  Ball volumes use the open-ball convention.
    Passing truncate=sigma zeroes all jumps with R(x,y) > sigma and tags
    the operator as truncated_jump.
    """
    if c_norm <= 0.0:
        raise ValueError("c_norm must be positive")
    if R is None:
        R = resistance_matrix(graph)
    n = graph.n_vertices
    mu = graph.measure
    psi = _as_scale_callable(psi_j)

    iu, ju = np.triu_indices(n, k=1)
    r = R[iu, ju]
    psi_vals = np.array([psi(v) for v in r], dtype=float)
    if np.any(psi_vals <= 0.0) or not np.all(np.isfinite(psi_vals)):
        bad = float(r[np.argmin(psi_vals)])
        raise ValueError(f"psi_j must be positive and finite; failed at r = {bad:.6g}")

    # V(x, R(x,y)) for every pair, open ball: strict inequality
    vol = np.empty((n, n))
    order = np.argsort(R, axis=1)
    for x in range(n):
        row = R[x, order[x]]
        cmu = np.concatenate([[0.0], np.cumsum(mu[order[x]])])
        # open ball at radius row[j]: mass of vertices strictly closer
        idx = np.searchsorted(row, R[x], side="left")
        vol[x] = cmu[idx]
    J = np.zeros((n, n))
    J[iu, ju] = 0.5 * c_norm * (1.0 / (vol[iu, ju] * psi_vals) + 1.0 / (vol[ju, iu] * psi_vals))
    J = J + J.T

    kind = "jump"
    if truncate is not None:
        if truncate <= 0.0:
            raise ValueError("truncation radius must be positive")
        J[R > truncate] = 0.0
        kind = "truncated_jump"

    c = J * np.outer(mu, mu)
    return DirichletOperator(
        kind=kind,
        conductance=c,
        measure=mu.copy(),
        metric=R,
        labels=tuple(graph.labels),
    )


@dataclass
class HeatKernelGrid:
    """Heat kernel densities p_t(x,y) w.r.t. mu on an increasing t grid.

    kernels has shape (len(t_grid), n, n).  Construction does not assert
    the Markov invariants so that deliberately broken kernels (spectral
    truncation controls) can be represented; markov_checks reports.
    """

    t_grid: np.ndarray
    kernels: np.ndarray
    measure: np.ndarray
    labels: Optional[tuple] = None
    spectrum: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.kernels = np.asarray(self.kernels, dtype=float)
        self.measure = np.asarray(self.measure, dtype=float)
        if self.t_grid.ndim != 1 or np.any(self.t_grid <= 0.0):
            raise ValueError("t_grid must be positive")
        if np.any(np.diff(self.t_grid) <= 0.0):
            raise ValueError("t_grid must be strictly increasing")
        n = self.measure.size
        if self.kernels.shape != (self.t_grid.size, n, n):
            raise ValueError("kernel array shape mismatch")

    @property
    def n(self) -> int:
        return self.measure.size

    def kernel_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[k] - t) > 1e-9 * max(t, self.t_grid[k]):
            raise KeyError(f"t = {t:g} not on the grid")
        return self.kernels[k]


def heat_kernel(
    op: DirichletOperator,
    t_grid: Sequence[float],
    keep_modes: Optional[int] = None,
    drop_modes: int = 0,
) -> HeatKernelGrid:
    """Spectral heat kernel e^{-tL} as a density against mu.

    keep_modes keeps only the lowest k eigenmodes (mild smoothing);
    drop_modes discards the lowest m, which destroys conservativeness
    and positivity on purpose. That is the negative control used by the
    Markov suite; leave both at the default for honest kernels.
    """
    t = np.asarray(list(t_grid), dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("empty t grid")
    A = op.symmetrized()
    n = op.n
    if n > DENSE_EIGH_LIMIT and keep_modes is None and drop_modes == 0:
        return _heat_kernel_expm(op, np.sort(t))
    try:
        w, Q = scipy.linalg.eigh(A)
    except scipy.linalg.LinAlgError as exc:
        # residual report: how far the best available factorization is off
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    resid = float(np.abs(A @ Q[:, 0] - w[0] * Q[:, 0]).max())
    if not np.all(np.isfinite(w)):
        raise NumericalFailure(f"eigensolver returned non-finite spectrum (residual {resid:g})")

    lo = int(drop_modes)
    hi = n if keep_modes is None else min(n, lo + int(keep_modes))
    if lo < 0 or lo >= hi:
        raise ValueError("mode window is empty")
    w = w[lo:hi]
    Q = Q[:, lo:hi]

    s = 1.0 / np.sqrt(op.measure)
    phi = Q * s[:, None]  # phi_k(x) = Q[x,k] / sqrt(mu(x))
    t_sorted = np.sort(t)
    kernels = np.einsum("xk,tk,yk->txy", phi, np.exp(-np.outer(t_sorted, w)), phi, optimize=True)
    return HeatKernelGrid(
        t_grid=t_sorted,
        kernels=kernels,
        measure=op.measure.copy(),
        labels=op.labels,
        spectrum=w.copy(),
    )


def _heat_kernel_expm(op: DirichletOperator, t_sorted: np.ndarray) -> HeatKernelGrid:
    # scaling-and-squaring on the sparse symmetrized matrix; exactness is
    # traded for scalability above the dense eigh cutoff
    import scipy.sparse
    import scipy.sparse.linalg

    A = scipy.sparse.csc_matrix(op.symmetrized())
    s = 1.0 / np.sqrt(op.measure)
    kernels = np.empty((t_sorted.size, op.n, op.n))
    for k, t in enumerate(t_sorted):
        E = scipy.sparse.linalg.expm((-t) * A)
        E = np.asarray(E.todense()) if scipy.sparse.issparse(E) else np.asarray(E)
        kernels[k] = E * np.outer(s, s)
    return HeatKernelGrid(
        t_grid=t_sorted,
        kernels=kernels,
        measure=op.measure.copy(),
        labels=op.labels,
        spectrum=None,
    )


def ball_volume(
    graph: GasketGraph,
    x: int,
    r: float,
    R: Optional[np.ndarray] = None,
) -> float:
    """mu(B(x,r)) in the resistance metric, open ball: sum over R(x,y) < r.

    Without a precomputed resistance matrix this solves the full linear
    system, so pass R when calling in a loop.
    """
    if r < 0.0:
        raise ValueError("radius must be nonnegative")
    if R is None:
        R = resistance_matrix(graph)
    return float(graph.measure[R[x] < r].sum())


def markov_checks(
    grid: HeatKernelGrid,
    tol_positivity: float = 1e-10,
    tol_symmetry: float = 1e-10,
    tol_conservativeness: float = 1e-8,
    tol_chapman: float = 1e-8,
) -> dict:
    """Max violations of the Markov invariants, with pass flags.

    Positivity and symmetry tolerances are relative to the kernel scale
    (on-diagonal values grow like 1/V at small t, so absolute thresholds
    would be meaningless across t windows).  Conservativeness and
    Chapman-Kolmogorov are absolute, matching the unit mass convention.
    Chapman-Kolmogorov uses (t, 2t) pairs present in the grid and is
    marked "skipped" when there are none.
    """
    P = grid.kernels
    mu = grid.measure
    scale = max(1.0, float(np.abs(P).max()))

    pos_violation = max(0.0, -float(P.min()))
    sym_violation = float(np.abs(P - np.transpose(P, (0, 2, 1))).max())
    cons_violation = float(np.abs((P * mu[None, None, :]).sum(axis=2) - 1.0).max())

    pairs = []
    for i, ti in enumerate(grid.t_grid):
        for j, tj in enumerate(grid.t_grid):
            if abs(tj - 2.0 * ti) <= 1e-12 * tj:
                pairs.append((i, j))
    if pairs:
        ck_violation = 0.0
        for i, j in pairs:
            lhs = P[j]
            rhs = P[i] @ (P[i] * mu[:, None])
            ck_violation = max(ck_violation, float(np.abs(lhs - rhs).max()))
        chapman: Union[float, str] = ck_violation
        ck_pass = ck_violation <= tol_chapman * scale
    else:
        chapman = "skipped"
        ck_pass = True

    report = {
        "positivity": pos_violation,
        "symmetry": sym_violation,
        "conservativeness": cons_violation,
        "chapman_kolmogorov": chapman,
        "n_chapman_pairs": len(pairs),
        "passes": {
            "positivity": pos_violation <= tol_positivity * scale,
            "symmetry": sym_violation <= tol_symmetry * scale,
            "conservativeness": cons_violation <= tol_conservativeness,
            "chapman_kolmogorov": ck_pass,
        },
    }
    report["all_pass"] = all(report["passes"].values())
    return report


def valid_time_window(
    graph: GasketGraph,
    scale: ScaleLike,
    R: Optional[np.ndarray] = None,
    mesh_factor: float = 3.0,
) -> tuple:
    """(t_min, t_max) where the continuum estimates can be tested.

    t_min = scale(mesh_factor * lattice spacing) so the near-diagonal
    radius covers several lattice cells; t_max = scale(diameter).  Below
    t_min discreteness dominates and no estimate is expected to hold.
    """
    if R is None:
        R = resistance_matrix(graph)
    f = _as_scale_callable(scale)
    mesh = lattice_spacing(graph, R)
    t_min = float(f(mesh_factor * mesh))
    t_max = float(f(float(R.max())))
    if not (0.0 < t_min < t_max):
        raise NumericalFailure(
            f"empty time window: scale({mesh_factor} * {mesh:.6g}) = {t_min:.6g} "
            f">= scale(diam) = {t_max:.6g}; graph too coarse"
        )
    return t_min, t_max


def nle_statistic(
    grid: HeatKernelGrid,
    R: np.ndarray,
    psi_c: ScaleFunction,
) -> float:
    """Worst near-diagonal normalized kernel value.

    min over {(x,y,t): R(x,y) <= psi_c^{-1}(t)} of p_t(x,y) V(x, psi_c^{-1}(t)).
    A positive, level-stable value is the discrete form of the strong
    near-diagonal lower estimate (eta = 1).
    """
    mu = grid.measure
    worst = math.inf
    for k, t in enumerate(grid.t_grid):
        r_t = psi_c.inverse(float(t))
        vols = (R < r_t) @ mu  # open ball volumes per base point
        mask = R <= r_t
        if not mask.any() or np.any(vols <= 0.0):
            continue
        vals = grid.kernels[k] * vols[:, None]
        worst = min(worst, float(vals[mask].min()))
    if not math.isfinite(worst):
        raise NumericalFailure("no near-diagonal pairs in the time window")
    return worst


def ondiagonal_slope(grid: HeatKernelGrid, t_mask: Optional[np.ndarray] = None) -> float:
    """log-log slope of the on-diagonal trace sum_x p_t(x,x) mu(x).

    For a kernel satisfying the two-sided estimate with prefactor
    1/V(x, phi^{-1}(t)) on a space of dimension alpha and walk exponent
    beta the slope is -alpha/beta in the scaling window.
    """
    z = np.einsum("txx,x->t", grid.kernels, grid.measure)
    t = grid.t_grid
    if t_mask is not None:
        z, t = z[t_mask], t[t_mask]
    if t.size < 3:
        raise NumericalFailure("need at least 3 grid times for a slope")
    if np.any(z <= 0.0):
        raise NumericalFailure("non-positive on-diagonal trace")
    slope, _ = slope_fit(np.log(t), np.log(z))
    return float(slope)


def exit_time(op: DirichletOperator, x: int, r: float, R: np.ndarray) -> float:
    """Mean exit time E_x[tau] from the open resistance ball B(x,r).

    Solves (Deg - c) u = mu on the ball with u = 0 outside; u(x) is the
    exit time started at the center.
    """
    inside = np.where(R[x] < r)[0]
    if inside.size == 0 or inside.size == op.n:
        raise ValueError("ball is empty or covers the whole space")
    K = -op.conductance[np.ix_(inside, inside)]
    K[np.diag_indices(inside.size)] = op.conductance[inside].sum(axis=1)
    u = scipy.linalg.solve(K, op.measure[inside], assume_a="pos")
    return float(u[int(np.where(inside == x)[0][0])])


def calibrate_time_scale(
    op: DirichletOperator,
    scale: ScaleLike,
    R: np.ndarray,
    centers: Optional[Sequence[int]] = None,
    radii: Optional[Sequence[float]] = None,
) -> float:
    """Median of E_x[tau_{B(x,r)}] / scale(r) over sample balls.

    The generator's clock and the nominal scale function differ by a
    unit constant; this measures it, so that scale_cal = c * scale puts
    estimate formulas and the operator on the same clock.  Radii default
    to diam/8, diam/4, diam/2; centers to the metric median vertex and
    the vertex farthest from it.
    """
    diam = float(R.max())
    if radii is None:
        radii = [diam / 8.0, diam / 4.0, diam / 2.0]
    if centers is None:
        med = int(np.argmin(R.max(axis=1)))
        far = int(np.argmax(R[med]))
        centers = [med, far]
    f = _as_scale_callable(scale)
    ratios = []
    for x in centers:
        for r in radii:
            inside_count = int((R[x] < r).sum())
            if inside_count < 4 or inside_count == op.n:
                continue
            ratios.append(exit_time(op, x, r, R) / float(f(r)))
    if not ratios:
        raise NumericalFailure("no admissible calibration balls; graph too coarse")
    return float(np.median(ratios))


def grid_to_csv(grid: HeatKernelGrid) -> str:
    """Long-format CSV: t, x, y, p rows with 17 significant digits."""
    labels = grid.labels if grid.labels is not None else tuple(range(grid.n))
    lines = ["t,x,y,p"]
    for k, t in enumerate(grid.t_grid):
        P = grid.kernels[k]
        for i in range(grid.n):
            for j in range(grid.n):
                lines.append(f"{t:.17g},{labels[i]},{labels[j]},{P[i, j]:.17g}")
    return "\n".join(lines) + "\n"


def grid_to_binary(grid: HeatKernelGrid, data_path: str, sidecar_path: Optional[str] = None) -> str:
    """Row-major float64 dump plus a JSON sidecar describing the layout."""
    if sidecar_path is None:
        sidecar_path = data_path + ".json"
    grid.kernels.astype("<f8").tofile(data_path)
    sidecar = {
        "dtype": "<f8",
        "order": "C",
        "shape": list(grid.kernels.shape),
        "t_grid": [float(v) for v in grid.t_grid],
        "labels": list(grid.labels) if grid.labels is not None else None,
        "measure": [float(v) for v in grid.measure],
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2)
    return sidecar_path


def operator_to_json(op: DirichletOperator, indent: int = 2) -> str:
    return op.to_json(indent=indent)
