r"""Scale functions and the calculus the estimate machinery runs on.

A *scale function* here is a continuous, strictly increasing
:math:`\phi:(0,\infty)\to(0,\infty)` with :math:`\phi(0^+)=0`,
:math:`\phi(\infty)=\infty`, pinched between two power laws:

.. math::

    C^{-1} (t/s)^{\beta_1} \;\le\; \frac{\phi(t)}{\phi(s)}
    \;\le\; C (t/s)^{\beta_2}, \qquad 0 < s \le t.

The triple ``(beta1, beta2, C)`` is a *doubling certificate*; a restricted
variant only quantifies the lower bound for arguments below a radius ``R``.
Certificates are measured on explicit grids, never assumed.

Four concrete families cover everything the laboratory needs:

``power``
    :math:`A r^a`.
``power_log``
    :math:`A r^a \log^b(1/(r \wedge r_0))`, the logarithmically corrected
    power that appears when a jump scale sits right at the integrability
    boundary of the subordination integral.
``tabulated``
    log-log linear interpolation through measured knots, extended beyond the
    table by the terminal slopes.
``composed``
    :math:`\psi\circ F_{\rho,\varepsilon}` where
    :math:`F_{\rho,\varepsilon}(r)=r` for :math:`r\le\varepsilon` and
    :math:`\rho^{-1}\big((r/\varepsilon)\rho(\varepsilon)\big)` above; this is
    the map that straightens a chain metric back into the original metric.

On top of the families sit the variational quantities the heat kernel
bounds are written with: the subordination scale

.. math::

    \Phi(r) = \psi_c(r) \Big/ \int_0^r \frac{\psi_c(s)}{s\,\psi_j(s)}\,ds,

the exponent supremum :math:`\sup_{\sigma>0}\big(\rho(d)/\rho(\sigma) -
t/\Phi(\sigma)\big)` and its windowed version with the explicit
localization constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numerics import (NumericalFailure, adaptive_simpson, bisect_root,
                       golden_max, invert_monotone)

EXPONENT_LATTICE = 1e-3   # search lattice for certified exponents
_PURE_POWER_TOL = 1e-9    # slope spread below which a grid is a pure power


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    """Measured doubling certificate for a scale function.

    beta1/beta2 bracket every pairwise log-log slope seen on the grid; C is
    the smallest single-exponent comparability constant (ratio scan), kept
    alongside so downstream windows have an honest uniformity constant.
    """
    beta1: float
    beta2: float
    C: float
    restricted_beta1: Optional[float] = None   # lower exponent for pairs below R
    restricted_C: Optional[float] = None
    restricted_radius: Optional[float] = None

    def __post_init__(self):
        if not (self.beta1 > 0.0):
            raise ValueError(f"certificate needs beta1 > 0, got {self.beta1}")
        if self.beta2 < self.beta1:
            raise ValueError("certificate needs beta2 >= beta1")
        if self.C < 1.0:
            raise ValueError("certificate needs C >= 1")


def _pair_logs(f: "ScaleFunction", grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.sort(np.asarray(grid, dtype=float))
    if r.size < 8:
        raise ValueError("certify_doubling: grid needs at least 8 points")
    if r[0] <= 0.0:
        raise ValueError("certify_doubling: grid must be positive")
    if r[-1] / r[0] < 1e4 * (1.0 - 1e-12):
        raise ValueError("certify_doubling: grid must span at least 4 decades")
    lr = np.log(r)
    lv = np.log(f(r))
    i, j = np.triu_indices(r.size, k=1)
    X = lr[j] - lr[i]
    L = lv[j] - lv[i]
    keep = X > 1e-13
    return X[keep], L[keep]


def _lattice_floor(x: float) -> float:
    return math.floor(x / EXPONENT_LATTICE + 1e-9) * EXPONENT_LATTICE


def _lattice_ceil(x: float) -> float:
    return math.ceil(x / EXPONENT_LATTICE - 1e-9) * EXPONENT_LATTICE


def _pinch_constant(X: np.ndarray, L: np.ndarray, blo: float, bhi: float) -> float:
    """Smallest C so a single lattice exponent satisfies both scale bounds.

    g(b) = max( max_i(b X - L), max_i(L - b X) ) is convex piecewise linear,
    so a ternary search is exact up to the lattice snap applied at the end.
    """
    def g(b: float) -> float:
        bx = b * X
        return max(float(np.max(bx - L)), float(np.max(L - bx)))

    lo, hi = blo, bhi
    for _ in range(200):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if g(m1) <= g(m2):
            hi = m2
        else:
            lo = m1
    b_star = round(0.5 * (lo + hi) / EXPONENT_LATTICE) * EXPONENT_LATTICE
    b_star = min(max(b_star, blo), bhi)
    return max(1.0, math.exp(g(b_star)))


def certify_doubling(f: "ScaleFunction", grid, restrict_below: Optional[float] = None
                     ) -> Certificate:
    """Measure a doubling certificate for f on an explicit grid.

    The exponents are the extreme pairwise slopes snapped outward to the
    1e-3 lattice (so the certificate holds with C as returned for every grid
    pair); C is the minimal single-exponent two-sided constant found by a
    ratio scan.  A pure power is detected exactly and reported with C ~ 1.

    With ``restrict_below=R`` the certificate additionally carries the
    restricted lower exponent measured on pairs whose larger argument stays
    below R, together with its own constant.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    X, L = _pair_logs(f, grid)
    slopes = L / X
    smin, smax = float(slopes.min()), float(slopes.max())

    if smax - smin <= _PURE_POWER_TOL * max(1.0, abs(smax)):
        b = 0.5 * (smin + smax)
        C = max(1.0, float(np.exp(np.max(np.abs(L - b * X)))))
        cert = Certificate(beta1=b, beta2=b, C=C)
    else:
        beta1 = max(EXPONENT_LATTICE, _lattice_floor(smin))
        beta2 = _lattice_ceil(smax)
        C = _pinch_constant(X, L, smin, smax)
        # clamping beta1 up to the lattice floor can cost extra constant
        C = max(C, float(np.exp(np.max(beta1 * X - L))),
                float(np.exp(np.max(L - beta2 * X))), 1.0)
        cert = Certificate(beta1=beta1, beta2=beta2, C=C)

    if restrict_below is not None:
        sub = grid[grid < restrict_below]
        if sub.size >= 3:
            lr = np.log(sub)
            lv = np.log(f(sub))
            i, j = np.triu_indices(sub.size, k=1)
            Xr = lr[j] - lr[i]
            Lr = lv[j] - lv[i]
            keep = Xr > 1e-13
            Xr, Lr = Xr[keep], Lr[keep]
            s_res = Lr / Xr
            b_res = max(EXPONENT_LATTICE, _lattice_floor(float(s_res.min())))
            c_res = max(1.0, float(np.exp(np.max(b_res * Xr - Lr))))
            cert.restricted_beta1 = b_res
            cert.restricted_C = c_res
            cert.restricted_radius = float(restrict_below)
        else:
            raise ValueError("certify_doubling: restricted radius leaves "
                             "fewer than 3 grid points")
    return cert


# ---------------------------------------------------------------------------
# the scale function type
# ---------------------------------------------------------------------------

class ScaleFunction:
    """One scale function; construct through the classmethods below."""

    __slots__ = ("kind", "A", "a", "b", "r0", "_log_r", "_log_v",
                 "inner", "chain", "eps", "certificate", "report")

    def __init__(self, kind: str):
        self.kind = kind
        self.A = self.a = self.b = self.r0 = None
        self._log_r = self._log_v = None
        self.inner = self.chain = None
        self.eps = None
        self.certificate: Optional[Certificate] = None
        self.report = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def power(cls, a: float, A: float = 1.0) -> "ScaleFunction":
        if not (a > 0.0 and A > 0.0):
            raise ValueError("power scale needs a > 0 and A > 0")
        s = cls("power")
        s.A, s.a = float(A), float(a)
        return s

    @classmethod
    def power_log(cls, a: float, b: float, r0: float, A: float = 1.0) -> "ScaleFunction":
        r"""A r^a log^b(1/(r ∧ r0)).

        For b > 0 the cutoff must satisfy r0 <= e^{-b/a}, otherwise the
        function dips before r0 and is not a scale function.
        """
        if not (a > 0.0 and A > 0.0):
            raise ValueError("power_log scale needs a > 0 and A > 0")
        if not (0.0 < r0 < 1.0):
            raise ValueError("power_log scale needs r0 in (0, 1)")
        if b > 0.0 and r0 > math.exp(-b / a) * (1.0 + 1e-12):
            raise ValueError(
                f"power_log not increasing: need r0 <= exp(-b/a) = {math.exp(-b/a):.6g}")
        s = cls("power_log")
        s.A, s.a, s.b, s.r0 = float(A), float(a), float(b), float(r0)
        return s

    @classmethod
    def tabulated(cls, points) -> "ScaleFunction":
        """Strictly increasing (r, value) knots, interpolated log-log."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("tabulated scale needs at least two (r, value) rows")
        r, v = pts[:, 0], pts[:, 1]
        if np.any(r <= 0.0) or np.any(v <= 0.0):
            raise ValueError("tabulated scale needs positive knots")
        if np.any(np.diff(r) <= 0.0) or np.any(np.diff(v) <= 0.0):
            raise ValueError(
                "not a scale function: table must be strictly increasing")
        s = cls("tabulated")
        s._log_r = np.log(r)
        s._log_v = np.log(v)
        return s

    @classmethod
    def composed(cls, inner: "ScaleFunction", chain: "ScaleFunction",
                 eps: float) -> "ScaleFunction":
        """inner ∘ F_{chain,eps}: the chain-straightened version of inner."""
        if not (eps > 0.0):
            raise ValueError("composed scale needs eps > 0")
        s = cls("composed")
        s.inner, s.chain, s.eps = inner, chain, float(eps)
        return s

    # -- evaluation ---------------------------------------------------------

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        scalar = arr.ndim == 0
        x = np.atleast_1d(arr)
        if np.any(x < 0.0):
            raise ValueError("scale functions take nonnegative arguments")
        if not np.all(np.isfinite(x)):
            raise ValueError("scale functions take finite arguments")
        out = self._eval(x)
        return float(out[0]) if scalar else out

    def _eval(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return self.A * np.power(x, self.a)
        if self.kind == "power_log":
            out = np.zeros_like(x)
            pos = x > 0.0
            xp = x[pos]
            out[pos] = (self.A * np.power(xp, self.a)
                        * np.power(np.log(1.0 / np.minimum(xp, self.r0)), self.b))
            return out
        if self.kind == "tabulated":
            out = np.zeros_like(x)
            pos = x > 0.0
            lq = np.log(x[pos])
            lr, lv = self._log_r, self._log_v
            y = np.interp(lq, lr, lv)
            s_lo = (lv[1] - lv[0]) / (lr[1] - lr[0])
            s_hi = (lv[-1] - lv[-2]) / (lr[-1] - lr[-2])
            below = lq < lr[0]
            above = lq > lr[-1]
            y[below] = lv[0] + s_lo * (lq[below] - lr[0])
            y[above] = lv[-1] + s_hi * (lq[above] - lr[-1])
            out[pos] = np.exp(y)
            return out
        if self.kind == "composed":
            return self.inner(apply_chain_transform(self.chain, self.eps, x))
        raise AssertionError(f"unknown kind {self.kind}")

    # -- inversion ----------------------------------------------------------

    def inverse(self, y: float) -> float:
        x, _ = self.inverse_extended(float(y))
        return x

    def inverse_extended(self, y: float) -> tuple[float, bool]:
        """Inverse value plus a flag marking extrapolation beyond a table."""
        if not (y > 0.0) or not math.isfinite(y):
            raise ValueError(f"inverse needs finite positive target, got {y!r}")
        if self.kind == "power":
            return (y / self.A) ** (1.0 / self.a), False
        if self.kind == "power_log":
            guess = (y / self.A) ** (1.0 / self.a)
            return invert_monotone(lambda r: float(self(r)), y, guess), False
        if self.kind == "tabulated":
            lv, lr = self._log_v, self._log_r
            ly = math.log(y)
            extrapolated = ly < lv[0] or ly > lv[-1]
            if not extrapolated:
                return math.exp(float(np.interp(ly, lv, lr))), False
            if ly < lv[0]:
                s = (lv[1] - lv[0]) / (lr[1] - lr[0])
                return math.exp(lr[0] + (ly - lv[0]) / s), True
            s = (lv[-1] - lv[-2]) / (lr[-1] - lr[-2])
            return math.exp(lr[-1] + (ly - lv[-1]) / s), True
        if self.kind == "composed":
            s, flag = self.inner.inverse_extended(y)
            if s <= self.eps:
                return s, flag
            return self.eps * float(self.chain(s)) / float(self.chain(self.eps)), flag
        raise AssertionError(f"unknown kind {self.kind}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "A": self.A, "a": self.a}
        if self.kind == "power_log":
            return {"kind": "power_log", "A": self.A, "a": self.a,
                    "b": self.b, "r0": self.r0}
        if self.kind == "tabulated":
            pts = np.exp(np.stack([self._log_r, self._log_v], axis=1))
            return {"kind": "tabulated", "points": [[float(r), float(v)] for r, v in pts]}
        if self.kind == "composed":
            return {"kind": "composed", "eps": self.eps,
                    "inner": self.inner.to_dict(), "chain": self.chain.to_dict()}
        raise AssertionError(f"unknown kind {self.kind}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleFunction":
        kind = d.get("kind")
        if kind == "power":
            return cls.power(d["a"], d.get("A", 1.0))
        if kind == "power_log":
            return cls.power_log(d["a"], d["b"], d["r0"], d.get("A", 1.0))
        if kind == "tabulated":
            return cls.tabulated(d["points"])
        if kind == "composed":
            return cls.composed(cls.from_dict(d["inner"]), cls.from_dict(d["chain"]),
                                d["eps"])
        raise ValueError(f"unknown scale kind {kind!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScaleFunction":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        d = self.to_dict()
        if self.kind == "tabulated":
            d["points"] = f"<{len(d['points'])} knots>"
        return f"ScaleFunction({d})"


# ---------------------------------------------------------------------------
# the chain transform F and compositions
# ---------------------------------------------------------------------------

def apply_chain_transform(chain: ScaleFunction, eps: float, r):
    r"""F_{\rho,\varepsilon}: identity below eps, ρ-straightened above.

    F(r) = r for r <= eps and ρ^{-1}((r/eps) ρ(eps)) for r >= eps.  Applied
    to a chain metric d_eps it recovers the original metric up to constants,
    which check_transform_sandwich measures.
    """
    if not (eps > 0.0):
        raise ValueError("apply_chain_transform needs eps > 0")
    arr = np.asarray(r, dtype=float)
    scalar = arr.ndim == 0
    x = np.atleast_1d(arr).copy()
    above = x > eps
    if np.any(above):
        rho_eps = float(chain(eps))
        targets = (x[above] / eps) * rho_eps
        if chain.kind == "power":
            x[above] = (targets / chain.A) ** (1.0 / chain.a)
        else:
            x[above] = np.array([chain.inverse(t) for t in targets])
    return float(x[0]) if scalar else x


def invert_chain_transform(chain: ScaleFunction, eps: float, y):
    """Inverse of apply_chain_transform: y below eps, eps ρ(y)/ρ(eps) above."""
    arr = np.asarray(y, dtype=float)
    scalar = arr.ndim == 0
    x = np.atleast_1d(arr).copy()
    above = x > eps
    if np.any(above):
        x[above] = eps * np.atleast_1d(chain(x[above])) / float(chain(eps))
    return float(x[0]) if scalar else x


def composed_beta_bounds(inner: ScaleFunction, chain: ScaleFunction, eps: float,
                         grid) -> tuple[Certificate, dict]:
    """Certificate of inner ∘ F_{chain,eps} plus the predicted exponent box.

    The composition must stay a scale function with lower exponent at least
    beta1(inner)/beta2(chain) and upper exponent at most beta2(inner); both
    predictions are evaluated on the same grid and reported.
    """
    comp = ScaleFunction.composed(inner, chain, eps)
    cert = certify_doubling(comp, grid)
    cert_inner = certify_doubling(inner, grid)
    cert_chain = certify_doubling(chain, grid)
    tol = 2 * EXPONENT_LATTICE
    checks = {
        "lower_bound": cert_inner.beta1 / cert_chain.beta2,
        "upper_bound": cert_inner.beta2,
        "lower_ok": cert.beta1 >= cert_inner.beta1 / cert_chain.beta2 - tol,
        "upper_ok": cert.beta2 <= cert_inner.beta2 + tol,
    }
    comp.certificate = cert
    return cert, checks


# ---------------------------------------------------------------------------
# subordination scale
# ---------------------------------------------------------------------------

@dataclass
class PhiReport:
    """Comparability constants measured while building a subordination scale."""
    comp_jump_C: float          # max Phi/psi_j over the grid
    comp_local_C: float         # max of Phi-ratio over psi_c-ratio, pairs r <= R
    comp_large_C: float         # max Phi/psi_c over grid points r >= 1
    comp_small_C: float         # max psi_c/Phi over grid points r <= 1
    tail_exponent: float        # measured u-decay power of the integrand
    integral_at_one: float


def _integrand_logvar(psi_c: ScaleFunction, psi_j: ScaleFunction) -> Callable[[float], float]:
    # substitution s = e^{-u}: int_0^r psi_c/(s psi_j) ds = int_{log 1/r}^inf g(u) du
    def g(u: float) -> float:
        s = math.exp(-u)
        return float(psi_c(s)) / float(psi_j(s))
    return g


def phi_from_scales(psi_c: ScaleFunction, psi_j: ScaleFunction,
                    grid=None, rel_tol: float = 1e-9) -> ScaleFunction:
    r"""Subordination scale Φ(r) = ψ_c(r) / ∫_0^r ψ_c(s) ds / (s ψ_j(s)).

    The integral is computed in the variable u = log(1/s) by adaptive
    Simpson, with the u > 80 tail bounded analytically from the measured
    decay power of the integrand.  Divergence of the defining integral at
    zero is detected first (certified exponent gap, with a tail-decay probe
    for the borderline case) and aborts with "scl-int violated".

    Returns a tabulated scale with a PhiReport attached carrying the
    comparability constants against ψ_j (domination) and ψ_c (ratio bound).
    """
    if grid is None:
        grid = np.logspace(-8.0, 2.0, 321)
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid[0] <= 0.0:
        raise ValueError("phi_from_scales: grid must be positive")

    g = _integrand_logvar(psi_c, psi_j)

    # convergence screen: integrand ~ s^{beta1(psi_c) - beta2(psi_j)} up to logs
    probe = np.logspace(-10.0, 0.0, 41)
    gap = (certify_doubling(psi_c, probe).beta1
           - certify_doubling(psi_j, probe).beta2)
    if gap < -0.01:
        raise NumericalFailure(
            "scl-int violated: jump scale grows at least as fast as the "
            f"diffusion scale near zero (exponent gap {gap:.4f})")
    u_probe_lo, u_probe_hi = 30.0, 60.0
    p_tail = math.log(g(u_probe_lo) / g(u_probe_hi)) / math.log(u_probe_hi / u_probe_lo)
    if gap <= 0.01 and p_tail <= 1.05:
        raise NumericalFailure(
            "scl-int violated: borderline integrand does not decay fast "
            f"enough (measured u-power {p_tail:.4f} <= 1.05)")

    u_hi = max(80.0, math.log(1.0 / grid[0]) + 10.0)
    if gap > 0.01:
        tail = g(u_hi) / gap
    else:
        tail = g(u_hi) * u_hi / (p_tail - 1.0)

    # march the cumulative integral from the deepest knot up
    integral = adaptive_simpson(g, math.log(1.0 / grid[0]), u_hi, rel_tol=rel_tol) + tail
    values = np.empty_like(grid)
    values[0] = float(psi_c(grid[0])) / integral
    acc = integral
    for k in range(1, grid.size):
        seg = adaptive_simpson(g, math.log(1.0 / grid[k]), math.log(1.0 / grid[k - 1]),
                               rel_tol=rel_tol)
        acc += seg
        values[k] = float(psi_c(grid[k])) / acc

    if np.any(np.diff(np.log(values)) <= 0.0):
        raise NumericalFailure(
            "phi_from_scales: computed subordination scale is not strictly "
            "increasing on the grid; refine the grid or check the inputs")

    phi = ScaleFunction.tabulated(np.stack([grid, values], axis=1))

    psj = np.asarray(psi_j(grid))
    psc = np.asarray(psi_c(grid))
    comp_jump = float(np.max(values / psj))
    lv = np.log(values)
    lc = np.log(psc)
    i, j = np.triu_indices(grid.size, k=1)
    comp_local = float(np.exp(np.max((lv[j] - lv[i]) - (lc[j] - lc[i]))))
    big = grid >= 1.0
    small = grid <= 1.0
    comp_large = float(np.max(values[big] / psc[big])) if np.any(big) else math.nan
    comp_small = float(np.max(psc[small] / values[small])) if np.any(small) else math.nan
    k_one = int(np.searchsorted(grid, 1.0))
    integral_at_one = float(psi_c(grid[min(k_one, grid.size - 1)])) / values[min(k_one, grid.size - 1)]

    phi.report = PhiReport(comp_jump_C=comp_jump, comp_local_C=comp_local,
                           comp_large_C=comp_large, comp_small_C=comp_small,
                           tail_exponent=p_tail, integral_at_one=integral_at_one)
    phi.certificate = certify_doubling(phi, grid, restrict_below=min(1.0, grid[-1]))
    return phi


# ---------------------------------------------------------------------------
# variational suprema
# ---------------------------------------------------------------------------

@dataclass
class VariationalSupResult:
    value: float
    argmax_sigma: float
    window: tuple[float, float]
    mode: str


_SUP_MODES = ("rho", "linear", "psi_c_composed")


def _sup_on_interval(obj: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                     points_per_decade: int = 200) -> tuple[float, float]:
    """Dense log-grid scan plus golden refinement; returns (argmax, max)."""
    decades = math.log10(hi / lo)
    n = max(int(math.ceil(points_per_decade * decades)) + 1, 8)
    sigma = np.logspace(math.log10(lo), math.log10(hi), n)
    vals = obj(sigma)
    k = int(np.argmax(vals))
    a = sigma[max(k - 1, 0)]
    b = sigma[min(k + 1, n - 1)]
    x, v = golden_max(lambda s: float(obj(np.asarray([s]))[0]), a, b)
    if vals[k] >= v:
        return float(sigma[k]), float(vals[k])
    return x, v


def variational_sup(rho: Optional[ScaleFunction], phi: ScaleFunction,
                    d: float, t: float, mode: str = "rho",
                    psi_c: Optional[ScaleFunction] = None,
                    points_per_decade: int = 200) -> VariationalSupResult:
    r"""sup_{σ>0} of the exponent functional used by the kernel bounds.

    mode "rho":            ρ(d)/ρ(σ) - t/Φ(σ)
    mode "linear":         d/σ - t/Φ(σ)
    mode "psi_c_composed": ρ(d)/ρ(σ) - ψ_c(Φ^{-1}(t))/ψ_c(σ)

    The supremum over σ ∈ (0,∞) is nonnegative (both terms vanish at
    infinity), so the reported value is clamped at 0; for d = 0 the
    functional is negative everywhere and the supremum is exactly 0.
    """
    if mode not in _SUP_MODES:
        raise ValueError(f"variational_sup: unknown mode {mode!r}")
    if mode != "linear" and rho is None:
        raise ValueError(f"variational_sup: mode {mode!r} needs a chain scale")
    if mode == "psi_c_composed" and psi_c is None:
        raise ValueError("variational_sup: psi_c_composed mode needs psi_c")
    if not (t > 0.0):
        raise ValueError("variational_sup: t must be positive")
    if d < 0.0:
        raise ValueError("variational_sup: d must be nonnegative")

    phi_inv_t = phi.inverse(t)
    if d == 0.0:
        return VariationalSupResult(0.0, math.inf,
                                    (phi_inv_t / 1e3, phi_inv_t * 1e3), mode)

    if mode == "psi_c_composed":
        time_scale: ScaleFunction = psi_c
        time_level = float(psi_c(phi_inv_t))
    else:
        time_scale = phi
        time_level = t

    if mode == "linear":
        num_at = lambda s: d / s
    else:
        rho_d = float(rho(d))
        num_at = lambda s: rho_d / np.asarray(rho(s))

    def obj(sigma: np.ndarray) -> np.ndarray:
        return num_at(sigma) - time_level / np.asarray(time_scale(sigma))

    lo = min(d, phi_inv_t) / 1e3
    hi = max(d, phi_inv_t) * 1e3
    argmax, best = _sup_on_interval(obj, lo, hi, points_per_decade)
    if best < 0.0:
        return VariationalSupResult(0.0, math.inf, (lo, hi), mode)
    return VariationalSupResult(best, argmax, (lo, hi), mode)


# ---------------------------------------------------------------------------
# localized supremum window
# ---------------------------------------------------------------------------

@dataclass
class MinimaxWindow:
    """Window certificate for the linear-over-scale supremum.

    The full supremum of d/σ - t/Φ(σ) is attained on
    [sigma_lo, sigma_hi] = [σ1, 2Φ^{-1}(t)] whenever d >= 2Φ^{-1}(t), and is
    then at least d/(2Φ^{-1}(t)).  c11/c12 are the explicit scaling
    constants attached to that window (unit time-change normalization).
    """
    sigma_lo: float
    sigma_hi: float
    sup_restricted: float
    sup_full: float
    lower_bound: float
    beta_star: float
    beta2: float
    C_phi: float
    window_applies: bool

    def c11(self, delta1: float, delta2: float) -> float:
        e = 1.0 / (self.beta_star - 1.0)
        return (self.C_phi / delta2) ** e * max(delta1, delta2) ** (self.beta_star * e)

    def c12(self, delta3: float) -> float:
        e = 1.0 / (self.beta_star - 1.0)
        return (2.0 ** ((self.beta2 - self.beta_star) * e)
                * (self.beta_star - 1.0) * self.C_phi ** (2.0 * e)
                * max(delta3, 2.0) ** (self.beta_star * e))


def minimax_window(phi: ScaleFunction, r: float, t: float,
                   beta_star: Optional[float] = None,
                   C_phi: Optional[float] = None) -> MinimaxWindow:
    """Locate the supremum of r/σ - t/Φ(σ) inside its certified window.

    beta_star is the restricted lower doubling exponent of Φ (must exceed 1,
    otherwise the window degenerates and we raise "strong uniformity
    violated"); both it and C default to Φ's attached certificate, measured
    on a synthetic grid when absent.
    """
    if not (r > 0.0 and t > 0.0):
        raise ValueError("minimax_window needs positive r and t")
    cert = phi.certificate
    if cert is None:
        probe = np.logspace(-6.0, 2.0, 65)
        cert = certify_doubling(phi, probe, restrict_below=1.0)
    if beta_star is None:
        beta_star = cert.restricted_beta1 if cert.restricted_beta1 is not None else cert.beta1
    if C_phi is None:
        C_phi = max(cert.C, cert.restricted_C or 1.0)
    if beta_star <= 1.0 + 1e-12:
        raise NumericalFailure(
            f"strong uniformity violated: restricted lower exponent "
            f"{beta_star:.4f} <= 1, no supremum window exists")

    phi_inv_t = phi.inverse(t)
    e = 1.0 / (beta_star - 1.0)
    sigma_lo = phi_inv_t ** (beta_star * e) * (C_phi * r) ** (-e)
    sigma_hi = 2.0 * phi_inv_t

    full = variational_sup(None, phi, r, t, mode="linear")

    def obj(sigma: np.ndarray) -> np.ndarray:
        return r / sigma - t / np.asarray(phi(sigma))

    if sigma_lo < sigma_hi:
        _, sup_res = _sup_on_interval(obj, sigma_lo, sigma_hi)
        sup_res = max(sup_res, 0.0)
    else:
        sup_res = max(float(obj(np.asarray([sigma_hi]))[0]), 0.0)

    lower = r / (2.0 * phi_inv_t)
    applies = r >= 2.0 * phi_inv_t * (1.0 - 1e-12)
    if applies:
        if not math.isclose(sup_res, full.value, rel_tol=1e-6, abs_tol=1e-12):
            raise NumericalFailure(
                f"minimax_window: windowed supremum {sup_res:.12g} disagrees "
                f"with the full supremum {full.value:.12g}")
        if full.value < lower * (1.0 - 1e-9):
            raise NumericalFailure(
                f"minimax_window: supremum {full.value:.12g} fell below its "
                f"certified floor {lower:.12g}")

    return MinimaxWindow(sigma_lo=sigma_lo, sigma_hi=sigma_hi,
                         sup_restricted=sup_res, sup_full=full.value,
                         lower_bound=lower, beta_star=beta_star,
                         beta2=cert.beta2, C_phi=C_phi,
                         window_applies=applies)
