"""Small deterministic numeric kernels shared across the package.

Everything here is intentionally plain: bisection instead of Newton (no
derivatives, guaranteed bracketing), golden-section instead of gradient
ascent, recursive Simpson with an explicit depth cap.  Reproducibility of
reports matters more than squeezing out the last factor of two.
"""

from __future__ import annotations

import math
from typing import Callable


class NumericalFailure(RuntimeError):
    """Raised when an iterative kernel cannot reach its tolerance."""


def bisect_root(f: Callable[[float], float], lo: float, hi: float,
                rel_tol: float = 1e-15, max_iter: int = 200) -> float:
    """Root of a sign-changing continuous f on [lo, hi] by plain bisection."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NumericalFailure(
            f"bisect_root: no sign change on [{lo:g}, {hi:g}] "
            f"(f(lo)={flo:g}, f(hi)={fhi:g})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or (hi - lo) <= rel_tol * max(abs(lo), abs(hi), 1e-300):
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def invert_monotone(f: Callable[[float], float], y: float, guess: float,
                    rel_tol: float = 1e-12, max_iter: int = 200) -> float:
    """Solve f(x) = y for strictly increasing f > 0 on (0, inf).

    The bracket is grown geometrically from `guess`, then bisected.  The
    200-iteration cap is far beyond what the doubling bracket needs; hitting
    it means f is not actually monotone and we refuse to guess.
    """
    if not (y > 0.0) or not math.isfinite(y):
        raise ValueError(f"invert_monotone: target must be finite positive, got {y!r}")
    lo = hi = max(guess, 1e-300)
    flo = fhi = f(lo)
    grew = 0
    while fhi < y:
        hi *= 2.0
        fhi = f(hi)
        grew += 1
        if grew > 2100:
            raise NumericalFailure("invert_monotone: upper bracket did not capture target")
    grew = 0
    while flo > y:
        lo *= 0.5
        flo = f(lo)
        grew += 1
        if grew > 2100:
            raise NumericalFailure("invert_monotone: lower bracket did not capture target")
    if flo == y:
        return lo
    if fhi == y:
        return hi
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= rel_tol * hi:
            break
    return 0.5 * (lo + hi)


def golden_max(f: Callable[[float], float], lo: float, hi: float,
               iters: int = 60) -> tuple[float, float]:
    """Golden-section maximization on [lo, hi]; returns (argmax, max)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     rel_tol: float = 1e-10, max_depth: int = 40) -> float:
    """Adaptive Simpson quadrature with explicit recursion cap.

    Raises NumericalFailure with the worst residual if any panel still
    disagrees at the depth cap.  Deterministic for a given integrand.
    """
    if a == b:
        return 0.0

    def simpson(x0: float, x2: float, f0: float, f1: float, f2: float) -> float:
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    worst = [0.0]

    def recurse(x0, x2, f0, f1, f2, whole, depth, tol):
        x1 = 0.5 * (x0 + x2)
        xl, xr = 0.5 * (x0 + x1), 0.5 * (x1 + x2)
        fl, fr = f(xl), f(xr)
        left = simpson(x0, x1, f0, fl, f1)
        right = simpson(x1, x2, f1, fr, f2)
        err = left + right - whole
        if abs(err) <= 15.0 * tol or (x2 - x0) < 1e-14 * (abs(x0) + abs(x2)):
            return left + right + err / 15.0
        if depth >= max_depth:
            worst[0] = max(worst[0], abs(err))
            return left + right + err / 15.0
        return (recurse(x0, x1, f0, fl, f1, left, depth + 1, tol / 2.0)
                + recurse(x1, x2, f1, fr, f2, right, depth + 1, tol / 2.0))

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = simpson(a, b, fa, fm, fb)
    scale = abs(whole) + 1e-300
    result = recurse(a, b, fa, fm, fb, whole, 0, rel_tol * scale)
    if worst[0] > 1e3 * rel_tol * (abs(result) + 1e-300):
        raise NumericalFailure(
            f"adaptive_simpson: refinement cap hit, residual={worst[0]:.3e}")
    return result


def slope_fit(logx, logy) -> tuple[float, float]:
    """Ordinary least squares slope/intercept of logy against logx."""
    import numpy as np
    x = np.asarray(logx, dtype=float)
    y = np.asarray(logy, dtype=float)
    if x.size < 2:
        raise ValueError("slope_fit: need at least two points")
    xm, ym = x.mean(), y.mean()
    denom = float(((x - xm) ** 2).sum())
    if denom == 0.0:
        raise ValueError("slope_fit: degenerate abscissa")
    slope = float(((x - xm) * (y - ym)).sum() / denom)
    return slope, float(ym - slope * xm)


def through_origin_slope(x, y) -> float:
    """Least-squares slope of y = s*x through the origin."""
    import numpy as np
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    denom = float((xv * xv).sum())
    if denom == 0.0:
        raise ValueError("through_origin_slope: degenerate abscissa")
    return float((xv * yv).sum() / denom)
