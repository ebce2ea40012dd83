"""Reference distributions that need no sampling.

Three families live here: the truncated normal p-value for linear statistics
constrained to a polyhedron, the central F distribution, and the truncated-F
construction for testing all selected columns at once: the selection event,
viewed along the observed residual directions, becomes a union of intervals
for the F statistic, found by root isolation of g(x) = q sqrt(x) +
r sqrt(1+x) + s on its monotone pieces.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.special import betainc, erfcx, ndtr

from .core import orthonormal_columns
from .errors import (
    ConfigError, EmptySet, EmptyTruncation, NonIntegerTrace, NonMember,
    RankDeficient, ZeroMass,
)
from .results import TestResult

INF = math.inf
_SQRT2 = math.sqrt(2.0)
# endpoints closer than this are merged when interval sets are combined
_MERGE_TOL = 1e-12


class Interval(NamedTuple):
    lo: float
    hi: float


# ---------------------------------------------------------------------------
# truncated normal

def _tn_cdf_sf(z, a, b):
    """(cdf, sf) of a standard normal truncated to [a, b], evaluated at z.

    Both tails are computed from scaled complementary error functions so the
    ratio survives even when [a, b] sits far out in a tail (where the plain
    normal CDF would round to 0 or 1).
    """
    if not a <= b:
        raise EmptyTruncation(f"empty truncation interval [{a}, {b}]")
    z = min(max(z, a), b)
    if a >= 0:
        # right tail: work with S(t) = erfcx(t/sqrt2) exp(-(t^2-a^2)/2) / const
        ea = erfcx(a / _SQRT2)
        ez = 0.0 if math.isinf(z) else erfcx(z / _SQRT2) * math.exp(-(z * z - a * a) / 2.0)
        eb = 0.0 if math.isinf(b) else erfcx(b / _SQRT2) * math.exp(-(b * b - a * a) / 2.0)
        den = ea - eb
        if den <= 0:
            raise EmptyTruncation(f"zero mass on [{a}, {b}]")
        return (ea - ez) / den, (ez - eb) / den
    if b <= 0:
        cdf, sf = _tn_cdf_sf(-z, -b, -a)
        return sf, cdf
    # straddles 0: plain CDFs are well-scaled
    fa, fz, fb = ndtr(a), ndtr(z), ndtr(b)
    den = fb - fa
    if den <= 0:
        raise EmptyTruncation(f"zero mass on [{a}, {b}]")
    return (fz - fa) / den, (fb - fz) / den


def truncation_bounds(A, b, z0, direction, value):
    """Lower/upper limits for eta'y on the line y = z0 + t * direction.

    Standard one-dimensional slicing of {A y <= b}: each row gives a bound
    on t, rows nearly orthogonal to the direction only need a feasibility
    check.  Returns (vminus, vplus).
    """
    denom = A @ direction
    resid = b - A @ z0
    scale = np.linalg.norm(A, axis=1) * np.linalg.norm(direction) + 1e-300
    lo, hi = -INF, INF
    for i in range(A.shape[0]):
        if abs(denom[i]) <= 1e-13 * scale[i]:
            if resid[i] < -1e-8:
                raise NonMember(f"row {i} infeasible independent of the statistic")
            continue
        bound = resid[i] / denom[i]
        if denom[i] > 0:
            hi = min(hi, bound)
        else:
            lo = max(lo, bound)
    if lo > hi + 1e-12:
        raise EmptyTruncation(f"bounds crossed: [{lo}, {hi}]")
    # the observed value belongs by construction; absorb roundoff
    slack = 1e-6 * (abs(value) + 1.0)
    if value < lo - slack or value > hi + slack:
        raise NonMember(f"observed value {value} outside [{lo}, {hi}]")
    return min(lo, value), max(hi, value)


def truncnorm_pvalue(eta, y, event, sigma2, null_value=0.0):
    """Two-sided p-value for eta'y restricted to a polyhedral event.

    The statistic z = eta'y is normal with variance sigma2 * ||eta||^2;
    conditional on the event and on the component of y uncorrelated with z,
    its law is that normal truncated to an interval [V-, V+] read off the
    event rows.  ``null_value`` is the hypothesized mean of eta'y.

    Returns a TestResult; raises NonMember if y violates the event.
    """
    eta = np.asarray(eta, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if sigma2 <= 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    if not event.contains(y):
        raise NonMember("y violates the selection event")
    z = float(eta @ y)
    ss = float(eta @ eta)
    if ss <= 0:
        raise ConfigError("eta is zero")
    c_dir = eta / ss                       # direction with c'eta = 1
    z0 = y - c_dir * z
    if event.m:
        vminus, vplus = truncation_bounds(event.A, event.b, z0, c_dir, z)
    else:
        vminus, vplus = -INF, INF
    sd = math.sqrt(sigma2 * ss)
    cdf, sf = _tn_cdf_sf((z - null_value) / sd, (vminus - null_value) / sd,
                         (vplus - null_value) / sd)
    p = min(1.0, 2.0 * min(cdf, sf))
    return TestResult(
        test_id="truncnorm",
        statistic=z,
        p_value=p,
        reference={"kind": "trunc_normal", "vminus": vminus, "vplus": vplus,
                   "sd": sd},
        null_spec={"mean": null_value},
    )


# ---------------------------------------------------------------------------
# central F

def _check_df(d1, d2):
    if int(d1) != d1 or int(d2) != d2 or d1 < 1 or d2 < 1:
        raise ConfigError(f"degrees of freedom must be positive integers, got ({d1}, {d2})")


def f_cdf(x, d1, d2):
    """CDF of the central F distribution via the regularized incomplete beta."""
    _check_df(d1, d2)
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return float(betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def _f_sf(x, d1, d2):
    """Upper tail 1 - f_cdf, computed from the complementary beta argument."""
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


# ---------------------------------------------------------------------------
# the scalar constraint g(x) = q sqrt(x) + r sqrt(1+x) + s

def _g(q, r, s, x):
    return q * math.sqrt(x) + r * math.sqrt(1.0 + x) + s


def _tail_sign(q, r, s):
    """Sign of g(x) for x beyond every root (analytic limit argument)."""
    t = q + r
    if t != 0.0:
        return 1.0 if t > 0 else -1.0
    if s != 0.0:
        return 1.0 if s > 0 else -1.0
    # q + r = 0, s = 0: g -> 0 from the side opposite to q
    if q > 0:
        return -1.0
    if q < 0:
        return 1.0
    return 0.0


def settle_bound(q, r, s):
    """An x beyond which sign(g) no longer changes (capped at 1e12)."""
    xs = 1.0
    if (q > 0) != (r > 0) and q != 0.0 and r != 0.0 and abs(r) > abs(q):
        xs = max(xs, 4.0 * q * q / (r * r - q * q))
    t = q + r
    if t != 0.0:
        xs = max(xs, ((abs(r) + abs(s) + 1.0) / abs(t)) ** 2)
    elif q != 0.0 and s != 0.0:
        # g - s = -q / (sqrt(x) + sqrt(1+x)): dominated once that is < |s|
        xs = max(xs, (q / s) ** 2)
    else:
        xs = 1e12
    return min(xs, 1e12)


def _bisect_root(q, r, s, lo, hi):
    """Root of g in [lo, hi] assuming a sign change; bisection to 1e-12."""
    glo = _g(q, r, s, lo)
    for _ in range(200):
        if hi - lo < 1e-12 or hi - lo < 4.0 * np.finfo(float).eps * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        gm = _g(q, r, s, mid)
        if (gm <= 0) == (glo <= 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nonpos_intervals(q, r, s, x_max):
    """The set {x in [0, x_max] : q sqrt(x) + r sqrt(1+x) + s <= 0}.

    g has at most one interior extremum, at x* = q^2 / (r^2 - q^2) when q and
    r have opposite signs with |r| > |q|; roots are isolated by bisection on
    the resulting monotone pieces.  When the set reaches x_max and the
    analytic tail sign of g is nonpositive, the last interval is extended to
    +inf.  Returns a sorted list of disjoint Interval; empty list if g > 0
    everywhere.
    """
    if q == 0.0 and r == 0.0:
        if s <= 0:
            return [Interval(0.0, INF)]
        return []
    # breakpoints: domain ends, the extremum, and one root per monotone piece
    pieces = [0.0]
    if (q > 0) != (r > 0) and q != 0.0 and r != 0.0 and abs(r) > abs(q):
        xstar = q * q / (r * r - q * q)
        if 0.0 < xstar < x_max:
            pieces.append(xstar)
    pieces.append(x_max)
    points = [pieces[0]]
    for lo, hi in zip(pieces, pieces[1:]):
        if (_g(q, r, s, lo) <= 0) != (_g(q, r, s, hi) <= 0):
            points.append(_bisect_root(q, r, s, lo, hi))
        if hi != points[-1]:
            points.append(hi)
    out = []
    for lo, hi in zip(points, points[1:]):
        if _g(q, r, s, 0.5 * (lo + hi)) <= 0:
            if out and lo - out[-1].hi <= _MERGE_TOL:
                out[-1] = Interval(out[-1].lo, hi)
            else:
                out.append(Interval(lo, hi))
    if out and out[-1].hi >= x_max - _MERGE_TOL and _tail_sign(q, r, s) <= 0:
        out[-1] = Interval(out[-1].lo, INF)
    return out


def intersect_intervals(first, second):
    """Intersection of two sorted disjoint interval lists."""
    out = []
    i = j = 0
    while i < len(first) and j < len(second):
        lo = max(first[i].lo, second[j].lo)
        hi = min(first[i].hi, second[j].hi)
        if hi - lo >= -_MERGE_TOL:
            out.append(Interval(lo, max(lo, hi)))
        if first[i].hi <= second[j].hi:
            i += 1
        else:
            j += 1
    return out


# ---------------------------------------------------------------------------
# truncated F

@dataclass(frozen=True)
class TruncationSet:
    """Feasible set for x = c * T, with T ~ F(d1, d2) as reference law."""

    intervals: tuple
    c: float
    d1: int
    d2: int
    x_obs: float = field(default=None, compare=False)
    degenerate: bool = field(default=False, compare=False)

    def contains(self, x, tol=1e-8):
        return any(iv.lo - tol <= x <= iv.hi + tol for iv in self.intervals)


def f_truncation_set(event, y, x_selected, op):
    """Truncation set of the F statistic for adding the selected columns.

    Writing P_M for the projection onto [X_E, Z] and P_Z for the projection
    onto Z, the residual direction decomposes as amplitude-weighted unit
    vectors V_N (numerator) and V_D (denominator); holding those and
    l = ||R1||, delta = P_Z y fixed, each event row becomes
    q sqrt(x) + r sqrt(1+x) + s <= 0 in x = cT.  The returned set is the
    intersection over rows.

    Parameters
    ----------
    event : Polyhedron over y.
    y : observed response.
    x_selected : matrix of the selected X columns (n, |E|).
    op : ResidualOperator for Z.

    Raises
    ------
    RankDeficient : selected columns collinear with Z.
    EmptySet : intersection empty or excludes the observed statistic.
    NonIntegerTrace : projector traces fail the integrality check.
    """
    y = np.asarray(y, dtype=float).ravel()
    x_selected = np.atleast_2d(np.asarray(x_selected, dtype=float))
    n = y.shape[0]
    U, rank = orthonormal_columns(op.residual(x_selected))
    if rank < x_selected.shape[1]:
        raise RankDeficient(
            f"selected columns have residual rank {rank} < {x_selected.shape[1]}")
    P_M = op.P + U @ U.T
    d1f = float(np.trace(P_M) - np.trace(op.P))
    d2f = float(n - np.trace(P_M))
    d1, d2 = round(d1f), round(d2f)
    if abs(d1f - d1) > 1e-6 or abs(d2f - d2) > 1e-6:
        raise NonIntegerTrace(f"traces ({d1f}, {d2f}) are not integers")
    if d2 < 1:
        raise RankDeficient("no residual degrees of freedom left")
    c = d1 / d2

    r1 = op.residual(y)
    num_vec = U @ (U.T @ y)                # (P_M - P_Z) y
    den_vec = r1 - num_vec                 # (I - P_M) y
    l = float(np.linalg.norm(r1))
    num_norm = float(np.linalg.norm(num_vec))
    den_norm = float(np.linalg.norm(den_vec))
    diagnostics = {}
    if num_norm <= 1e-12 * max(1.0, l):
        # y orthogonal to the added directions: statistic sits at 0
        v_n = U[:, 0]
        diagnostics["degenerate_numerator"] = True
    else:
        v_n = num_vec / num_norm
    if den_norm <= 1e-12 * max(1.0, l):
        raise RankDeficient("y lies in the span of [X_E, Z]; F statistic undefined")
    v_d = den_vec / den_norm
    delta = y - r1
    x_obs = (num_norm / den_norm) ** 2

    if event.m == 0:
        intervals = [Interval(0.0, INF)]
    else:
        A, b = event.A, event.b
        q_rows = l * (A @ v_n)
        s_rows = l * (A @ v_d)
        r_rows = A @ delta - b
        intervals = [Interval(0.0, INF)]
        for qi, ri, si in zip(q_rows, r_rows, s_rows):
            xm = max(settle_bound(qi, ri, si), 2.0 * x_obs + 1.0)
            intervals = intersect_intervals(intervals, nonpos_intervals(qi, ri, si, xm))
            if not intervals:
                raise EmptySet("event rows intersect to an empty set")

    # the observed point must belong; absorb roundoff up to 1e-8 by widening
    # the nearest interval only
    tol = 1e-8 * max(1.0, x_obs)
    dists_to = [0.0 if iv.lo <= x_obs <= iv.hi
                else min(abs(x_obs - iv.lo), abs(x_obs - iv.hi))
                for iv in intervals]
    nearest = int(np.argmin(dists_to))
    if dists_to[nearest] > tol:
        raise EmptySet(f"observed x = {x_obs} lies outside the truncation set")
    fixed = list(intervals)
    iv = fixed[nearest]
    fixed[nearest] = Interval(min(iv.lo, x_obs), max(iv.hi, x_obs))
    return TruncationSet(intervals=tuple(fixed), c=c, d1=int(d1), d2=int(d2),
                         x_obs=x_obs,
                         degenerate=bool(diagnostics.get("degenerate_numerator")))


def truncated_f_pvalue(tset, t_obs):
    """P(T >= t_obs, cT in S) / P(cT in S) for T ~ F(d1, d2).

    Interval probabilities come from survival-function differences, which
    keep precision when the set sits in the far right tail.
    """
    c, d1, d2 = tset.c, tset.d1, tset.d2
    x_obs = c * t_obs
    num = den = 0.0
    for lo, hi in tset.intervals:
        den += _f_sf(lo / c, d1, d2) - _f_sf(hi / c, d1, d2)
        lo2 = max(lo, x_obs)
        if hi >= lo2:
            num += _f_sf(lo2 / c, d1, d2) - _f_sf(hi / c, d1, d2)
    if den < 1e-300:
        raise ZeroMass(f"truncation set has mass {den}")
    return max(0.0, min(1.0, num / den))


# ---------------------------------------------------------------------------
# the coin-flip illustration

def conditional_binomial_tail(n_flips, threshold, observed, prob=Fraction(1, 2)):
    """P(X >= observed | X >= threshold) for X ~ Binomial(n_flips, prob).

    Exact rational arithmetic; threshold = 0 gives the unconditional tail.
    """
    if not 0 <= threshold <= observed <= n_flips:
        raise ConfigError(
            f"need 0 <= threshold <= observed <= n_flips, got "
            f"({threshold}, {observed}, {n_flips})")
    prob = Fraction(prob)

    def tail(k):
        total = Fraction(0)
        for j in range(k, n_flips + 1):
            total += (Fraction(math.comb(n_flips, j))
                      * prob ** j * (1 - prob) ** (n_flips - j))
        return total

    return float(tail(observed) / tail(threshold))
