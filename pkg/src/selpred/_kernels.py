"""Compiled inner loops.

Everything here is deterministic given its inputs: the samplers consume
pre-generated direction and uniform streams instead of drawing randomness
inside the kernel, so chain output is bit-identical for a fixed seed no
matter how the surrounding code evolves.
"""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)

# status codes shared by the chain kernels
OK = 0
DEGENERATE = 1
EMPTY_ARC = 2


@njit(cache=True)
def cd_lasso(X, y, lam, max_iter, tol):
    """Cyclic coordinate descent for 0.5 ||y - X eta||^2 + lam ||eta||_1.

    Returns (eta, iterations, converged); convergence is max absolute
    coefficient change below tol after a full sweep.
    """
    n, p = X.shape
    ss = np.empty(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * X[i, j]
        ss[j] = acc
    eta = np.zeros(p)
    r = y.copy()
    for it in range(max_iter):
        delta = 0.0
        for j in range(p):
            if ss[j] <= 0.0:
                continue
            old = eta[j]
            rho = ss[j] * old
            for i in range(n):
                rho += X[i, j] * r[i]
            if rho > lam:
                new = (rho - lam) / ss[j]
            elif rho < -lam:
                new = (rho + lam) / ss[j]
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * d
                eta[j] = new
                if abs(d) > delta:
                    delta = abs(d)
        if delta < tol:
            return eta, it + 1, True
    return eta, max_iter, False


@njit(cache=True)
def _tn_inv_right(a, b, u):
    """Inverse CDF draw from a standard normal truncated to [a, b], a >= 0."""
    if a > 35.0:
        # the conditional law is essentially a + Exp(rate a)
        if math.isinf(b):
            return a - math.log1p(-u) / a
        c = -math.expm1(-a * (b - a))
        z = a - math.log1p(-u * c) / a
        return min(z, b)
    ea = math.erfc(a / _SQRT2)
    if math.isinf(b):
        eb = 0.0
    else:
        eb = math.erfc(b / _SQRT2)
    v = (1.0 - u) * ea + u * eb
    lo = a
    hi = b if b < 38.0 else 38.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / _SQRT2) > v:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * (1.0 + lo):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def tn_inv(a, b, u):
    """Inverse-CDF draw from a standard normal truncated to [a, b].

    Tail-stable: one-sided intervals use complementary-error-function
    evaluation; the central case bisects the plain CDF.
    """
    if a >= 0.0:
        return _tn_inv_right(a, b, u)
    if b <= 0.0:
        return -_tn_inv_right(-b, -a, 1.0 - u)
    lo = a if a > -38.0 else -38.0
    hi = b if b < 38.0 else 38.0
    fa = 0.5 * math.erfc(-lo / _SQRT2)
    fb = 0.5 * math.erfc(-hi / _SQRT2)
    v = (1.0 - u) * fa + u * fb
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / _SQRT2) < v:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * (1.0 + abs(lo)):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def hnr_gaussian(C, d, w0, sigma, n_keep, burn_in, thin, dirs, unis):
    """Hit-and-run for N(0, sigma^2 I) restricted to {C w <= d}.

    dirs holds one raw normal vector per step, unis one uniform per step.
    Returns (samples, status, degenerate_count).
    """
    m = C.shape[0]
    dim = C.shape[1]
    steps = burn_in + n_keep * thin
    out = np.empty((n_keep, dim))
    w = w0.copy()
    slack = d - np.dot(C, w)
    kept = 0
    degen = 0
    consecutive = 0
    for step in range(steps):
        u = dirs[step]
        nrm = 0.0
        for k in range(dim):
            nrm += u[k] * u[k]
        nrm = math.sqrt(nrm)
        if nrm <= 0.0:
            # zero direction: stay put but keep the schedule intact
            if step >= burn_in and (step - burn_in) % thin == thin - 1:
                out[kept] = w
                kept += 1
            continue
        a = np.dot(C, u) / nrm
        lo = -math.inf
        hi = math.inf
        for i in range(m):
            if a[i] > 1e-14:
                t = slack[i] / a[i]
                if t < hi:
                    hi = t
            elif a[i] < -1e-14:
                t = slack[i] / a[i]
                if t > lo:
                    lo = t
        if hi < lo or hi - lo < 1e-12:
            # roundoff can invert or collapse the chord; refresh the slack
            slack = d - np.dot(C, w)
            consecutive += 1
            degen += 1
            if consecutive > 64:
                return out, DEGENERATE, degen
            t_step = 0.0
        else:
            consecutive = 0
            mu = 0.0
            for k in range(dim):
                mu -= u[k] * w[k]
            mu /= nrm
            z = tn_inv((lo - mu) / sigma, (hi - mu) / sigma, unis[step])
            t_step = mu + sigma * z
            if t_step < lo:
                t_step = lo
            elif t_step > hi:
                t_step = hi
        for k in range(dim):
            w[k] += t_step * u[k] / nrm
        for i in range(m):
            slack[i] -= t_step * a[i]
        if (step & 511) == 511:
            slack = d - np.dot(C, w)
        if step >= burn_in and (step - burn_in) % thin == thin - 1:
            out[kept] = w
            kept += 1
    return out, OK, degen


@njit(cache=True)
def hnr_sphere(C, d, w0, n_keep, burn_in, thin, dirs, unis):
    """Great-circle hit-and-run for the uniform law on the sphere of radius
    ||w0|| intersected with {C w <= d}.

    Each step picks a tangent direction, turns every constraint row into a
    forbidden arc of the great circle through the current point, and draws
    the turning angle uniformly from the complement of their union.
    """
    m = C.shape[0]
    dim = C.shape[1]
    steps = burn_in + n_keep * thin
    out = np.empty((n_keep, dim))
    radius = 0.0
    for k in range(dim):
        radius += w0[k] * w0[k]
    radius = math.sqrt(radius)
    w = w0.copy()
    kept = 0
    degen = 0
    two_pi = 2.0 * math.pi
    starts = np.empty(2 * m + 2)
    ends = np.empty(2 * m + 2)
    for step in range(steps):
        g = dirs[step]
        # tangent component of g at w
        dotgw = 0.0
        for k in range(dim):
            dotgw += g[k] * w[k]
        dotgw /= radius * radius
        vnrm = 0.0
        for k in range(dim):
            t = g[k] - dotgw * w[k]
            vnrm += t * t
        vnrm = math.sqrt(vnrm)
        if vnrm < 1e-14:
            degen += 1
            if step >= burn_in and (step - burn_in) % thin == thin - 1:
                out[kept] = w
                kept += 1
            continue
        # forbidden arcs: a cos t + b sin t > d_i
        n_arc = 0
        feasible = True
        for i in range(m):
            ai = 0.0
            bi = 0.0
            for k in range(dim):
                ai += C[i, k] * w[k]
                bi += C[i, k] * (g[k] - dotgw * w[k])
            bi = bi * radius / vnrm
            R = math.hypot(ai, bi)
            if R <= d[i]:
                continue
            if d[i] < -R:
                feasible = False
                break
            phi = math.atan2(bi, ai)
            psi = math.acos(min(1.0, max(-1.0, d[i] / R)))
            s = phi - psi
            e = phi + psi
            # normalize to [0, 2pi), split arcs that wrap
            s = s % two_pi
            e = e % two_pi
            if s <= e:
                starts[n_arc] = s
                ends[n_arc] = e
                n_arc += 1
            else:
                starts[n_arc] = 0.0
                ends[n_arc] = e
                n_arc += 1
                starts[n_arc] = s
                ends[n_arc] = two_pi
                n_arc += 1
        if not feasible:
            return out, EMPTY_ARC, degen
        # merge forbidden arcs
        order = np.argsort(starts[:n_arc])
        n_merged = 0
        ms = np.empty(n_arc)
        me = np.empty(n_arc)
        for oi in range(n_arc):
            i = order[oi]
            s = starts[i]
            e = ends[i]
            if n_merged > 0 and s <= me[n_merged - 1]:
                if e > me[n_merged - 1]:
                    me[n_merged - 1] = e
            else:
                ms[n_merged] = s
                me[n_merged] = e
                n_merged += 1
        # allowed gaps and their total measure
        total = 0.0
        if n_merged == 0:
            total = two_pi
        else:
            for i in range(n_merged):
                nxt = ms[i + 1] if i + 1 < n_merged else ms[0] + two_pi
                total += nxt - me[i]
        if total <= 1e-12:
            return out, EMPTY_ARC, degen
        # draw the angle uniformly from the allowed set
        target = unis[step] * total
        if n_merged == 0:
            t_ang = target
        else:
            t_ang = 0.0
            acc = 0.0
            for i in range(n_merged):
                nxt = ms[i + 1] if i + 1 < n_merged else ms[0] + two_pi
                gap = nxt - me[i]
                if acc + gap >= target:
                    t_ang = me[i] + (target - acc)
                    break
                acc += gap
            t_ang = t_ang % two_pi
        ct = math.cos(t_ang)
        st = math.sin(t_ang)
        wnrm = 0.0
        for k in range(dim):
            w[k] = ct * w[k] + st * radius * (g[k] - dotgw * w[k]) / vnrm
            wnrm += w[k] * w[k]
        wnrm = math.sqrt(wnrm)
        for k in range(dim):
            w[k] *= radius / wnrm
        if step >= burn_in and (step - burn_in) % thin == thin - 1:
            out[kept] = w
            kept += 1
    return out, OK, degen


@njit(cache=True)
def all_rows_leq(W, CT, d, tol):
    """Boolean mask of rows w of W with C w <= d + tol (CT = C transposed)."""
    nw = W.shape[0]
    m = d.shape[0]
    keep = np.ones(nw, dtype=np.bool_)
    S = np.dot(W, CT)
    for i in range(nw):
        for j in range(m):
            if S[i, j] > d[j] + tol:
                keep[i] = False
                break
    return keep
