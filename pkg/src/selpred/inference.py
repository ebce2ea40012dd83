"""Inference procedures for a predictor built on the same data.

Two families. The t family asks whether the fitted combination yhat earns
a coefficient next to the external covariates Z; the F family asks whether
the selected columns X_E jointly improve on Z.  Each family has a naive
(classical) version, data-splitting and pre-validation baselines, and
conditional versions that correct for selection by restricting the
reference distribution to the selection event.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as _stats

from .core import orthonormal_columns
from .dists import f_truncation_set, truncated_f_pvalue
from .errors import (
    ConfigError, DimensionMismatch, EmptyActiveSet, FitterFailure,
    FoldTooSmall, NonMember, RankDeficient, SelpredError,
    SingularReconstruction,
)
from .results import TestResult
from .samplers import (
    ChainConfig, ConstrainedGaussian, ConstrainedSphere, draw_gaussian,
    draw_sphere,
)
from .selectors import SelectionModel, carve_lasso_model, carve_split, \
    pad_polyhedron

_DEGEN_RTOL = 1e-12
_COND_LIMIT = 1e12


@dataclass
class HypothesisContext:
    """Dataset, its selection model, and the null to test.

    sigma2 = None requests the scale-free mode: samplers run on the sphere
    of radius ||R1|| instead of assuming a known error variance.  theta0 is
    the coefficient tested for the fitted predictor, beta0 (scalar or
    per-column vector) for the selected columns.
    """

    dataset: object
    model: SelectionModel
    sigma2: float = None
    theta0: float = 0.0
    beta0: object = 0.0

    def __post_init__(self):
        if self.model is not None and not self.model.event.contains(
                self.dataset.y, tol=1e-6):
            raise NonMember("response lies outside the selection event")


def _mc_p(n_extreme, n_draws):
    # add-one rule: keeps p positive and the test valid at finite n
    return (1.0 + n_extreme) / (n_draws + 1.0)


def _draw_coords(C, d, c_obs, sigma2, cfg):
    if sigma2 is None:
        return draw_sphere(ConstrainedSphere(C, d, c_obs), cfg)
    return draw_gaussian(ConstrainedGaussian(C, d, sigma2, c_obs), cfg)


def _variance_label(sigma2):
    return "sphere" if sigma2 is None else "known"


def _degenerate_result(test_id, null_spec, diagnostics):
    diagnostics = dict(diagnostics)
    diagnostics["degenerate_yhat"] = True
    return TestResult(test_id=test_id, statistic=0.0, p_value=1.0,
                      reference={"kind": "degenerate"},
                      null_spec=null_spec, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# conditional t tests

def selective_t_affine(ctx, cfg=None, test_id="selective_t_affine"):
    """Conditional t-type test of theta = theta0 for an affine predictor.

    Under the null, y - theta0 yhat has mean Z gamma, so its Z-residual R1
    is a pivot.  Because yhat = L y + zeta, the response can be rebuilt
    from R1 alone: y = delta + (I - theta0 L)^-1 R1 with delta fixed by the
    observed data.  The selection event becomes a polyhedron in R1, which
    is sampled (Gaussian slice under known variance, sphere slice of radius
    ||R1|| otherwise); each draw is mapped back to a response, the
    predictor is recomputed, and the observed correlation statistic is
    ranked two-sidedly among the draws.
    """
    cfg = cfg if cfg is not None else ChainConfig()
    ds, model = ctx.dataset, ctx.model
    theta0 = float(ctx.theta0)
    y = ds.y
    op = ds.residual_op()
    L, zeta = model.L, model.zeta
    null_spec = {"theta0": theta0, "sigma2": ctx.sigma2}

    yhat = model.predict(y)
    q_yhat = op.residual(yhat)
    scale = max(1.0, float(np.linalg.norm(yhat)))
    base_diag = {"n_selected": int(model.selected.size),
                 "fitter": model.fitter_tag}
    if np.linalg.norm(q_yhat) <= _DEGEN_RTOL * scale:
        return _degenerate_result(test_id, null_spec, base_diag)

    r1 = op.residual(y - theta0 * yhat)
    t_obs = float(r1 @ q_yhat) / float(np.linalg.norm(q_yhat))

    n = ds.n
    if theta0 == 0.0:
        t_mat = None
        delta = y - r1
        map_u = op.Q
    else:
        recon = np.eye(n) - theta0 * L
        cond = np.linalg.cond(recon)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularReconstruction(
                f"I - theta0 L has condition estimate {cond:.3e}")
        t_mat = np.linalg.inv(recon)
        delta = y - t_mat @ r1
        map_u = t_mat @ op.Q

    A, b = model.event.A, model.event.b
    C = A @ map_u
    d = b - A @ delta
    c_obs = op.coords(r1)
    out = _draw_coords(C, d, c_obs, ctx.sigma2, cfg)

    Y = delta[:, None] + map_u @ out.samples.T          # n x draws
    yhat_s = L @ Y + zeta[:, None]
    q_yhat_s = op.residual(yhat_s)
    r1_s = op.residual(Y - theta0 * yhat_s)
    num = np.einsum("ij,ij->j", r1_s, q_yhat_s)
    den = np.linalg.norm(q_yhat_s, axis=0)
    good = den > _DEGEN_RTOL * np.maximum(1.0, np.linalg.norm(yhat_s, axis=0))
    t_s = np.where(good, num / np.where(good, den, 1.0), 0.0)
    # draws with an undefined statistic count as extreme: errs conservative
    n_extreme = int(np.sum(np.abs(t_s[good]) >= abs(t_obs))) \
        + int(np.sum(~good))
    n_draws = out.samples.shape[0]
    diagnostics = {**base_diag, **out.diagnostics,
                   "degenerate_draws": int(np.sum(~good))}
    if out.acceptance_rate is not None:
        diagnostics["acceptance_rate"] = out.acceptance_rate
    return TestResult(
        test_id=test_id, statistic=t_obs, p_value=_mc_p(n_extreme, n_draws),
        reference={"kind": "mc", "n_samples": n_draws, "sampler": out.method,
                   "variance": _variance_label(ctx.sigma2)},
        null_spec=null_spec, diagnostics=diagnostics)


def selective_t_general(ctx, fitter, cfg=None):
    """Conditional test of theta = 0 with the first stage rerun per draw.

    At theta0 = 0 the null mean of the Z-residual is free of the fitted
    predictor, so draws of R1 reconstruct full responses y' = P_Z y + R1'
    and the fitter (any procedure, not necessarily affine) is applied to
    each.  The event stays the one selected on the observed data.
    """
    if float(ctx.theta0) != 0.0:
        raise ConfigError("the general-fitter test supports theta0 = 0 only")
    cfg = cfg if cfg is not None else ChainConfig()
    ds, model = ctx.dataset, ctx.model
    y = ds.y
    op = ds.residual_op()
    null_spec = {"theta0": 0.0, "sigma2": ctx.sigma2}

    fitted_obs = fitter(ds)
    yhat = np.asarray(fitted_obs.predict(ds.X), dtype=float)
    q_yhat = op.residual(yhat)
    base_diag = {"n_selected": int(model.selected.size)}
    if np.linalg.norm(q_yhat) <= _DEGEN_RTOL * max(1.0, np.linalg.norm(yhat)):
        return _degenerate_result("selective_t_general", null_spec, base_diag)
    r1 = op.residual(y)
    t_obs = float(r1 @ q_yhat) / float(np.linalg.norm(q_yhat))

    delta = y - r1
    A, b = model.event.A, model.event.b
    C = A @ op.Q
    d = b - A @ delta
    out = _draw_coords(C, d, op.coords(r1), ctx.sigma2, cfg)

    n_extreme = 0
    n_degen = 0
    for i, c in enumerate(out.samples):
        r1_i = op.Q @ c
        y_i = delta + r1_i
        try:
            fitted = fitter(ds.replace_y(y_i))
            yhat_i = np.asarray(fitted.predict(ds.X), dtype=float)
        except SelpredError as exc:
            raise FitterFailure(i, str(exc)) from exc
        q_i = op.residual(yhat_i)
        den = float(np.linalg.norm(q_i))
        if den <= _DEGEN_RTOL * max(1.0, float(np.linalg.norm(yhat_i))):
            n_degen += 1
            n_extreme += 1
            continue
        if abs(float(r1_i @ q_i) / den) >= abs(t_obs):
            n_extreme += 1
    n_draws = out.samples.shape[0]
    diagnostics = {**base_diag, **out.diagnostics, "degenerate_draws": n_degen}
    if out.acceptance_rate is not None:
        diagnostics["acceptance_rate"] = out.acceptance_rate
    return TestResult(
        test_id="selective_t_general", statistic=t_obs,
        p_value=_mc_p(n_extreme, n_draws),
        reference={"kind": "mc", "n_samples": n_draws, "sampler": out.method,
                   "variance": _variance_label(ctx.sigma2)},
        null_spec=null_spec, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# conditional F tests

def selective_f_sampling(ctx, cfg=None, test_id="selective_f_sampling"):
    """Conditional F-type test of beta = beta0 for the selected columns.

    R1 is the Z-residual of y - X_E beta0.  With M the span of [X_E, Z],
    the statistic compares the part of R1 explained by the selected columns
    against the leftover: T = (||P R1||^2 / d1) / (||R1 - P R1||^2 / d2)
    where P projects onto the Z-residualized selected columns.  Draws of R1
    restricted to the event give the upper-tail Monte Carlo p-value.
    """
    cfg = cfg if cfg is not None else ChainConfig()
    ds, model = ctx.dataset, ctx.model
    E = model.selected
    XE = ds.X[:, E]
    beta0 = np.asarray(ctx.beta0, dtype=float)
    if beta0.ndim == 0:
        beta0 = np.full(E.size, float(beta0))
    if beta0.shape[0] != E.size:
        raise DimensionMismatch(
            f"beta0 has {beta0.shape[0]} entries for {E.size} columns")
    op = ds.residual_op()
    y = ds.y
    r1 = op.residual(y - XE @ beta0)
    delta = y - r1

    B = op.coords(XE)                    # selected columns in residual coords
    W, rank = orthonormal_columns(B)
    if rank < E.size:
        raise RankDeficient(
            f"selected columns span rank {rank} < {E.size} past Z")
    d1 = rank
    d2 = op.dim - rank
    if d2 <= 0:
        raise RankDeficient("no residual degrees of freedom under the model")

    def fstat(rows):
        w2 = np.sum((rows @ W) ** 2, axis=-1)
        resid = np.maximum(np.sum(rows ** 2, axis=-1) - w2, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = (w2 / d1) / (resid / d2)
        return np.where(resid > 0, vals, np.inf)

    c_obs = op.coords(r1)
    f_obs = float(fstat(c_obs[None, :])[0])
    A, b = model.event.A, model.event.b
    out = _draw_coords(A @ op.Q, b - A @ delta, c_obs, ctx.sigma2, cfg)
    f_s = fstat(out.samples)
    n_draws = f_s.shape[0]
    diagnostics = {"n_selected": int(E.size), "d1": d1, "d2": d2,
                   **out.diagnostics}
    if out.acceptance_rate is not None:
        diagnostics["acceptance_rate"] = out.acceptance_rate
    return TestResult(
        test_id=test_id, statistic=f_obs,
        p_value=_mc_p(int(np.sum(f_s >= f_obs)), n_draws),
        reference={"kind": "mc", "n_samples": n_draws, "sampler": out.method,
                   "variance": _variance_label(ctx.sigma2)},
        null_spec={"beta0": beta0, "sigma2": ctx.sigma2},
        diagnostics=diagnostics)


def selective_f_exact(ctx, test_id="selective_f_exact"):
    """Sampling-free conditional F test of beta = 0.

    Conditions additionally on the unit directions of the explained and
    leftover residual parts, which reduces the event to a union of
    intervals for the F statistic; the p-value is the renormalized upper
    tail over that truncation set.  More conditioning than the sampling
    version, hence some power loss, but exact and instant.
    """
    beta0 = np.asarray(ctx.beta0, dtype=float)
    if np.any(beta0 != 0.0):
        raise ConfigError("the sampling-free F test requires beta0 = 0")
    ds, model = ctx.dataset, ctx.model
    op = ds.residual_op()
    tset = f_truncation_set(model.event, ds.y, ds.X[:, model.selected], op)
    t_obs = tset.x_obs / tset.c
    p = truncated_f_pvalue(tset, t_obs)
    return TestResult(
        test_id=test_id, statistic=float(t_obs), p_value=p,
        reference={"kind": "trunc_f", "d1": tset.d1, "d2": tset.d2,
                   "c": tset.c,
                   "intervals": [[iv.lo, iv.hi] for iv in tset.intervals]},
        null_spec={"beta0": 0.0},
        diagnostics={"n_selected": int(model.selected.size),
                     "x_obs": tset.x_obs,
                     "degenerate_numerator": tset.degenerate})


# ---------------------------------------------------------------------------
# classical tests (no selection correction)

def _t_regression(y, design, coef_index=0):
    """t statistic, p, and df for one coefficient by least squares."""
    n, k = design.shape
    if n <= k:
        raise RankDeficient(f"{n} rows cannot support {k} regressors")
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= s[0] * 1e-10:
        raise RankDeficient("collinear design in the t regression")
    df = n - k
    coef = vt.T @ ((u.T @ y) / s)
    resid = y - design @ coef
    sigma2_hat = float(resid @ resid) / df
    unit_var = float(np.sum(vt[:, coef_index] ** 2 / s ** 2))
    se = math.sqrt(max(sigma2_hat * unit_var, 0.0))
    b = float(coef[coef_index])
    if se == 0.0:
        stat = 0.0 if b == 0.0 else math.copysign(math.inf, b)
    else:
        stat = b / se
    p = 2.0 * float(_stats.t.sf(abs(stat), df)) if math.isfinite(stat) else 0.0
    return stat, min(p, 1.0), df


def naive_t(dataset, yhat):
    """Classical two-sided t-test for the yhat coefficient next to Z.

    Ignores that yhat was built from the same response, so it overstates
    significance whenever the first stage adapted to y.
    """
    yhat = np.asarray(yhat, dtype=float).ravel()
    if yhat.shape[0] != dataset.n:
        raise DimensionMismatch(
            f"yhat has {yhat.shape[0]} entries for {dataset.n} rows")
    design = np.column_stack([yhat, dataset.zfull()])
    stat, p, df = _t_regression(dataset.y, design)
    return TestResult(
        test_id="naive_t", statistic=stat, p_value=p,
        reference={"kind": "classical_t", "df": df},
        null_spec={"theta0": 0.0}, diagnostics={})


def naive_f(dataset, selected, test_id="naive_f", extra_diag=None):
    """Classical F-test of regressing y on [X_selected, Z] versus Z alone."""
    E = np.asarray(selected, dtype=int).ravel()
    y = dataset.y
    n = dataset.n
    op = dataset.residual_op()
    rank_z = n - op.dim
    yy = float(y @ y)
    rss0 = float(np.linalg.norm(op.residual(y))) ** 2
    if E.size:
        joint = np.column_stack([dataset.X[:, E], dataset.zfull()])
    else:
        joint = dataset.zfull()
    um, rank_m = orthonormal_columns(joint)
    d1 = rank_m - rank_z
    d2 = n - rank_m
    diagnostics = {"n_selected": int(E.size), **(extra_diag or {})}
    if d2 <= 0:
        raise RankDeficient("no residual degrees of freedom for the F test")
    if d1 <= 0:
        # selected columns add nothing beyond Z: no numerator df
        return TestResult(
            test_id=test_id, statistic=0.0, p_value=1.0,
            reference={"kind": "classical_f", "d1": 0, "d2": d2},
            null_spec={"beta0": 0.0}, diagnostics=diagnostics)
    proj = um.T @ y
    rss1 = max(yy - float(proj @ proj), 0.0)
    if rss1 == 0.0:
        stat = math.inf
        p = 0.0
    else:
        stat = ((rss0 - rss1) / d1) / (rss1 / d2)
        p = float(_stats.f.sf(stat, d1, d2))
    return TestResult(
        test_id=test_id, statistic=stat, p_value=p,
        reference={"kind": "classical_f", "d1": d1, "d2": d2},
        null_spec={"beta0": 0.0}, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# data-splitting and pre-validation baselines

def sample_split_t(dataset, fitter, n1, seed):
    """Fit on a random n1-row half, classical t-test on the held-out rows."""
    part1, part2, _ = carve_split(dataset, n1, seed)
    fitted = fitter(part1)
    yhat2 = np.asarray(fitted.predict(part2.X), dtype=float)
    selected = np.asarray(getattr(fitted, "selected", np.empty(0, dtype=int)))
    diag = {"n1": part1.n, "n2": part2.n, "n_selected": int(selected.size),
            "seed": seed}
    op2 = part2.residual_op()
    if np.linalg.norm(op2.residual(yhat2)) <= \
            1e-10 * max(1.0, float(np.linalg.norm(yhat2))):
        return _degenerate_result("sample_split_t", {"theta0": 0.0}, diag)
    design = np.column_stack([yhat2, part2.zfull()])
    stat, p, df = _t_regression(part2.y, design)
    return TestResult(
        test_id="sample_split_t", statistic=stat, p_value=p,
        reference={"kind": "classical_t", "df": df},
        null_spec={"theta0": 0.0}, diagnostics=diag)


def sample_split_f(dataset, selector, n1, seed):
    """Select columns on one half, classical F-test on the other half."""
    part1, part2, _ = carve_split(dataset, n1, seed)
    fitted = selector(part1)
    E = np.asarray(fitted.selected, dtype=int)
    diag = {"n1": part1.n, "n2": part2.n, "seed": seed}
    if E.size == 0:
        return TestResult(
            test_id="sample_split_f", statistic=0.0, p_value=1.0,
            reference={"kind": "classical_f", "d1": 0, "d2": None},
            null_spec={"beta0": 0.0},
            diagnostics={**diag, "n_selected": 0, "empty_selection": True})
    return naive_f(part2, E, test_id="sample_split_f", extra_diag=diag)


def prevalidate(dataset, fitter, K=10, seed=0):
    """Cross-fitted predictor: out-of-fold yhat, then the classical t-test.

    Each fold's predictions come from a model fitted without those rows.
    Removes the worst of the reuse but not the shared-fold dependence, so
    the test runs somewhat above its nominal level.
    """
    if K < 2:
        raise ConfigError(f"need at least 2 folds, got {K}")
    n = dataset.n
    if K > n:
        raise FoldTooSmall(f"{K} folds over {n} rows leaves empty folds")
    min_train = dataset.p_z + 2
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, K)
    yhat = np.zeros(n)
    sizes = []
    for fold in folds:
        if n - fold.size < min_train:
            raise FoldTooSmall(
                f"training complement {n - fold.size} below {min_train}")
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        fitted = fitter(dataset.subset(np.where(mask)[0]))
        yhat[fold] = np.asarray(fitted.predict(dataset.X[fold]), dtype=float)
        sizes.append(int(fold.size))
    diag = {"folds": K, "fold_sizes": sizes, "seed": seed}
    op = dataset.residual_op()
    if np.linalg.norm(op.residual(yhat)) <= \
            1e-10 * max(1.0, float(np.linalg.norm(yhat))):
        return _degenerate_result("prevalidate", {"theta0": 0.0}, diag)
    design = np.column_stack([yhat, dataset.zfull()])
    stat, p, df = _t_regression(dataset.y, design)
    return TestResult(
        test_id="prevalidate", statistic=stat, p_value=p,
        reference={"kind": "classical_t", "df": df},
        null_spec={"theta0": 0.0}, diagnostics=diag)


# ---------------------------------------------------------------------------
# data carving: select on part of the rows, test conditionally on all

def _full_model(dataset, fitted):
    model = getattr(fitted, "model", None)
    if model is None:
        raise EmptyActiveSet("the fitter selected nothing")
    return model


def _extended_model(dataset, fitted, part1, perm):
    """Lift a part-1 selection model to the full rows.

    Lasso predictions refit on part 1 are affine in the part-1 responses;
    constant combiners extend by evaluating on the full design.  Either
    way the event matrix gains zero columns at held-out positions.
    """
    n2 = dataset.n - part1.n
    if hasattr(fitted, "fit"):                       # penalized fit
        if fitted.fit.active.size == 0:
            raise EmptyActiveSet("part-1 fit selected nothing")
        return carve_lasso_model(dataset, part1, perm, fitted.fit)
    model1 = _full_model(part1, fitted)
    if np.any(model1.L != 0):
        raise ConfigError(
            "carving needs an affine-in-y or constant part-1 predictor")
    event = pad_polyhedron(model1.event, n2, perm)
    zeta = np.asarray(fitted.predict(dataset.X), dtype=float)
    return SelectionModel(
        selected=model1.selected, signs=model1.signs,
        L=np.zeros((dataset.n, dataset.n)), zeta=zeta, event=event,
        fitter_tag=model1.fitter_tag)


def carve_t(dataset, fitter, n1, seed, cfg=None, theta0=0.0, sigma2=None):
    """Select on n1 rows, then run the conditional t-test on all rows.

    n1 = n degenerates to the fully conditional test.
    """
    if n1 == dataset.n:
        model = _full_model(dataset, fitter(dataset))
        n2 = 0
    else:
        part1, _, perm = carve_split(dataset, n1, seed)
        model = _extended_model(dataset, fitter(part1), part1, perm)
        n2 = dataset.n - n1
    ctx = HypothesisContext(dataset, model, sigma2=sigma2, theta0=theta0)
    res = selective_t_affine(ctx, cfg, test_id="carve_t")
    return replace(res, diagnostics={**res.diagnostics, "n1": n1, "n2": n2,
                                     "seed": seed})


def carve_f(dataset, selector, n1, seed, cfg=None, beta0=0.0, sigma2=None,
            sampling=False):
    """Select on n1 rows, conditional F-test on all rows.

    Uses the sampling-free path when beta0 = 0 unless sampling is forced.
    """
    if n1 == dataset.n:
        model = _full_model(dataset, selector(dataset))
        n2 = 0
    else:
        part1, _, perm = carve_split(dataset, n1, seed)
        model = _extended_model(dataset, selector(part1), part1, perm)
        n2 = dataset.n - n1
    ctx = HypothesisContext(dataset, model, sigma2=sigma2, beta0=beta0)
    if sampling or np.any(np.asarray(beta0, dtype=float) != 0.0):
        res = selective_f_sampling(ctx, cfg, test_id="carve_f")
    else:
        res = selective_f_exact(ctx, test_id="carve_f")
    return replace(res, diagnostics={**res.diagnostics, "n1": n1, "n2": n2,
                                     "seed": seed})
