"""Monte-Carlo harness: data generation, replicate studies, size summaries.

The reference setup: y = X beta + (b_z / sqrt(p_z)) Z 1 + eps with
standardized X and Z, beta carrying p_real equal coefficients.  With
b_x = 0 every test of the selected model is a true null, so rejection
rates estimate type-I error and p-values should be uniform; with b_x > 0
the studies compare power and recovery of the true support.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _stats

from .core import Dataset, standardize
from .errors import ConfigError, SelpredError
from .inference import (
    HypothesisContext, carve_f, carve_t, naive_f, naive_t, prevalidate,
    sample_split_f, sample_split_t, selective_f_exact, selective_f_sampling,
    selective_t_affine, selective_t_general,
)
from .samplers import ChainConfig
from .selectors import (
    LassoFitter, fit_lasso, lasso_selection_model, tune_lambda,
)

METHOD_NAMES = (
    "selective_t", "selective_t_general", "selective_f_sampling",
    "selective_f_exact", "naive_t", "naive_f", "sample_split_t",
    "sample_split_f", "prevalidate", "carve_t", "carve_f",
)

# methods whose first stage runs on all rows (the rest select on half)
_FULL_DATA = {"selective_t", "selective_t_general", "selective_f_sampling",
              "selective_f_exact", "naive_t", "naive_f"}


@dataclass(frozen=True)
class Fixed:
    """Use one penalty value everywhere."""
    value: float


@dataclass(frozen=True)
class AutoSparsity:
    """Tune the penalty on a pilot replicate to hit an active-set window."""
    low: int = 8
    high: int = 12


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    p_x: int = 100
    p_z: int = 5
    p_real: int = 5
    b_x: float = 0.0
    b_z: float = 1.0
    n_reps: int = 500
    alpha: float = 0.05
    lambda_policy: object = AutoSparsity(8, 12)
    methods: tuple = ("selective_t",)
    seed: int = 0
    chain: ChainConfig = ChainConfig()
    split_frac: float = 0.5
    folds: int = 10
    sigma2: float = 1.0           # true noise variance, used by known-variance tests

    def __post_init__(self):
        if self.p_real > self.p_x:
            raise ConfigError(f"p_real {self.p_real} exceeds p_x {self.p_x}")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.split_frac < 1:
            raise ConfigError("split_frac must be in (0, 1)")
        object.__setattr__(self, "methods", tuple(self.methods))
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ConfigError(f"unknown method {m!r}")


@dataclass
class MethodStats:
    """Per-method study outcome; p_values and true_positives are
    replicate-aligned with None marking excluded (failed) replicates."""

    p_values: list
    true_positives: list
    rejection_rate: float
    ks_stat: float
    mean_true_positives: float
    n_failures: int


@dataclass
class SimSummary:
    config: SimConfig
    methods: dict                  # name -> MethodStats
    failures: list                 # (replicate, method, message)
    runtime_seconds: float = field(default=0.0, compare=False)

    def to_dict(self):
        from .results import _jsonable
        return {
            "n_reps": self.config.n_reps,
            "alpha": self.config.alpha,
            "seed": self.config.seed,
            "methods": {
                name: {
                    "rejection_rate": ms.rejection_rate,
                    "ks_stat": ms.ks_stat,
                    "mean_true_positives": ms.mean_true_positives,
                    "n_failures": ms.n_failures,
                    "p_values": [None if p is None else float(p)
                                 for p in ms.p_values],
                    "true_positives": [None if t is None else int(t)
                                       for t in ms.true_positives],
                }
                for name, ms in self.methods.items()
            },
            "failures": [list(f) for f in self.failures],
            "runtime_seconds": _jsonable(self.runtime_seconds),
        }


def generate(cfg, rep_seed):
    """One synthetic dataset plus the indices of the true support.

    beta puts b_x / sqrt(p_real) on the first p_real coordinates: with
    independent unit-variance columns the X part then contributes variance
    b_x^2 regardless of p_real.
    """
    rng = np.random.default_rng((cfg.seed, rep_seed))
    X = standardize(rng.standard_normal((cfg.n, cfg.p_x)))
    Z = standardize(rng.standard_normal((cfg.n, cfg.p_z))) \
        if cfg.p_z else np.empty((cfg.n, 0))
    y = math.sqrt(cfg.sigma2) * rng.standard_normal(cfg.n)
    support = np.arange(min(cfg.p_real, cfg.p_x))
    if cfg.b_x != 0.0 and cfg.p_real > 0:
        coef = cfg.b_x / math.sqrt(cfg.p_real)
        y = y + X[:, support] @ np.full(support.size, coef)
    if cfg.p_z and cfg.b_z != 0.0:
        y = y + (cfg.b_z / math.sqrt(cfg.p_z)) * Z.sum(axis=1)
    ds = Dataset(y=y, X=X, Z=Z, standardized_x=True,
                 standardized_z=bool(cfg.p_z))
    return ds, support


def _derived_seed(*parts):
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def _resolve_lambdas(cfg):
    """Penalties for full-data and half-data first stages.

    Auto mode tunes each on a pilot replicate outside the study stream,
    the half-data value on a same-sized row subset.
    """
    pol = cfg.lambda_policy
    if isinstance(pol, Fixed):
        return float(pol.value), float(pol.value)
    pilot, _ = generate(cfg, 2 ** 32)
    lam_full = tune_lambda(pilot, pol.low, pol.high)
    n1 = max(int(round(cfg.n * cfg.split_frac)), pilot.p_z + 2)
    half = pilot.subset(np.arange(n1))
    lam_half = tune_lambda(half, pol.low, pol.high)
    return lam_full, lam_half


class _RepState:
    """Lazy shared pieces of one replicate (full fit reused across arms)."""

    def __init__(self, ds, lam_full, lam_half=None):
        self.ds = ds
        self.lam_full = lam_full
        self.lam_half = lam_half if lam_half is not None else lam_full
        self._fit = None
        self._model = None

    @property
    def fit(self):
        if self._fit is None:
            self._fit = fit_lasso(self.ds, self.lam_full)
        return self._fit

    @property
    def model(self):
        if self._model is None:
            self._model = lasso_selection_model(self.ds, self.fit)
        return self._model


def _run_method(name, state, cfg, lam_half, rep):
    ds = state.ds
    chain = ChainConfig(
        n_samples=cfg.chain.n_samples, burn_in=cfg.chain.burn_in,
        thin=cfg.chain.thin, method=cfg.chain.method,
        seed=_derived_seed(cfg.seed, rep, METHOD_NAMES.index(name)))
    split_seed = _derived_seed(cfg.seed, rep, 97)
    n1 = int(round(ds.n * cfg.split_frac))
    half_fitter = LassoFitter(lam=lam_half)

    if name == "selective_t":
        ctx = HypothesisContext(ds, state.model, sigma2=cfg.sigma2)
        return selective_t_affine(ctx, chain)
    if name == "selective_t_general":
        ctx = HypothesisContext(ds, state.model, sigma2=cfg.sigma2)
        return selective_t_general(ctx, LassoFitter(lam=state.lam_full), chain)
    if name == "selective_f_sampling":
        ctx = HypothesisContext(ds, state.model, sigma2=cfg.sigma2)
        return selective_f_sampling(ctx, chain)
    if name == "selective_f_exact":
        ctx = HypothesisContext(ds, state.model)
        return selective_f_exact(ctx)
    if name == "naive_t":
        return naive_t(ds, state.model.predict(ds.y))
    if name == "naive_f":
        return naive_f(ds, state.fit.active)
    if name == "sample_split_t":
        return sample_split_t(ds, half_fitter, n1, split_seed)
    if name == "sample_split_f":
        return sample_split_f(ds, half_fitter, n1, split_seed)
    if name == "prevalidate":
        return prevalidate(ds, LassoFitter(lam=state.lam_full),
                           K=cfg.folds, seed=split_seed)
    if name == "carve_t":
        return carve_t(ds, half_fitter, n1, split_seed, cfg=chain,
                       sigma2=cfg.sigma2)
    if name == "carve_f":
        return carve_f(ds, half_fitter, n1, split_seed)
    raise ConfigError(f"unknown method {name!r}")


def _true_positives(name, state, cfg, rep, support):
    """Size of the overlap between the arm's selected set and the truth."""
    if name in _FULL_DATA or name == "prevalidate":
        return int(np.intersect1d(state.fit.active, support).size)
    split_seed = _derived_seed(cfg.seed, rep, 97)
    n1 = int(round(state.ds.n * cfg.split_frac))
    from .selectors import carve_split
    part1, _, _ = carve_split(state.ds, n1, split_seed)
    return int(np.intersect1d(
        fit_lasso(part1, state.lam_half).active, support).size)


class _MethodSettings:
    """The slice of a study config that _run_method actually reads."""

    def __init__(self, chain, seed, split_frac, folds, sigma2):
        self.chain = chain
        self.seed = seed
        self.split_frac = split_frac
        self.folds = folds
        self.sigma2 = sigma2


def run_methods(ds, names, *, lam_full, lam_half=None, chain=None, seed=0,
                split_frac=0.5, folds=10, sigma2=None):
    """Run several methods on one dataset, sharing the first-stage fit.

    Seeding follows the study convention (chain and split seeds derived
    from `seed` and the method index), so a single-replicate study and a
    direct call agree.  Returns (results, state): results maps method
    name to TestResult, state exposes the shared full-data fit.
    """
    for name in names:
        if name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {name!r}")
    settings = _MethodSettings(chain if chain is not None else ChainConfig(),
                               seed, split_frac, folds, sigma2)
    state = _RepState(ds, lam_full, lam_half)
    results = {name: _run_method(name, state, settings, state.lam_half, 0)
               for name in names}
    return results, state


def run_experiment(cfg):
    """Run every requested method over n_reps independent replicates.

    Failed replicates are excluded per method and recorded; more than 1%
    failures for any method aborts the study.
    """
    if not cfg.methods:
        raise ConfigError("no methods requested")
    t0 = time.monotonic()
    lam_full, lam_half = _resolve_lambdas(cfg)
    p_lists = {m: [] for m in cfg.methods}
    tp_lists = {m: [] for m in cfg.methods}
    failures = []
    for rep in range(cfg.n_reps):
        ds, support = generate(cfg, rep)
        state = _RepState(ds, lam_full, lam_half)
        for name in cfg.methods:
            try:
                res = _run_method(name, state, cfg, lam_half, rep)
                p_lists[name].append(float(res.p_value))
                tp_lists[name].append(
                    _true_positives(name, state, cfg, rep, support))
            except SelpredError as exc:
                p_lists[name].append(None)
                tp_lists[name].append(None)
                failures.append((rep, name, str(exc)))
    methods = {}
    for name in cfg.methods:
        ps = [p for p in p_lists[name] if p is not None]
        tps = [t for t in tp_lists[name] if t is not None]
        n_fail = cfg.n_reps - len(ps)
        if n_fail > 0.01 * cfg.n_reps:
            raise SelpredError(
                f"method {name} failed on {n_fail}/{cfg.n_reps} replicates")
        rate = sum(p <= cfg.alpha for p in ps) / len(ps) if ps else 0.0
        ks = float(_stats.kstest(ps, "uniform").statistic) if ps else 1.0
        methods[name] = MethodStats(
            p_values=p_lists[name], true_positives=tp_lists[name],
            rejection_rate=rate, ks_stat=ks,
            mean_true_positives=float(np.mean(tps)) if tps else 0.0,
            n_failures=n_fail)
    return SimSummary(config=cfg, methods=methods, failures=failures,
                      runtime_seconds=time.monotonic() - t0)


def sampler_size_study(cfg, sizes):
    """Chain-length sensitivity of the conditional t-test's p-values.

    One maximal chain per replicate; the p-value at each smaller size uses
    only that prefix of the draws, exactly what a shorter run would see.
    Returns one entry per size with the p-values, their ECDF knots, and the
    KS distance from uniform.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or len(sizes) == 0 or sizes[0] < 1:
        raise ConfigError("sizes must be ascending positive integers")
    full = sizes[-1]
    lam_full, _ = _resolve_lambdas(cfg)
    per_size = {s: [] for s in sizes}
    for rep in range(cfg.n_reps):
        ds, _ = generate(cfg, rep)
        state = _RepState(ds, lam_full)
        chain = ChainConfig(
            n_samples=full, burn_in=cfg.chain.burn_in, thin=cfg.chain.thin,
            method=cfg.chain.method,
            seed=_derived_seed(cfg.seed, rep, 0))
        try:
            ctx = HypothesisContext(ds, state.model, sigma2=cfg.sigma2)
            t_obs, abs_draws = _t_chain_draws(ctx, chain)
        except SelpredError:
            continue
        for s in sizes:
            head = abs_draws[:s]
            per_size[s].append(
                (1.0 + int(np.sum(head >= abs(t_obs)))) / (s + 1.0))
    out = []
    for s in sizes:
        ps = np.asarray(per_size[s])
        knots = np.sort(ps)
        ecdf = np.arange(1, ps.size + 1) / ps.size if ps.size else np.array([])
        ks = float(_stats.kstest(ps, "uniform").statistic) if ps.size else 1.0
        out.append({"size": s, "p_values": ps.tolist(),
                    "p_sorted": knots.tolist(), "ecdf": ecdf.tolist(),
                    "ks_stat": ks})
    return out


def _t_chain_draws(ctx, chain):
    """Observed statistic and |T| per draw for the affine conditional t-test.

    Mirrors the test's internal computation so studies can reuse one chain
    at several truncation lengths.
    """
    from .samplers import ConstrainedGaussian, ConstrainedSphere, \
        draw_gaussian, draw_sphere
    ds, model = ctx.dataset, ctx.model
    op = ds.residual_op()
    y = ds.y
    yhat = model.predict(y)
    q_yhat = op.residual(yhat)
    r1 = op.residual(y)
    t_obs = float(r1 @ q_yhat) / float(np.linalg.norm(q_yhat))
    delta = y - r1
    A, b = model.event.A, model.event.b
    C = A @ op.Q
    d = b - A @ delta
    c_obs = op.coords(r1)
    if ctx.sigma2 is None:
        out = draw_sphere(ConstrainedSphere(C, d, c_obs), chain)
    else:
        out = draw_gaussian(ConstrainedGaussian(C, d, ctx.sigma2, c_obs),
                            chain)
    Y = delta[:, None] + op.Q @ out.samples.T
    yhat_s = model.L @ Y + model.zeta[:, None]
    q_yhat_s = op.residual(yhat_s)
    num = np.einsum("ij,ij->j", op.residual(Y), q_yhat_s)
    den = np.linalg.norm(q_yhat_s, axis=0)
    good = den > 1e-12 * np.maximum(1.0, np.linalg.norm(yhat_s, axis=0))
    abs_t = np.where(good, np.abs(num) / np.where(good, den, 1.0), np.inf)
    return t_obs, abs_t
