"""First-stage fitters and their selection events.

Each selector returns a SelectionModel: which columns were picked, the
affine map y -> yhat implied by refitting on the selected set, and the
polyhedron {y : A y <= b} of responses that reproduce the identical
selection (set plus signs).  The polyhedra are what make conditional
inference possible downstream.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Dataset, Polyhedron
from .errors import (
    ConfigError, EmptyActiveSet, NoConvergence, NoLambdaInRange, NonMember,
    SingularGram, SplitTooSmall, TieDetected,
)

LASSO_MAX_ITER = 100_000
LASSO_TOL = 1e-10
KKT_TOL = 1e-6


@dataclass
class LassoFit:
    """Solution of 0.5||y - X eta||^2 + lam ||eta||_1 at fixed lam."""

    lam: float
    eta: np.ndarray
    active: np.ndarray          # indices with eta != 0, ascending
    objective: float
    iterations: int = field(default=0, compare=False)

    @property
    def signs(self):
        return np.sign(self.eta[self.active])


@dataclass
class SelectionModel:
    """A first-stage model: selected set, affine prediction map, event.

    yhat(y) = L y + zeta reproduces the fitter's prediction; constant
    combiners have L = 0.  The event polyhedron contains every response
    that yields the same selected set and signs.
    """

    selected: np.ndarray
    signs: np.ndarray
    L: np.ndarray
    zeta: np.ndarray
    event: Polyhedron
    fitter_tag: str
    lam: float = None

    def predict(self, y):
        return self.L @ np.asarray(y, dtype=float).ravel() + self.zeta


def fit_lasso(dataset, lam):
    """Cyclic coordinate descent at fixed penalty.

    Deterministic (fixed coordinate order); converged when the largest
    coefficient update in a sweep drops below 1e-10.  The returned solution
    satisfies the KKT conditions |x_j'(y - X eta)| <= lam (+ tolerance),
    with equality and sign agreement on the active set.
    """
    if lam <= 0:
        raise ConfigError(f"lam must be positive, got {lam}")
    X = np.ascontiguousarray(dataset.X)
    y = np.ascontiguousarray(dataset.y)
    eta, iters, converged = _kernels.cd_lasso(X, y, float(lam),
                                              LASSO_MAX_ITER, LASSO_TOL)
    if not converged:
        raise NoConvergence(LASSO_MAX_ITER)
    resid = y - X @ eta
    grad = X.T @ resid
    if np.max(np.abs(grad)) > lam * (1.0 + KKT_TOL) + KKT_TOL:
        raise NoConvergence(iters)
    active = np.where(eta != 0.0)[0]
    obj = 0.5 * float(resid @ resid) + lam * float(np.abs(eta).sum())
    return LassoFit(lam=float(lam), eta=eta, active=active, objective=obj,
                    iterations=iters)


def lasso_selection_model(dataset, fit):
    """Selection event and affine map for a lasso fit.

    With E the active set, z its sign vector and P_E the projection onto
    span(X_E): yhat = L y + zeta with L = X_E (X_E'X_E)^-1 X_E' and
    zeta = -lam X_E (X_E'X_E)^-1 z.  The event stacks, for each inactive j,
    the two subgradient rows |x_j'((I - P_E) y / lam + X_E (X_E'X_E)^-1 z)|
    <= 1, and for each active coordinate the row keeping its coefficient
    sign, all rewritten as A y <= b.
    """
    E = fit.active
    if E.size == 0:
        raise EmptyActiveSet("lasso produced an empty active set")
    X = dataset.X
    lam = fit.lam
    XE = X[:, E]
    z = fit.signs
    G = XE.T @ XE
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(f"gram matrix of the active set: {exc}") from exc
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularGram(f"gram matrix condition number {cond:.2e}")
    W = Ginv @ XE.T                       # (X_E'X_E)^-1 X_E'
    L = XE @ W
    zeta = -lam * (XE @ (Ginv @ z))
    n = dataset.n
    inactive = np.setdiff1d(np.arange(dataset.p_x), E)
    rows = []
    offs = []
    XdagTz = XE @ (Ginv @ z)              # (X_E')^dagger z
    for j in inactive:
        xj = X[:, j]
        a = (xj - L.T @ xj) / lam         # x_j'(I - P_E) / lam, P_E symmetric
        c = float(xj @ XdagTz)
        rows.append(a)
        offs.append(1.0 - c)
        rows.append(-a)
        offs.append(1.0 + c)
    Gz = Ginv @ z
    for i in range(E.size):
        rows.append(-z[i] * W[i])
        offs.append(-lam * z[i] * Gz[i])
    event = Polyhedron(np.array(rows), np.array(offs))
    if not event.contains(dataset.y, tol=1e-7):
        raise NonMember("observed response violates its own selection event")
    return SelectionModel(selected=E, signs=z, L=L, zeta=zeta, event=event,
                          fitter_tag="lasso_fixed_lambda", lam=lam)


def marginal_screen(dataset, k, combiner="top_column"):
    """Pick the k columns with largest |x_j'y|; event fixes the top-k set
    and the signs of all columns.

    The prediction is a constant combination of the selected columns given
    the event (L = 0): the single top column, their row average, or the
    leading principal-component scores of the centered selected block (sign
    fixed so the top column loads nonnegatively).
    """
    X = dataset.X
    y = dataset.y
    p = dataset.p_x
    if not 1 <= k < p:
        raise ConfigError(f"need 1 <= k < p_x, got k={k}, p_x={p}")
    if combiner not in ("top_column", "average", "first_pc"):
        raise ConfigError(f"unknown combiner {combiner!r}")
    if combiner == "top_column" and k != 1:
        raise ConfigError("top_column requires k = 1")
    scores = X.T @ y
    signs_all = np.where(scores >= 0, 1.0, -1.0)
    order = np.argsort(-np.abs(scores), kind="stable")
    if abs(abs(scores[order[k - 1]]) - abs(scores[order[k]])) < 1e-12:
        raise TieDetected(
            f"|x'y| ties at rank {k}: {abs(scores[order[k - 1]]):.6e}")
    E = order[:k]                         # descending score order
    rest = order[k:]
    rows = []
    offs = []
    # every selected column beats every unselected one in |x'y|
    for j in E:
        for i in rest:
            rows.append(signs_all[i] * X[:, i] - signs_all[j] * X[:, j])
            offs.append(0.0)
    # the sign of every column is part of the event
    for i in range(p):
        rows.append(-signs_all[i] * X[:, i])
        offs.append(0.0)
    event = Polyhedron(np.array(rows), np.array(offs))
    if not event.contains(y, tol=1e-9):
        raise NonMember("observed response violates its own screening event")
    XE = X[:, E]
    if combiner == "top_column":
        zeta = XE[:, 0].copy()
    elif combiner == "average":
        zeta = XE.mean(axis=1)
    else:
        Xc = XE - XE.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        v = vt[0]
        if v[0] < 0:
            v = -v
        zeta = Xc @ v
    tag = "marginal_top1" if k == 1 else "marginal_topk"
    return SelectionModel(selected=E, signs=signs_all[E],
                          L=np.zeros((dataset.n, dataset.n)), zeta=zeta,
                          event=event, fitter_tag=tag)


def lambda_grid(p):
    """Penalty grid: multiples m * 2 sqrt(2 log p), m geometric in [2^-4, 2^4]."""
    base = 2.0 * math.sqrt(2.0 * math.log(p))
    return base * np.power(2.0, np.linspace(-4.0, 4.0, 33))


def tune_lambda(dataset, target_low, target_high):
    """Largest grid penalty whose active set size lands in [low, high]."""
    if target_low > target_high:
        raise ConfigError(f"target_low {target_low} > target_high {target_high}")
    for lam in sorted(lambda_grid(dataset.p_x), reverse=True):
        fit = fit_lasso(dataset, lam)
        if target_low <= fit.active.size <= target_high:
            return float(lam)
    raise NoLambdaInRange(
        f"no grid penalty gives between {target_low} and {target_high} "
        f"active coefficients")


def carve_split(dataset, n1, seed):
    """Deterministic shuffle split into n1 + (n - n1) rows.

    Returns (part1, part2, permutation); permutation[:n1] are part-1 row
    indices in the full dataset.
    """
    n = dataset.n
    lo = dataset.p_z + 2
    if not lo <= n1 <= n - lo:
        raise SplitTooSmall(
            f"need {lo} <= n1 <= {n - lo}, got n1={n1} (n={n})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return dataset.subset(perm[:n1]), dataset.subset(perm[n1:]), perm


def pad_polyhedron(event, n2, permutation):
    """Widen a part-1 event with zero columns for the n2 held-out rows.

    Column i of the part-1 constraint matrix lands at full-data position
    permutation[i]; held-out positions get zeros, so membership depends on
    the part-1 responses only.
    """
    A1, b = event.A, event.b
    n1 = A1.shape[1]
    permutation = np.asarray(permutation)
    if permutation.shape[0] != n1 + n2:
        raise ConfigError(
            f"permutation length {permutation.shape[0]} != n1 + n2 = {n1 + n2}")
    A = np.zeros((A1.shape[0], n1 + n2))
    A[:, permutation[:n1]] = A1
    return Polyhedron(A, b.copy())


def carve_lasso_model(dataset_full, part1, permutation, fit1):
    """Full-data selection model for a lasso fitted on part 1 only.

    The coefficients depend on part-1 rows alone, so the full-data
    prediction X eta(y_1) is affine in the full response with nonzero
    columns only at part-1 positions; the event is the part-1 polyhedron
    padded with zeros.
    """
    model1 = lasso_selection_model(part1, fit1)
    E, z, lam = model1.selected, model1.signs, fit1.lam
    X1E = part1.X[:, E]
    G = X1E.T @ X1E
    Ginv = np.linalg.inv(G)
    XfE = dataset_full.X[:, E]
    n = dataset_full.n
    n1 = part1.n
    rows1 = np.asarray(permutation)[:n1]
    L = np.zeros((n, n))
    L[:, rows1] = XfE @ (Ginv @ X1E.T)
    zeta = -lam * (XfE @ (Ginv @ z))
    event = pad_polyhedron(model1.event, n - n1, permutation)
    if not event.contains(dataset_full.y, tol=1e-7):
        raise NonMember("padded event violated by the full response")
    return SelectionModel(selected=E, signs=z, L=L, zeta=zeta, event=event,
                          fitter_tag="lasso_fixed_lambda", lam=lam)


# ---------------------------------------------------------------------------
# fitter objects shared by the baselines (sample splitting, pre-validation,
# carving): fit on one dataset, predict on other rows

class FittedLasso:
    def __init__(self, fit, model, train):
        self.fit = fit
        self.model = model
        self.train = train

    @property
    def selected(self):
        return self.fit.active

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.fit.eta


class LassoFitter:
    """Lasso at a fixed penalty, or auto-tuned to a sparsity window."""

    def __init__(self, lam=None, target=(8, 12)):
        self.lam = lam
        self.target = target

    def resolve_lam(self, dataset):
        if self.lam is not None:
            return float(self.lam)
        return tune_lambda(dataset, *self.target)

    def __call__(self, dataset):
        lam = self.resolve_lam(dataset)
        fit = fit_lasso(dataset, lam)
        model = lasso_selection_model(dataset, fit) if fit.active.size else None
        return FittedLasso(fit, model, dataset)


class FittedMarginal:
    def __init__(self, model, train, combiner):
        self.model = model
        self.train = train
        self.combiner = combiner

    @property
    def selected(self):
        return self.model.selected

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        XE = X[:, self.model.selected]
        if self.combiner == "top_column":
            return XE[:, 0].copy()
        if self.combiner == "average":
            return XE.mean(axis=1)
        train_E = self.train.X[:, self.model.selected]
        mu = train_E.mean(axis=0)
        _, _, vt = np.linalg.svd(train_E - mu, full_matrices=False)
        v = vt[0]
        if v[0] < 0:
            v = -v
        return (XE - mu) @ v


class MarginalFitter:
    """Top-k screening with a constant combiner."""

    def __init__(self, k=1, combiner="top_column"):
        self.k = k
        self.combiner = combiner

    def __call__(self, dataset):
        model = marginal_screen(dataset, self.k, self.combiner)
        return FittedMarginal(model, dataset, self.combiner)
