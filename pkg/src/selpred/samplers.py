"""Reference-distribution samplers on the selection event.

All targets live in the residual subspace orthogonal to Z, in coordinates
of an orthonormal basis Q (dimension n - p_z), where the constrained laws
are nondegenerate: a Gaussian N(0, sigma^2 I) when the noise scale is
known, and the uniform law on a sphere of fixed radius when it is not.
Chains are bit-deterministic for a fixed seed: every random quantity is
pre-generated from one numpy Generator before the compiled loop runs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    AcceptanceTooLow, ConfigError, DegenerateChord, EmptyArc, InfeasibleStart,
)

_FEAS_TOL = 1e-8


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings: draw count, burn-in, thinning, seed, method."""

    n_samples: int = 5000
    burn_in: int = 1000
    thin: int = 5
    seed: int = 0
    method: str = "hit_and_run"

    def __post_init__(self):
        if self.n_samples < 100:
            raise ConfigError(f"n_samples must be >= 100, got {self.n_samples}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if self.method not in ("hit_and_run", "accept_reject"):
            raise ConfigError(f"unknown sampler method {self.method!r}")


@dataclass
class ChainOutput:
    """Draws in subspace coordinates plus bookkeeping."""

    samples: np.ndarray              # (n_samples, dim)
    method: str
    seed: int
    acceptance_rate: float = None    # accept-reject only
    diagnostics: dict = field(default_factory=dict)


class ConstrainedGaussian:
    """N(0, sigma2 I) on {w : C w <= d} in residual coordinates.

    C is the event matrix mapped through the reconstruction and the basis Q;
    w_obs is the observed coordinate vector, which must be feasible.
    """

    def __init__(self, C, d, sigma2, w_obs):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.d = np.asarray(d, dtype=float).ravel()
        if sigma2 <= 0:
            raise ConfigError(f"sigma2 must be positive, got {sigma2}")
        self.sigma2 = float(sigma2)
        self.w_obs = np.asarray(w_obs, dtype=float).ravel()
        self.dim = self.w_obs.shape[0]
        if self.C.size and self.C.shape[1] != self.dim:
            raise ConfigError("constraint matrix width does not match w_obs")
        _check_feasible(self.C, self.d, self.w_obs)


class ConstrainedSphere:
    """Uniform law on the sphere ||w|| = radius intersected with {C w <= d}."""

    def __init__(self, C, d, w_obs):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.d = np.asarray(d, dtype=float).ravel()
        self.w_obs = np.asarray(w_obs, dtype=float).ravel()
        self.dim = self.w_obs.shape[0]
        self.radius = float(np.linalg.norm(self.w_obs))
        if self.radius <= 0:
            raise ConfigError("w_obs has zero norm; sphere target undefined")
        if self.C.size and self.C.shape[1] != self.dim:
            raise ConfigError("constraint matrix width does not match w_obs")
        _check_feasible(self.C, self.d, self.w_obs)


def _check_feasible(C, d, w):
    if C.shape[0] and np.max(C @ w - d) > _FEAS_TOL:
        raise InfeasibleStart(
            f"start violates constraints by {np.max(C @ w - d):.3e}")


def _empty_constraints(dim):
    return np.zeros((0, dim)), np.zeros(0)


def accept_reject_gaussian(target, cfg, max_proposals=10_000_000):
    """I.i.d. N(0, sigma2 I) proposals filtered by the constraints.

    Returns exactly cfg.n_samples accepted draws or raises AcceptanceTooLow
    once max_proposals have been spent.
    """
    rng = np.random.default_rng(cfg.seed)
    sigma = np.sqrt(target.sigma2)
    C, d = (target.C, target.d) if target.C.size else _empty_constraints(target.dim)
    CT = np.ascontiguousarray(C.T)
    chunks = []
    accepted = proposed = 0
    batch = max(4 * cfg.n_samples, 20_000)
    while accepted < cfg.n_samples and proposed < max_proposals:
        batch = min(batch, max_proposals - proposed)
        W = sigma * rng.standard_normal((batch, target.dim))
        keep = _kernels.all_rows_leq(W, CT, d, _FEAS_TOL) if C.shape[0] else \
            np.ones(batch, dtype=bool)
        proposed += batch
        got = W[keep]
        accepted += got.shape[0]
        if got.shape[0]:
            chunks.append(got)
    if accepted < cfg.n_samples:
        raise AcceptanceTooLow(
            f"{accepted} acceptances in {proposed} proposals "
            f"(rate {accepted / max(proposed, 1):.2e})")
    samples = np.concatenate(chunks, axis=0)[:cfg.n_samples]
    return ChainOutput(samples=samples, method="accept_reject", seed=cfg.seed,
                       acceptance_rate=accepted / proposed)


def accept_reject_sphere(target, cfg, max_proposals=10_000_000):
    """Rejection sampling of the uniform constrained-sphere law.

    Directions are normalized Gaussians scaled to the target radius; used
    both as a sampler and as the validation oracle for the sphere chain.
    """
    rng = np.random.default_rng(cfg.seed)
    C, d = (target.C, target.d) if target.C.size else _empty_constraints(target.dim)
    CT = np.ascontiguousarray(C.T)
    chunks = []
    accepted = proposed = 0
    batch = max(4 * cfg.n_samples, 20_000)
    while accepted < cfg.n_samples and proposed < max_proposals:
        batch = min(batch, max_proposals - proposed)
        W = rng.standard_normal((batch, target.dim))
        W *= target.radius / np.linalg.norm(W, axis=1, keepdims=True)
        keep = _kernels.all_rows_leq(W, CT, d, _FEAS_TOL) if C.shape[0] else \
            np.ones(batch, dtype=bool)
        proposed += batch
        got = W[keep]
        accepted += got.shape[0]
        if got.shape[0]:
            chunks.append(got)
    if accepted < cfg.n_samples:
        raise AcceptanceTooLow(
            f"{accepted} acceptances in {proposed} proposals "
            f"(rate {accepted / max(proposed, 1):.2e})")
    samples = np.concatenate(chunks, axis=0)[:cfg.n_samples]
    return ChainOutput(samples=samples, method="accept_reject", seed=cfg.seed,
                       acceptance_rate=accepted / proposed)


def _streams(cfg, dim):
    # separate spawned streams so the first k steps of a longer chain are
    # bit-identical to a chain configured with k kept draws
    steps = cfg.burn_in + cfg.n_samples * cfg.thin
    s_dirs, s_unis = np.random.SeedSequence(cfg.seed).spawn(2)
    dirs = np.random.default_rng(s_dirs).standard_normal((steps, dim))
    unis = np.random.default_rng(s_unis).random(steps)
    return dirs, unis


def hit_and_run_gaussian(target, cfg):
    """Hit-and-run chain for the constrained Gaussian.

    Each step draws a uniform direction, slices the polytope into a chord,
    and samples the exact one-dimensional truncated-normal law on it by
    inverse CDF, so every state stays feasible.
    """
    C, d = (target.C, target.d) if target.C.size else _empty_constraints(target.dim)
    dirs, unis = _streams(cfg, target.dim)
    samples, status, degen = _kernels.hnr_gaussian(
        np.ascontiguousarray(C), d, target.w_obs, float(np.sqrt(target.sigma2)),
        cfg.n_samples, cfg.burn_in, cfg.thin, dirs, unis)
    if status == _kernels.DEGENERATE:
        raise DegenerateChord(
            f"chord width collapsed repeatedly ({degen} degenerate steps)")
    return ChainOutput(samples=samples, method="hit_and_run", seed=cfg.seed,
                       diagnostics={"degenerate_steps": int(degen)})


def hit_and_run_sphere(target, cfg):
    """Great-circle hit-and-run on the constrained sphere.

    Constraint rows become closed-form forbidden arcs of the great circle
    through the current state; the turn angle is uniform on the complement.
    The symmetric proposal keeps the uniform sphere law stationary.
    """
    C, d = (target.C, target.d) if target.C.size else _empty_constraints(target.dim)
    dirs, unis = _streams(cfg, target.dim)
    samples, status, degen = _kernels.hnr_sphere(
        np.ascontiguousarray(C), d, target.w_obs,
        cfg.n_samples, cfg.burn_in, cfg.thin, dirs, unis)
    if status == _kernels.EMPTY_ARC:
        raise EmptyArc("arc intersection came out empty from a feasible state")
    return ChainOutput(samples=samples, method="hit_and_run", seed=cfg.seed,
                       diagnostics={"degenerate_steps": int(degen)})


def draw_gaussian(target, cfg):
    """Dispatch on cfg.method for the Gaussian target."""
    if cfg.method == "accept_reject":
        return accept_reject_gaussian(target, cfg)
    return hit_and_run_gaussian(target, cfg)


def draw_sphere(target, cfg):
    """Dispatch on cfg.method for the sphere target."""
    if cfg.method == "accept_reject":
        return accept_reject_sphere(target, cfg)
    return hit_and_run_sphere(target, cfg)
