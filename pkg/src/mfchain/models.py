"""Rate-function models: conservative generators depending on the current law.

A :class:`Model` bundles a map ``mu -> alpha(mu)`` into d x d conservative
rate matrices (off-diagonal >= 0, zero row sums), an optional analytic
measure-derivative, and declared regularity metadata (M = sup |alpha_xy|,
L = inf off-diagonal rate, K = L1 Lipschitz constant when known).

All rate callables are vectorized: ``rates`` maps (..., d) measure arrays
to (..., d, d) matrices, and ``rate_derivative`` maps (..., d) to the
(..., d, d, d) tensor ``T[..., z, x, y] = d alpha_xy / dm (mu, z)`` (the
chord derivative toward delta_z, entrywise).

Measures multiply generators from the left: the mean-field drift is the
row vector ``mu @ alpha(mu)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .simplex import FD_EPS

ROW_SUM_TOL = 1e-12


class DomainError(ValueError):
    """A measure left a model's declared validity region."""


class RateMatrixError(ValueError):
    """A rate matrix violated the conservative-generator invariants."""


def check_rate_matrix(A, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate off-diagonal positivity and zero row sums; returns A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise RateMatrixError(f"rate matrix must be square, got shape {A.shape}")
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0.0):
        raise RateMatrixError("negative off-diagonal rate")
    rowsum = A.sum(axis=1)
    if np.any(np.abs(rowsum) > tol):
        raise RateMatrixError(f"row sums not zero: {rowsum}")
    return A


@dataclass(frozen=True)
class ValidRegion:
    """Subset of the simplex on which a model's rates are defined."""

    description: str = "entire simplex"
    min_mass: float = 0.0

    def contains(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.min(mu, axis=-1) >= self.min_mass - 1e-12


@dataclass(frozen=True)
class Model:
    name: str
    d: int
    rates: Callable[[np.ndarray], np.ndarray]
    rate_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    M: Optional[float] = None
    L: Optional[float] = None
    K: Optional[float] = None
    valid_region: ValidRegion = field(default_factory=ValidRegion)

    def require_valid(self, mu) -> None:
        ok = self.valid_region.contains(mu)
        if not np.all(ok):
            raise DomainError(
                f"measure outside valid region of model {self.name!r}"
                f" ({self.valid_region.description})"
            )


def eval_rates(model: Model, mu) -> np.ndarray:
    """Rate matrix at a single (validated) measure."""
    mu = np.asarray(mu, dtype=float)
    model.require_valid(mu)
    A = model.rates(mu)
    if not np.all(np.isfinite(A)):
        raise DomainError(f"non-finite rates for model {model.name!r} at {mu}")
    return A


def rate_derivative_tensor(model: Model, mus) -> np.ndarray:
    """Full derivative tensor T[..., z, x, y]; analytic or chord FD."""
    mus = np.asarray(mus, dtype=float)
    if model.rate_derivative is not None:
        return model.rate_derivative(mus)
    d = model.d
    base = model.rates(mus)
    out = np.empty(mus.shape[:-1] + (d, d, d))
    for z in range(d):
        ez = np.zeros(d)
        ez[z] = 1.0

        def probe(e):
            return (model.rates((1.0 - e) * mus + e * ez) - base) / e

        out[..., z, :, :] = 2.0 * probe(FD_EPS / 2.0) - probe(FD_EPS)
    return out


def rate_derivative(model: Model, mu, z: int) -> np.ndarray:
    """Matrix d alpha / dm (mu, z) for one direction z."""
    mu = np.asarray(mu, dtype=float)
    model.require_valid(mu)
    if not 0 <= z < model.d:
        raise DomainError(f"state index {z} out of range for d={model.d}")
    return rate_derivative_tensor(model, mu)[..., z, :, :]


def estimate_lipschitz(model: Model, n_pairs: int = 10_000, seed: int = 0) -> float:
    """Sampled L1 Lipschitz constant of alpha.

    max over random pairs of |alpha(mu) - alpha(nu)|_rsa / |mu - nu|_1 where
    |.|_rsa is the maximum absolute row sum.  A sampled value slightly
    under-estimates the true constant, which is the conservative direction
    for the K < L/d certificate (harder to pass, never falsely passes).
    """
    floor = model.valid_region.min_mass
    floor = floor + 0.005 if floor > 0 else 0.0
    mus = rng.random_measures(seed, n_pairs, model.d, floor=floor)
    nus = rng.random_measures(seed, n_pairs, model.d, floor=floor, rep=1)
    dA = model.rates(mus) - model.rates(nus)
    num = np.abs(dA).sum(axis=-1).max(axis=-1)
    den = np.abs(mus - nus).sum(axis=-1)
    keep = den > 1e-9
    return float(np.max(num[keep] / den[keep]))


# ---------------------------------------------------------------------------
# built-in models


def _two_state(a12, a21) -> np.ndarray:
    a12 = np.asarray(a12, dtype=float)
    out = np.empty(a12.shape + (2, 2))
    out[..., 0, 0] = -a12
    out[..., 0, 1] = a12
    out[..., 1, 0] = a21
    out[..., 1, 1] = -a21
    return out


def _two_state_poly(name: str, p, dp, s, ds, M: float, L: float) -> Model:
    """2-state model with rates alpha_12 = p(mu_1), alpha_21 = s(mu_1).

    The chord derivative of any f(mu_1) is f'(mu_1) * ((z == 1) - mu_1)
    in 1-based state labels, i.e. direction weight (z == 0) - mu[0] here.
    """

    def rates(mu):
        u = np.asarray(mu, dtype=float)[..., 0]
        return _two_state(p(u), s(u))

    def deriv(mu):
        mu = np.asarray(mu, dtype=float)
        u = mu[..., 0]
        out = np.empty(mu.shape[:-1] + (2, 2, 2))
        for z in range(2):
            w = (1.0 if z == 0 else 0.0) - u
            out[..., z, :, :] = _two_state(dp(u) * w, ds(u) * w)
        return out

    return Model(name=name, d=2, rates=rates, rate_derivative=deriv, M=M, L=L)


def example_non_erg() -> Model:
    """2-state system with three invariant measures; not exponentially ergodic.

    alpha_12 = mu_1^2 + mu_1 + 1, alpha_21 = 31 mu_1^2 - 18 mu_1 + 3.
    The mean-field drift factors as -32 (mu_1 - 1/4)(mu_1 - 1/2)(mu_1 - 3/4),
    so (0.25, 0.75), (0.5, 0.5) and (0.75, 0.25) are all stationary.
    Off-diagonal rates range over [12/31, 16] on the simplex (the minimum of
    alpha_21 sits at mu_1 = 9/31).
    """
    return _two_state_poly(
        "example_non_erg",
        p=lambda u: u * u + u + 1.0,
        dp=lambda u: 2.0 * u + 1.0,
        s=lambda u: 31.0 * u * u - 18.0 * u + 3.0,
        ds=lambda u: 62.0 * u - 18.0,
        M=16.0,
        L=12.0 / 31.0,
    )


def example_slow_conv() -> Model:
    """2-state system converging to (0.5, 0.5) at rate 1/sqrt(t) only.

    alpha_12 = 2 mu_1^2 + mu_1 + 1, alpha_21 = 30 mu_1^2 - 19 mu_1 + 4.
    The drift is -32 (mu_1 - 1/2)^3, giving the closed-form solution
    m_1(t) = 1/2 + sgn(mu_1 - 1/2) / (2 sqrt((1 - 2 mu_1)^{-2} + 16 t)).
    """
    return _two_state_poly(
        "example_slow_conv",
        p=lambda u: 2.0 * u * u + u + 1.0,
        dp=lambda u: 4.0 * u + 1.0,
        s=lambda u: 30.0 * u * u - 19.0 * u + 4.0,
        ds=lambda u: 60.0 * u - 19.0,
        M=15.0,
        L=119.0 / 120.0,
    )


def slow_conv_exact(t, mu1_0: float) -> np.ndarray:
    """Closed-form first coordinate of the slow-convergence model's flow."""
    t = np.asarray(t, dtype=float)
    if mu1_0 == 0.5:
        return np.full_like(t, 0.5)
    sgn = 1.0 if mu1_0 > 0.5 else -1.0
    return 0.5 + sgn / (2.0 * np.sqrt((1.0 - 2.0 * mu1_0) ** -2 + 16.0 * t))


def weak_interaction(a: float = 1.0, b: float = 1.0, eps: float = 0.25) -> Model:
    """2-state chain with weakly law-dependent rates.

    alpha_12 = a + eps mu_2, alpha_21 = b + eps mu_1.  The L1 Lipschitz
    constant is exactly eps, so the K < L/d certificate passes whenever
    eps < min(a, b)/2.  (The interaction terms cancel in the drift, which
    makes the mean-field flow affine with contraction rate a + b.)
    """
    if a <= 0 or b <= 0 or eps < 0:
        raise ValueError("need a, b > 0 and eps >= 0")

    def rates(mu):
        mu = np.asarray(mu, dtype=float)
        return _two_state(a + eps * mu[..., 1], b + eps * mu[..., 0])

    def deriv(mu):
        mu = np.asarray(mu, dtype=float)
        out = np.empty(mu.shape[:-1] + (2, 2, 2))
        for z in range(2):
            g12 = eps * ((1.0 if z == 1 else 0.0) - mu[..., 1])
            g21 = eps * ((1.0 if z == 0 else 0.0) - mu[..., 0])
            out[..., z, :, :] = _two_state(g12, g21)
        return out

    return Model(
        name=f"weak_interaction(a={a},b={b},eps={eps})",
        d=2,
        rates=rates,
        rate_derivative=deriv,
        M=max(a, b) + eps,
        L=min(a, b),
        K=eps,
    )


def example_chaos() -> Model:
    """4-state system whose first three mean-field coordinates follow a
    shifted/scaled Lorenz system (x = b mu_1 - a, etc.) up to O(l) coupling.

    Rates contain mu-components in denominators, so the model is only
    defined on {mu : min_x mu_x >= 0.01}; evaluation outside raises a
    domain error and simulations abort if the state exits the region.
    """
    sg, beta, rho, a, b, ell = 10.0, 8.0 / 3.0, 28.0, 35.0, 200.0, 0.1

    def rates(mu):
        mu = np.asarray(mu, dtype=float)
        m0, m1, m2, m3 = mu[..., 0], mu[..., 1], mu[..., 2], mu[..., 3]
        shape = mu.shape[:-1]
        A = np.zeros(shape + (4, 4))
        A[..., 0, 1] = a + rho + a / (b * m0)
        A[..., 0, 2] = b * m1 + a * (beta + a) / (b * m0)
        A[..., 0, 3] = sg
        A[..., 1, 0] = sg
        A[..., 1, 2] = ell
        A[..., 1, 3] = 1.0 + (a * (rho + a) + b * b * m0 * m2) / (b * m1)
        A[..., 2, 0] = ell
        A[..., 2, 1] = a
        A[..., 2, 3] = beta + a * (m0 + m1) / m2
        A[..., 3, 0] = (m0 * (a + rho + b * m1) + a * (1.0 + beta + a) / b) / m3
        A[..., 3, 1] = sg * m1 / m3
        A[..., 3, 2] = a * m2 / m3
        diag = -A.sum(axis=-1)
        idx = np.arange(4)
        A[..., idx, idx] = diag
        return A

    return Model(
        name="example_chaos",
        d=4,
        rates=rates,
        rate_derivative=None,  # rational entries; chord FD is accurate here
        M=None,
        L=0.1,
        K=None,
        valid_region=ValidRegion("min_x mu_x >= 0.01", min_mass=0.01),
    )


def constant(Q) -> Model:
    """Ordinary (law-independent) Markov chain with generator Q."""
    Q = check_rate_matrix(Q)
    d = Q.shape[0]
    off = Q.copy()
    np.fill_diagonal(off, 0.0)

    def rates(mu):
        mu = np.asarray(mu, dtype=float)
        return np.broadcast_to(Q, mu.shape[:-1] + (d, d)).copy()

    def deriv(mu):
        mu = np.asarray(mu, dtype=float)
        return np.zeros(mu.shape[:-1] + (d, d, d))

    return Model(
        name="constant",
        d=d,
        rates=rates,
        rate_derivative=deriv,
        M=float(np.abs(Q).max()),
        L=float(off[~np.eye(d, dtype=bool)].min()) if d > 1 else 0.0,
        K=0.0,
    )


def zero(d: int = 2) -> Model:
    """Frozen dynamics: all rates identically zero."""
    m = constant(np.zeros((d, d)))
    return Model(
        name="zero",
        d=d,
        rates=m.rates,
        rate_derivative=m.rate_derivative,
        M=0.0,
        L=0.0,
        K=0.0,
    )


# ---------------------------------------------------------------------------
# registry (CLI model selection + custom registration hook)

_REGISTRY: dict[str, Callable[..., Model]] = {}


def register_model(name: str, factory: Callable[..., Model]) -> None:
    """Register a model factory under a config-selectable name."""
    _REGISTRY[name] = factory


def make_model(name: str, **params) -> Model:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown model {name!r} (known: {', '.join(sorted(_REGISTRY))})"
        ) from None
    return factory(**params)


register_model("weak_interaction", weak_interaction)
register_model("example_non_erg", example_non_erg)
register_model("non_erg", example_non_erg)
register_model("example_slow_conv", example_slow_conv)
register_model("slow_conv", example_slow_conv)
register_model("example_chaos", example_chaos)
register_model("chaos", example_chaos)
register_model("constant", constant)
register_model("zero", zero)
