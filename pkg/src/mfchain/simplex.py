"""Simplex geometry, tangent space, and functional-derivative calculus.

Conventions used throughout the package:

* a *measure* is a length-d numpy row vector on the probability simplex
  S_d (componentwise >= 0, summing to 1);
* a *tangent vector* lives in R^d_0, the hyperplane of zero-sum vectors;
* states are 0-based integer indices (serialized output uses 1-based
  labels, see the CSV/JSON writers in the harness);
* the linear functional derivative of a scalar field F at (mu, z) is the
  one-sided derivative of eps -> F((1-eps) mu + eps delta_z) at eps = 0+,
  normalized so that sum_z mu_z dF(mu, z) = 0.

For a field given by a smooth extension with gradient g(mu) the derivative
has the closed form dF(mu, z) = g_z(mu) - g(mu).mu, which is what the
analytic fields below use.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Optional

import numpy as np

SUM_TOL = 1e-12

#: default one-sided finite-difference step for the chord derivative
FD_EPS = 1e-6


class SimplexError(ValueError):
    """Raised when a vector fails the simplex/tangent invariants."""


def as_measure(weights, tol: float = SUM_TOL) -> np.ndarray:
    """Validate and return a probability vector (renormalized exactly).

    Negative entries are rejected outright -- only the ODE integrators are
    allowed to clip, and they do so explicitly (see the flow module).
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise SimplexError(f"measure must be a 1-d vector of length >= 2, got shape {w.shape}")
    if np.any(w < 0.0):
        raise SimplexError(f"measure has negative entries: {w}")
    s = w.sum()
    if abs(s - 1.0) > tol:
        raise SimplexError(f"measure weights sum to {s!r}, not 1 (tol {tol})")
    return w / s


def as_tangent(v, tol: float = SUM_TOL) -> np.ndarray:
    """Validate a zero-sum vector."""
    q = np.asarray(v, dtype=float)
    if q.ndim != 1 or q.size < 2:
        raise SimplexError(f"tangent must be a 1-d vector of length >= 2, got shape {q.shape}")
    if abs(q.sum()) > tol:
        raise SimplexError(f"tangent entries sum to {q.sum()!r}, not 0 (tol {tol})")
    return q


def l1_norm(v) -> float:
    return float(np.abs(np.asarray(v, dtype=float)).sum())


def l1_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SimplexError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def mix(mu0, mu1, zeta: float) -> np.ndarray:
    """Convex combination (1-zeta) mu0 + zeta mu1."""
    if not 0.0 <= zeta <= 1.0:
        raise SimplexError(f"mixing weight must lie in [0, 1], got {zeta}")
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if mu0.shape != mu1.shape:
        raise SimplexError(f"dimension mismatch: {mu0.shape} vs {mu1.shape}")
    return (1.0 - zeta) * mu0 + zeta * mu1


def dirac(d: int, z: int) -> np.ndarray:
    e = np.zeros(d)
    e[z] = 1.0
    return e


def barycenter(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


# ---------------------------------------------------------------------------
# scalar fields


@dataclass(frozen=True)
class ScalarField:
    """A scalar observable on the simplex.

    ``fn`` must accept arrays of shape (..., d) and return shape (...,).
    ``grad`` (optional) is the gradient of a smooth extension to R^d, same
    batching convention; when present the functional derivative is taken
    analytically as grad_z - grad.mu, otherwise a one-sided finite
    difference with Richardson extrapolation is used.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, mu) -> np.ndarray:
        return self.fn(np.asarray(mu, dtype=float))

    @property
    def has_analytic_derivative(self) -> bool:
        return self.grad is not None


def functional_derivative_all(field: ScalarField, mu) -> np.ndarray:
    """delta F / delta m (mu, z) for every z, as a zero-mean-under-mu vector.

    Batched: ``mu`` may be (..., d); the result matches that shape.
    """
    mu = np.asarray(mu, dtype=float)
    if field.grad is not None:
        g = field.grad(mu)
        return g - np.sum(g * mu, axis=-1, keepdims=True)
    d = mu.shape[-1]
    flat = mu.reshape(-1, d)
    res = np.empty_like(flat)
    for i in range(flat.shape[0]):
        for z in range(d):
            res[i, z] = _fd_chord_derivative(field.fn, flat[i], z)
    return res.reshape(mu.shape)


def _fd_chord_derivative(fn, mu: np.ndarray, z: int, eps: float = FD_EPS) -> float:
    """One-sided chord FD with one Richardson level (O(eps^2) accurate).

    The chord toward delta_z stays inside the simplex for any eps in
    (0, 1], so a one-sided stencil is always admissible.
    """
    f0 = float(fn(mu))
    ez = dirac(mu.size, z)

    def probe(e):
        return (float(fn((1.0 - e) * mu + e * ez)) - f0) / e

    return 2.0 * probe(eps / 2.0) - probe(eps)


def linear_functional_derivative(field: ScalarField, mu, z: int) -> float:
    """delta F / delta m (mu, z) -- analytic when available, FD otherwise."""
    mu = as_measure(mu)
    if not 0 <= z < mu.size:
        raise SimplexError(f"state index {z} out of range for d={mu.size}")
    if field.grad is not None:
        g = np.asarray(field.grad(mu), dtype=float)
        return float(g[z] - g @ mu)
    return _fd_chord_derivative(field.fn, mu, z)


def directional_derivative(field: ScalarField, mu, y: int, z: int) -> float:
    """D^m_{yz} F(mu) = dF(mu, z) - dF(mu, y); antisymmetric in (y, z)."""
    mu = as_measure(mu)
    if y == z:
        return 0.0
    return linear_functional_derivative(field, mu, z) - linear_functional_derivative(field, mu, y)


def simpson_weights(n: int) -> np.ndarray:
    """Composite Simpson weights for n (odd, >= 3) equispaced nodes on [0, 1]."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"composite Simpson needs an odd node count >= 3, got {n}")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (n - 1))


def ftc_difference(field: ScalarField, mu0, mu1, quad_points: int = 33) -> float:
    """Chord integral of the functional derivative; equals F(mu1) - F(mu0).

    Composite Simpson quadrature of
    int_0^1 sum_z dF((1-z) mu0 + z mu1, z) (mu1 - mu0)_z dzeta.
    ``quad_points`` is rounded up to the next odd count if necessary.
    """
    if quad_points < 2:
        raise ValueError("quad_points must be >= 2")
    n = quad_points if quad_points % 2 == 1 else quad_points + 1
    mu0 = as_measure(mu0)
    mu1 = as_measure(mu1)
    diff = mu1 - mu0
    zetas = np.linspace(0.0, 1.0, n)
    w = simpson_weights(n)
    if field.grad is not None:
        pts = (1.0 - zetas)[:, None] * mu0[None, :] + zetas[:, None] * mu1[None, :]
        dvals = functional_derivative_all(field, pts)  # (n, d)
        integrand = dvals @ diff
    else:
        integrand = np.empty(n)
        for i, zeta in enumerate(zetas):
            pt = mix(mu0, mu1, zeta)
            integrand[i] = sum(
                _fd_chord_derivative(field.fn, pt, z) * diff[z] for z in range(mu0.size)
            )
    return float(w @ integrand)


# ---------------------------------------------------------------------------
# lattice


def simplex_lattice(d: int, resolution: int) -> np.ndarray:
    """All points of S_d with coordinates k/resolution, in lexicographic order."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    pts = []
    for cut in combinations_with_replacement(range(resolution + 1), d - 1):
        counts = np.diff((0,) + cut + (resolution,))
        pts.append(counts)
    return np.array(pts, dtype=float) / resolution


# ---------------------------------------------------------------------------
# shipped observable library


def sq_dist_field(target) -> ScalarField:
    """Squared Euclidean distance to a target measure: |mu - target|_2^2."""
    t = np.asarray(target, dtype=float)

    def fn(mu):
        return np.sum((mu - t) ** 2, axis=-1)

    def grad(mu):
        return 2.0 * (mu - t)

    return ScalarField(f"sq_dist({np.array2string(t, separator=',')})", fn, grad)


def linear_field(coeffs) -> ScalarField:
    c = np.asarray(coeffs, dtype=float)

    def fn(mu):
        return np.sum(mu * c, axis=-1)

    def grad(mu):
        return np.broadcast_to(c, np.shape(mu)).copy()

    return ScalarField(f"linear({np.array2string(c, separator=',')})", fn, grad)


def entropy_field(shift: float = 0.1) -> ScalarField:
    """Smooth negative-entropy-like functional sum (mu_x + s) log(mu_x + s).

    The shift keeps the field smooth on the closed simplex.
    """
    if shift <= 0:
        raise ValueError("shift must be positive")

    def fn(mu):
        return np.sum((mu + shift) * np.log(mu + shift), axis=-1)

    def grad(mu):
        return np.log(mu + shift) + 1.0

    return ScalarField(f"entropy(shift={shift})", fn, grad)


def quadratic_field(A, c=None) -> ScalarField:
    """General quadratic mu A mu^T + c.mu with analytic gradient (test aid)."""
    A = np.asarray(A, dtype=float)
    sym = A + A.T
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)

    def fn(mu):
        return np.einsum("...x,xy,...y->...", mu, A, mu) + np.sum(mu * c, axis=-1)

    def grad(mu):
        return np.einsum("...x,xy->...y", mu, sym) + c

    return ScalarField("quadratic", fn, grad)


def make_observable(name: str, **params) -> ScalarField:
    """Observable factory used by the CLI config layer."""
    if name == "sq_dist":
        return sq_dist_field(params["target"])
    if name == "linear":
        return linear_field(params["coeffs"])
    if name == "entropy":
        return entropy_field(params.get("shift", 0.1))
    raise KeyError(f"unknown observable {name!r} (known: sq_dist, linear, entropy)")
