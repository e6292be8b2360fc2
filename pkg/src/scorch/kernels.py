"""Self-concordant regularization kernels and smoothed regularizers.

A smoothing kernel is a univariate potential ``phi`` that is
``(M_phi, nu)``-generalized self-concordant, i.e.
``|phi'''(t)| <= M_phi * phi''(t) ** (nu / 2)`` on its domain. Summing
``phi`` over coordinates gives a separable kernel ``h`` and
``h_mu(v) = mu * h(v / mu)``. The infimal convolution ``g [] h_mu`` of a
nonsmooth ``g`` with ``h_mu`` is the smoothed regularizer ``g_s`` used by
the solvers.

All objects here are immutable; their oracles are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .exceptions import (
    DomainError,
    GroupStructureError,
    ParameterError,
    UnknownKernelError,
)

#: Lower clamp on every entry of a smoothed Hessian diagonal.
HESSIAN_FLOOR = 1e-12


@dataclass(frozen=True)
class SmoothingKernel:
    """A univariate potential with derivative oracles.

    ``domain`` holds the open interval ``(lo, hi)`` whose interior the
    oracles are valid on; infinite bounds are allowed.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    M_phi: float
    nu: float
    domain: tuple[float, float] = (-math.inf, math.inf)
    remark: str = ""

    def in_domain(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo, hi = self.domain
        return (t > lo) & (t < hi)

    def sample_grid(self, num: int = 1000) -> np.ndarray:
        """A representative grid of interior points."""
        lo, hi = self.domain
        if math.isinf(lo) and math.isinf(hi):
            return np.linspace(-10.0, 10.0, num)
        if math.isinf(hi):
            return lo + np.geomspace(1e-3, 1e3, num)
        if math.isinf(lo):
            return hi - np.geomspace(1e-3, 1e3, num)[::-1]
        pad = 1e-3 * (hi - lo)
        return np.linspace(lo + pad, hi - pad, num)


def _hellinger():
    def value(t):
        return -np.sqrt(1.0 - t * t)

    def d1(t):
        return t / np.sqrt(1.0 - t * t)

    def d2(t):
        return (1.0 - t * t) ** -1.5

    def d3(t):
        return 3.0 * t * (1.0 - t * t) ** -2.5

    return SmoothingKernel("hellinger", value, d1, d2, d3, 2.25, 4.0, (-1.0, 1.0), "Hellinger")


def _hyperbolic():
    # phi(t) = sqrt(1 + t^2) - 1, written to avoid cancellation near 0
    def value(t):
        return t * t / (np.sqrt(1.0 + t * t) + 1.0)

    def d1(t):
        return t / np.sqrt(1.0 + t * t)

    def d2(t):
        return (1.0 + t * t) ** -1.5

    def d3(t):
        return -3.0 * t * (1.0 + t * t) ** -2.5

    return SmoothingKernel("hyperbolic-p1", value, d1, d2, d3, 2.0, 2.6, remark="p=1")


def _arcsine():
    c = 7.0 / 22.0

    def value(t):
        return c / np.sqrt(t * (1.0 - t))

    def d1(t):
        u, du = t * (1.0 - t), 1.0 - 2.0 * t
        return -0.5 * c * u**-1.5 * du

    def d2(t):
        u, du = t * (1.0 - t), 1.0 - 2.0 * t
        return 0.75 * c * u**-2.5 * du**2 + c * u**-1.5

    def d3(t):
        u, du = t * (1.0 - t), 1.0 - 2.0 * t
        return -1.875 * c * u**-3.5 * du**3 - 4.5 * c * u**-2.5 * du

    return SmoothingKernel(
        "arcsine", value, d1, d2, d3, 2.02, 4.0, (0.0, 1.0), "Arcsine probability density"
    )


def _ostrovskii_bach():
    # with s = sqrt(1 + 4 t^2): phi = (s - 1 + log(2 / (s + 1))) / 2
    def value(t):
        s = np.sqrt(1.0 + 4.0 * t * t)
        return 0.5 * (s - 1.0 + np.log(2.0 / (s + 1.0)))

    def d1(t):
        s = np.sqrt(1.0 + 4.0 * t * t)
        return 2.0 * t / (s + 1.0)

    def d2(t):
        s = np.sqrt(1.0 + 4.0 * t * t)
        return 2.0 / (s * (s + 1.0))

    def d3(t):
        s = np.sqrt(1.0 + 4.0 * t * t)
        return -8.0 * t * (2.0 * s + 1.0) / (s**3 * (s + 1.0) ** 2)

    return SmoothingKernel(
        "ostrovskii-bach", value, d1, d2, d3, 2.0 * math.sqrt(2.0), 3.0, remark="Ostrovskii & Bach"
    )


def _energy():
    return SmoothingKernel(
        "energy",
        lambda t: 0.5 * t * t,
        lambda t: np.asarray(t, dtype=float),
        lambda t: np.ones_like(t, dtype=float),
        lambda t: np.zeros_like(t, dtype=float),
        0.0,
        3.0,
        remark="Energy",
    )


def _power(p=1.5):
    return SmoothingKernel(
        "power-p1.5",
        lambda t: t**p / p,
        lambda t: t ** (p - 1.0),
        lambda t: (p - 1.0) * t ** (p - 2.0),
        lambda t: (p - 1.0) * (p - 2.0) * t ** (p - 3.0),
        4.0,
        6.0,
        (0.0, math.inf),
        "p=1.5",
    )


def _logistic():
    def d2(t):
        return expit(t) * expit(-t)

    return SmoothingKernel(
        "logistic",
        lambda t: np.logaddexp(0.0, t),
        expit,
        d2,
        lambda t: -d2(t) * np.tanh(0.5 * np.asarray(t, dtype=float)),
        1.0,
        2.0,
        remark="Logistic",
    )


def _exponential():
    return SmoothingKernel(
        "exponential",
        lambda t: np.exp(-t),
        lambda t: -np.exp(-t),
        lambda t: np.exp(-t),
        lambda t: -np.exp(-t),
        1.0,
        2.0,
        remark="Exponential",
    )


def _boltzmann_shannon():
    return SmoothingKernel(
        "boltzmann-shannon",
        lambda t: t * np.log(t) - t,
        np.log,
        lambda t: 1.0 / t,
        lambda t: -1.0 / (t * t),
        1.0,
        4.0,
        (0.0, math.inf),
        "Boltzmann-Shannon",
    )


def _fermi_dirac():
    return SmoothingKernel(
        "fermi-dirac",
        lambda t: t * np.log(t) + (1.0 - t) * np.log1p(-t),
        lambda t: np.log(t) - np.log1p(-t),
        lambda t: 1.0 / t + 1.0 / (1.0 - t),
        lambda t: -1.0 / (t * t) + 1.0 / (1.0 - t) ** 2,
        1.0,
        4.0,
        (0.0, 1.0),
        "Fermi-Dirac",
    )


def _burg():
    return SmoothingKernel(
        "burg",
        lambda t: -0.5 * np.log(t),
        lambda t: -0.5 / t,
        lambda t: 0.5 / (t * t),
        lambda t: -1.0 / t**3,
        8.0,
        3.0,
        (0.0, math.inf),
        "Burg",
    )


def _de_pierro_iusem():
    def piecewise(low, high):
        def fn(t):
            t = np.asarray(t, dtype=float)
            safe = np.where(t > 1.0, t, 1.0)
            return np.where(t <= 1.0, low(t), high(safe))

        return fn

    return SmoothingKernel(
        "de-pierro-iusem",
        piecewise(lambda t: 0.5 * (t * t - 4.0 * t + 3.0), lambda t: -np.log(t)),
        piecewise(lambda t: t - 2.0, lambda t: -1.0 / t),
        piecewise(lambda t: np.ones_like(t), lambda t: 1.0 / (t * t)),
        piecewise(lambda t: np.zeros_like(t), lambda t: -2.0 / t**3),
        4.0,
        3.0,
        remark="De Pierro & Iusem",
    )


_CATALOG = {
    k.name: k
    for k in (
        _hellinger(),
        _hyperbolic(),
        _arcsine(),
        _ostrovskii_bach(),
        _energy(),
        _power(),
        _logistic(),
        _exponential(),
        _boltzmann_shannon(),
        _fermi_dirac(),
        _burg(),
        _de_pierro_iusem(),
    )
}

#: Stable catalog identifiers.
KERNEL_NAMES = tuple(_CATALOG)


def catalog_kernel(name: str) -> SmoothingKernel:
    """Look up a regularization kernel by name.

    Raises
    ------
    UnknownKernelError
        If ``name`` is not one of :data:`KERNEL_NAMES`.
    """
    try:
        return _CATALOG[name]
    except KeyError:
        raise UnknownKernelError(
            f"unknown kernel {name!r}; choose from {', '.join(KERNEL_NAMES)}"
        ) from None


def self_concordance_check(kernel: SmoothingKernel, grid, tol: float = 1e-9):
    """Test ``|phi'''| <= (1 + tol) M_phi phi''^(nu/2)`` on ``grid``.

    Returns
    -------
    ok : bool
    worst_ratio : float
        ``max |phi'''(t)| / phi''(t)^(nu/2)`` over the grid.
    """
    t = np.atleast_1d(np.asarray(grid, dtype=float))
    if not np.all(kernel.in_domain(t)):
        bad = t[~kernel.in_domain(t)][0]
        raise DomainError(f"grid point {bad} outside the interior of {kernel.domain}")
    d2 = kernel.d2(t)
    d3 = np.abs(kernel.d3(t))
    bound = d2 ** (kernel.nu / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d3 == 0.0, 0.0, d3 / bound)
    worst = float(np.max(ratio))
    return bool(np.all(d3 <= (1.0 + tol) * kernel.M_phi * bound)), worst


@dataclass(frozen=True)
class SeparableKernel:
    """``h(v) = sum_i weights_i * phi(v_i)`` on R^dim."""

    base: SmoothingKernel
    dim: int
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.dim,) or np.any(w <= 0):
                raise ParameterError("weights must be a positive vector of length dim")
            object.__setattr__(self, "weights", w)

    def value(self, v) -> np.ndarray:
        """Sum over the last axis, so a stack of points evaluates at once."""
        phi = self.base.value(np.asarray(v, dtype=float))
        if self.weights is not None:
            phi = phi * self.weights
        return np.sum(phi, axis=-1)

    @property
    def M_h(self) -> float:
        if self.weights is None:
            return self.base.M_phi
        return float(np.max(self.weights ** (1.0 - self.base.nu / 2.0)) * self.base.M_phi)


@dataclass(frozen=True)
class RadialKernel:
    """``h(v) = phi(||v||_2)``; the kernel behind group-norm smoothing."""

    base: SmoothingKernel

    def value(self, v) -> np.ndarray:
        return self.base.value(np.linalg.norm(np.asarray(v, dtype=float), axis=-1))


def smoothing_constant(M_h: float, nu: float, mu: float, n: int) -> float:
    """Self-concordance constant of ``h_mu`` from that of ``h``.

    ``n^((3-nu)/2) mu^(nu/2-2) M_h`` for ``nu <= 3`` and
    ``mu^(4-3nu/2) M_h`` for ``nu > 3``.
    """
    if mu <= 0:
        raise ParameterError("mu must be positive")
    if nu <= 3.0:
        return n ** ((3.0 - nu) / 2.0) * mu ** (nu / 2.0 - 2.0) * M_h
    return mu ** (4.0 - 1.5 * nu) * M_h


@dataclass(frozen=True)
class SmoothedRegularizer:
    """A smooth, self-concordant approximation ``g_s`` of a nonsmooth ``g``.

    ``value``, ``gradient`` and ``hessian_diag`` already include the
    ``weight`` scale; ``hessian_diag`` is clamped below at
    :data:`HESSIAN_FLOOR`.
    """

    mu: float
    dim: int
    M_g: float
    nu: float
    weight: float
    kernel: SeparableKernel | RadialKernel | None
    _value: Callable[[np.ndarray], float] = field(repr=False)
    _gradient: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _hessian_diag: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = ""

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return self._gradient(np.asarray(x, dtype=float))

    def hessian_diag(self, x) -> np.ndarray:
        return np.maximum(self._hessian_diag(np.asarray(x, dtype=float)), HESSIAN_FLOOR)

    def __add__(self, other: SmoothedRegularizer) -> SmoothedRegularizer:
        if not isinstance(other, SmoothedRegularizer):
            return NotImplemented
        if other.dim != self.dim:
            raise ParameterError("cannot add smoothers of different dimension")
        return SmoothedRegularizer(
            mu=self.mu,
            dim=self.dim,
            # sum of (M_i, nu)-self-concordant terms is (max M_i, nu)
            M_g=max(self.M_g, other.M_g),
            nu=max(self.nu, other.nu),
            weight=1.0,
            kernel=None,
            _value=lambda x: self._value(x) + other._value(x),
            _gradient=lambda x: self._gradient(x) + other._gradient(x),
            _hessian_diag=lambda x: self._hessian_diag(x) + other._hessian_diag(x),
            name=f"{self.name}+{other.name}",
        )


# Kernels whose inf-convolution with |.| equals h_mu itself: phi(0) = 0 is
# the minimum and |phi'| < 1 everywhere, so the infimum sits at w = 0.
_L1_CLOSED_FORM = ("hyperbolic-p1", "ostrovskii-bach")


def _check_mu(mu):
    if not (mu > 0 and math.isfinite(mu)):
        raise ParameterError(f"mu must be positive and finite, got {mu}")


def smooth_l1(mu: float, n: int, beta: float = 1.0, kernel: str = "hyperbolic-p1"):
    """Smoothed ``beta * ||x||_1``.

    For the default kernel the value is ``beta * sum(sqrt(mu^2 + x^2) - mu)``
    with gradient ``beta * x / sqrt(mu^2 + x^2)`` and Hessian diagonal
    ``beta * mu^2 / (mu^2 + x^2)^(3/2)``.
    """
    _check_mu(mu)
    if beta < 0:
        raise ParameterError("beta must be nonnegative")
    if kernel not in _L1_CLOSED_FORM:
        raise ParameterError(f"smooth_l1 supports kernels {_L1_CLOSED_FORM}, got {kernel!r}")
    phi = catalog_kernel(kernel)
    sep = SeparableKernel(phi, n)

    def value(x):
        return beta * mu * np.sum(phi.value(x / mu))

    def gradient(x):
        return beta * phi.d1(x / mu)

    def hessian_diag(x):
        return beta * phi.d2(x / mu) / mu

    return SmoothedRegularizer(
        mu=mu,
        dim=n,
        M_g=smoothing_constant(sep.M_h, phi.nu, mu, n),
        nu=phi.nu,
        weight=beta,
        kernel=sep,
        _value=value,
        _gradient=gradient,
        _hessian_diag=hessian_diag,
        name="l1",
    )


def _radial_parts(kernel, mu):
    """``psi(r) = phi'(r/mu)/r`` and ``psi'(r)/r`` for a radial smoother."""
    if kernel == "hyperbolic-p1":

        def psi(r):
            return 1.0 / np.sqrt(mu * mu + r * r)

        def dpsi_over_r(r):
            return -((mu * mu + r * r) ** -1.5)

    elif kernel == "ostrovskii-bach":

        def psi(r):
            s = np.sqrt(1.0 + 4.0 * (r / mu) ** 2)
            return 2.0 / (mu * (s + 1.0))

        def dpsi_over_r(r):
            s = np.sqrt(1.0 + 4.0 * (r / mu) ** 2)
            return -8.0 / (mu**3 * s * (s + 1.0) ** 2)

    else:
        raise ParameterError(f"group smoothing supports kernels {_L1_CLOSED_FORM}, got {kernel!r}")
    return psi, dpsi_over_r


def check_groups(groups: Sequence[Sequence[int]], n: int | None = None) -> list[np.ndarray]:
    """Validate disjoint, in-range groups; returns them as int arrays."""
    out = []
    seen: set[int] = set()
    for j, g in enumerate(groups):
        idx = np.asarray(g, dtype=int).ravel()
        if idx.size == 0:
            raise GroupStructureError(f"group {j} is empty")
        if np.any(idx < 0) or (n is not None and np.any(idx >= n)):
            raise GroupStructureError(f"group {j} has an index outside [0, {n})")
        s = set(idx.tolist())
        if len(s) != idx.size or seen & s:
            raise GroupStructureError(f"group {j} overlaps another group")
        seen |= s
        out.append(idx)
    return out


def smooth_l2_groups(
    mu: float,
    groups: Sequence[Sequence[int]],
    weights=None,
    beta_G: float = 1.0,
    n: int | None = None,
    kernel: str = "hyperbolic-p1",
):
    """Smoothed ``beta_G * sum_j w_j ||x_j||_2`` over disjoint groups.

    The scalar smoother is applied to ``r_j = ||x_j||``; for the default
    kernel each group contributes ``beta_G w_j (sqrt(mu^2 + r_j^2) - mu)``.
    ``hessian_diag`` is the diagonal of the exact block Hessian.
    """
    _check_mu(mu)
    if beta_G < 0:
        raise ParameterError("beta_G must be nonnegative")
    idx = check_groups(groups, n)
    if n is None:
        n = int(max(g.max() for g in idx)) + 1 if idx else 0
    w = np.ones(len(idx)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(idx),) or np.any(w <= 0):
        raise ParameterError("group weights must be positive, one per group")
    phi = catalog_kernel(kernel)
    psi, dpsi_over_r = _radial_parts(kernel, mu)
    scale = beta_G * w

    def norms(x):
        return np.array([np.linalg.norm(x[g]) for g in idx])

    def value(x):
        return float(np.sum(scale * mu * phi.value(norms(x) / mu)))

    def gradient(x):
        out = np.zeros_like(x)
        r = norms(x)
        for c, p, g in zip(scale, psi(r), idx):
            out[g] = c * p * x[g]
        return out

    def hessian_diag(x):
        out = np.zeros_like(x)
        r = norms(x)
        for c, p, q, g in zip(scale, psi(r), dpsi_over_r(r), idx):
            out[g] = c * (p + q * x[g] ** 2)
        return out

    return SmoothedRegularizer(
        mu=mu,
        dim=n,
        M_g=smoothing_constant(phi.M_phi, phi.nu, mu, n),
        nu=phi.nu,
        weight=beta_G,
        kernel=RadialKernel(phi),
        _value=value,
        _gradient=gradient,
        _hessian_diag=hessian_diag,
        name="group_l2",
    )


def smooth_lower_bound(mu: float, lower, n: int):
    """Exponential-kernel smoothing of the indicator of ``{x >= lower}``.

    Value ``sum mu * exp((lower - x) / mu)``.
    """
    _check_mu(mu)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    phi = catalog_kernel("exponential")

    def value(x):
        return mu * np.sum(np.exp((lower - x) / mu))

    def gradient(x):
        return -np.exp((lower - x) / mu)

    def hessian_diag(x):
        return np.exp((lower - x) / mu) / mu

    return SmoothedRegularizer(
        mu=mu,
        dim=n,
        M_g=smoothing_constant(phi.M_phi, phi.nu, mu, n),
        nu=phi.nu,
        weight=1.0,
        kernel=SeparableKernel(phi, n),
        _value=value,
        _gradient=gradient,
        _hessian_diag=hessian_diag,
        name="lower_bound",
    )


def infconv_oracle(g, kernel, mu, x, search_box, grid_steps=2001):
    """Brute-force ``inf_w { g(w) + mu * h((x - w) / mu) }``.

    A test oracle, not a production routine: it grid-searches ``w`` over
    ``search_box`` (one interval, shared by every coordinate; at most two
    coordinates) and refines the best grid point locally. Accuracy is
    roughly ``(box width / grid_steps)^2`` before refinement.

    ``g`` and ``kernel.value`` must reduce over the last axis so that a
    stack of candidate points evaluates in one call.
    """
    if grid_steps < 100:
        raise ParameterError("grid_steps must be at least 100")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    if n > 2:
        raise ParameterError("infconv_oracle handles at most two coordinates")
    lo, hi = search_box

    def objective(W):
        W = np.asarray(W, dtype=float)
        return g(W) + mu * kernel.value((x - W) / mu)

    axis = np.linspace(lo, hi, grid_steps)
    if n == 1:
        W = axis[:, None]
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        W = np.stack([a.ravel(), b.ravel()], axis=-1)
    vals = objective(W)
    k = int(np.argmin(vals))
    best_w, best = W[k], float(vals[k])
    h = (hi - lo) / (grid_steps - 1)

    if n == 1:
        a, b = max(lo, best_w[0] - h), min(hi, best_w[0] + h)
        res = optimize.minimize_scalar(
            lambda s: float(objective(np.array([[s]]))[0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-13},
        )
        if res.success and res.fun < best:
            best = float(res.fun)
    else:
        res = optimize.minimize(
            lambda w: float(objective(w[None, :])[0]),
            best_w,
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000},
        )
        if np.isfinite(res.fun) and res.fun < best:
            best = float(res.fun)
    return best
