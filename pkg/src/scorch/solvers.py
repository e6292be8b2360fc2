"""Proximal Newton-type solvers with self-concordant step lengths, and baselines.

``prox_n_score`` and ``prox_ggn_score`` take the damped step

    x+ = prox_{alpha g}^{H_g}(x - alpha_bar * H^{-1} grad q(x)),
    alpha_bar = alpha / (1 + M_g * eta),  eta = ||grad g_s(x)||*_{H_g},

where ``q = f + g_s`` and ``H_g`` is the diagonal of the smoother's
Hessian. The Newton variant uses ``H = hess f + H_g``; the generalized
Gauss-Newton variant builds ``H`` from an augmented Jacobian and, when
the Jacobian has no more rows than columns, solves the smaller dual
system instead. ``prox_grad`` and ``fast_prox_grad`` are the usual
first-order methods on the same smoothed objective ``L_s = f + g_s + g``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .exceptions import ConfigError, DomainError, NumericError, ParameterError
from .kernels import SmoothedRegularizer
from .problems import CompositeProblem, build_augmented_jacobian, subgradient_residual
from .prox import prox_penalty

log = logging.getLogger(__name__)

ALGORITHMS = ("prox_n_score", "prox_ggn_score", "prox_grad", "fast_prox_grad")
SCORE_ALGORITHMS = ALGORITHMS[:2]
NNZ_THRESHOLD = 1e-12
REGULARIZATION = 1e-10


class DivergenceError(NumericError):
    """Raised when the objective blows up; carries the partial trace."""

    def __init__(self, message, trace=None, x=None):
        super().__init__(message)
        self.trace = trace
        self.x = x


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm choice and stopping rule.

    ``prox_dhat_literal`` selects the threshold of the scaled prox inside
    the SCORE updates: ``False`` (default) divides the penalty weight by
    the metric diagonal, which is the exact minimizer of the scaled prox
    problem; ``True`` multiplies by it instead.
    """

    algorithm: str = "prox_n_score"
    alpha: float = 1.0
    mu: float | None = None
    max_iters: int = 1000
    tol: float = 1e-6
    lipschitz_L: float | None = None
    prox_dhat_literal: bool = False
    diagnostics: bool = False
    divergence_factor: float = 1e10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.mu is not None and not self.mu > 0:
            raise ConfigError("mu must be positive")
        if self.lipschitz_L is not None and not self.lipschitz_L > 0:
            raise ConfigError("lipschitz_L must be positive")


@dataclass(frozen=True)
class TraceRecord:
    """One row of a solver trace, describing iterate ``x_k``.

    ``alpha_bar`` and ``eta`` are the step length and dual norm computed
    at ``x_k`` (NaN for the first-order baselines); ``rel_step`` is
    ``||x_k - x_{k-1}|| / max(||x_{k-1}||, 1)`` (NaN at ``k = 0``).
    """

    k: int
    objective: float
    smoothed_objective: float
    alpha_bar: float
    eta: float
    rel_step: float
    residual: float
    nnz: int
    seconds: float
    d_nu: float = math.nan
    omega: float = math.nan

    @staticmethod
    def columns() -> list[str]:
        return [f.name for f in dataclasses.fields(TraceRecord)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


class Trace(list):
    """A list of :class:`TraceRecord` with the run's outcome attached."""

    def __init__(self, records=(), algorithm="", converged=False):
        super().__init__(records)
        self.algorithm = algorithm
        self.converged = converged

    @property
    def iterations(self) -> int:
        return self[-1].k if self else 0


@dataclass
class SolverState:
    """Current iterate plus the quantities the step rule needs."""

    x: np.ndarray
    k: int = 0
    hg: np.ndarray | None = None
    eta: float = math.nan
    alpha_bar: float = math.nan
    trace: Trace = field(default_factory=Trace)
    # momentum bookkeeping for fast_prox_grad
    y: np.ndarray | None = None
    t: float = 1.0


# step length ---------------------------------------------------------------


def step_length(smoother: SmoothedRegularizer, x, alpha: float):
    """``eta = ||grad g_s(x)||*_{H_g}`` and ``alpha_bar = alpha / (1 + M_g eta)``."""
    grad = smoother.gradient(x)
    hg = smoother.hessian_diag(x)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hg))):
        raise NumericError("nonfinite smoother gradient or Hessian")
    eta = float(np.sqrt(np.sum(grad * grad / hg)))
    return eta, alpha / (1.0 + smoother.M_g * eta)


# linear algebra -------------------------------------------------------------


def _solve_spd(H, b):
    """Solve ``H z = b`` for SPD ``H`` (dense, sparse or operator)."""
    if isinstance(H, splinalg.LinearOperator):
        z, info = splinalg.cg(H, b, rtol=1e-12, maxiter=10 * b.size)
        if info != 0:
            raise NumericError(f"conjugate gradients failed (info={info})")
        return z
    if sparse.issparse(H):
        for shift in (0.0, REGULARIZATION):
            try:
                lu = splinalg.splu((H + shift * sparse.identity(H.shape[0])).tocsc())
                z = lu.solve(b)
                if np.all(np.isfinite(z)):
                    return z
            except RuntimeError:
                pass
        raise NumericError("sparse factorization failed after regularization")
    for shift in (0.0, REGULARIZATION):
        try:
            c = linalg.cho_factor(H + shift * np.eye(H.shape[0]) if shift else H)
            return linalg.cho_solve(c, b)
        except linalg.LinAlgError:
            log.debug("Cholesky failed; retrying with %g*I", REGULARIZATION)
    raise NumericError("Cholesky factorization failed after regularization")


def _solve_lu(M, b):
    for shift in (0.0, REGULARIZATION):
        try:
            lu = linalg.lu_factor(M + shift * np.eye(M.shape[0]) if shift else M, check_finite=True)
            z = linalg.lu_solve(lu, b)
            if np.all(np.isfinite(z)):
                return z
        except (linalg.LinAlgError, ValueError):
            pass
        log.debug("LU solve failed; retrying with %g*I", REGULARIZATION)
    raise NumericError("LU factorization failed after regularization")


def _add_diag(H, d):
    if isinstance(H, splinalg.LinearOperator):
        return H + splinalg.aslinearoperator(sparse.diags(d))
    if sparse.issparse(H):
        return (H + sparse.diags(d)).tocsc()
    return H + np.diag(d)


def ggn_direction(J, V, u, hg, branch: str = "auto") -> np.ndarray:
    """Generalized Gauss-Newton direction ``delta``.

    ``full``: ``-(J^T V J + H_g)^{-1} J^T u`` by Cholesky.
    ``dual``: ``-H_g^{-1} J^T (I + V J H_g^{-1} J^T)^{-1} u`` by LU; the
    inner matrix has one row per row of ``J`` and is not symmetric.
    ``auto`` picks ``dual`` when ``J`` has no more rows than columns.
    """
    rows, n = J.shape
    if branch == "auto":
        branch = "dual" if rows <= n else "full"
    if branch == "full":
        H = (J.T * V) @ J + np.diag(hg)
        return -_solve_spd(H, J.T @ u)
    if branch == "dual":
        JH = J / hg
        M = np.eye(rows) + V[:, None] * (J @ JH.T)
        return -JH.T @ _solve_lu(M, u)
    raise ParameterError(f"unknown branch {branch!r}")


# single steps ----------------------------------------------------------------


def _score_prox(problem, z, hg, config):
    return prox_penalty(z, problem.penalty, hg, config.alpha, literal=config.prox_dhat_literal)


def _prepare(problem, state, config):
    if state.hg is None or math.isnan(state.alpha_bar):
        eta, ab = step_length(problem.smoother, state.x, config.alpha)
        state = dataclasses.replace(
            state, hg=problem.smoother.hessian_diag(state.x), eta=eta, alpha_bar=ab
        )
    return state


def _advance(problem, state, x_new, config):
    eta, ab = step_length(problem.smoother, x_new, config.alpha)
    return dataclasses.replace(
        state, x=x_new, k=state.k + 1, hg=problem.smoother.hessian_diag(x_new), eta=eta, alpha_bar=ab
    )


def prox_n_score_step(problem: CompositeProblem, state: SolverState, config: SolverConfig) -> SolverState:
    """One proximal Newton step with the self-concordant step length."""
    state = _prepare(problem, state, config)
    x = state.x
    H = _add_diag(problem.hess_f(x), state.hg)
    delta = _solve_spd(H, problem.grad_q(x))
    x_new = _score_prox(problem, x - state.alpha_bar * delta, state.hg, config)
    return _advance(problem, state, x_new, config)


def prox_ggn_score_step(problem: CompositeProblem, state: SolverState, config: SolverConfig) -> SolverState:
    """One proximal generalized Gauss-Newton step."""
    state = _prepare(problem, state, config)
    x = state.x
    model = problem.model
    rows = model.A.shape[0] + 1
    if sparse.issparse(model.A) and rows > problem.dim:
        # full branch without densifying; the augmentation row has V = 0
        w = model.curvature(x)
        H = (model.A.T @ sparse.diags(w) @ model.A + sparse.diags(state.hg)).tocsc()
        delta = -_solve_spd(H, problem.grad_q(x))
    else:
        aug = build_augmented_jacobian(model, problem.smoother, x)
        delta = ggn_direction(aug.J, aug.V, aug.u, state.hg)
    x_new = _score_prox(problem, x + state.alpha_bar * delta, state.hg, config)
    return _advance(problem, state, x_new, config)


def _lipschitz(problem, config):
    if config.lipschitz_L is not None:
        return config.lipschitz_L
    if problem.model is None:
        raise ConfigError("baseline needs lipschitz_L for a problem without a design matrix")
    return problem.lipschitz()


def prox_grad_step(problem: CompositeProblem, state: SolverState, config: SolverConfig, L=None) -> SolverState:
    """``x+ = prox_{g/L}(x - grad q(x) / L)``."""
    L = _lipschitz(problem, config) if L is None else L
    x = state.x
    x_new = prox_penalty(x - problem.grad_q(x) / L, problem.penalty, None, 1.0 / L)
    return dataclasses.replace(state, x=x_new, k=state.k + 1)


def fast_prox_grad_step(problem: CompositeProblem, state: SolverState, config: SolverConfig, L=None) -> SolverState:
    """Proximal gradient at the extrapolated point with Nesterov momentum."""
    L = _lipschitz(problem, config) if L is None else L
    y = state.x if state.y is None else state.y
    x_new = prox_penalty(y - problem.grad_q(y) / L, problem.penalty, None, 1.0 / L)
    t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.t * state.t))
    y_new = x_new + ((state.t - 1.0) / t_new) * (x_new - state.x)
    return dataclasses.replace(state, x=x_new, k=state.k + 1, y=y_new, t=t_new)


_STEPS = {
    "prox_n_score": prox_n_score_step,
    "prox_ggn_score": prox_ggn_score_step,
    "prox_grad": prox_grad_step,
    "fast_prox_grad": fast_prox_grad_step,
}


# diagnostics -----------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostics:
    d_nu: float
    omega: float
    R: float


def d_nu(x, y, smoother: SmoothedRegularizer) -> float:
    """Metric term ``d_nu(x, y)`` built from ``M_g`` and the local norm at ``x``."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(y, dtype=float) - x
    nu, M = smoother.nu, smoother.M_g
    e = float(np.linalg.norm(s))
    if nu == 2:
        return M * e
    local = float(np.sqrt(np.sum(smoother.hessian_diag(x) * s * s)))
    if e == 0.0 or local == 0.0:
        return 0.0
    return (nu / 2.0 - 1.0) * M * e ** (3.0 - nu) * local ** (nu - 2.0)


def omega_nu(nu: float, tau: float) -> float:
    """``omega_nu(tau)``; tends to 1/2 as ``tau -> 0``."""
    if nu != 2 and tau >= 1:
        raise DomainError("omega_nu needs tau < 1 for nu > 2")
    if abs(tau) < 1e-4:
        c0, c1, c2 = _omega_taylor(nu)
        return c0 + c1 * tau + c2 * tau * tau
    if nu == 2:
        return (math.expm1(tau) - tau) / tau**2
    if nu == 3:
        return (-tau - math.log1p(-tau)) / tau**2
    if nu == 4:
        return ((1 - tau) * math.log1p(-tau) + tau) / tau**2
    a = (nu - 2) / (4 - nu)
    b = (nu - 2) / (2 * (3 - nu) * tau)
    p = 2 * (3 - nu) / (2 - nu)
    try:
        # (1 - tau)^p - 1 without cancellation
        e = math.expm1(p * math.log1p(-tau))
    except OverflowError:
        return math.inf
    return a / tau * (b * e - 1)


_OMEGA_SERIES = {2: (0.5, 1 / 6, 1 / 24), 3: (0.5, 1 / 3, 1 / 4), 4: (0.5, 1 / 6, 1 / 12)}


def _omega_taylor(nu):
    """Coefficients of ``omega_nu(tau) = c0 + c1 tau + c2 tau^2 + O(tau^3)``."""
    if nu in _OMEGA_SERIES:
        return _OMEGA_SERIES[nu]
    # expand (1 - tau)^p; the linear term cancels the -1 inside the bracket
    a = (nu - 2) / (4 - nu)
    k = (nu - 2) / (2 * (3 - nu))
    p = 2 * (3 - nu) / (2 - nu)
    c2 = p * (p - 1) / 2
    c3 = -p * (p - 1) * (p - 2) / 6
    c4 = p * (p - 1) * (p - 2) * (p - 3) / 24
    return a * k * c2, a * k * c3, a * k * c4


def r_nu(nu: float, tau: float) -> float:
    """``R_nu(tau)`` for ``nu = 2`` or ``nu`` in ``(2, 3]``."""
    if nu == 2:
        return (1.5 + tau / 3.0) * math.exp(tau)
    if not 2 < nu <= 3:
        raise DomainError("R_nu is defined for nu = 2 or nu in (2, 3]")
    if not 0 <= tau < 1:
        raise DomainError("R_nu needs tau in [0, 1)")
    p = (4 - nu) / (nu - 2)
    if tau < 1e-4:
        # limit p(p+1)/2 * ... expanded: value at 0 is (p + 1) / 2
        return (p + 1) / 2 + (p + 1) * (p + 2) / 6 * tau
    q = (1 - tau) ** p
    return (1 - q - p * tau * q) / (p * tau * tau * q)


def diagnostics_omega_d(nu: float, tau: float | None = None, x=None, y=None, smoother=None) -> Diagnostics:
    """``d_nu(x, y)``, ``omega_nu(tau)`` and ``R_nu(tau)``.

    If ``tau`` is omitted it is taken to be ``d_nu(x, y)``. Entries that
    are undefined for the given ``nu`` or ``tau`` come back as NaN.
    """
    d = math.nan
    if x is not None and y is not None and smoother is not None:
        d = d_nu(x, y, smoother)
    if tau is None:
        tau = d
    if tau is None or math.isnan(tau):
        raise ParameterError("give tau, or x, y and a smoother")
    om = omega_nu(nu, tau)
    try:
        R = r_nu(nu, tau)
    except DomainError:
        R = math.nan
    return Diagnostics(d, om, R)


# driver ------------------------------------------------------------------------


def _nnz(x):
    return int(np.count_nonzero(np.abs(x) > NNZ_THRESHOLD))


def _record(problem, state, config, rel, t0, x_prev):
    score = config.algorithm in SCORE_ALGORITHMS
    dnu = om = math.nan
    if config.diagnostics and score and x_prev is not None:
        dnu = d_nu(state.x, x_prev, problem.smoother)
        try:
            om = omega_nu(problem.smoother.nu, dnu)
        except DomainError:
            om = math.inf
    return TraceRecord(
        k=state.k,
        objective=problem.objective(state.x),
        smoothed_objective=problem.smoothed_objective(state.x),
        alpha_bar=state.alpha_bar if score else math.nan,
        eta=state.eta if score else math.nan,
        rel_step=rel,
        residual=subgradient_residual(problem, state.x),
        nnz=_nnz(state.x),
        seconds=time.perf_counter() - t0,
        d_nu=dnu,
        omega=om,
    )


def solve(problem: CompositeProblem, config: SolverConfig, x0=None):
    """Iterate until the relative step drops below ``tol`` or ``max_iters``.

    Returns ``(x, trace)``; ``trace.converged`` tells which stop fired.
    Raises :class:`DivergenceError` if the smoothed objective becomes
    nonfinite or grows by ``divergence_factor``.
    """
    if config.mu is not None and not math.isclose(config.mu, problem.smoother.mu):
        raise ConfigError(f"config mu={config.mu} but the problem was smoothed with mu={problem.smoother.mu}")
    step = _STEPS[config.algorithm]
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (problem.dim,):
        raise ConfigError(f"x0 has shape {x.shape}, expected ({problem.dim},)")

    extra = {}
    if config.algorithm not in SCORE_ALGORITHMS:
        extra["L"] = _lipschitz(problem, config)
    trace = Trace(algorithm=config.algorithm)
    state = SolverState(x=x, trace=trace)
    if config.algorithm in SCORE_ALGORITHMS:
        state = _prepare(problem, state, config)
    t0 = time.perf_counter()
    trace.append(_record(problem, state, config, math.nan, t0, None))
    limit = config.divergence_factor * max(1.0, abs(trace[0].smoothed_objective))

    while state.k < config.max_iters:
        x_prev = state.x
        state = step(problem, state, config, **extra)
        rel = float(np.linalg.norm(state.x - x_prev) / max(np.linalg.norm(x_prev), 1.0))
        rec = _record(problem, state, config, rel, t0, x_prev)
        trace.append(rec)
        if not math.isfinite(rec.smoothed_objective) or abs(rec.smoothed_objective) > limit:
            log.error(
                "%s diverged at iteration %d (objective %g)", config.algorithm, state.k, rec.smoothed_objective
            )
            raise DivergenceError(f"{config.algorithm} diverged at iteration {state.k}", trace, state.x)
        if rel < config.tol:
            trace.converged = True
            break
    return state.x, trace


def validate_trace(trace, alpha: float) -> None:
    """Check the step-length rule on a SCORE trace.

    Every ``alpha_bar`` must lie in ``(0, alpha]`` and equal ``alpha``
    whenever ``eta = 0``; raises ``AssertionError`` otherwise.
    """
    for r in trace:
        if math.isnan(r.alpha_bar):
            continue
        assert 0 < r.alpha_bar <= alpha, f"alpha_bar={r.alpha_bar} outside (0, {alpha}] at k={r.k}"
        if r.eta == 0:
            assert r.alpha_bar == alpha, f"eta=0 but alpha_bar={r.alpha_bar} at k={r.k}"
