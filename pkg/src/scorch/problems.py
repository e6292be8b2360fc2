"""Composite problems ``min f(x) + g(x)`` with a self-concordant smoother.

Every problem here has a linear predictor ``yhat = A x`` and a loss that is
a sum over samples, so ``f``, its gradient and its Hessian all follow from
the :class:`ResidualModel`:

    f = sum_i l(y_i, yhat_i),   grad f = A^T l',   hess f = A^T diag(l'') A.

``A`` may be a dense array or a scipy sparse matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .exceptions import DataError, UnsupportedPenaltyError
from .kernels import SmoothedRegularizer, smooth_l1, smooth_l2_groups
from .prox import PenaltySpec

# Above this dimension Hessians are handed out as matrix-free operators.
DENSE_HESSIAN_LIMIT = 2000


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class ResidualModel:
    """Linear predictions ``yhat = A x`` scored by a per-entry loss.

    ``A`` has ``m * n_y`` rows; multi-output samples are flattened
    row-major, so row ``i * n_y + k`` is output ``k`` of sample ``i``.
    ``loss``, ``d1`` and ``d2`` take ``(y, yhat)`` arrays and return the
    loss and its first two derivatives in ``yhat`` entrywise.
    """

    A: np.ndarray | sparse.spmatrix
    y: np.ndarray
    loss: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_y: int = 1
    name: str = ""

    @property
    def m(self) -> int:
        return self.A.shape[0] // self.n_y

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.A @ x).ravel()

    def jacobian(self, x=None):
        """``d yhat / d x``; constant for a linear predictor."""
        return self.A

    def value(self, x) -> float:
        return float(np.sum(self.loss(self.y, self.predict(x))))

    def gradient(self, x) -> np.ndarray:
        r = self.d1(self.y, self.predict(x))
        return np.asarray(self.A.T @ r).ravel()

    def curvature(self, x) -> np.ndarray:
        return self.d2(self.y, self.predict(x))


@dataclass(frozen=True)
class AugmentedJacobian:
    """``J`` stacks the model Jacobian over ``grad g_s``; ``J^T u = grad f + grad g_s``."""

    J: np.ndarray
    V: np.ndarray
    u: np.ndarray

    @property
    def rows(self) -> int:
        return self.J.shape[0]


@dataclass(frozen=True)
class CompositeProblem:
    """``L(x) = f(x) + g(x)`` and its smoothed version ``L_s = f + g_s + g``."""

    dim: int
    model: ResidualModel
    penalty: PenaltySpec
    smoother: SmoothedRegularizer
    curvature_bound: float = 1.0  # sup of l'', for the baselines' Lipschitz constant
    name: str = ""

    def f(self, x) -> float:
        return self.model.value(x)

    def grad_f(self, x) -> np.ndarray:
        return self.model.gradient(x)

    def hess_f(self, x):
        """Dense ``A^T diag(l'') A`` (sparse if ``A`` is), or an operator above the size limit."""
        A = self.model.A
        w = self.model.curvature(x)
        if sparse.issparse(A):
            return (A.T @ sparse.diags(w) @ A).tocsc()
        if self.dim > DENSE_HESSIAN_LIMIT:
            return splinalg.LinearOperator(
                (self.dim, self.dim), matvec=lambda v: A.T @ (w * (A @ v)), dtype=float
            )
        return A.T @ (A * w[:, None])

    def g(self, x) -> float:
        return self.penalty.value(x)

    def grad_q(self, x) -> np.ndarray:
        """Gradient of the smooth part ``q = f + g_s``."""
        return self.grad_f(x) + self.smoother.gradient(x)

    def objective(self, x) -> float:
        return self.f(x) + self.g(x)

    def smoothed_objective(self, x) -> float:
        return self.f(x) + self.smoother.value(x) + self.g(x)

    def lipschitz(self) -> float:
        """Lipschitz constant of ``grad f`` plus that of ``grad g_s``.

        The smoother part is its largest Hessian entry at the origin, which
        bounds the Hessian everywhere for the kernels offered here.
        """
        A = self.model.A
        if sparse.issparse(A):
            s = splinalg.svds(A.astype(float), k=1, return_singular_vectors=False)[0]
        else:
            s = np.linalg.norm(A, 2)
        smooth = float(np.max(self.smoother.hessian_diag(np.zeros(self.dim)), initial=0.0))
        return float(self.curvature_bound * s * s + smooth)


def _as_design(A):
    if sparse.issparse(A):
        A = sparse.csr_matrix(A, dtype=float)
        if not np.all(np.isfinite(A.data)):
            raise DataError("design matrix contains NaN or Inf")
        return A
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DataError("design matrix must be two-dimensional")
    if not np.all(np.isfinite(A)):
        raise DataError("design matrix contains NaN or Inf")
    return A


def _logistic_loss(y, t):
    return np.logaddexp(0.0, -y * t)


def _logistic_d1(y, t):
    return -y * _sigmoid(-y * t)


def _logistic_d2(y, t):
    s = _sigmoid(-y * t)
    return s * (1.0 - s)


def logistic_problem(A, y, beta: float, mu: float, kernel: str = "hyperbolic-p1"):
    """Sparse logistic regression ``sum log(1 + exp(-y_i <a_i, x>)) + beta ||x||_1``.

    Returns ``(problem, model)``.
    """
    A = _as_design(A)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != A.shape[0]:
        raise DataError(f"{A.shape[0]} rows but {y.size} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("logistic labels must be -1 or +1")
    n = A.shape[1]
    model = ResidualModel(A, y, _logistic_loss, _logistic_d1, _logistic_d2, name="logistic")
    penalty = PenaltySpec("l1", beta=beta)
    problem = CompositeProblem(
        n, model, penalty, smooth_l1(mu, n, beta, kernel), curvature_bound=0.25, name="logistic"
    )
    return problem, model


def _ls_loss(y, t):
    return 0.5 * (y - t) ** 2


def _ls_d1(y, t):
    return t - y


def _ls_d2(y, t):
    return np.ones_like(t)


def smoother_for(penalty: PenaltySpec, mu: float, n: int, kernel: str = "hyperbolic-p1"):
    """The smoother matching a penalty, scaled by the penalty's own weights."""
    if penalty.kind == "l1":
        return smooth_l1(mu, n, penalty.beta, kernel)
    group = smooth_l2_groups(
        mu, penalty.groups, penalty.group_weights, penalty.beta_G, n=n, kernel=kernel
    )
    if penalty.kind == "group_l2":
        return group
    return smooth_l1(mu, n, penalty.beta, kernel) + group


def least_squares_problem(A, y, penalty: PenaltySpec, mu: float, kernel: str = "hyperbolic-p1"):
    """``0.5 ||A x - y||^2 + g(x)``. Returns ``(problem, model)``."""
    A = _as_design(A)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != A.shape[0]:
        raise DataError(f"{A.shape[0]} rows but {y.size} targets")
    if not np.all(np.isfinite(y)):
        raise DataError("targets contain NaN or Inf")
    n = A.shape[1]
    for g in penalty.groups:
        if g.size and g.max() >= n:
            raise DataError(f"group index {g.max()} out of range for n={n}")
    model = ResidualModel(A, y, _ls_loss, _ls_d1, _ls_d2, name="least_squares")
    problem = CompositeProblem(
        n, model, penalty, smoother_for(penalty, mu, n, kernel), name="least_squares"
    )
    return problem, model


def build_augmented_jacobian(model: ResidualModel, smoother: SmoothedRegularizer, x) -> AugmentedJacobian:
    """Stack ``d yhat / dx`` over ``grad g_s(x)`` with matching ``V`` and ``u``."""
    x = np.asarray(x, dtype=float)
    yhat = model.predict(x)
    Jm = model.jacobian(x)
    Jm = Jm.toarray() if sparse.issparse(Jm) else np.asarray(Jm)
    J = np.vstack([Jm, smoother.gradient(x)[None, :]])
    V = np.append(model.d2(model.y, yhat), 0.0)
    u = np.append(model.d1(model.y, yhat), 1.0)
    return AugmentedJacobian(J, V, u)


def subgradient_residual(problem: CompositeProblem, x) -> float:
    """Distance from ``-grad q(x)`` to the subdifferential of ``g`` at ``x``.

    Zero exactly at first-order stationary points of ``L_s``.
    """
    x = np.asarray(x, dtype=float)
    v = -problem.grad_q(x)
    pen = problem.penalty
    if pen.kind not in ("l1", "group_l2", "sparse_group"):
        raise UnsupportedPenaltyError(f"no subdifferential for {pen.kind!r}")
    beta = pen.l1_weight
    nz = x != 0

    # l1 part: v_i - beta*sign(x_i) off zero, soft threshold on zero coordinates
    r = np.where(nz, v - beta * np.sign(x), np.sign(v) * np.maximum(np.abs(v) - beta, 0.0))
    if pen.kind == "l1":
        return float(np.linalg.norm(r))

    out = r.copy()
    covered = np.zeros(x.size, dtype=bool)
    total = 0.0
    for c, g in zip(pen.group_scales, pen.groups):
        covered[g] = True
        nrm = np.linalg.norm(x[g])
        if nrm > 0:
            total += float(np.sum((r[g] - c * x[g] / nrm) ** 2))
        else:
            # Minkowski sum of the l1 box and a ball of radius c
            total += max(float(np.linalg.norm(r[g])) - c, 0.0) ** 2
    total += float(np.sum(out[~covered] ** 2))
    return float(np.sqrt(total))
