"""Datasets: LIBSVM input/output and seeded synthetic generators.

Every generator is a pure function of its arguments: the same dimensions
and seed give byte-identical arrays.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .exceptions import ConfigError, DataError, ParseError

log = logging.getLogger(__name__)

DECONV_TAPS = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0


@dataclass(frozen=True)
class Dataset:
    """Design ``A`` (dense or CSR), targets ``y`` and free-form ``meta``."""

    A: np.ndarray | sparse.csr_matrix
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = self.A.data if sparse.issparse(self.A) else np.asarray(self.A)
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains NaN or Inf")
        if self.A.shape[0] != len(self.y):
            raise DataError(f"{self.A.shape[0]} rows but {len(self.y)} targets")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def density(self) -> float:
        nnz = self.A.nnz if sparse.issparse(self.A) else np.count_nonzero(self.A)
        return nnz / float(self.m * self.n) if self.m and self.n else 0.0


@dataclass(frozen=True)
class GroundTruth:
    """The planted solution; ``groups`` lists every group, ``active_groups`` the used ones."""

    x_star: np.ndarray
    active_groups: list = field(default_factory=list)
    groups: list = field(default_factory=list)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.x_star))

    def to_json(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "nnz": self.nnz,
            "groups": [g.tolist() for g in self.groups],
            "active_groups": [int(j) for j in self.active_groups],
        }


# LIBSVM ----------------------------------------------------------------------

_LABEL_MAPS = ({0.0: -1.0, 1.0: 1.0}, {1.0: -1.0, 2.0: 1.0})


def _normalize_labels(y: np.ndarray) -> np.ndarray:
    values = set(np.unique(y).tolist())
    if values <= {-1.0, 1.0}:
        return y
    for mapping in _LABEL_MAPS:
        if values <= set(mapping):
            log.info("mapping labels %s to {-1, +1}", sorted(mapping))
            return np.array([mapping[v] for v in y])
    if len(values) == 2:
        lo, hi = sorted(values)
        log.info("mapping labels {%g, %g} to {-1, +1}", lo, hi)
        return np.where(y == hi, 1.0, -1.0)
    raise DataError(f"cannot map {len(values)} distinct labels to {{-1, +1}}")


def _parse_line(line: str, lineno: int):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    tokens = body.split()
    try:
        label = float(tokens[0])
    except ValueError:
        raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
    if not math.isfinite(label):
        raise ParseError(f"nonfinite label {tokens[0]!r}", lineno)
    cols, vals = [], []
    prev = 0
    for tok in tokens[1:]:
        idx, sep, val = tok.partition(":")
        if not sep:
            raise ParseError(f"expected index:value, got {tok!r}", lineno)
        try:
            j = int(idx)
            v = float(val)
        except ValueError:
            raise ParseError(f"malformed token {tok!r}", lineno) from None
        if j < 1:
            raise ParseError(f"feature index must be >= 1, got {j}", lineno)
        if j <= prev:
            raise ParseError(f"feature indices must ascend ({j} after {prev})", lineno)
        if not math.isfinite(v):
            raise ParseError(f"nonfinite value in {tok!r}", lineno)
        prev = j
        cols.append(j - 1)
        vals.append(v)
    return label, cols, vals


def parse_libsvm(path, n_features: int | None = None, classification: bool = True) -> Dataset:
    """Read ``<label> <index>:<value> ...`` lines (1-based, ascending indices).

    Blank lines and ``#`` comments are skipped. With ``classification``
    the labels are mapped to ``{-1, +1}``. Errors name the line.
    """
    labels, indptr, indices, data = [], [0], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parsed = _parse_line(line, lineno)
            if parsed is None:
                continue
            label, cols, vals = parsed
            labels.append(label)
            indices.extend(cols)
            data.extend(vals)
            indptr.append(len(indices))
    width = max(indices, default=-1) + 1
    if n_features is None:
        n_features = width
    elif width > n_features:
        raise DataError(f"file uses feature {width} but n_features={n_features}")
    A = sparse.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), n_features),
    )
    y = np.array(labels, dtype=float)
    if classification and y.size:
        y = _normalize_labels(y)
    return Dataset(A, y, {"source": os.path.basename(str(path))})


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def write_libsvm(path, dataset: Dataset) -> None:
    """Write nonzeros in LIBSVM format with round-trip exact values."""
    A = sparse.csr_matrix(dataset.A)
    A.sort_indices()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(A.shape[0]):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            items = [f"{j + 1}:{repr(float(v))}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]) if v != 0]
            fh.write(" ".join([_fmt(dataset.y[i])] + items) + "\n")


def write_csv(path, dataset: Dataset) -> None:
    """Dense CSV: header ``y,x1,...,xn`` then one row per sample."""
    A = dataset.A.toarray() if sparse.issparse(dataset.A) else np.asarray(dataset.A)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j + 1}" for j in range(A.shape[1])])
        for yi, row in zip(dataset.y, A):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])


# generators --------------------------------------------------------------------


def _check_dims(**dims):
    for name, v in dims.items():
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v}")


def gen_logistic(m: int, n: int, seed: int, sparsity: float = 0.1, flip_rate: float = 0.05):
    """Standard normal design, sparse +-1 planted vector, labels ``sign(A x*)``
    with a fraction ``flip_rate`` flipped."""
    _check_dims(m=m, n=n)
    if not 0 <= sparsity <= 1 or not 0 <= flip_rate <= 1:
        raise ConfigError("sparsity and flip_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    k = int(round(sparsity * n))
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x[support] = rng.choice([-1.0, 1.0], size=k)
    y = np.sign(A @ x)
    y[y == 0] = 1.0
    flips = rng.random(m) < flip_rate
    y[flips] *= -1.0
    meta = {"source": "gen_logistic", "seed": seed, "sparsity": sparsity, "flip_rate": flip_rate}
    return Dataset(A, y, meta), GroundTruth(x)


def ar1_design(m: int, n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian rows whose columns have correlation ``rho^|i-j|``."""
    Z = rng.standard_normal((m, n))
    A = np.empty((m, n))
    A[:, 0] = Z[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, n):
        A[:, j] = rho * A[:, j - 1] + c * Z[:, j]
    return A


def gen_group_lasso(
    m: int,
    n: int,
    n_g: int,
    seed: int,
    active_fraction: float = 0.1,
    within_fraction: float = 0.1,
    rho: float = 0.5,
    noise: float = 0.01,
):
    """Sparse-group-lasso instance ``y = A x* + noise * eps``.

    ``n`` is split by a seeded permutation into ``n_g`` equal groups; a
    fraction ``active_fraction`` of them is active and each active group
    has ``ceil(group_size * within_fraction)`` nonzeros of random sign and
    magnitude uniform in ``[0.5, 10]``.
    """
    _check_dims(m=m, n=n, n_g=n_g)
    if n % n_g:
        raise ConfigError(f"n={n} is not divisible by n_g={n_g}")
    if not 0 < active_fraction <= 1 or not 0 < within_fraction <= 1:
        raise ConfigError("active_fraction and within_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    A = ar1_design(m, n, rho, rng)
    size = n // n_g
    perm = rng.permutation(n)
    groups = [np.sort(perm[j * size:(j + 1) * size]) for j in range(n_g)]
    n_active = max(1, int(round(active_fraction * n_g)))
    active = np.sort(rng.choice(n_g, size=n_active, replace=False))
    per_group = math.ceil(size * within_fraction)
    x = np.zeros(n)
    for j in active:
        idx = rng.choice(groups[j], size=per_group, replace=False)
        x[idx] = rng.choice([-1.0, 1.0], size=per_group) * rng.uniform(0.5, 10.0, size=per_group)
    y = A @ x + noise * rng.standard_normal(m)
    meta = {"source": "gen_group_lasso", "seed": seed, "n_g": n_g, "rho": rho, "noise": noise}
    return Dataset(A, y, meta), GroundTruth(x, [int(j) for j in active], groups)


def convolution_matrix(n: int, taps=DECONV_TAPS) -> sparse.csr_matrix:
    """Lower-banded Toeplitz ``A[i, j] = taps[i - j]`` for ``0 <= i - j < len(taps)``."""
    taps = np.asarray(taps, dtype=float)
    offsets = [-k for k in range(taps.size) if k < n]
    return sparse.diags([np.full(n + o, taps[-o]) for o in offsets], offsets, shape=(n, n), format="csr")


def gen_deconvolution(n: int, seed: int, n_spikes: int | None = None, noise: float = 0.01, taps=DECONV_TAPS):
    """Sparse spike train through a 4-tap smoothing filter plus Gaussian noise.

    ``n_spikes`` defaults to ``ceil(n / 64)``; amplitudes are uniform in
    ``[-3, 3]``.
    """
    _check_dims(n=n)
    if n < 16:
        raise ConfigError("deconvolution needs n >= 16")
    rng = np.random.default_rng(seed)
    A = convolution_matrix(n, taps)
    k = math.ceil(n / 64) if n_spikes is None else int(n_spikes)
    x = np.zeros(n)
    loc = rng.choice(n, size=k, replace=False)
    x[loc] = rng.uniform(-3.0, 3.0, size=k)
    y = A @ x + noise * rng.standard_normal(n)
    meta = {"source": "gen_deconvolution", "seed": seed, "noise": noise, "taps": [float(t) for t in taps]}
    return Dataset(A, y, meta), GroundTruth(x)
