"""Experiment protocols: synthetic generation, recovery error, baselines.

Synthetic problems follow the planted model ``Y = (W_true + a * xi) X``
with standard-normal features, a random manifold point as the truth and a
dense standard-normal noise tensor ``xi`` that is applied once at
generation time and discarded.  Classification uses the bundled 8x8
digits set (10 classes, 1797 samples) with one-hot responses and argmax
prediction, against an exact polynomial-kernel ridge baseline.

All randomness comes from seeded numpy ``PCG64`` generators
(``standard_normal`` variates), recorded as ``numpy-pcg64`` in manifests.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy.linalg

from horrr.errors import DegenerateDataError
from horrr.manifold import TuckerPoint, random_point
from horrr.objective import HorrrProblem
from horrr.tensors import check_dense_budget, frob, kr_power, unfold

__all__ = [
    "SyntheticSpec",
    "ClassificationDataset",
    "generate_synthetic",
    "rre",
    "kernel_baseline",
    "KernelPredictor",
    "classify_eval",
    "load_digits",
    "digits_problem",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "numpy-pcg64+standard_normal"


@dataclass
class SyntheticSpec:
    """Parameters of one planted problem instance."""

    k: int
    m: int
    n: int
    d: int
    r: int
    noise: float = 0.0
    seed: int = 0
    lam: float = 0.0

    def __post_init__(self):
        if self.r > self.m:
            raise ValueError("rank must not exceed the feature dimension")
        if self.n < 1:
            raise ValueError("need at least one sample")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")


def _apply_dense_blocked(a: np.ndarray, x: np.ndarray, block: int = 512) -> np.ndarray:
    """apply_dense with column blocking, so X^{kr d} is never fully materialized."""
    d = a.ndim - 1
    a0 = unfold(a, 0)
    n = x.shape[1]
    out = np.empty((a.shape[0], n))
    for start in range(0, n, block):
        cols = x[:, start : start + block]
        out[:, start : start + block] = a0 @ kr_power(cols, d)
    return out


def generate_synthetic(spec: SyntheticSpec, cap_bytes=None) -> tuple[HorrrProblem, TuckerPoint]:
    """Planted problem and its ground truth, deterministic per seed.

    The noise tensor is dense (``k * m^d`` scalars); specs above the
    allocation cap are rejected.  With ``noise == 0`` the responses equal
    ``W_true X`` exactly.
    """
    kwargs = {} if cap_bytes is None else {"cap_bytes": cap_bytes}
    ss = np.random.SeedSequence(spec.seed)
    s_x, s_w, s_noise = ss.spawn(3)
    x = np.random.default_rng(s_x).standard_normal((spec.m, spec.n))
    w_true = random_point(spec.k, spec.m, spec.r, spec.d, seed=s_w)
    y = w_true.apply(x)
    if spec.noise > 0:
        check_dense_budget(spec.k, spec.m, spec.d, **kwargs)
        xi = np.random.default_rng(s_noise).standard_normal(
            (spec.k,) + (spec.m,) * spec.d
        )
        y = y + spec.noise * _apply_dense_blocked(xi, x)
    prob = HorrrProblem(x, y, lam=spec.lam, degree=spec.d, rank=spec.r)
    return prob, w_true


def _predict(w, x: np.ndarray) -> np.ndarray:
    if isinstance(w, TuckerPoint):
        return w.apply(x)
    if callable(w):
        return np.asarray(w(x))
    from horrr.tensors import apply_dense

    return apply_dense(np.asarray(w, dtype=float), x)


def rre(w, w_true, x: np.ndarray) -> float:
    """Relative recovery error ``||W X - W_true X||_F / ||W_true X||_F``."""
    ref = _predict(w_true, x)
    denom = frob(ref)
    if denom == 0.0:
        raise DegenerateDataError("reference predictions vanish; recovery error undefined")
    return frob(_predict(w, x) - ref) / denom


class KernelPredictor:
    """Exact polynomial-kernel ridge predictor ``f(x) = ((x^T X)^d) alpha``.

    Solves the ``n x n`` system once; at full rank this is the unconstrained
    optimum that manifold-constrained solutions approach.
    """

    def __init__(self, x: np.ndarray, alpha: np.ndarray, degree: int, lam: float):
        self.x = x
        self.alpha = alpha  # n x k
        self.degree = degree
        self.lam = lam

    def __call__(self, xt: np.ndarray) -> np.ndarray:
        k_cross = (np.atleast_2d(xt).T @ self.x) ** self.degree  # nt x n
        return (k_cross @ self.alpha).T

    def coefficient_norm_sq(self) -> float:
        """``||W*||_F^2 = tr(alpha^T K alpha)`` without forming ``W*``."""
        gram = (self.x.T @ self.x) ** self.degree
        return float(np.sum(self.alpha * (gram @ self.alpha)))

    def training_cost(self, y: np.ndarray) -> float:
        resid = self(self.x) - y
        return 0.5 * (frob(resid) ** 2 + self.lam * self.coefficient_norm_sq())


def kernel_baseline(x: np.ndarray, y: np.ndarray, d: int, lam: float) -> KernelPredictor:
    """Fit the polynomial-kernel ridge baseline via the ``n x n`` Gram system."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    gram = (x.T @ x) ** d
    gram[np.diag_indices_from(gram)] += lam
    try:
        factor = scipy.linalg.cho_factor(gram)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DegenerateDataError(f"kernel system singular at lambda={lam}") from exc
    # LAPACK may tolerate exactly singular input: check the pivot sizes
    # (pivot ratio ~ sqrt of the condition number, so 1e-7 flags cond > ~1e14)
    pivots = np.abs(np.diag(factor[0]))
    if pivots.min() <= 1e-7 * max(pivots.max(), 1e-300):
        raise DegenerateDataError(f"kernel system singular at lambda={lam}")
    alpha = scipy.linalg.cho_solve(factor, y.T)
    return KernelPredictor(x, alpha, d, lam)


@dataclass
class ClassificationDataset:
    """Features, integer labels, one-hot responses and a train/test split."""

    x: np.ndarray
    labels: np.ndarray
    y: np.ndarray = field(init=False)
    train_idx: np.ndarray = None
    test_idx: np.ndarray = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        n = self.x.shape[1]
        if self.labels.shape != (n,):
            raise ValueError("one label per sample required")
        k = int(self.labels.max()) + 1
        self.y = np.zeros((k, n))
        self.y[self.labels, np.arange(n)] = 1.0
        if self.train_idx is None:
            self.train_idx = np.arange(n)
            self.test_idx = np.arange(0)
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.test_idx = np.asarray(self.test_idx, dtype=int)
        both = np.sort(np.concatenate([self.train_idx, self.test_idx]))
        if not np.array_equal(both, np.arange(n)):
            raise ValueError("train/test split must be disjoint and exhaustive")

    @property
    def n_classes(self) -> int:
        return self.y.shape[0]

    @property
    def x_train(self):
        return self.x[:, self.train_idx]

    @property
    def y_train(self):
        return self.y[:, self.train_idx]

    @property
    def x_test(self):
        return self.x[:, self.test_idx]


def load_digits(test_fraction: float = 0.2, seed: int = 0) -> ClassificationDataset:
    """The bundled 8x8 digits set (1797 samples, 10 classes), pixel range [0, 1].

    The split is a seeded shuffle; identical seeds give identical splits.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test fraction must lie in [0, 1)")
    path = resources.files("horrr.data").joinpath("digits_8x8.csv.gz")
    with path.open("rb") as raw, gzip.open(raw, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    x = table[:, :-1].T / 16.0
    labels = table[:, -1].astype(int)
    n = x.shape[1]
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    return ClassificationDataset(
        x, labels, train_idx=np.sort(perm[n_test:]), test_idx=np.sort(perm[:n_test])
    )


def digits_problem(data: ClassificationDataset, d: int, lam: float, r: int) -> HorrrProblem:
    """Regularized least-squares classification problem on the training split."""
    return HorrrProblem(data.x_train, data.y_train, lam=lam, degree=d, rank=r)


def classify_eval(w, data: ClassificationDataset) -> float:
    """Test error rate of argmax predictions; ties break to the lowest class index."""
    if len(data.test_idx) == 0:
        raise ValueError("empty test set")
    scores = _predict(w, data.x_test)
    pred = np.argmax(scores, axis=0)
    return float(np.mean(pred != data.labels[data.test_idx]))
