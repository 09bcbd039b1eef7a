"""Exact Gaussian-process regression with squared-exponential kernels.

Implements the classic closed-form machinery: SE / SE-ARD kernels, the log
marginal likelihood and its analytic gradient in log-hyperparameter space,
multi-start quasi-Newton hyperparameter fitting, and Cholesky-backed posterior
prediction.  Inputs and targets are standardized internally so the zero-mean
prior is the training-target mean in original units.

Shapes follow the usual convention: ``X`` is ``(n, d)``, targets are ``(n,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import IllConditionedKernelError, InsufficientDataError

SE = "se"
SE_ARD = "se_ard"
KERNEL_FAMILIES = (SE, SE_ARD)

_LOG_2PI = math.log(2.0 * math.pi)

# Jitter escalation policy: first try the raw matrix, then start at
# JITTER_START * mean(diag K) and multiply by 10 until JITTER_MAX * outputscale.
JITTER_START = 1e-8
JITTER_MAX = 1e-4

NOISE_FLOOR = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus input dimensionality.

    ``se`` uses a single shared lengthscale, ``se_ard`` one per input
    dimension (automatic relevance determination).
    """

    family: str
    input_dim: int

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")

    @property
    def num_lengthscales(self) -> int:
        return 1 if self.family == SE else self.input_dim


@dataclass
class Hyperparameters:
    """Kernel amplitude, lengthscale(s) and observation-noise variance."""

    outputscale: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        self.outputscale = float(self.outputscale)
        self.noise_variance = float(self.noise_variance)
        if not np.isfinite(self.outputscale) or self.outputscale <= 0:
            raise ValueError(f"outputscale must be positive, got {self.outputscale}")
        if not np.all(np.isfinite(self.lengthscales)) or np.any(self.lengthscales <= 0):
            raise ValueError("every lengthscale must be positive and finite")
        if not np.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise ValueError(f"noise_variance must be non-negative, got {self.noise_variance}")

    def validate_for(self, spec: KernelSpec) -> None:
        if self.lengthscales.shape != (spec.num_lengthscales,):
            raise ValueError(
                f"kernel {spec.family!r} with input_dim {spec.input_dim} needs "
                f"{spec.num_lengthscales} lengthscale(s), got {self.lengthscales.shape[0]}"
            )

    def to_log_vector(self) -> np.ndarray:
        """Pack as [log outputscale, log lengthscales..., log noise_variance]."""
        return np.log(np.concatenate(([self.outputscale], self.lengthscales, [max(self.noise_variance, NOISE_FLOOR)])))

    @staticmethod
    def from_log_vector(vec: np.ndarray) -> "Hyperparameters":
        vec = np.asarray(vec, dtype=float)
        return Hyperparameters(
            outputscale=math.exp(vec[0]),
            lengthscales=np.exp(vec[1:-1]),
            noise_variance=math.exp(vec[-1]),
        )


@dataclass
class StandardizationParams:
    """Per-dimension affine maps taking raw data to zero mean, unit scale.

    Constant dimensions get scale 1 so standardization is always invertible.
    """

    input_means: np.ndarray
    input_scales: np.ndarray
    target_mean: float
    target_scale: float

    @staticmethod
    def from_data(inputs: np.ndarray, targets: np.ndarray) -> "StandardizationParams":
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        means = inputs.mean(axis=0)
        scales = inputs.std(axis=0)
        scales = np.where(scales > 1e-12, scales, 1.0)
        t_scale = float(targets.std())
        if t_scale <= 1e-12:
            t_scale = 1.0
        return StandardizationParams(means, scales, float(targets.mean()), t_scale)

    @staticmethod
    def identity(d: int) -> "StandardizationParams":
        return StandardizationParams(np.zeros(d), np.ones(d), 0.0, 1.0)

    def apply_inputs(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.input_means) / self.input_scales

    def apply_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_scale

    def invert_target_mean(self, m):
        return m * self.target_scale + self.target_mean

    def invert_target_variance(self, v):
        return v * self.target_scale**2


@dataclass
class Dataset:
    """Training inputs ``(n, d)`` paired with scalar targets ``(n,)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"inputs ({self.inputs.shape[0]} rows) and targets ({self.targets.shape[0]}) disagree"
            )
        if self.inputs.shape[0] < 1:
            raise InsufficientDataError("dataset needs at least one sample")
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.targets)):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


@dataclass
class FitConfig:
    """Controls the multi-start marginal-likelihood ascent."""

    restarts: int = 5
    max_iter: int = 200
    seed: int = 0
    lengthscale_init_range: tuple = (0.1, 10.0)
    init_outputscale: float = 1.0
    init_noise: float = 0.01
    noise_floor: float = NOISE_FLOOR
    warm_start: Hyperparameters | None = None


@dataclass
class Posterior:
    """Latent-function posterior at one query, in original target units."""

    mean: float
    variance: float


def _validate_matrix(spec: KernelSpec, A: np.ndarray, name: str) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != spec.input_dim:
        raise ValueError(f"{name} has {A.shape[1]} columns, kernel expects {spec.input_dim}")
    return A


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Sum_j ((a_j - b_j) / l_j)^2 for every row pair; exact zero at a == b."""
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    return np.einsum("nmd,nmd->nm", diff, diff)


def kernel_eval(spec: KernelSpec, hyper: Hyperparameters, a, b) -> float:
    """Evaluate k(a, b) for a single point pair."""
    hyper.validate_for(spec)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != (spec.input_dim,) or b.shape != (spec.input_dim,):
        raise ValueError(f"points must have dimension {spec.input_dim}")
    sq = float(np.sum(((a - b) / hyper.lengthscales) ** 2))
    return hyper.outputscale * math.exp(-0.5 * sq)


def gram_matrix(spec: KernelSpec, hyper: Hyperparameters, A, B) -> np.ndarray:
    """Kernel matrix with entry (i, j) = k(row_i(A), row_j(B))."""
    hyper.validate_for(spec)
    A = _validate_matrix(spec, A, "A")
    B = _validate_matrix(spec, B, "B")
    return hyper.outputscale * np.exp(-0.5 * _scaled_sqdist(A, B, hyper.lengthscales))


def _factorize(K: np.ndarray, noise_variance: float, outputscale: float):
    """Cholesky of K + noise*I with jitter escalation.

    Returns (L, jitter_used). Tries the raw matrix first, then jitter from
    JITTER_START * mean(diag K) escalating tenfold up to JITTER_MAX * outputscale.
    """
    n = K.shape[0]
    A = K + noise_variance * np.eye(n)
    jitters = [0.0]
    j = JITTER_START * float(np.mean(np.diag(K)))
    cap = JITTER_MAX * outputscale
    while j <= cap:
        jitters.append(j)
        j *= 10.0
    for jitter in jitters:
        try:
            L = cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
            return L, jitter
        except LinAlgError:
            continue
    raise IllConditionedKernelError(
        f"kernel matrix not factorizable even with jitter {jitters[-1]:.3e} (n={n})"
    )


class _KernelWorkspace:
    """Per-fit cache of squared coordinate differences.

    For a fixed input matrix the per-dimension squared distances never change,
    so the marginal likelihood and its gradient reduce to cheap elementwise
    work on top of one Cholesky per evaluation.
    """

    def __init__(self, spec: KernelSpec, X: np.ndarray):
        self.spec = spec
        self.X = X
        diff = X[:, None, :] - X[None, :, :]
        self.sq_per_dim = np.ascontiguousarray(np.moveaxis(diff * diff, -1, 0))  # (d, n, n)
        if spec.num_lengthscales == 1:
            self.sq_total = self.sq_per_dim.sum(axis=0)

    def gram(self, hyper: Hyperparameters) -> np.ndarray:
        if self.spec.num_lengthscales == 1:
            sq = self.sq_total / hyper.lengthscales[0] ** 2
        else:
            sq = np.einsum("d,dnm->nm", 1.0 / hyper.lengthscales**2, self.sq_per_dim)
        return hyper.outputscale * np.exp(-0.5 * sq)


def _mll_terms(K: np.ndarray, y: np.ndarray, hyper: Hyperparameters):
    """Factorize and return (logml, L, alpha, jitter)."""
    L, jitter = _factorize(K, hyper.noise_variance, hyper.outputscale)
    alpha = cho_solve((L, True), y, check_finite=False)
    logml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * y.size * _LOG_2PI
    return logml, L, alpha, jitter


def log_marginal_likelihood(dataset: Dataset, spec: KernelSpec, hyper: Hyperparameters) -> float:
    """Full Gaussian log-density log N(y | 0, K + noise*I), constant included."""
    hyper.validate_for(spec)
    if dataset.d != spec.input_dim:
        raise ValueError(f"dataset dimension {dataset.d} != kernel input_dim {spec.input_dim}")
    K = gram_matrix(spec, hyper, dataset.inputs, dataset.inputs)
    logml, _, _, _ = _mll_terms(K, dataset.targets, hyper)
    return logml


def _mll_and_grad(ws: _KernelWorkspace, y: np.ndarray, hyper: Hyperparameters):
    """Log marginal likelihood and gradient w.r.t. log-hyperparameters.

    Uses d logML / d theta = 0.5 tr((alpha alpha^T - A^{-1}) dA/dtheta) with
    A = K + noise*I, then the chain rule through theta = exp(log theta).
    """
    K = ws.gram(hyper)
    logml, L, alpha, _ = _mll_terms(K, y, hyper)
    n = y.size
    A_inv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - A_inv

    grad = np.empty(1 + hyper.lengthscales.size + 1)
    WK = W * K
    grad[0] = 0.5 * WK.sum()  # dA/d log outputscale = K
    if ws.spec.num_lengthscales == 1:
        grad[1] = 0.5 * float(np.sum(WK * ws.sq_total)) / hyper.lengthscales[0] ** 2
    else:
        grad[1:-1] = 0.5 * np.einsum("nm,dnm->d", WK, ws.sq_per_dim) / hyper.lengthscales**2
    grad[-1] = 0.5 * hyper.noise_variance * float(np.trace(W))
    return logml, grad


def mll_gradient(dataset: Dataset, spec: KernelSpec, hyper: Hyperparameters) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. log-hyperparameters.

    Ordering matches ``Hyperparameters.to_log_vector``: log outputscale,
    log lengthscale(s), log noise_variance.
    """
    hyper.validate_for(spec)
    if dataset.d != spec.input_dim:
        raise ValueError(f"dataset dimension {dataset.d} != kernel input_dim {spec.input_dim}")
    ws = _KernelWorkspace(spec, dataset.inputs)
    _, grad = _mll_and_grad(ws, dataset.targets, hyper)
    return grad


@dataclass
class FittedGP:
    """Conditioned GP: standardized data, hyperparameters, cached factorization."""

    dataset: Dataset  # standardized units
    kernel: KernelSpec
    hyper: Hyperparameters
    chol: np.ndarray
    alpha: np.ndarray
    standardization: StandardizationParams
    jitter_used: float
    log_marginal: float
    fit_info: dict = field(default_factory=dict)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at query rows, original units."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dataset.d:
            raise ValueError(f"query dimension {X.shape[1]} != model dimension {self.dataset.d}")
        if not np.all(np.isfinite(X)):
            raise ValueError("query contains non-finite entries")
        Xs = self.standardization.apply_inputs(X)
        K_star = gram_matrix(self.kernel, self.hyper, self.dataset.inputs, Xs)  # (n, m)
        mean_std = K_star.T @ self.alpha
        V = solve_triangular(self.chol, K_star, lower=True, check_finite=False)
        var_std = self.hyper.outputscale - np.einsum("nm,nm->m", V, V)
        var_std = np.maximum(var_std, 0.0)
        mean = self.standardization.invert_target_mean(mean_std)
        var = self.standardization.invert_target_variance(var_std)
        return mean, var


def condition(
    dataset: Dataset,
    spec: KernelSpec,
    hyper: Hyperparameters,
    standardization: StandardizationParams | None = None,
) -> FittedGP:
    """Condition a GP on data with fixed hyperparameters (no optimization).

    ``dataset`` is in original units; ``hyper`` is interpreted in standardized
    units.  When ``standardization`` is omitted it is computed from the data.
    """
    hyper.validate_for(spec)
    if dataset.d != spec.input_dim:
        raise ValueError(f"dataset dimension {dataset.d} != kernel input_dim {spec.input_dim}")
    if standardization is None:
        standardization = StandardizationParams.from_data(dataset.inputs, dataset.targets)
    Xs = standardization.apply_inputs(dataset.inputs)
    ys = standardization.apply_targets(dataset.targets)
    std_dataset = Dataset(Xs, ys)
    K = gram_matrix(spec, hyper, Xs, Xs)
    logml, L, alpha, jitter = _mll_terms(K, ys, hyper)
    return FittedGP(
        dataset=std_dataset,
        kernel=spec,
        hyper=hyper,
        chol=L,
        alpha=alpha,
        standardization=standardization,
        jitter_used=jitter,
        log_marginal=logml,
    )


def recondition(model: FittedGP, inputs, targets) -> FittedGP:
    """Re-condition on new data, reusing the model's hyperparameters and
    standardization (used by frozen-hyperparameter active-learning steps)."""
    raw = Dataset(inputs, targets)
    return condition(raw, model.kernel, model.hyper, standardization=model.standardization)


def _log_bounds(spec: KernelSpec, noise_floor: float):
    bounds = [(math.log(1e-6), math.log(1e6))]  # outputscale
    bounds += [(math.log(1e-3), math.log(1e6))] * spec.num_lengthscales
    bounds += [(math.log(noise_floor), math.log(1e2))]
    return bounds


def fit(dataset: Dataset, spec: KernelSpec, config: FitConfig = FitConfig()) -> FittedGP:
    """Standardize, run multi-start L-BFGS ascent on the log marginal
    likelihood, and return the best restart conditioned on the data."""
    if dataset.n < 2:
        raise InsufficientDataError(f"fit needs at least 2 samples, got {dataset.n}")
    if dataset.d != spec.input_dim:
        raise ValueError(f"dataset dimension {dataset.d} != kernel input_dim {spec.input_dim}")

    standardization = StandardizationParams.from_data(dataset.inputs, dataset.targets)
    Xs = standardization.apply_inputs(dataset.inputs)
    ys = standardization.apply_targets(dataset.targets)
    ws = _KernelWorkspace(spec, Xs)

    rng = np.random.default_rng(config.seed)
    lo, hi = config.lengthscale_init_range
    starts = []
    if config.warm_start is not None:
        config.warm_start.validate_for(spec)
        starts.append(config.warm_start)
    for _ in range(config.restarts):
        ls = np.exp(rng.uniform(math.log(lo), math.log(hi), size=spec.num_lengthscales))
        starts.append(
            Hyperparameters(
                outputscale=config.init_outputscale,
                lengthscales=ls,
                noise_variance=max(config.init_noise, config.noise_floor),
            )
        )

    def objective(logvec):
        hyper = Hyperparameters.from_log_vector(logvec)
        try:
            logml, grad = _mll_and_grad(ws, ys, hyper)
        except IllConditionedKernelError:
            return 1e15, np.zeros_like(logvec)
        return -logml, -grad

    bounds = _log_bounds(spec, config.noise_floor)
    results = []
    for start in starts:
        x0 = np.clip(start.to_log_vector(), [b[0] for b in bounds], [b[1] for b in bounds])
        init_ll = -objective(x0)[0]
        res = optimize.minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.max_iter, "ftol": 1e-11, "gtol": 1e-6},
        )
        final = Hyperparameters.from_log_vector(res.x)
        try:
            _mll_terms(ws.gram(final), ys, final)
        except IllConditionedKernelError:
            continue
        results.append({"hyper": final, "logml": -float(res.fun), "init_logml": float(init_ll), "nit": int(res.nit)})

    if not results:
        raise IllConditionedKernelError("every restart failed to factorize; data may be degenerate")

    best_idx = int(np.argmax([r["logml"] for r in results]))
    best = results[best_idx]
    model = condition(dataset, spec, best["hyper"], standardization=standardization)
    model.fit_info = {
        "chosen_start": best_idx,
        "starts": [
            {"init_logml": r["init_logml"], "final_logml": r["logml"], "iterations": r["nit"]} for r in results
        ],
        "seed": config.seed,
    }
    return model


def posterior_predict(model: FittedGP, query) -> Posterior:
    """Posterior mean and latent variance at one query point."""
    query = np.asarray(query, dtype=float).ravel()
    mean, var = model.predict(query[None, :])
    return Posterior(mean=float(mean[0]), variance=float(var[0]))


def posterior_predict_batch(model: FittedGP, queries) -> list[Posterior]:
    """Batch variant of ``posterior_predict``: one Posterior per query row."""
    means, variances = model.predict(queries)
    return [Posterior(mean=float(m), variance=float(v)) for m, v in zip(means, variances)]
