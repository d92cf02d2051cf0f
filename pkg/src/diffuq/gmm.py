"""Exact Gaussian-mixture mathematics.

Everything downstream (samplers, diagnostics, the benchmark harness) is
validated against the closed forms in this module: mixture densities and
moments, diffusion-time marginals, scores with Tweedie denoising, and
conjugate posteriors for linear-Gaussian measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, ndtr

__all__ = [
    "GaussianMixture",
    "ToyPriorSpec",
    "ScorePerturbation",
    "build_toy_prior",
    "mixture_logpdf",
    "sample_mixture",
    "noisy_marginal",
    "score_and_denoise",
    "exact_posterior",
    "mixture_moments",
    "mixture_cdf_1d",
]

_SYM_TOL = 1e-12
_WEIGHT_TOL = 1e-12
# posterior weights below this clamp to zero before renormalization
_WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class GaussianMixture:
    """A finite Gaussian mixture with full covariances.

    Doubles as the prior, the diffusion-time noisy marginal, and the
    measurement posterior throughout the benchmark.
    """

    weights: np.ndarray
    means: np.ndarray  # (C, d)
    covs: np.ndarray  # (C, d, d)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        c = np.asarray(self.covs, dtype=float)
        if m.ndim != 2:
            raise ValueError("means must be a (C, d) array")
        if c.shape != (m.shape[0], m.shape[1], m.shape[1]):
            raise ValueError(
                f"covs shape {c.shape} inconsistent with means shape {m.shape}"
            )
        if w.shape != (m.shape[0],):
            raise ValueError("weights length must match component count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        for k, cov in enumerate(c):
            if np.max(np.abs(cov - cov.T)) > _SYM_TOL:
                raise ValueError(f"covariance {k} is not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance {k} is not positive definite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class ToyPriorSpec:
    """Parameters of the bimodal block-structured toy prior."""

    d: int = 16
    structured_dim: int = 8
    rho_ar: float = 0.8
    sigma_w_sq: float = 5.0
    mu_sep: float = 2.0
    bimodal_coord: int = 7

    def __post_init__(self):
        if not (0 <= self.rho_ar < 1):
            raise ValueError("rho_ar must satisfy 0 <= rho_ar < 1")
        if self.sigma_w_sq <= 0:
            raise ValueError("sigma_w_sq must be positive")
        if not (0 <= self.bimodal_coord < self.structured_dim <= self.d):
            raise ValueError(
                "require 0 <= bimodal_coord < structured_dim <= d"
            )


@dataclass(frozen=True)
class ScorePerturbation:
    """Multiplicative/additive knob to emulate an inexact score."""

    mult: float = 1.0
    add: np.ndarray | float = 0.0


def build_toy_prior(spec: ToyPriorSpec) -> GaussianMixture:
    """Equally-weighted two-component mixture with an AR-correlated
    structured block and an isotropic high-variance weak block.

    The two component means differ only at ``spec.bimodal_coord``
    (+/- ``spec.mu_sep``); both share the block-diagonal covariance.
    """
    d, ds = spec.d, spec.structured_dim
    idx = np.arange(ds)
    cov = np.zeros((d, d))
    cov[:ds, :ds] = spec.rho_ar ** np.abs(idx[:, None] - idx[None, :])
    cov[ds:, ds:] = spec.sigma_w_sq * np.eye(d - ds)
    mu = np.zeros(d)
    mu[spec.bimodal_coord] = spec.mu_sep
    return GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.stack([mu, -mu]),
        covs=np.stack([cov, cov]),
    )


def _component_logpdfs(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """log N(x; mu_c, Sigma_c) for each component; x is (d,) or (n, d).

    Returns (C,) or (n, C).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = gmm.dim
    out = np.empty((X.shape[0], gmm.n_components))
    for c in range(gmm.n_components):
        chol = np.linalg.cholesky(gmm.covs[c])
        diff = X - gmm.means[c]
        sol = np.linalg.solve(chol, diff.T)  # (d, n)
        maha = np.sum(sol**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, c] = -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))
    return out[0] if single else out


def mixture_logpdf(gmm: GaussianMixture, x: np.ndarray) -> float | np.ndarray:
    """log-density of the mixture at ``x``, via log-sum-exp.

    ``x`` may be a single (d,) point or an (n, d) batch.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    lp = _component_logpdfs(gmm, x)
    return logsumexp(lp + np.log(gmm.weights), axis=-1)


def sample_mixture(gmm: GaussianMixture, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. samples; deterministic given ``seed``.

    ``seed`` may be an integer or an ``np.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comp = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    out = np.empty((n, gmm.dim))
    noise = rng.standard_normal((n, gmm.dim))
    for c in range(gmm.n_components):
        mask = comp == c
        if not np.any(mask):
            continue
        chol = np.linalg.cholesky(gmm.covs[c])
        out[mask] = gmm.means[c] + noise[mask] @ chol.T
    return out


def noisy_marginal(gmm: GaussianMixture, sigma_t: float) -> GaussianMixture:
    """Marginal after variance-exploding noising: Sigma_c -> Sigma_c + sigma_t^2 I."""
    if sigma_t < 0:
        raise ValueError("sigma_t must be >= 0")
    if sigma_t == 0:
        return gmm
    eye = sigma_t**2 * np.eye(gmm.dim)
    return GaussianMixture(gmm.weights, gmm.means, gmm.covs + eye)


def _responsibilities(noisy: GaussianMixture, x: np.ndarray) -> np.ndarray:
    lp = _component_logpdfs(noisy, x) + np.log(noisy.weights)
    lp = lp - logsumexp(lp, axis=-1, keepdims=True)
    return np.exp(lp)


def score_and_denoise(
    gmm: GaussianMixture,
    x: np.ndarray,
    sigma_t: float,
    perturb: ScorePerturbation | None = None,
):
    """Score of the noisy marginal at ``x``, the Tweedie denoiser, and the
    exact denoiser Jacobian.

    Returns ``(score, x_hat0, jacobian)`` where
    ``x_hat0 = x + sigma_t^2 * score`` and
    ``jacobian = I + sigma_t^2 * Hessian(log p_t)(x)``.
    """
    if sigma_t <= 0:
        raise ValueError("sigma_t must be > 0")
    x = np.asarray(x, dtype=float)
    d = gmm.dim
    noisy = noisy_marginal(gmm, sigma_t)
    resp = _responsibilities(noisy, x)

    score = np.zeros(d)
    hess = np.zeros((d, d))
    grads = []
    for c in range(gmm.n_components):
        cf = cho_factor(noisy.covs[c], lower=True)
        g = -cho_solve(cf, x - noisy.means[c])
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite score contribution from component {c}")
        grads.append(g)
        score += resp[c] * g
        prec = cho_solve(cf, np.eye(d))
        hess += resp[c] * (-prec + np.outer(g, g))
    hess -= np.outer(score, score)

    if perturb is not None:
        score = perturb.mult * score + perturb.add

    x_hat0 = x + sigma_t**2 * score
    jacobian = np.eye(d) + sigma_t**2 * hess
    return score, x_hat0, jacobian


def denoise_batch(gmm: GaussianMixture, X: np.ndarray, sigma_t: float):
    """Vectorized (score, x_hat0) over an (n, d) batch. No Jacobians."""
    if sigma_t <= 0:
        raise ValueError("sigma_t must be > 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    noisy = noisy_marginal(gmm, sigma_t)
    resp = _responsibilities(noisy, X)  # (n, C)
    score = np.zeros_like(X)
    for c in range(gmm.n_components):
        cf = cho_factor(noisy.covs[c], lower=True)
        g = -cho_solve(cf, (X - noisy.means[c]).T).T
        score += resp[:, c : c + 1] * g
    return score, X + sigma_t**2 * score


def exact_posterior(gmm: GaussianMixture, A, y: np.ndarray, sigma_y: float) -> GaussianMixture:
    """Posterior mixture for y = A x + N(0, sigma_y^2 I) with prior ``gmm``.

    Component-wise conjugate update; weights reweighted by the marginal
    evidence N(y; A mu_c, A Sigma_c A^T + sigma_y^2 I) and renormalized.
    ``A`` is a LinearOperatorSVD (anything exposing ``.matrix()`` and ``.m``).
    """
    if sigma_y <= 0:
        raise ValueError("sigma_y must be > 0")
    y = np.asarray(y, dtype=float)
    Amat = A.matrix()
    m, d = Amat.shape
    if y.shape != (m,):
        raise ValueError(f"y has dimension {y.shape}, operator output is {m}")
    AtA = Amat.T @ Amat
    Aty = Amat.T @ y

    C = gmm.n_components
    post_means = np.empty((C, d))
    post_covs = np.empty((C, d, d))
    log_w = np.empty(C)
    for c in range(C):
        try:
            prior_cf = cho_factor(gmm.covs[c], lower=True)
        except np.linalg.LinAlgError:
            raise ValueError(f"singular prior covariance in component {c}")
        prec = cho_solve(prior_cf, np.eye(d)) + AtA / sigma_y**2
        cov_cf = cho_factor(prec, lower=True)
        cov = cho_solve(cov_cf, np.eye(d))
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (cho_solve(prior_cf, gmm.means[c]) + Aty / sigma_y**2)
        post_means[c] = mean
        post_covs[c] = cov
        ev_cov = Amat @ gmm.covs[c] @ Amat.T + sigma_y**2 * np.eye(m)
        ev_cf = cho_factor(ev_cov, lower=True)
        r = y - Amat @ gmm.means[c]
        logdet = 2.0 * np.sum(np.log(np.diag(ev_cf[0])))
        log_w[c] = (
            np.log(gmm.weights[c])
            - 0.5 * (r @ cho_solve(ev_cf, r) + logdet + m * np.log(2 * np.pi))
        )

    w = np.exp(log_w - logsumexp(log_w))
    w[w < _WEIGHT_FLOOR] = 0.0
    w = w / w.sum()
    return GaussianMixture(w, post_means, post_covs)


def mixture_moments(gmm: GaussianMixture):
    """Mean and covariance of the mixture (law of total variance)."""
    mean = gmm.weights @ gmm.means
    cov = np.zeros((gmm.dim, gmm.dim))
    for c in range(gmm.n_components):
        cov += gmm.weights[c] * (gmm.covs[c] + np.outer(gmm.means[c], gmm.means[c]))
    cov -= np.outer(mean, mean)
    return mean, cov


def mixture_cdf_1d(gmm: GaussianMixture, coord: int, a: float, b: float) -> float:
    """P(a <= x_coord <= b) under the coordinate marginal of the mixture."""
    if not (0 <= coord < gmm.dim):
        raise ValueError(f"coord {coord} out of range for dimension {gmm.dim}")
    if a > b:
        raise ValueError("require a <= b")
    mu = gmm.means[:, coord]
    sd = np.sqrt(gmm.covs[:, coord, coord])
    hi = ndtr((b - mu) / sd) if np.isfinite(b) else np.ones_like(mu)
    lo = ndtr((a - mu) / sd) if np.isfinite(a) else np.zeros_like(mu)
    return float(gmm.weights @ (hi - lo))
