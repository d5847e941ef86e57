"""Exact Gaussian-process surrogate with a Matern-5/2 ARD kernel and constant mean.

Inputs live in the unit cube.  Hyperparameters are fitted on standardized values
and stored back in raw units, so a ``GpPosterior`` works directly on raw values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

SQRT5 = math.sqrt(5.0)
JITTER = 1e-6
LENGTHSCALE_BOUNDS = (0.005, 10.0)
# standardized units: values have unit variance after the transform
SIGNAL_VAR_BOUNDS = (1e-2, 20.0)
NOISE_VAR_BOUNDS = (1e-8, 1.0)
MEAN_BOUNDS = (-5.0, 5.0)
# weak log-normal priors (location, scale) in log space
SIGNAL_VAR_PRIOR = (0.0, 2.0)
NOISE_VAR_PRIOR = (math.log(1e-3), 4.0)
LENGTHSCALE_PRIOR_SCALE = math.sqrt(3.0)


def lengthscale_prior_loc(d: int) -> float:
    # dimension-scaled location: longer lengthscales a priori in higher dimension
    return math.sqrt(2.0) + 0.5 * math.log(d)


@dataclass
class ObservationSet:
    points: np.ndarray  # (N, d) in [0, 1]^d
    values: np.ndarray  # (N,) raw objective values
    bounds: np.ndarray | None = None  # (d, 2) original box
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.points.size == 0:
            self.points = self.points.reshape(0, self.points.shape[-1] if self.points.ndim == 2 else 0)
        if len(self.points) != len(self.values):
            raise ValueError("points and values differ in length")
        if np.any(self.points < 0.0) or np.any(self.points > 1.0):
            raise ValueError("points must lie in the unit cube")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if not self.provenance:
            self.provenance = ["target"] * len(self.values)

    @classmethod
    def empty(cls, d: int, bounds=None) -> "ObservationSet":
        return cls(np.zeros((0, d)), np.zeros(0), bounds)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def append(self, points, values, provenance: str | list = "target") -> "ObservationSet":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.asarray(values, dtype=float).reshape(-1)
        prov = provenance if isinstance(provenance, list) else [provenance] * len(values)
        return ObservationSet(np.vstack([self.points, points]), np.concatenate([self.values, values]),
                              self.bounds, self.provenance + prov)

    def subset(self, idx) -> "ObservationSet":
        idx = np.asarray(idx, dtype=int)
        return ObservationSet(self.points[idx], self.values[idx], self.bounds,
                              [self.provenance[i] for i in idx])

    def to_raw(self, points=None) -> np.ndarray:
        p = self.points if points is None else np.asarray(points, dtype=float)
        if self.bounds is None:
            return p.copy()
        b = np.asarray(self.bounds, dtype=float)
        return b[:, 0] + p * (b[:, 1] - b[:, 0])

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "bounds": None if self.bounds is None else np.asarray(self.bounds).tolist(),
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        pts = np.asarray(d["points"], dtype=float)
        b = d.get("bounds")
        if pts.size == 0 and b is not None:
            pts = pts.reshape(0, len(b))
        return cls(pts, np.asarray(d["values"], dtype=float), None if b is None else np.asarray(b, dtype=float),
                   list(d.get("provenance") or []))


@dataclass
class GpHyperparams:
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    mean_const: float

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        if np.any(self.lengthscales <= 0) or not self.signal_var > 0 or self.noise_var < 0:
            raise ValueError("invalid GP hyperparameters")

    def to_dict(self) -> dict:
        return {"lengthscales": self.lengthscales.tolist(), "signal_var": float(self.signal_var),
                "noise_var": float(self.noise_var), "mean_const": float(self.mean_const)}

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyperparams":
        return cls(np.asarray(d["lengthscales"], dtype=float), float(d["signal_var"]), float(d["noise_var"]),
                   float(d["mean_const"]))


def scaled_sqdist(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = a / lengthscales
    b = b / lengthscales
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def matern52(a, b, lengthscales, signal_var) -> np.ndarray:
    """k(a, b) = s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r) with r the scaled distance."""
    d2 = scaled_sqdist(np.atleast_2d(a), np.atleast_2d(b), np.asarray(lengthscales, dtype=float))
    r = np.sqrt(d2)
    return signal_var * (1.0 + SQRT5 * r + (5.0 / 3.0) * d2) * np.exp(-SQRT5 * r)


def safe_cholesky(k: np.ndarray, scale: float, max_tries: int = 6) -> tuple[np.ndarray, float]:
    """Cholesky factor, adding diagonal jitter (starting at JITTER * scale) only if needed."""
    try:
        return np.linalg.cholesky(k), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER * scale
    eye = np.eye(len(k))
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(k + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("covariance not positive definite even with jitter")


class GpPosterior:
    """GP conditioned on an ObservationSet (raw-unit hyperparameters)."""

    def __init__(self, hyper: GpHyperparams, points: np.ndarray, values: np.ndarray):
        self.hyper = hyper
        self.points = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        self.values = np.asarray(values, dtype=float).reshape(-1).copy()
        n = len(self.values)
        if n:
            k = matern52(self.points, self.points, hyper.lengthscales, hyper.signal_var)
            k[np.diag_indices(n)] += hyper.noise_var
            self.chol, self.jitter = safe_cholesky(k, hyper.signal_var)
            self.alpha = cho_solve((self.chol, True), self.values - hyper.mean_const)
        else:
            self.chol = np.zeros((0, 0))
            self.jitter = 0.0
            self.alpha = np.zeros(0)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def d(self) -> int:
        return len(self.hyper.lengthscales)

    def train_cov(self) -> np.ndarray:
        """The factorized training covariance, jitter included."""
        return self.chol @ self.chol.T

    def predict(self, x, full_cov: bool = False):
        """Posterior mean and variance (or full covariance) of the latent function."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = self.hyper
        if self.n == 0:
            mu = np.full(len(x), h.mean_const)
            if full_cov:
                return mu, matern52(x, x, h.lengthscales, h.signal_var)
            return mu, np.full(len(x), h.signal_var)
        ks = matern52(self.points, x, h.lengthscales, h.signal_var)
        mu = h.mean_const + ks.T @ self.alpha
        v = solve_triangular(self.chol, ks, lower=True, check_finite=False)
        if full_cov:
            cov = matern52(x, x, h.lengthscales, h.signal_var) - v.T @ v
            return mu, 0.5 * (cov + cov.T)
        var = h.signal_var - (v * v).sum(0)
        return mu, np.maximum(var, 0.0)

    def to_dict(self) -> dict:
        return {"hyper": self.hyper.to_dict(), "points": self.points.tolist(), "values": self.values.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GpPosterior":
        pts = np.asarray(d["points"], dtype=float)
        hyper = GpHyperparams.from_dict(d["hyper"])
        if pts.size == 0:
            pts = pts.reshape(0, len(hyper.lengthscales))
        return cls(hyper, pts, np.asarray(d["values"], dtype=float))

    @classmethod
    def from_json(cls, text: str) -> "GpPosterior":
        return cls.from_dict(json.loads(text))


def condition(obs: ObservationSet, hyper: GpHyperparams) -> GpPosterior:
    return GpPosterior(hyper, obs.points, obs.values)


def posterior(model: GpPosterior, x) -> tuple[float, float]:
    mu, var = model.predict(np.atleast_2d(x))
    return float(mu[0]), float(var[0])


def sample_joint(model: GpPosterior, candidates, rng: np.random.Generator, n_samples: int | None = None) -> np.ndarray:
    """Joint posterior draw(s) over the candidate set.

    Duplicate candidates are sampled once and share the drawn value.  Returns shape (M,)
    for a single draw or (M, n_samples).
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    uniq, inverse = np.unique(cand, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mu, cov = model.predict(uniq, full_cov=True)
    cov[np.diag_indices(len(uniq))] += JITTER * model.hyper.signal_var
    try:
        chol, _ = safe_cholesky(cov, model.hyper.signal_var)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        chol = v * np.sqrt(np.maximum(w, 0.0))
    k = 1 if n_samples is None else n_samples
    z = rng.standard_normal((len(uniq), k))
    draws = mu[:, None] + chol @ z
    draws = draws[inverse]
    return draws[:, 0] if n_samples is None else draws


# ---- fitting ---------------------------------------------------------------


def _unpack(theta: np.ndarray, d: int):
    return np.exp(theta[:d]), math.exp(theta[d]), math.exp(theta[d + 1]), theta[d + 2]


def neg_log_posterior(theta: np.ndarray, x: np.ndarray, y: np.ndarray, with_prior: bool = True):
    """Negative log marginal likelihood (+ weak priors) of standardized data and its gradient."""
    n, d = x.shape
    ls, s2, nv, m = _unpack(theta, d)
    d2 = scaled_sqdist(x, x, ls)
    r = np.sqrt(d2)
    e = np.exp(-SQRT5 * r)
    kf = s2 * (1.0 + SQRT5 * r + (5.0 / 3.0) * d2) * e
    k = kf.copy()
    k[np.diag_indices(n)] += nv
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    resid = y - m
    alpha = cho_solve((chol, True), resid)
    nll = 0.5 * resid @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * math.log(2.0 * math.pi)
    kinv = cho_solve((chol, True), np.eye(n))
    w = kinv - np.outer(alpha, alpha)
    grad = np.empty_like(theta)
    # lengthscales: dK/dlog l_j = s2 (5/3)(1 + sqrt5 r) exp(-sqrt5 r) (dx_j / l_j)^2
    p = w * (s2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e)
    xs = x / ls
    grad[:d] = p.sum(1) @ (xs * xs) - (xs * (p @ xs)).sum(0)
    grad[d] = 0.5 * (w * kf).sum()
    grad[d + 1] = 0.5 * nv * np.trace(w)
    grad[d + 2] = -alpha.sum()
    if with_prior:
        loc = lengthscale_prior_loc(d)
        z = (theta[:d] - loc) / LENGTHSCALE_PRIOR_SCALE
        nll += 0.5 * (z * z).sum()
        grad[:d] += z / LENGTHSCALE_PRIOR_SCALE
        for idx, (mu0, sd0) in ((d, SIGNAL_VAR_PRIOR), (d + 1, NOISE_VAR_PRIOR)):
            zz = (theta[idx] - mu0) / sd0
            nll += 0.5 * zz * zz
            grad[idx] += zz / sd0
    return float(nll), grad


def _theta_bounds(d: int) -> list[tuple[float, float]]:
    lb = [(math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1]))] * d
    return lb + [
        (math.log(SIGNAL_VAR_BOUNDS[0]), math.log(SIGNAL_VAR_BOUNDS[1])),
        (math.log(NOISE_VAR_BOUNDS[0]), math.log(NOISE_VAR_BOUNDS[1])),
        MEAN_BOUNDS,
    ]


def default_hyperparams(d: int, y_mean: float = 0.0, y_scale: float = 1.0) -> GpHyperparams:
    ls = min(LENGTHSCALE_BOUNDS[1], 0.5 * math.sqrt(d))
    return GpHyperparams(np.full(d, ls), SIGNAL_VAR_BOUNDS[0] * y_scale**2, NOISE_VAR_BOUNDS[0] * y_scale**2, y_mean)


def fit(obs: ObservationSet, n_restarts: int = 8, seed: int = 0, init: GpHyperparams | None = None,
        max_iter: int = 200) -> GpHyperparams:
    """MAP fit of the kernel hyperparameters by multi-start L-BFGS-B.

    The first start is ``init`` (if given) or a default; the others are drawn from
    ``seed``.  Degenerate data (constant values) returns defaults with the noise at its floor.
    """
    if obs.n < 2:
        raise ValueError("fit needs at least two observations")
    x, y_raw = obs.points, obs.values
    d = obs.d
    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    if not y_std > 1e-12 * max(1.0, abs(y_mean)):
        return default_hyperparams(d, y_mean, 1.0)
    y = (y_raw - y_mean) / y_std
    bounds = _theta_bounds(d)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        t0 = np.concatenate([np.log(init.lengthscales), [math.log(init.signal_var / y_std**2),
                             math.log(max(init.noise_var / y_std**2, NOISE_VAR_BOUNDS[0])),
                             (init.mean_const - y_mean) / y_std]])
    else:
        t0 = np.concatenate([np.full(d, math.log(min(LENGTHSCALE_BOUNDS[1], 0.5 * math.sqrt(d)))),
                             [0.0, math.log(1e-4), 0.0]])
    starts.append(np.clip(t0, lo, hi))
    for _ in range(max(n_restarts, 1) - 1):
        t = np.concatenate([
            rng.uniform(math.log(0.05), math.log(LENGTHSCALE_BOUNDS[1]), d),
            [rng.uniform(math.log(0.1), math.log(10.0)), rng.uniform(math.log(1e-6), math.log(1e-1)),
             rng.uniform(-1.0, 1.0)],
        ])
        starts.append(np.clip(t, lo, hi))
    best_val, best_theta = np.inf, starts[0]
    for t in starts:
        res = minimize(neg_log_posterior, t, args=(x, y), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_iter})
        th = np.clip(res.x, lo, hi)
        val = res.fun if np.isfinite(res.fun) else np.inf
        if val < best_val:
            best_val, best_theta = val, th
    ls, s2, nv, m = _unpack(best_theta, d)
    return GpHyperparams(ls, s2 * y_std**2, nv * y_std**2, y_mean + m * y_std)


def fit_posterior(obs: ObservationSet, **kw) -> GpPosterior:
    return condition(obs, fit(obs, **kw))
