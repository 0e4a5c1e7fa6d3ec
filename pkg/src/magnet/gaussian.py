"""Ternary-Gaussian endpoint model: target-local frames, moment synthesis,
density evaluation and Bayesian target decoding.

The endpoint spread around a target decomposes into three components tied
to absolute pointing precision, target speed and target size. Means are
linear in (speed, size); the three variance components add:

    mu_d      = mu_a + mu_v * v + mu_w * w
    sigma_d^2 = sigma_a^2 + (sigma_v * v)^2 + (sigma_w * w)^2

per local axis d (tangent along the motion direction, normal across it,
plus a binormal in 3D).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, InputError, NumericError


@dataclass
class TargetState:
    """One moving target: geometry plus instantaneous motion."""

    id: int
    center: np.ndarray          # px (2D) or m (3D)
    size: float                 # radius, px or m
    speed: float                # px/s or m/s
    direction: np.ndarray       # unit vector; ignored when speed == 0
    dim: int = 2

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        if self.dim not in (2, 3):
            raise InputError(f"target dim must be 2 or 3, got {self.dim}")
        if self.center.shape != (self.dim,):
            raise DimensionError(
                f"target center shape {self.center.shape} does not match dim {self.dim}"
            )
        if self.size <= 0:
            raise InputError(f"target size must be positive, got {self.size}")
        if self.speed < 0:
            raise InputError(f"target speed must be nonnegative, got {self.speed}")
        if self.speed > 0:
            norm = np.linalg.norm(self.direction)
            if abs(norm - 1.0) > 1e-6:
                if norm == 0:
                    raise InputError("moving target has zero direction vector")
                self.direction = self.direction / norm


@dataclass
class LocalFrame:
    """Orthonormal target-local axes: rows of `axes` are tangent, normal
    (and binormal in 3D)."""

    origin: np.ndarray
    axes: np.ndarray            # (dim, dim), row i = axis i
    degenerate: bool = False    # True when speed was 0 and canonical axes used


@dataclass
class TernaryGaussianParams:
    """Per-axis coefficient triples (absolute, speed, size) for mean and
    spread. Spread coefficients are nonnegative by construction."""

    mu: np.ndarray              # (dim, 3): [mu_a, mu_v, mu_w] per axis
    sigma: np.ndarray           # (dim, 3): [sigma_a, sigma_v, sigma_w] per axis

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.shape[1] != 3:
            raise DimensionError(
                f"coefficient arrays must be (dim, 3); got mu {self.mu.shape}, "
                f"sigma {self.sigma.shape}"
            )
        if np.any(self.sigma < 0):
            raise InputError("spread coefficients must be nonnegative")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu.ravel(), self.sigma.ravel()])


@dataclass
class GaussianPred:
    """Endpoint-space Gaussian: mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray
    degenerate_frame: bool = False

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)


def local_frame(t: TargetState, depth_axis: np.ndarray | None = None) -> LocalFrame:
    """Build the target-local orthonormal frame from the motion direction.

    2D: normal is the tangent rotated +90 degrees. 3D: normal is the
    component of the scene depth axis orthogonal to the tangent; binormal
    completes the right-handed triad. A stationary target falls back to
    canonical axes with the degenerate flag set.
    """
    if t.speed == 0:
        return LocalFrame(origin=t.center.copy(), axes=np.eye(t.dim), degenerate=True)
    tangent = t.direction / np.linalg.norm(t.direction)
    if t.dim == 2:
        normal = np.array([-tangent[1], tangent[0]])
        axes = np.stack([tangent, normal])
    else:
        depth = np.asarray(depth_axis if depth_axis is not None else [0.0, 0.0, 1.0], dtype=np.float64)
        depth = depth / np.linalg.norm(depth)
        ortho = depth - (depth @ tangent) * tangent
        n = np.linalg.norm(ortho)
        if n < 1e-9:
            # tangent parallel to the depth axis: use the least-aligned canonical axis
            basis = np.eye(3)
            fallback = basis[np.argmin(np.abs(tangent))]
            ortho = fallback - (fallback @ tangent) * tangent
            n = np.linalg.norm(ortho)
        normal = ortho / n
        binormal = np.cross(tangent, normal)
        axes = np.stack([tangent, normal, binormal])
    return LocalFrame(origin=t.center.copy(), axes=axes, degenerate=False)


def ternary_moments(p: TernaryGaussianParams, v: float, w: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis (mu_d, sigma_d^2) for a target of speed v and size w."""
    if w <= 0:
        raise InputError(f"target size must be positive, got {w}")
    if v < 0:
        raise InputError(f"target speed must be nonnegative, got {v}")
    reg = np.array([1.0, v, w])
    mu = p.mu @ reg
    var = (p.sigma**2) @ np.array([1.0, v**2, w**2])
    return mu, var


def gaussian_pred(t: TargetState, p: TernaryGaussianParams,
                  depth_axis: np.ndarray | None = None) -> GaussianPred:
    """Endpoint distribution for one target under one parameter set."""
    if p.dim != t.dim:
        raise DimensionError(f"params are {p.dim}D but target is {t.dim}D")
    frame = local_frame(t, depth_axis=depth_axis)
    mu_local, var_local = ternary_moments(p, t.speed, t.size)
    mean = t.center + frame.axes.T @ mu_local
    cov = frame.axes.T @ np.diag(var_local) @ frame.axes
    cov = 0.5 * (cov + cov.T)
    return GaussianPred(mean=mean, cov=cov, degenerate_frame=frame.degenerate)


def log_pdf(g: GaussianPred, s: np.ndarray) -> float:
    """Multivariate normal log-density via Cholesky factorization."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != g.mean.shape:
        raise DimensionError(f"endpoint shape {s.shape} vs mean shape {g.mean.shape}")
    try:
        L = np.linalg.cholesky(g.cov)
    except np.linalg.LinAlgError as e:
        eigs = np.linalg.eigvalsh(g.cov)
        raise NumericError(
            f"covariance is not positive definite (eigenvalues {eigs})"
        ) from e
    d = g.mean.shape[0]
    diff = s - g.mean
    y = solve_triangular(L, diff, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    # endpoints absurdly far from the mean overflow y @ y to inf, which is a
    # legitimate -inf log-density rather than a numeric fault
    with np.errstate(over="ignore"):
        quad = y @ y
    return float(-0.5 * (d * np.log(2.0 * np.pi) + logdet + quad))


def bayes_posterior(targets: list[TargetState], params: TernaryGaussianParams,
                    s: np.ndarray, depth_axis: np.ndarray | None = None) -> np.ndarray:
    """Posterior over targets for endpoint s under a uniform target prior."""
    if not targets:
        raise InputError("bayes_posterior requires at least one target")
    logs = np.array([
        log_pdf(gaussian_pred(t, params, depth_axis=depth_axis), s) for t in targets
    ])
    m = logs.max()
    if not np.isfinite(m):
        warnings.warn("all target densities underflowed; returning uniform posterior")
        return np.full(len(targets), 1.0 / len(targets))
    z = np.exp(logs - m)
    return z / z.sum()
