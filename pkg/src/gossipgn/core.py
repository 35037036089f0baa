"""Nonlinear least squares core: problem abstraction, box projection,
centralized Gauss-Newton, and the numerical oracles used to certify it.

A problem instance is a list of :class:`SiteModel` objects. Site ``i`` owns a
residual block ``g_i(x)`` of length ``M_i`` and its Jacobian ``G_i(x)``; the
network objective is ``sum_i ||g_i(x)||^2``. The Gauss-Newton direction is

    d = (G^T G)^-1 G^T g

with ``G`` and ``g`` the stacked Jacobian/residual, assembled here by summing
per-site normal-equation contributions so that any row partition of the same
problem yields the same direction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, SingularSystemError

# Condition-number cap for normal-equation solves. A well-posed instance
# (full-rank stacked Jacobian over the box) stays far below this; crossing it
# is treated as rank deficiency rather than silently returning garbage.
COND_CAP = 1e12


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``{x : lower <= x <= upper}`` used as the constraint
    set. Bounds must be finite (the set is compact)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidArgumentError("box bounds must be 1-D vectors of equal length")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise InvalidArgumentError("box bounds must be finite")
        if np.any(lower > upper):
            raise InvalidArgumentError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    @staticmethod
    def cube(dim: int, half_width: float) -> "BoxSet":
        """Symmetric box [-half_width, half_width]^dim."""
        h = float(half_width) * np.ones(dim)
        return BoxSet(-h, h)


@dataclass(frozen=True)
class SiteModel:
    """One site's residual block.

    eval_residual maps a state vector to the local residual g_i(x) (length
    residual_dim); eval_jacobian returns the residual's Jacobian, an
    (residual_dim x n_unknowns) matrix. Both must be pure functions: the
    analytic Jacobian is held to the central-difference oracle by the tests.
    """

    site_id: int
    n_unknowns: int
    residual_dim: int
    eval_residual: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    eval_jacobian: Callable[[np.ndarray], np.ndarray] = field(repr=False)


@dataclass(frozen=True)
class ProblemConstants:
    """Empirical estimates of the smoothness/curvature constants that the
    convergence certificates consume.

    epsilon_max bounds the stacked residual norm over the sampled region;
    epsilon_min is the residual norm at the reference fixed point (supplied
    separately, since sampling cannot find it); sigma_min/sigma_max bracket
    the singular values of the stacked Jacobian; omega is the Jacobian's
    Lipschitz constant estimate; nu_delta and nu_Delta are the mismatch
    slopes of the averaged info vector and info matrix, set to their
    analytic lower bounds omega*(epsilon_max + sigma_max) and
    2*sigma_max*omega.
    """

    epsilon_max: float
    epsilon_min: float
    sigma_min: float
    sigma_max: float
    omega: float
    nu_delta: float
    nu_Delta: float
    rank_deficient_sample: bool = False

    def assumption_holds(self) -> bool:
        """Full-column-rank condition over the sampled region."""
        return not self.rank_deficient_sample and self.sigma_min > 0.0


def project(x: np.ndarray, box: BoxSet) -> np.ndarray:
    """Euclidean projection onto the box (componentwise clamp)."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.lower.shape:
        raise InvalidArgumentError(
            f"state length {x.shape} does not match box dimension {box.lower.shape}"
        )
    return np.clip(x, box.lower, box.upper)


def _check_state(sites: list[SiteModel], x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not sites:
        raise InvalidArgumentError("need at least one site")
    if x.ndim != 1 or x.size != sites[0].n_unknowns:
        raise InvalidArgumentError(
            f"state length {x.size} does not match problem unknowns {sites[0].n_unknowns}"
        )
    return x


def normal_system(sites: list[SiteModel], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assemble A = sum_i G_i^T G_i and b = sum_i G_i^T g_i at x."""
    x = _check_state(sites, x)
    n = x.size
    a = np.zeros((n, n))
    b = np.zeros(n)
    for site in sites:
        jac = np.asarray(site.eval_jacobian(x), dtype=float)
        res = np.asarray(site.eval_residual(x), dtype=float)
        a += jac.T @ jac
        b += jac.T @ res
    return a, b


def solve_normal(a: np.ndarray, b: np.ndarray, context: str = "normal equations") -> np.ndarray:
    """Solve the (symmetric PSD) system a d = b with a condition-number cap.

    Spectral conditioning is checked explicitly: Assumption-style problems
    keep the normal matrix far from the cap, so hitting it signals rank
    deficiency and raises SingularSystemError instead of returning noise.
    """
    eigvals = np.linalg.eigvalsh((a + a.T) / 2.0)
    lo, hi = float(eigvals[0]), float(eigvals[-1])
    if hi <= 0.0 or lo <= 0.0 or hi / lo > COND_CAP:
        raise SingularSystemError(
            f"{context}: normal matrix singular or condition number above {COND_CAP:.0e} "
            f"(spectrum [{lo:.3e}, {hi:.3e}])"
        )
    return np.linalg.solve(a, b)


def exact_descent(sites: list[SiteModel], x: np.ndarray) -> np.ndarray:
    """Gauss-Newton direction d = (G^T G)^-1 G^T g with all sites summed."""
    a, b = normal_system(sites, x)
    return solve_normal(a, b, context="exact descent")


def centralized_gn_step(
    sites: list[SiteModel], x: np.ndarray, alpha: float, box: BoxSet
) -> np.ndarray:
    """One projected Gauss-Newton update P[x - alpha * d]."""
    if not 0.0 < alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must be in (0, 1], got {alpha}")
    d = exact_descent(sites, x)
    return project(x - alpha * d, box)


def stationarity_residual(sites: list[SiteModel], x: np.ndarray) -> float:
    """||G^T(x) g(x)||; zero exactly at first-order stationary points."""
    x = _check_state(sites, x)
    acc = np.zeros(x.size)
    for site in sites:
        jac = np.asarray(site.eval_jacobian(x), dtype=float)
        res = np.asarray(site.eval_residual(x), dtype=float)
        acc += jac.T @ res
    return float(np.linalg.norm(acc))


def finite_diff_jacobian(site: SiteModel, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian (g(x + h e_j) - g(x - h e_j)) / 2h."""
    if h <= 0:
        raise InvalidArgumentError("step h must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        gp = np.asarray(site.eval_residual(x + step), dtype=float)
        gm = np.asarray(site.eval_residual(x - step), dtype=float)
        cols.append((gp - gm) / (2.0 * h))
    return np.column_stack(cols)


def centralized_gn_solve(
    sites: list[SiteModel],
    box: BoxSet,
    x0: np.ndarray,
    alpha: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> tuple[np.ndarray, bool]:
    """Iterate centralized GN until stationarity_residual <= tol.

    Returns (x, converged). Used to produce the reference fixed point for
    certificates and error-to-reference metrics.
    """
    x = project(np.asarray(x0, dtype=float), box)
    for _ in range(max_iter):
        if stationarity_residual(sites, x) <= tol:
            return x, True
        x = centralized_gn_step(sites, x, alpha, box)
    return x, stationarity_residual(sites, x) <= tol


def estimate_constants(
    sites: list[SiteModel],
    box: BoxSet,
    n_samples: int,
    rng_seed,
    reference_x: np.ndarray | None = None,
    extra_points: list[np.ndarray] | None = None,
) -> ProblemConstants:
    """Sample the box to estimate the certificate constants.

    epsilon_max and omega are maxima over the sample set, hence lower bounds
    on the true suprema; sigma_min/sigma_max bracket the observed singular
    values. epsilon_min is evaluated at reference_x when given (otherwise
    the smallest sampled residual norm stands in). extra_points are appended
    to the sample set so callers can pin trajectory iterates into the
    estimate. A rank-deficient sampled Jacobian is reported as sigma_min = 0
    with a warning flag rather than an error.
    """
    if n_samples < 2:
        raise InvalidArgumentError("need at least 2 samples")
    rng = np.random.default_rng(rng_seed)
    points = list(rng.uniform(box.lower, box.upper, size=(n_samples, box.dim)))
    if extra_points is not None and len(extra_points):
        points.extend(np.asarray(p, dtype=float) for p in extra_points)

    eps_max = 0.0
    eps_min_seen = np.inf
    sigma_min = np.inf
    sigma_max = 0.0
    rank_deficient = False
    jacobians = []
    for x in points:
        res_norm_sq = 0.0
        blocks = []
        for site in sites:
            res = np.asarray(site.eval_residual(x), dtype=float)
            res_norm_sq += float(res @ res)
            blocks.append(np.asarray(site.eval_jacobian(x), dtype=float))
        g_norm = float(np.sqrt(res_norm_sq))
        eps_max = max(eps_max, g_norm)
        eps_min_seen = min(eps_min_seen, g_norm)
        jac = np.vstack(blocks)
        jacobians.append(jac)
        svals = np.linalg.svd(jac, compute_uv=False)
        sigma_max = max(sigma_max, float(svals[0]))
        smallest = float(svals[-1]) if jac.shape[0] >= jac.shape[1] else 0.0
        if smallest <= svals[0] * 1e-12:
            rank_deficient = True
            smallest = 0.0
        sigma_min = min(sigma_min, smallest)

    if rank_deficient:
        sigma_min = 0.0
        warnings.warn(
            "sampled Jacobian is rank deficient; full-column-rank assumption "
            "violated on this box",
            stacklevel=2,
        )

    omega = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dx = float(np.linalg.norm(points[i] - points[j]))
            if dx == 0.0:
                continue
            dj = float(np.linalg.norm(jacobians[i] - jacobians[j], 2))
            omega = max(omega, dj / dx)

    if reference_x is not None:
        ref = np.asarray(reference_x, dtype=float)
        eps_min = float(
            np.sqrt(
                sum(
                    float(np.dot(r, r))
                    for r in (np.asarray(s.eval_residual(ref), dtype=float) for s in sites)
                )
            )
        )
    else:
        eps_min = float(eps_min_seen)

    return ProblemConstants(
        epsilon_max=float(eps_max),
        epsilon_min=eps_min,
        sigma_min=float(sigma_min),
        sigma_max=float(sigma_max),
        omega=float(omega),
        nu_delta=float(omega * (eps_max + sigma_max)),
        nu_Delta=float(2.0 * sigma_max * omega),
        rank_deficient_sample=rank_deficient,
    )
