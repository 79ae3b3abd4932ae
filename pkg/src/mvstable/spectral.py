"""Spectral measures and the characteristic-function linear system.

A centered multivariate stable law is determined by (alpha, Gamma) with
Gamma a finite measure on the unit sphere. Two representations are carried:
a discrete measure (atoms + non-negative weights) and the normal
approximation (sphere-normalised N(mu*1, omega^2 I) draws). The projection
scale and skewness

    sigma(S)^alpha = int |<S, c>|^alpha Gamma(dc)
    beta(S) = sigma(S)^(-alpha) int sgn(<S, c>) |<S, c>|^alpha Gamma(dc)

are exact sums for the discrete case and Monte Carlo averages for the
normal approximation. Spectral weights are estimated from the linear system
-log cf(tau_i) = sum_j gamma_j psi_alpha(<tau_i, s_j>), stacked into real
and imaginary blocks, with a ridge and a non-negativity truncation.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (DegenerateDirectionError, DomainError, as_generator,
                   psi_alpha, snap_alpha)

__all__ = [
    "DiscreteMeasure",
    "NormalMeasureApprox",
    "ProjectionFunctions",
    "CFSystem",
    "sample_normal_cloud",
    "sigma_beta_discrete",
    "sigma_beta_normal",
    "sigma_beta_discrete_batch",
    "sigma_beta_cloud_batch",
    "projection_functions",
    "beta_from_cf",
    "build_cf_system",
    "solve_gamma",
    "draw_gamma_truncated",
    "build_scale_system",
    "measure_to_json",
    "measure_from_json",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Atoms on the unit sphere with non-negative weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != w.size:
            raise ValueError("atoms and weights disagree in length")
        if atoms.shape[0] < 1:
            raise ValueError("measure needs at least one atom")
        norms = np.linalg.norm(atoms, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("atoms must have unit norm")
        if np.any(w < 0.0) or not np.any(w > 0.0):
            raise ValueError("weights must be >= 0 with at least one > 0")
        if atoms.shape[0] > 1:
            # pairwise-distinct atoms keep the CF design well posed
            d2 = np.sum((atoms[:, None, :] - atoms[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if np.min(d2) <= 1e-18:
                raise ValueError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def is_symmetric(self, tol: float = 1e-9) -> bool:
        """True when every atom has a mirror atom of equal weight."""
        used = np.zeros(self.n_atoms, dtype=bool)
        for i in range(self.n_atoms):
            if used[i]:
                continue
            target = -self.atoms[i]
            hit = -1
            for j in range(self.n_atoms):
                if j == i or used[j]:
                    continue
                if np.linalg.norm(self.atoms[j] - target) < tol:
                    hit = j
                    break
            if hit < 0 or abs(self.weights[i] - self.weights[hit]) > tol:
                return False
            used[i] = used[hit] = True
        return True


@dataclass(frozen=True)
class NormalMeasureApprox:
    """Normal approximation: sphere-normalised N(mu*1_d, omega^2 I) draws.

    Total mass defaults to 1 (the expectation form of the projection
    functionals); `mass` is an optional global multiplier.
    """

    mu: float
    omega: float
    mc_size: int = 5000
    mass: float = 1.0

    def __post_init__(self):
        if not self.omega > 0.0:
            raise DomainError(f"omega must be positive, got {self.omega}")
        if self.mc_size < 10:
            raise DomainError("mc_size must be >= 10")
        if not self.mass > 0.0:
            raise DomainError("mass must be positive")


@dataclass(frozen=True)
class ProjectionFunctions:
    """Scale and skewness of the projection <S, X>; beta clipped to [-1, 1]."""

    sigma: float
    beta: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise DegenerateDirectionError(
                f"sigma must be positive, got {self.sigma}")
        if abs(self.beta) > 1.0 + 1e-6:
            raise ValueError(f"beta out of range beyond MC tolerance: {self.beta}")
        object.__setattr__(self, "beta", min(1.0, max(-1.0, self.beta)))


def sample_normal_cloud(measure: NormalMeasureApprox, d: int,
                        rng) -> np.ndarray:
    """(M, d) matrix of sphere-normalised N(mu*1, omega^2 I) draws."""
    rng = as_generator(rng)
    z = rng.standard_normal((measure.mc_size, d))
    c = measure.mu + measure.omega * z
    norms = np.linalg.norm(c, axis=1)
    bad = norms < 1e-12
    while np.any(bad):
        z = rng.standard_normal((int(bad.sum()), d))
        c[bad] = measure.mu + measure.omega * z
        norms[bad] = np.linalg.norm(c[bad], axis=1)
        bad = norms < 1e-12
    return c / norms[:, None]


def sigma_beta_discrete_batch(s_mat: np.ndarray, atoms: np.ndarray,
                              weights: np.ndarray, alpha: float
                              ) -> tuple[np.ndarray, np.ndarray]:
    """(sigma^alpha, beta) for each row of s_mat under a discrete measure.

    Returns sigma^alpha = 0 rows as-is; callers decide how to treat
    degenerate directions.
    """
    alpha = snap_alpha(alpha)
    t = s_mat @ atoms.T
    at = np.abs(t) ** alpha
    sig_a = at @ weights
    signed = (np.sign(t) * at) @ weights
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(sig_a > 0.0, signed / sig_a, 0.0)
    return sig_a, np.clip(beta, -1.0, 1.0)


def sigma_beta_cloud_batch(s_mat: np.ndarray, cloud: np.ndarray, alpha: float,
                           mass: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """(sigma^alpha, beta) rows from a fixed normalised draw cloud."""
    alpha = snap_alpha(alpha)
    t = s_mat @ cloud.T
    at = np.abs(t) ** alpha
    sig_a = mass * np.mean(at, axis=-1)
    signed = mass * np.mean(np.sign(t) * at, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(sig_a > 0.0, signed / sig_a, 0.0)
    return sig_a, np.clip(beta, -1.0, 1.0)


def sigma_beta_discrete(S, measure: DiscreteMeasure,
                        alpha: float) -> ProjectionFunctions:
    """Exact projection functions under a discrete measure."""
    s = np.atleast_2d(np.asarray(S, dtype=float))
    sig_a, beta = sigma_beta_discrete_batch(s, measure.atoms, measure.weights,
                                            alpha)
    if sig_a[0] <= 0.0:
        raise DegenerateDirectionError(
            "direction is orthogonal to every atom of the measure")
    alpha = snap_alpha(alpha)
    return ProjectionFunctions(float(sig_a[0]) ** (1.0 / alpha), float(beta[0]))


def sigma_beta_normal(S, measure: NormalMeasureApprox, alpha: float,
                      seed=None) -> ProjectionFunctions:
    """Monte Carlo projection functions under the normal approximation."""
    s = np.asarray(S, dtype=float)
    cloud = sample_normal_cloud(measure, s.size, as_generator(seed))
    sig_a, beta = sigma_beta_cloud_batch(s[None, :], cloud, alpha,
                                         measure.mass)
    alpha = snap_alpha(alpha)
    return ProjectionFunctions(float(sig_a[0]) ** (1.0 / alpha), float(beta[0]))


def projection_functions(S, measure, alpha: float, seed=None,
                         cloud: np.ndarray | None = None) -> ProjectionFunctions:
    """Dispatch to the exact or Monte Carlo projection functions.

    A precomputed `cloud` (normalised draws) short-circuits the sampling for
    the normal approximation.
    """
    if isinstance(measure, DiscreteMeasure):
        return sigma_beta_discrete(S, measure, alpha)
    if isinstance(measure, NormalMeasureApprox):
        if cloud is not None:
            s = np.asarray(S, dtype=float)
            sig_a, beta = sigma_beta_cloud_batch(s[None, :], cloud, alpha,
                                                 measure.mass)
            alpha = snap_alpha(alpha)
            return ProjectionFunctions(float(sig_a[0]) ** (1.0 / alpha),
                                       float(beta[0]))
        return sigma_beta_normal(S, measure, alpha, seed)
    raise TypeError(f"unsupported measure type: {type(measure)!r}")


def beta_from_cf(S, measure, alpha: float, sigma: float, seed=None) -> float:
    """Projection skewness recovered from the characteristic exponent.

    For alpha != 1 this is -Im I_X(S) / (sigma^alpha tan(pi alpha/2)), which
    coincides with the direct signed sum for any measure; alpha = 2 returns 0
    (skewness vanishes). The alpha = 1 branch follows the printed formula
    Re[i(I_X(2S) - 2 I_X(S))] / (4 sigma ln(2/pi)) verbatim; note its
    denominator is negative, so it is not cross-checked against the direct
    sum (see docs).
    """
    from .core import cf_exponent

    alpha = snap_alpha(alpha)
    if sigma <= 0.0:
        raise DegenerateDirectionError("sigma must be positive")
    s = np.asarray(S, dtype=float)
    if alpha == 2.0:
        return 0.0
    if alpha == 1.0:
        i1 = cf_exponent(s, measure, alpha, seed)
        i2 = cf_exponent(2.0 * s, measure, alpha, seed)
        num = 1j * (i2 - 2.0 * i1)
        return float(num.real / (4.0 * sigma * math.log(2.0 / math.pi)))
    ix = cf_exponent(s, measure, alpha, seed)
    t = math.tan(0.5 * math.pi * alpha)
    return float(-ix.imag / (sigma ** alpha * t))


# ---------------------------------------------------------------------------
# CF linear system


@dataclass
class CFSystem:
    """Stacked real/imaginary regression linking log-CF values to weights."""

    design: np.ndarray          # (2K', J) real rows above imaginary rows
    response: np.ndarray        # (2K',)
    ridge: float
    noise_scale: float | None   # phi; profiled from residuals when None
    tau_grid: np.ndarray        # (K', d) evaluation points actually used
    scale_factor: float = 1.0   # data median-norm scaling, for back-transforms
    n_dropped: int = 0          # tau points dropped for unreliable log-CF

    @property
    def condition_number(self) -> float:
        xtx = self.design.T @ self.design + self.ridge * np.eye(
            self.design.shape[1])
        return float(np.linalg.cond(xtx))


def _psi_design(tau_grid: np.ndarray, atoms: np.ndarray,
                alpha: float) -> np.ndarray:
    proj = tau_grid @ atoms.T
    psi = psi_alpha(proj, alpha)
    return np.vstack([psi.real, psi.imag])


def build_cf_system(atoms: np.ndarray, tau_grid: np.ndarray, alpha: float,
                    ridge: float, data: np.ndarray | None = None,
                    model_measure: DiscreteMeasure | None = None,
                    noise_scale: float | None = None,
                    rescale: bool = True) -> CFSystem:
    """Assemble the spectral-weight regression at the given tau points.

    Exactly one of `data` (empirical characteristic function of an n x d
    sample, pre-scaled by the median row norm when `rescale`) or
    `model_measure` (exact characteristic exponent, for testing) provides the
    response. tau points where the empirical CF modulus drops below 1e-6 are
    removed with a warning: the principal log branch is unreliable there.
    """
    alpha = snap_alpha(alpha)
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    tau_grid = np.atleast_2d(np.asarray(tau_grid, dtype=float))
    if (data is None) == (model_measure is None):
        raise ValueError("provide exactly one of data / model_measure")
    if tau_grid.shape[0] < atoms.shape[0]:
        raise ValueError("need at least as many tau points as atoms")
    if ridge <= 0.0:
        raise ValueError("ridge must be positive")

    scale = 1.0
    n_dropped = 0
    if model_measure is not None:
        proj = tau_grid @ model_measure.atoms.T
        y_complex = psi_alpha(proj, alpha) @ model_measure.weights
    else:
        x = np.asarray(data, dtype=float)
        if x.ndim != 2:
            raise ValueError("data must be an n x d matrix")
        if rescale:
            scale = float(np.median(np.linalg.norm(x, axis=1)))
            if scale <= 0.0:
                raise ValueError("median row norm is zero; cannot rescale")
            x = x / scale
        ecf = np.mean(np.exp(1j * (x @ tau_grid.T)), axis=0)
        keep = np.abs(ecf) >= 1e-6
        n_dropped = int(np.sum(~keep))
        if n_dropped:
            warnings.warn(f"dropped {n_dropped} tau points with |ecf| < 1e-6 "
                          "(log branch unreliable)")
        tau_grid = tau_grid[keep]
        if tau_grid.shape[0] == 0:
            raise ValueError("no usable tau points left")
        y_complex = -np.log(ecf[keep])

    design = _psi_design(tau_grid, atoms, alpha)
    response = np.concatenate([y_complex.real, y_complex.imag])
    return CFSystem(design=design, response=response, ridge=float(ridge),
                    noise_scale=noise_scale, tau_grid=tau_grid,
                    scale_factor=scale, n_dropped=n_dropped)


def solve_gamma(system: CFSystem) -> tuple[np.ndarray, np.ndarray]:
    """Ridge solution gamma_hat and posterior covariance phi^2 (X'X + w I)^-1.

    phi is profiled as the residual standard deviation when the system does
    not supply it. Raises on a numerically singular normal matrix.
    """
    x = system.design
    y = system.response
    j = x.shape[1]
    a = x.T @ x + system.ridge * np.eye(j)
    if np.linalg.cond(a) > 1e14:
        raise np.linalg.LinAlgError(
            "CF normal matrix numerically singular; increase the ridge "
            "parameter")
    gamma_hat = np.linalg.solve(a, x.T @ y)
    phi = system.noise_scale
    if phi is None:
        resid = y - x @ gamma_hat
        phi = float(np.sqrt(max(np.mean(resid ** 2), 1e-30)))
    cov = phi ** 2 * np.linalg.inv(a)
    return gamma_hat, cov


def _truncnorm_lower0(mean: float, sd: float, rng) -> float:
    """Draw from N(mean, sd^2) conditioned on being >= 0 (inverse CDF)."""
    from scipy.special import ndtr, ndtri

    a = -mean / sd  # standardised truncation point
    if a < 8.0:
        pa = ndtr(a)
        u = rng.uniform()
        z = ndtri(pa + u * (1.0 - pa))
        if math.isfinite(z):
            return mean + sd * z
    # far-tail truncation: exponential proposal (Robert 1995)
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / lam)
        if math.log(rng.uniform()) <= -0.5 * (z - lam) ** 2:
            return mean + sd * z


def draw_gamma_truncated(gamma_hat: np.ndarray, cov: np.ndarray, rng,
                         max_rejections: int = 1000,
                         gibbs_sweeps: int = 30) -> np.ndarray:
    """One draw from N(gamma_hat, cov) truncated to gamma >= 0.

    Plain rejection against the untruncated normal; after max_rejections a
    coordinate-wise Gibbs pass takes over (cheap at the J sizes in play).
    """
    rng = as_generator(rng)
    j = gamma_hat.size
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(j))
    for _ in range(max_rejections):
        draw = gamma_hat + chol @ rng.standard_normal(j)
        if np.all(draw >= 0.0):
            return draw
    # Gibbs fallback on the full conditionals of the truncated normal
    prec = np.linalg.inv(cov + 1e-15 * np.eye(j))
    g = np.clip(gamma_hat, 0.0, None)
    for _ in range(gibbs_sweeps):
        for k in range(j):
            v_k = 1.0 / prec[k, k]
            others = g - gamma_hat
            others[k] = 0.0
            m_k = gamma_hat[k] - v_k * float(prec[k] @ others)
            g[k] = _truncnorm_lower0(m_k, math.sqrt(v_k), rng)
    return g


def build_scale_system(t_grid: np.ndarray, atoms: np.ndarray,
                       alpha_hat: float, sigma_hats: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Scale-function system A gamma = b from fitted projection scales.

    A_ij = |<t_i, s_j>|^alpha_hat and b_i = sigma_hat(t_i)^alpha_hat; solved
    downstream with the same ridge/truncated-normal machinery as the CF
    system (the design is all-real).
    """
    alpha_hat = snap_alpha(alpha_hat)
    t_grid = np.atleast_2d(np.asarray(t_grid, dtype=float))
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    sig = np.asarray(sigma_hats, dtype=float).ravel()
    if t_grid.shape[0] != sig.size:
        raise ValueError("t_grid and sigma_hats disagree in length")
    if t_grid.shape[0] < atoms.shape[0]:
        raise ValueError("need at least as many t points as atoms")
    if np.any(sig <= 0.0):
        raise ValueError("sigma_hats must be positive")
    a = np.abs(t_grid @ atoms.T) ** alpha_hat
    b = sig ** alpha_hat
    return a, b


# ---------------------------------------------------------------------------
# JSON serialisation


def measure_to_json(measure) -> str:
    if isinstance(measure, DiscreteMeasure):
        return json.dumps({"type": "discrete",
                           "atoms": measure.atoms.tolist(),
                           "weights": measure.weights.tolist()})
    if isinstance(measure, NormalMeasureApprox):
        return json.dumps({"type": "normal", "mu": measure.mu,
                           "omega": measure.omega, "M": measure.mc_size,
                           "mass": measure.mass})
    raise TypeError(f"unsupported measure type: {type(measure)!r}")


def measure_from_json(text: str):
    obj = json.loads(text)
    kind = obj.get("type")
    if kind == "discrete":
        return DiscreteMeasure(np.asarray(obj["atoms"], dtype=float),
                               np.asarray(obj["weights"], dtype=float))
    if kind == "normal":
        return NormalMeasureApprox(float(obj["mu"]), float(obj["omega"]),
                                   int(obj.get("M", 5000)),
                                   float(obj.get("mass", 1.0)))
    raise ValueError(f"unknown measure type: {kind!r}")
