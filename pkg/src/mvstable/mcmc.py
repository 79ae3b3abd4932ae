"""Posterior sampling machinery.

The accept-reject Metropolis-Hastings step (Tierney, 1994): candidates are
drawn from a proposal q by rejection against an envelope c*q, then corrected
with a three-case acceptance probability that keeps the chain exact even
where c*q fails to dominate the target. Also here: the Gauss-Newton latent
direction proposal, projection-ML parameter proposals, the Geweke
convergence diagnostic, and the Laplace-Metropolis marginal likelihood
(Lewis and Raftery, 1997).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import as_generator, snap_alpha
from .gfun import DEFAULT_QUAD, G_FLOOR, QuadConfig, g_values
from .spectral import sigma_beta_cloud_batch, sigma_beta_discrete_batch

__all__ = [
    "ProposalConfig",
    "ChainState",
    "Trace",
    "ar_mh_step",
    "geweke_diagnostic",
    "propose_latent_gn",
    "ProjectionMLSummary",
    "projection_ml_summary",
    "log_posterior_discrete",
    "log_posterior_normal",
    "log_marginal_likelihood",
]


@dataclass
class ProposalConfig:
    """Tuning constants for the proposal machinery.

    h is adapted during burn-in toward the target acceptance band and then
    frozen; c is the accept-reject envelope constant (None = learn it from
    early burn-in candidate ratios).
    """

    h: float = 0.5
    student_t_df: int = 10
    target_accept: tuple[float, float] = (0.20, 0.30)
    envelope_c: float | None = None
    max_ar_rejections: int = 10_000

    def __post_init__(self):
        lo, hi = self.target_accept
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("target_accept must satisfy 0 < lo < hi < 1")
        if self.h <= 0:
            raise ValueError("h must be positive")


@dataclass
class ChainState:
    """One MCMC state; `gamma`/`atoms` in the discrete scheme, `mu`/`omega`
    in the normal scheme, latent directions in both."""

    alpha: float
    zeta: np.ndarray
    latents: np.ndarray | None = None     # (n, d) unit rows
    gamma: np.ndarray | None = None       # (J,)
    atoms: np.ndarray | None = None       # (J, d)
    mu: float | None = None
    omega: float | None = None
    log_post: float = math.nan
    v: np.ndarray | None = None           # cached standardised projections


# ---------------------------------------------------------------------------
# accept-reject Metropolis-Hastings


def ar_mh_step(current, target_logpdf, candidate_sampler, proposal_logpdf,
               log_c, rng, max_rejections: int = 10_000,
               current_logp: float | None = None):
    """One accept-reject MH transition.

    candidate_sampler(rng) draws from q; proposal_logpdf evaluates log q
    (normalisation constants may be dropped if they are held fixed while c
    is in use). With log_c=None the rejection stage is skipped and the move
    is plain independence MH (used while c is being calibrated). When the
    rejection stage exceeds max_rejections the step falls back to a
    random-walk-style accept with probability min{1, p*/p_o}, flagged in the
    returned stats.

    Returns (state, logp, stats); stats carries the candidate log p/q ratio
    for envelope calibration.
    """
    rng = as_generator(rng)
    if current_logp is None:
        current_logp = target_logpdf(current)

    stats = {"accepted": False, "ar_draws": 0, "fallback": False, "case": 0,
             "cand_log_ratio": -math.inf}

    cand = None
    cand_logp = -math.inf
    cand_logq = 0.0
    if log_c is None:
        cand = candidate_sampler(rng)
        cand_logp = target_logpdf(cand)
        cand_logq = proposal_logpdf(cand)
        stats["ar_draws"] = 1
    else:
        accepted_candidate = False
        for _ in range(max_rejections):
            cand = candidate_sampler(rng)
            cand_logp = target_logpdf(cand)
            cand_logq = proposal_logpdf(cand)
            stats["ar_draws"] += 1
            log_ar = cand_logp - (log_c + cand_logq)
            if log_ar >= 0.0 or math.log(rng.uniform()) <= log_ar:
                accepted_candidate = True
                break
        if not accepted_candidate:
            # abandon the accept-reject stage: random-walk style correction
            stats["fallback"] = True
            cand = candidate_sampler(rng)
            cand_logp = target_logpdf(cand)
            stats["cand_log_ratio"] = cand_logp - proposal_logpdf(cand)
            if math.log(rng.uniform()) <= min(0.0, cand_logp - current_logp):
                stats["accepted"] = True
                return cand, cand_logp, stats
            return current, current_logp, stats

    stats["cand_log_ratio"] = cand_logp - cand_logq
    current_logq = proposal_logpdf(current)

    if log_c is None:
        log_a = min(0.0, (cand_logp + current_logq)
                    - (current_logp + cand_logq))
        stats["case"] = 3
    else:
        cur_dominated = current_logp <= log_c + current_logq
        cand_dominated = cand_logp <= log_c + cand_logq
        if cur_dominated:
            log_a = 0.0
            stats["case"] = 1
        elif cand_dominated:
            log_a = (log_c + current_logq) - current_logp
            stats["case"] = 2
        else:
            log_a = min(0.0, (cand_logp + current_logq)
                        - (current_logp + cand_logq))
            stats["case"] = 3

    if log_a >= 0.0 or math.log(rng.uniform()) <= log_a:
        stats["accepted"] = True
        return cand, cand_logp, stats
    return current, current_logp, stats


# ---------------------------------------------------------------------------
# Geweke diagnostic


def _long_run_variance(x: np.ndarray) -> float:
    """Spectral density of the mean at frequency zero (Newey-West window)."""
    n = x.size
    xc = x - x.mean()
    g0 = float(np.mean(xc * xc))
    lag = max(1, int(4.0 * (n / 100.0) ** (2.0 / 9.0)))
    s = g0
    for k in range(1, min(lag, n - 1) + 1):
        gk = float(np.mean(xc[k:] * xc[:-k]))
        s += 2.0 * (1.0 - k / (lag + 1.0)) * gk
    return s


def _batch_means_variance(x: np.ndarray) -> float:
    n = x.size
    n_batches = max(2, int(math.sqrt(n)))
    blen = n // n_batches
    means = np.array([x[i * blen:(i + 1) * blen].mean()
                      for i in range(n_batches)])
    return float(np.var(means, ddof=1)) * blen


def geweke_diagnostic(series: np.ndarray, first_frac: float = 0.25,
                      last_frac: float = 0.25) -> float:
    """Geweke (1992) convergence z-score of the first vs last segment means.

    Segment variances use the spectral density at zero (batch means for
    short series). Raises on constant series.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise ValueError(f"series too short for the diagnostic: {n}")
    n1 = int(n * first_frac)
    n2 = int(n * last_frac)
    a = x[:n1]
    b = x[n - n2:]
    var_fn = _long_run_variance if min(n1, n2) >= 200 else _batch_means_variance
    v1 = var_fn(a)
    v2 = var_fn(b)
    denom = v1 / n1 + v2 / n2
    if denom <= 0.0:
        raise ValueError("zero variance in a Geweke segment")
    return float((a.mean() - b.mean()) / math.sqrt(denom))


# ---------------------------------------------------------------------------
# Gauss-Newton latent proposal


def propose_latent_gn(s_current: np.ndarray, conditional_logpdf, h: float,
                      rng, grad_step: float = 1e-5, hess_step: float = 1e-4):
    """Gauss-Newton Gaussian proposal for one latent direction.

    One Newton step from the current point using central-difference gradient
    and Hessian of the conditional log density gives the proposal centre;
    the candidate draw N(centre, -h * Hessian^{-1}) is normalised back to
    the sphere while the proposal density is evaluated on the
    pre-normalisation Gaussian at both the candidate and the current point.
    Non-finite derivatives fall back to a uniform-sphere candidate (flagged;
    the constant proposal density cancels).

    Returns (candidate, logq_candidate, logq_current, info).
    """
    rng = as_generator(rng)
    s = np.asarray(s_current, dtype=float)
    d = s.size

    f0 = conditional_logpdf(s)
    grad = np.empty(d)
    hess = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = grad_step
        grad[i] = (conditional_logpdf(s + ei)
                   - conditional_logpdf(s - ei)) / (2.0 * grad_step)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hess_step
        hess[i, i] = (conditional_logpdf(s + ei) - 2.0 * f0
                      + conditional_logpdf(s - ei)) / hess_step ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = hess_step
            ej[j] = hess_step
            hij = (conditional_logpdf(s + ei + ej)
                   - conditional_logpdf(s + ei - ej)
                   - conditional_logpdf(s - ei + ej)
                   + conditional_logpdf(s - ei - ej)) / (4.0 * hess_step ** 2)
            hess[i, j] = hess[j, i] = hij

    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))
            and math.isfinite(f0)):
        z = rng.standard_normal(d)
        cand = z / np.linalg.norm(z)
        return cand, 0.0, 0.0, {"fallback_uniform": True, "center": s}

    neg_h = -hess
    evals, evecs = np.linalg.eigh(neg_h)
    lam_min = float(evals.min())
    if lam_min <= 0.0:
        neg_h = neg_h + (abs(lam_min) + 1e-6) * np.eye(d)
        evals = evals + (abs(lam_min) + 1e-6)
    center = s + np.linalg.solve(neg_h, grad)
    cov = h * np.linalg.inv(neg_h)
    chol = np.linalg.cholesky(cov)
    y = center + chol @ rng.standard_normal(d)
    cand = y / np.linalg.norm(y)

    prec = neg_h / h
    logdet_cov = d * math.log(h) - float(np.sum(np.log(evals)))

    def logq(x):
        r = x - center
        return -0.5 * logdet_cov - 0.5 * float(r @ prec @ r)

    info = {"fallback_uniform": False, "center": center}
    return cand, logq(cand), logq(s), info


# ---------------------------------------------------------------------------
# projection-ML proposal summary


@dataclass
class ProjectionMLSummary:
    """Moments harvested from univariate ML fits of random projections."""

    alpha_bar: float
    alpha_var: float
    zeta_center: np.ndarray
    zeta_var: float          # median ML variance proxy, per coordinate
    n_fits: int
    sigma_med: float


def projection_ml_summary(data: np.ndarray, b_projections: int, rng,
                          polish: bool = False) -> ProjectionMLSummary:
    """Fit stable laws to random projections and the coordinate axes.

    alpha moments come from B uniform random directions; the shift centre
    comes from per-coordinate fits. Failed fits are dropped; fewer than two
    successes is an error.
    """
    from .core import MLFitError, univariate_ml_fit
    from .sphere import uniform_sphere

    if b_projections < 2:
        raise ValueError("need B >= 2 projections")
    rng = as_generator(rng)
    x = np.asarray(data, dtype=float)
    n, d = x.shape
    dirs = uniform_sphere(d, b_projections, rng).points

    alphas, sigmas = [], []
    for b in range(b_projections):
        try:
            fit = univariate_ml_fit(x @ dirs[b], polish=polish)
        except (MLFitError, ValueError):
            continue
        alphas.append(fit.alpha)
        sigmas.append(fit.sigma)
    if len(alphas) < 2:
        raise RuntimeError("fewer than two projection ML fits succeeded")

    zeta_center = np.empty(d)
    for i in range(d):
        try:
            fit = univariate_ml_fit(x[:, i], polish=polish)
            zeta_center[i] = fit.mu
        except (MLFitError, ValueError):
            zeta_center[i] = float(np.median(x[:, i]))

    alphas = np.asarray(alphas)
    sigmas = np.asarray(sigmas)
    sig_med = float(np.median(sigmas))
    return ProjectionMLSummary(
        alpha_bar=float(np.mean(alphas)),
        alpha_var=float(np.var(alphas)) + 1e-8,
        zeta_center=zeta_center,
        zeta_var=sig_med ** 2 / n,
        n_fits=len(alphas),
        sigma_med=sig_med,
    )


# ---------------------------------------------------------------------------
# posterior densities (reference implementations; the samplers use cached
# equivalents that are tested against these)


def _per_obs_terms(data, latents, zeta, alpha, sig_a, betas, quad):
    d = data.shape[1]
    sig = sig_a ** (1.0 / alpha)
    proj = np.einsum("ij,ij->i", data - zeta, latents)
    if alpha == 1.0:
        proj = proj - (2.0 / math.pi) * betas * sig * np.log(sig)
    vs = proj / sig
    gs = g_values(vs, betas, alpha, d, quad)
    return np.log(gs) - d * np.log(sig), vs


def log_posterior_discrete(state: ChainState, data: np.ndarray, system,
                           quad: QuadConfig = DEFAULT_QUAD,
                           phi: float | None = None,
                           zeta_prior_sd: float | None = None) -> float:
    """Log posterior of the discrete-approximation model (up to a constant).

    Product of per-observation projection-kernel terms, the Gaussian
    CF-system block phi^-(n+1) exp{-[(Y-Xgamma)'(Y-Xgamma)
    + ridge*gamma'gamma]/(2 phi^2)} with the non-negativity indicator, and
    the flat prior on (alpha, zeta). Returns -inf (not an error) outside the
    support.
    """
    from .spectral import _psi_design, solve_gamma

    if state.latents is None or state.gamma is None or state.atoms is None:
        raise ValueError("discrete state needs latents, gamma and atoms")
    if not (0.0 < state.alpha <= 2.0):
        return -math.inf
    if np.any(state.gamma < 0.0) or not np.any(state.gamma > 0.0):
        return -math.inf
    alpha = snap_alpha(state.alpha)
    n = data.shape[0]

    sig_a, betas = sigma_beta_discrete_batch(state.latents, state.atoms,
                                             state.gamma, alpha)
    if np.any(sig_a <= 0.0):
        return -math.inf
    terms, _ = _per_obs_terms(data, state.latents, state.zeta, alpha, sig_a,
                              betas, quad)

    design = _psi_design(system.tau_grid, state.atoms, alpha)
    resid = system.response - design @ state.gamma
    quad_form = float(resid @ resid) + system.ridge * float(
        state.gamma @ state.gamma)
    if phi is None:
        phi = system.noise_scale
    if phi is None:
        gamma_hat = np.linalg.solve(
            design.T @ design + system.ridge * np.eye(design.shape[1]),
            design.T @ system.response)
        r0 = system.response - design @ gamma_hat
        phi = float(np.sqrt(max(np.mean(r0 ** 2), 1e-30)))
    cf_block = -(n + 1.0) * math.log(phi) - quad_form / (2.0 * phi ** 2)

    out = float(np.sum(terms)) + cf_block
    if zeta_prior_sd is not None:
        out += -0.5 * float(state.zeta @ state.zeta) / zeta_prior_sd ** 2
    return out


def log_posterior_normal(state: ChainState, data: np.ndarray,
                         cloud: np.ndarray | None = None,
                         quad: QuadConfig = DEFAULT_QUAD, seed=None,
                         mc_size: int = 5000,
                         zeta_prior_sd: float | None = None) -> float:
    """Log posterior of the normal-approximation model (up to a constant).

    Per-observation projection-kernel terms with Monte Carlo projection
    functions, the omega block omega^-(n+1) exp{-n/(2 omega^2)} (latent
    norms are 1 on the sphere), and the flat prior on (alpha, zeta).
    """
    from .spectral import NormalMeasureApprox, sample_normal_cloud

    if state.latents is None or state.mu is None or state.omega is None:
        raise ValueError("normal state needs latents, mu and omega")
    if not (0.0 < state.alpha <= 2.0) or state.omega <= 0.0:
        return -math.inf
    alpha = snap_alpha(state.alpha)
    n = data.shape[0]

    if cloud is None:
        measure = NormalMeasureApprox(state.mu, state.omega, mc_size)
        cloud = sample_normal_cloud(measure, data.shape[1],
                                    as_generator(seed))
    sig_a, betas = sigma_beta_cloud_batch(state.latents, cloud, alpha)
    if np.any(sig_a <= 0.0):
        return -math.inf
    terms, _ = _per_obs_terms(data, state.latents, state.zeta, alpha, sig_a,
                              betas, quad)
    omega_block = -(n + 1.0) * math.log(state.omega) \
        - n / (2.0 * state.omega ** 2)
    out = float(np.sum(terms)) + omega_block
    if zeta_prior_sd is not None:
        out += -0.5 * float(state.zeta @ state.zeta) / zeta_prior_sd ** 2
    return out


# ---------------------------------------------------------------------------
# Laplace-Metropolis marginal likelihood


def log_marginal_likelihood(draws: np.ndarray, log_post_fn,
                            trim: float = 0.05,
                            min_draws: int = 1000) -> float:
    """Laplace-Metropolis log evidence from posterior draws.

    log p(y) ~ (p/2) log 2pi + 0.5 log|Sigma| + log p(theta_bar, y), with
    theta_bar and Sigma taken from the draws after discarding the `trim`
    fraction with the largest Mahalanobis distances (volume correction); the
    trimmed covariance is rescaled by the exact multivariate-normal
    truncation factor so the estimator stays unbiased on Gaussian
    posteriors.
    """
    from scipy.stats import chi2

    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, p = draws.shape
    if m < min_draws:
        raise ValueError(f"need at least {min_draws} draws, got {m}")

    mean0 = draws.mean(axis=0)
    cov0 = np.atleast_2d(np.cov(draws.T))
    try:
        prec0 = np.linalg.inv(cov0)
    except np.linalg.LinAlgError:
        warnings.warn("singular draw covariance; adding 1e-10 ridge")
        cov0 = cov0 + 1e-10 * np.eye(p)
        prec0 = np.linalg.inv(cov0)
    centred = draws - mean0
    md = np.einsum("ij,jk,ik->i", centred, prec0, centred)
    cutoff = np.quantile(md, 1.0 - trim)
    kept = draws[md <= cutoff]

    theta_bar = kept.mean(axis=0)
    cov = np.atleast_2d(np.cov(kept.T))
    q = chi2.ppf(1.0 - trim, df=p)
    shrink = chi2.cdf(q, df=p + 2) / (1.0 - trim)
    cov = cov / shrink

    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        warnings.warn("non-PD trimmed covariance; adding 1e-10 ridge")
        sign, logdet = np.linalg.slogdet(cov + 1e-10 * np.eye(p))
    return 0.5 * p * math.log(2.0 * math.pi) + 0.5 * logdet \
        + float(log_post_fn(theta_bar))


@dataclass
class Trace:
    """Recorded draws and bookkeeping of one chain."""

    kind: str
    iters: np.ndarray
    alpha: np.ndarray
    zeta: np.ndarray
    log_post: np.ndarray
    gamma: np.ndarray | None = None
    atoms: np.ndarray | None = None
    mu: np.ndarray | None = None
    omega: np.ndarray | None = None
    accept_rates: dict = field(default_factory=dict)
    accept_flags: np.ndarray | None = None
    geweke_history: list = field(default_factory=list)
    fallback_counts: dict = field(default_factory=dict)
    burn_in_used: int = 0
    thin: int = 10
    seed: int | None = None
    config: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0

    def n_draws(self) -> int:
        return self.alpha.size

    def param_matrix(self, include_measure: bool = True) -> np.ndarray:
        """Draws as an (m, p) matrix: alpha, zeta, then gamma or (mu, omega)."""
        cols = [self.alpha[:, None], self.zeta]
        if include_measure:
            if self.kind == "discrete":
                cols.append(self.gamma)
            else:
                cols.append(self.mu[:, None])
                cols.append(self.omega[:, None])
        return np.hstack(cols)

    def to_ndjson(self, path) -> None:
        """Newline-delimited JSON records of the recorded draws."""
        import json

        with open(path, "w") as fh:
            for i in range(self.n_draws()):
                rec = {"iter": int(self.iters[i]),
                       "alpha": float(self.alpha[i]),
                       "zeta": [float(z) for z in self.zeta[i]],
                       "log_post": float(self.log_post[i])}
                if self.kind == "discrete":
                    rec["gamma"] = [float(g) for g in self.gamma[i]]
                    rec["atoms"] = [[float(a) for a in row]
                                    for row in self.atoms[i]]
                else:
                    rec["mu"] = float(self.mu[i])
                    rec["omega"] = float(self.omega[i])
                if self.accept_flags is not None:
                    rec["accept_flags"] = [int(f) for f in
                                           self.accept_flags[i]]
                fh.write(json.dumps(rec) + "\n")

    def summary(self) -> dict:
        out = {"kind": self.kind, "n_draws": int(self.n_draws()),
               "burn_in_used": int(self.burn_in_used),
               "thin": int(self.thin),
               "alpha_mean": float(np.mean(self.alpha)),
               "alpha_sd": float(np.std(self.alpha)),
               "alpha_ci90": [float(np.quantile(self.alpha, 0.05)),
                              float(np.quantile(self.alpha, 0.95))],
               "zeta_mean": [float(z) for z in self.zeta.mean(axis=0)],
               "accept_rates": {k: float(v) for k, v in
                                self.accept_rates.items()},
               "fallback_counts": {k: int(v) for k, v in
                                   self.fallback_counts.items()},
               "runtime_seconds": float(self.runtime_seconds)}
        if self.kind == "discrete":
            out["gamma_mean"] = [float(g) for g in self.gamma.mean(axis=0)]
            out["total_mass_mean"] = float(self.gamma.sum(axis=1).mean())
        else:
            out["mu_mean"] = float(np.mean(self.mu))
            out["omega_mean"] = float(np.mean(self.omega))
        return out
