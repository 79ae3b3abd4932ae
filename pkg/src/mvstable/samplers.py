"""Posterior samplers for the discrete- and normal-approximation models.

Both chains carry one latent direction per observation (the hierarchical
projection representation) next to the structural parameters. Sweep layout:

discrete   gamma (truncated-normal CF proposal) -> (alpha, zeta) ->
           support points (joint uniform-sphere redraw) -> latent subset
normal     latent subset (Gauss-Newton proposals) -> (alpha, zeta) ->
           (mu, omega)

Every block runs through the accept-reject MH correction; envelope
constants are learned from late burn-in candidate ratios and then frozen,
as are all proposal kernels and tuning constants, so the main phase is a
fixed exact kernel. Burn-in is either a fixed length or "auto"
(Geweke-terminated, checked every 10,000 sweeps). Draws are recorded at a
thinning stride after burn-in; identical seeds and settings reproduce
traces bit for bit.
"""

import math
import time

import numpy as np

from .core import ChainDivergedError, as_generator, snap_alpha
from .gfun import QuadConfig, g_values
from .marginal import CircleMarginal, GTable
from .mcmc import (ProposalConfig, Trace, geweke_diagnostic,
                   projection_ml_summary)
from .spectral import (_psi_design, build_cf_system, sigma_beta_cloud_batch,
                       sigma_beta_discrete_batch, solve_gamma)
from .sphere import gaussian_normalized_grid, uniform_sphere

__all__ = ["run_mcmc_discrete", "run_mcmc_normal", "SAMPLER_QUAD",
           "PROPOSAL_QUAD"]

# quadrature inside the chains: the 1e-7 weight cutoff used for sampling,
# with enough nodes for ~1e-9 absolute kernel accuracy
SAMPLER_QUAD = QuadConfig(nodes_per_interval=8, weight_rel_tol=1e-7,
                          first_interval_splits=4)
# coarse settings for proposal construction only (Gauss-Newton stencils and
# rejection-stage screening)
PROPOSAL_QUAD = QuadConfig(nodes_per_interval=6, weight_rel_tol=1e-3,
                           first_interval_splits=4)

_LATENT_AR_CAP = 24   # rejection attempts per latent update per sweep
_GN_M = 100           # Monte Carlo size while building latent proposals


def _student_t_logpdf(x, df, loc, scale):
    z = (np.asarray(x) - loc) / scale
    return (math.lgamma((df + 1) / 2) - math.lgamma(df / 2)
            - 0.5 * math.log(df * math.pi) - math.log(scale)
            - 0.5 * (df + 1) * np.log1p(z * z / df))


def _chi2_omega_logpdf(omega, n):
    # density of omega = sqrt(n / X), X ~ chi2_n, up to constants
    x = n / omega ** 2
    return (0.5 * n - 1.0) * math.log(x) - 0.5 * x - 3.0 * math.log(omega)


def _proj_terms(data, latents, zeta, alpha, sig_a, betas, quad):
    """Row-wise log g - d log sigma; -inf rows where sigma degenerates."""
    d = data.shape[1]
    out = np.full(data.shape[0], -np.inf)
    ok = sig_a > 0.0
    if not np.any(ok):
        return out
    sig = sig_a[ok] ** (1.0 / alpha)
    proj = np.einsum("ij,ij->i", data[ok] - zeta, latents[ok])
    if alpha == 1.0:
        proj = proj - (2.0 / math.pi) * betas[ok] * sig * np.log(sig)
    gs = g_values(proj / sig, betas[ok], alpha, d, quad)
    out[ok] = np.log(gs) - d * np.log(sig)
    return out


def _terms_discrete(data, latents, zeta, atoms, gamma, alpha, quad):
    alpha = snap_alpha(alpha)
    sig_a, betas = sigma_beta_discrete_batch(latents, atoms, gamma, alpha)
    return _proj_terms(data, latents, zeta, alpha, sig_a, betas, quad)


def _terms_cloud(data, latents, zeta, cloud, alpha, quad):
    alpha = snap_alpha(alpha)
    sig_a, betas = sigma_beta_cloud_batch(latents, cloud, alpha)
    return _proj_terms(data, latents, zeta, alpha, sig_a, betas, quad)


class _BlockMH:
    """Envelope bookkeeping and acceptance counting for one block.

    Runs plain independence MH until freeze_c() fixes the envelope constant
    from collected candidate log(p/q) ratios, after which the rejection
    stage plus the three-case correction applies.
    """

    def __init__(self, name, max_rejections, log_c=None):
        self.name = name
        self.max_rejections = max_rejections
        self.log_c = log_c
        self.ratios = []
        self.collecting = False
        self.n_proposed = 0
        self.n_accepted = 0
        self.n_fallback = 0
        self.last_flag = 0
        self.window = []

    def freeze_c(self, quantile=0.6):
        if self.log_c is None and self.ratios:
            arr = np.asarray([r for r in self.ratios if math.isfinite(r)])
            if arr.size:
                self.log_c = float(np.quantile(arr, quantile))
        self.collecting = False
        self.ratios = []

    def step(self, rng, current_logp, current_logq, sample, logp_fn, logq_fn):
        """One AR-MH move; returns (accepted, candidate, cand_logp)."""
        cand = None
        cand_logp = -math.inf
        cand_logq = 0.0
        fallback = False
        if self.log_c is None:
            cand = sample(rng)
            cand_logp = logp_fn(cand)
            cand_logq = logq_fn(cand)
            if self.collecting and math.isfinite(cand_logp):
                self.ratios.append(cand_logp - cand_logq)
        else:
            got = False
            for _ in range(self.max_rejections):
                cand = sample(rng)
                cand_logp = logp_fn(cand)
                cand_logq = logq_fn(cand)
                log_ar = cand_logp - (self.log_c + cand_logq)
                if log_ar >= 0.0 or math.log(rng.uniform()) <= log_ar:
                    got = True
                    break
            if not got:
                fallback = True
                self.n_fallback += 1

        self.n_proposed += 1
        if fallback:
            log_a = min(0.0, cand_logp - current_logp)
        elif self.log_c is None:
            log_a = min(0.0, (cand_logp + current_logq)
                        - (current_logp + cand_logq))
        else:
            if current_logp <= self.log_c + current_logq:
                log_a = 0.0
            elif cand_logp <= self.log_c + cand_logq:
                log_a = (self.log_c + current_logq) - current_logp
            else:
                log_a = min(0.0, (cand_logp + current_logq)
                            - (current_logp + cand_logq))
        accepted = log_a >= 0.0 or math.log(rng.uniform()) <= log_a
        if accepted:
            self.n_accepted += 1
        self.last_flag = 1 if accepted else 0
        self.window.append(self.last_flag)
        return accepted, cand, cand_logp

    def window_rate(self):
        if not self.window:
            return None
        rate = float(np.mean(self.window))
        self.window = []
        return rate

    def rate(self):
        return self.n_accepted / max(self.n_proposed, 1)


def _adapt_scale(scale, rate, lo, hi, factor=1.4, bounds=(1e-4, 1e4)):
    """Widen the proposal when accepting too often, narrow when too rarely."""
    if rate is None:
        return scale
    if rate > hi:
        scale = min(scale * factor, bounds[1])
    elif rate < lo:
        scale = max(scale / factor, bounds[0])
    return scale


def _draw_alpha_t(rng, center, scale, df):
    for _ in range(500):
        a = center + scale * rng.standard_t(df)
        if 0.0 < a <= 2.0:
            return a
    return min(max(center, 0.05), 2.0)


class _LatentEnvelopes:
    """Per-observation envelope constants for the latent block."""

    def __init__(self, n, keep=64):
        self.buf = np.full((n, keep), np.nan)
        self.pos = np.zeros(n, dtype=np.int64)
        self.keep = keep
        self.log_c = None

    def collect(self, idx, ratios):
        pos = self.pos[idx] % self.keep
        self.buf[idx, pos] = ratios
        self.pos[idx] += 1

    def freeze(self, quantile=0.6):
        if self.log_c is not None:
            return
        with np.errstate(all="ignore"):
            q = np.nanquantile(self.buf, quantile, axis=1)
        q[~np.isfinite(q)] = np.inf  # nothing collected: never dominated
        self.log_c = q


def _latent_sweep(rng, idx, cand_fn, logpt_fn, logpf_fn, logq_fn,
                  cur_lpf, cur_lpt, cur_lq, envelopes,
                  max_rounds=_LATENT_AR_CAP):
    """Vectorised accept-reject MH over a batch of latent directions.

    cand_fn(rows, rng) draws candidates for the given row subset; logpt_fn
    screens them in the rejection stage (cheap approximation); logpf_fn
    prices the final move. The acceptance uses the exact density of the
    rejection-filtered proposal q_eff = q * min(1, p_tilde / (c q)), which
    is the classical three-case rule whenever p_tilde is the target itself.
    """
    m = idx.size
    d_cand = None
    cand_lpt = np.full(m, -np.inf)
    cand_lq = np.zeros(m)
    fallback = np.zeros(m, dtype=bool)
    learning = envelopes.log_c is None
    log_c = None if learning else envelopes.log_c[idx]

    active = np.arange(m)
    n_rounds = 0
    total_draws = 0
    while active.size and n_rounds < max_rounds:
        n_rounds += 1
        draws = cand_fn(active, rng)
        if d_cand is None:
            d_cand = np.empty((m,) + draws.shape[1:])
        lpt = logpt_fn(active, draws)
        lq = logq_fn(active, draws)
        total_draws += active.size
        d_cand[active] = draws
        cand_lpt[active] = lpt
        cand_lq[active] = lq
        if learning:
            envelopes.collect(idx[active], lpt - lq)
            active = active[:0]
            break
        log_ar = lpt - (log_c[active] + lq)
        u = np.log(rng.uniform(size=active.size))
        keep = (log_ar >= 0.0) | (u <= log_ar)
        active = active[~keep]
    if active.size:
        fallback[active] = True  # rejection stage exhausted

    cand_lpf = logpf_fn(np.arange(m), d_cand)

    if learning:
        log_a = np.minimum(0.0, (cand_lpf + cur_lq) - (cur_lpf + cand_lq))
    else:
        num = cand_lpf + np.minimum(log_c + cur_lq, cur_lpt)
        den = cur_lpf + np.minimum(log_c + cand_lq, cand_lpt)
        log_a = np.minimum(0.0, num - den)
        if np.any(fallback):
            log_a[fallback] = np.minimum(
                0.0, cand_lpf[fallback] - cur_lpf[fallback])
    accept = np.log(rng.uniform(size=m)) <= log_a
    stats = {"draws": total_draws, "fallback": int(fallback.sum()),
             "accepted": int(accept.sum())}
    return accept, d_cand, cand_lpf, cand_lpt, cand_lq, stats


def _burn_phases(auto_burn, burn):
    """(adapt_end, c_freeze) sweep indices for the burn-in schedule."""
    if auto_burn:
        return 2000, 3000
    return max(1, int(burn * 0.6)), max(2, int(burn * 0.8))


def _geweke_ok(monitor, threshold=1.96):
    zs = []
    for series in monitor:
        x = np.asarray(series[-10_000:])
        if x.size < 10_000:
            return False, []
        try:
            zs.append(float(geweke_diagnostic(x)))
        except ValueError:
            zs.append(float("inf"))
    return all(abs(z) < threshold for z in zs), zs


def _gn_stencil_offsets(d, grad_step=1e-5, hess_step=1e-4):
    """Central-difference stencil: centre, gradient pairs, Hessian pairs."""
    pts = [np.zeros(d)]
    for i in range(d):
        e = np.zeros(d)
        e[i] = grad_step
        pts.append(e.copy())
        pts.append(-e)
    for i in range(d):
        e = np.zeros(d)
        e[i] = hess_step
        pts.append(e.copy())
        pts.append(-e)
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    e = np.zeros(d)
                    e[i] = si * hess_step
                    e[j] = sj * hess_step
                    pts.append(e)
    return np.asarray(pts)


def _gn_build(logp_grid, d, grad_step=1e-5, hess_step=1e-4):
    """Gradient and Hessian per observation from stencil evaluations.

    logp_grid has one row per observation, columns ordered as emitted by
    _gn_stencil_offsets.
    """
    m = logp_grid.shape[0]
    grad = np.empty((m, d))
    hess = np.empty((m, d, d))
    f0 = logp_grid[:, 0]
    col = 1
    for i in range(d):
        grad[:, i] = (logp_grid[:, col] - logp_grid[:, col + 1]) \
            / (2.0 * grad_step)
        col += 2
    for i in range(d):
        hess[:, i, i] = (logp_grid[:, col] - 2.0 * f0
                         + logp_grid[:, col + 1]) / hess_step ** 2
        col += 2
    for i in range(d):
        for j in range(i + 1, d):
            hij = (logp_grid[:, col] - logp_grid[:, col + 1]
                   - logp_grid[:, col + 2] + logp_grid[:, col + 3]) \
                / (4.0 * hess_step ** 2)
            hess[:, i, j] = hess[:, j, i] = hij
            col += 4
    return grad, hess


def _wrap_up(kind, records, blocks, latent_stats, extra_rates, geweke_history,
             burn_used, thin, seed, config, t_start):
    rates = {name: blk.rate() for name, blk in blocks.items()}
    rates["latent"] = latent_stats["accepted"] / max(
        latent_stats["proposed"], 1)
    rates.update(extra_rates)
    fallbacks = {name: blk.n_fallback for name, blk in blocks.items()}
    fallbacks["latent"] = latent_stats["fallback"]
    fallbacks["latent_fraction"] = latent_stats["fallback"] / max(
        latent_stats["proposed"], 1)
    common = dict(
        kind=kind,
        iters=np.asarray(records["iter"], dtype=np.int64),
        alpha=np.asarray(records["alpha"]),
        zeta=np.asarray(records["zeta"]),
        log_post=np.asarray(records["log_post"]),
        accept_rates=rates,
        accept_flags=np.asarray(records["flags"], dtype=np.int64),
        geweke_history=geweke_history,
        fallback_counts=fallbacks,
        burn_in_used=burn_used,
        thin=thin,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        config=config,
        runtime_seconds=time.time() - t_start,
    )
    if kind == "discrete":
        common["gamma"] = np.asarray(records["gamma"])
        common["atoms"] = np.asarray(records["atoms"])
    else:
        common["mu"] = np.asarray(records["mu"])
        common["omega"] = np.asarray(records["omega"])
    return Trace(**common)


# ---------------------------------------------------------------------------
# discrete approximation


def run_mcmc_discrete(data: np.ndarray, j_atoms: int, *, burn_in=5000,
                      n_main: int = 20_000, thin: int = 10, seed=0,
                      ridge: float = 0.01, k_tau: int | None = None,
                      quad: QuadConfig = SAMPLER_QUAD,
                      proposal_quad: QuadConfig = PROPOSAL_QUAD,
                      config: ProposalConfig | None = None,
                      b_projections: int | None = None,
                      latent_fraction: float = 0.25,
                      max_burn_in: int = 50_000,
                      support_subsample: int = 96,
                      gamma_uniform_burnin: bool = False,
                      zeta_prior_sd: float | None = None,
                      verbose: bool = False) -> Trace:
    """Posterior sampler for the discrete-approximation model.

    data must already be scaled sensibly (the CLI pipeline median-scales
    first). burn_in is an integer or "auto" (Geweke-terminated every 10,000
    sweeps, capped at max_burn_in). Latent directions are refreshed on a
    rotating subset covering every observation each 1/latent_fraction
    sweeps, which leaves the target invariant.
    """
    t_start = time.time()
    data = np.ascontiguousarray(data, dtype=float)
    n, d = data.shape
    if j_atoms < 1:
        raise ValueError("need at least one atom")
    if k_tau is None:
        k_tau = 10 * j_atoms
    cfg = config or ProposalConfig()
    rng = as_generator(seed)

    auto_burn = burn_in == "auto"
    burn_cap = max_burn_in if auto_burn else int(burn_in)
    adapt_end, c_freeze = _burn_phases(auto_burn, burn_cap)

    # ---- initialisation --------------------------------------------------
    ml = projection_ml_summary(data, b_projections or min(10 * d, 20), rng)
    alpha = float(min(max(snap_alpha(min(max(ml.alpha_bar, 0.15), 2.0)), 0.15),
                      2.0))
    zeta = ml.zeta_center.copy()
    atoms = gaussian_normalized_grid(d, j_atoms, rng).points
    tau_grid = gaussian_normalized_grid(d, k_tau, rng).points
    system = build_cf_system(atoms, tau_grid, alpha, ridge, data=data,
                             rescale=False)
    gamma_hat0, _ = solve_gamma(system)
    gamma = np.clip(gamma_hat0, 1e-6, None)
    latents = uniform_sphere(d, n, rng).points

    terms = _terms_discrete(data, latents, zeta, atoms, gamma, alpha, quad)
    sum_terms = float(np.sum(terms))
    if not math.isfinite(sum_terms):
        raise ChainDivergedError("initial state outside the support")

    h_theta = 2.0
    h_support = cfg.h
    a_zeta = max(4.0 * math.sqrt(ml.zeta_var), 1e-6)
    log_c0 = None if cfg.envelope_c is None else math.log(cfg.envelope_c)
    blocks = {name: _BlockMH(name, cfg.max_ar_rejections, log_c0)
              for name in ("gamma", "theta", "support")}
    envelopes = _LatentEnvelopes(n)
    latent_stats = {"proposed": 0, "accepted": 0, "fallback": 0, "draws": 0}

    sub_idx = rng.permutation(n)[:min(support_subsample, n)]
    sub_scale = n / sub_idx.size
    stride = max(1, int(round(1.0 / latent_fraction)))

    monitor = [[] for _ in range(d + 2)]  # alpha, zeta coords, total mass
    gamma_lo = gamma_hi = None
    gamma_draws_burn = []
    records = {"iter": [], "alpha": [], "zeta": [], "gamma": [], "atoms": [],
               "log_post": [], "flags": []}
    geweke_history = []
    in_main = False
    sweeps_main = 0
    sweep = 0
    burn_used = 0
    phi = 1.0

    def cf_quad(design, gam, phi_):
        resid = system.response - design @ gam
        return (-(float(resid @ resid) + ridge * float(gam @ gam))
                / (2.0 * phi_ ** 2))

    m_rows = system.response.size

    def cf_profile(design):
        """Ridge solution and profiled noise scale for a candidate design.

        The phi^-(n+1) factor evaluated at the profile carries the
        characteristic-function information about alpha and the support
        points; without it the profiled quadratic form is flat.
        """
        a_mat = design.T @ design + ridge * np.eye(j_atoms)
        gamma_hat = np.linalg.solve(a_mat, design.T @ system.response)
        resid = system.response - design @ gamma_hat
        phi_ = float(np.sqrt(max(np.mean(resid ** 2), 1e-12)))
        return a_mat, gamma_hat, phi_

    def cf_block(design, gam, phi_):
        return -(n + 1.0) * math.log(phi_) + cf_quad(design, gam, phi_)

    def zeta_logprior(z):
        if zeta_prior_sd is None:
            return 0.0
        return -0.5 * float(z @ z) / zeta_prior_sd ** 2

    while True:
        burn_phase = not in_main
        collecting = burn_phase and adapt_end <= sweep < c_freeze
        for blk in blocks.values():
            blk.collecting = collecting

        # ---- spectral weights (Eq.-(24)-style truncated-normal proposal) --
        design = _psi_design(system.tau_grid, atoms, alpha)
        a_mat, gamma_hat, phi = cf_profile(design)
        cov_g = phi ** 2 * np.linalg.inv(a_mat)
        prec_scaled = a_mat / phi ** 2

        use_uniform_gamma = (gamma_uniform_burnin and burn_phase
                             and gamma_lo is not None)

        def gamma_sample(r):
            if use_uniform_gamma:
                return r.uniform(gamma_lo, gamma_hi)
            from .spectral import draw_gamma_truncated
            return draw_gamma_truncated(gamma_hat, cov_g, r,
                                        max_rejections=50)

        cache = {}

        def gamma_logp(g):
            if np.any(g < 0.0) or not np.any(g > 0.0):
                return -math.inf
            t = _terms_discrete(data, latents, zeta, atoms, g, alpha, quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            cache["gamma_terms"] = t
            return s + cf_block(design, g, phi)

        def gamma_logq(g):
            if use_uniform_gamma:
                return 0.0 if np.all((g >= gamma_lo) & (g <= gamma_hi)) \
                    else -math.inf
            r = g - gamma_hat
            return -0.5 * float(r @ prec_scaled @ r)

        cur_logp = sum_terms + cf_block(design, gamma, phi)
        blk = blocks["gamma"]
        accepted, cand, _ = blk.step(rng, cur_logp, gamma_logq(gamma),
                                     gamma_sample, gamma_logp, gamma_logq)
        if accepted and cand is not None:
            gamma = cand
            terms = cache["gamma_terms"]
            sum_terms = float(np.sum(terms))

        # ---- (alpha, zeta) -------------------------------------------------
        alpha_scale = math.sqrt(h_theta * ml.alpha_var)
        zeta_scale = math.sqrt(h_theta * ml.zeta_var)

        def theta_sample(r):
            a = _draw_alpha_t(r, ml.alpha_bar, alpha_scale, cfg.student_t_df)
            if burn_phase:
                z = ml.zeta_center + r.uniform(-a_zeta, a_zeta, size=d)
            else:
                z = ml.zeta_center + zeta_scale \
                    * r.standard_t(cfg.student_t_df, size=d)
            return np.concatenate([[a], z])

        def theta_logq(th):
            lq = float(_student_t_logpdf(th[0], cfg.student_t_df,
                                         ml.alpha_bar, alpha_scale))
            if burn_phase:
                if np.any(np.abs(th[1:] - ml.zeta_center) > a_zeta):
                    return -math.inf
                return lq
            return lq + float(np.sum(_student_t_logpdf(
                th[1:], cfg.student_t_df, ml.zeta_center, zeta_scale)))

        def theta_logp(th):
            a, z = th[0], th[1:]
            if not (0.0 < a <= 2.0):
                return -math.inf
            a = snap_alpha(a)
            des = _psi_design(system.tau_grid, atoms, a)
            _, _, phi_c = cf_profile(des)
            t = _terms_discrete(data, latents, z, atoms, gamma, a, quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            cache["theta_terms"] = t
            cache["theta_design"] = des
            cache["theta_phi"] = phi_c
            return s + cf_block(des, gamma, phi_c) + zeta_logprior(z)

        cur_logp = sum_terms + cf_block(design, gamma, phi) \
            + zeta_logprior(zeta)
        blk = blocks["theta"]
        accepted, cand, _ = blk.step(
            rng, cur_logp, theta_logq(np.concatenate([[alpha], zeta])),
            theta_sample, theta_logp, theta_logq)
        if accepted and cand is not None:
            alpha = float(snap_alpha(cand[0]))
            zeta = np.asarray(cand[1:], dtype=float).copy()
            terms = cache["theta_terms"]
            sum_terms = float(np.sum(terms))
            design = cache["theta_design"]
            phi = cache["theta_phi"]

        # ---- support points (grouped move, subsampled screening) -----------
        # A joint uniform redraw of all atoms is never competitive against
        # an adapted state at realistic n, so most sweeps make a grouped
        # random walk on the sphere (symmetric, plain MH); every tenth
        # sweep keeps the global uniform redraw through the accept-reject
        # machinery so distant configurations stay reachable.
        uniform_sweep = sweep % 10 == 9

        def support_rw(r):
            y = atoms + math.sqrt(h_support) * r.standard_normal(
                (j_atoms, d))
            return y / np.linalg.norm(y, axis=1, keepdims=True)

        def support_uniform(r):
            z = r.standard_normal((j_atoms, d))
            return z / np.linalg.norm(z, axis=1, keepdims=True)

        def support_logpt(at):
            t = _terms_discrete(data[sub_idx], latents[sub_idx], zeta, at,
                                gamma, alpha, proposal_quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            des = _psi_design(system.tau_grid, at, alpha)
            _, _, phi_c = cf_profile(des)
            return sub_scale * s + cf_block(des, gamma, phi_c)

        def support_logp(at):
            t = _terms_discrete(data, latents, zeta, at, gamma, alpha, quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            des = _psi_design(system.tau_grid, at, alpha)
            _, _, phi_c = cf_profile(des)
            cache["support_terms"] = t
            cache["support_design"] = des
            cache["support_phi"] = phi_c
            return s + cf_block(des, gamma, phi_c)

        blk = blocks["support"]
        cur_logp = sum_terms + cf_block(design, gamma, phi)
        blk.n_proposed += 1
        if not uniform_sweep:
            # symmetric grouped random walk
            cand_at = support_rw(rng)
            cand_lp = support_logp(cand_at)
            log_a = min(0.0, cand_lp - cur_logp)
        elif blk.log_c is None:
            cand_at = support_uniform(rng)
            cand_lp = support_logp(cand_at)
            if blk.collecting and math.isfinite(cand_lp):
                blk.ratios.append(support_logpt(cand_at))
            log_a = min(0.0, cand_lp - cur_logp)  # uniform proposal
        else:
            cur_tilde = support_logpt(atoms)
            got = False
            cand_tilde = -math.inf
            cand_at = None
            for _ in range(min(blk.max_rejections, 200)):
                cand_at = support_uniform(rng)
                cand_tilde = support_logpt(cand_at)
                log_ar = cand_tilde - blk.log_c
                if log_ar >= 0.0 or math.log(rng.uniform()) <= log_ar:
                    got = True
                    break
            cand_lp = support_logp(cand_at)
            if not got:
                blk.n_fallback += 1
                log_a = min(0.0, cand_lp - cur_logp)
            else:
                num = cand_lp + min(blk.log_c, cur_tilde)
                den = cur_logp + min(blk.log_c, cand_tilde)
                log_a = min(0.0, num - den)
        if log_a >= 0.0 or math.log(rng.uniform()) <= log_a:
            blk.n_accepted += 1
            blk.last_flag = 1
            atoms = cand_at
            terms = cache["support_terms"]
            sum_terms = float(np.sum(terms))
            design = cache["support_design"]
            phi = cache["support_phi"]
        else:
            blk.last_flag = 0
        blk.window.append(blk.last_flag)

        # ---- latent directions (rotating subset, uniform proposals) --------
        idx = np.arange(sweep % stride, n, stride)
        if idx.size:
            x_sub = data[idx]

            def lat_cand(rows, r):
                z = r.standard_normal((rows.size, d))
                return z / np.linalg.norm(z, axis=1, keepdims=True)

            def lat_logp(rows, s_rows):
                return _terms_discrete(x_sub[rows], s_rows, zeta, atoms,
                                       gamma, alpha, quad)

            def lat_logq(rows, s_rows):
                return np.zeros(rows.size)

            cur_lp = terms[idx]
            zeros = np.zeros(idx.size)
            accept, cand_s, cand_lpf, _, _, st = _latent_sweep(
                rng, idx, lat_cand, lat_logp, lat_logp, lat_logq,
                cur_lp, cur_lp, zeros, envelopes)
            upd = idx[accept]
            latents[upd] = cand_s[accept]
            terms[upd] = cand_lpf[accept]
            sum_terms = float(np.sum(terms))
            latent_stats["proposed"] += idx.size
            latent_stats["accepted"] += st["accepted"]
            latent_stats["fallback"] += st["fallback"]
            latent_stats["draws"] += st["draws"]

        # ---- bookkeeping ----------------------------------------------------
        log_post = sum_terms + cf_block(design, gamma, phi) \
            + zeta_logprior(zeta)
        if not math.isfinite(log_post):
            raise ChainDivergedError(
                "log posterior became non-finite",
                state={"sweep": sweep, "alpha": float(alpha),
                       "zeta": zeta.tolist(), "gamma": gamma.tolist(),
                       "atoms": atoms.tolist()})

        if verbose and (sweep + 1) % 500 == 0:
            print(f"sweep {sweep + 1} ({'burn' if burn_phase else 'main'}) "
                  f"alpha={alpha:.3f} logpost={log_post:.1f} "
                  f"{time.time() - t_start:.1f}s", flush=True)

        if burn_phase:
            monitor[0].append(alpha)
            for i in range(d):
                monitor[1 + i].append(float(zeta[i]))
            monitor[d + 1].append(float(np.sum(gamma)))
            if gamma_uniform_burnin:
                gamma_draws_burn.append(gamma.copy())
            if sweep < adapt_end and (sweep + 1) % 200 == 0:
                rate = blocks["theta"].window_rate()
                h_theta = _adapt_scale(h_theta, rate, *cfg.target_accept)
                a_zeta = _adapt_scale(a_zeta, rate, *cfg.target_accept)
                # random-walk width: narrow when rejecting, widen when easy
                rate_s = blocks["support"].window_rate()
                if rate_s is not None:
                    if rate_s < cfg.target_accept[0]:
                        h_support = max(h_support / 1.4, 1e-5)
                    elif rate_s > cfg.target_accept[1]:
                        h_support = min(h_support * 1.4, 50.0)
                blocks["gamma"].window = []
            if sweep + 1 == adapt_end and gamma_uniform_burnin \
                    and gamma_draws_burn:
                gd = np.asarray(gamma_draws_burn)
                gamma_lo = np.quantile(gd, 0.005, axis=0)
                gamma_hi = np.quantile(gd, 0.995, axis=0)
            if sweep + 1 == c_freeze:
                for b in blocks.values():
                    b.freeze_c()
                envelopes.freeze()
            end_burn = False
            if auto_burn:
                if (sweep + 1) % 10_000 == 0:
                    ok, zs = _geweke_ok(monitor)
                    geweke_history.append({"sweep": sweep + 1, "z": zs})
                    if ok or sweep + 1 >= max_burn_in:
                        end_burn = True
            elif sweep + 1 >= burn_cap:
                end_burn = True
            if end_burn:
                in_main = True
                burn_used = sweep + 1
                for b in blocks.values():
                    b.freeze_c()
                envelopes.freeze()
        else:
            if sweeps_main % thin == 0:
                records["iter"].append(sweep)
                records["alpha"].append(alpha)
                records["zeta"].append(zeta.copy())
                records["gamma"].append(gamma.copy())
                records["atoms"].append(atoms.copy())
                records["log_post"].append(log_post)
                records["flags"].append([blocks["gamma"].last_flag,
                                         blocks["theta"].last_flag,
                                         blocks["support"].last_flag])
            sweeps_main += 1
            if sweeps_main >= n_main:
                break
        sweep += 1

    return _wrap_up(
        "discrete", records, blocks, latent_stats, {}, geweke_history,
        burn_used, thin, seed,
        {"J": j_atoms, "K": k_tau, "ridge": ridge, "n_main": n_main,
         "burn_in": burn_used, "quad_nodes": quad.nodes_per_interval,
         "weight_rel_tol": quad.weight_rel_tol,
         "latent_fraction": latent_fraction, "h_theta_final": h_theta,
         "h_support": h_support, "phi_final": phi}, t_start)


# ---------------------------------------------------------------------------
# normal approximation


def run_mcmc_normal(data: np.ndarray, *, burn_in=5000, n_main: int = 20_000,
                    thin: int = 10, seed=0, mc_size: int = 5000,
                    quad: QuadConfig = SAMPLER_QUAD,
                    proposal_quad: QuadConfig = PROPOSAL_QUAD,
                    config: ProposalConfig | None = None,
                    b_projections: int | None = None,
                    latent_fraction: float = 0.1,
                    max_burn_in: int = 50_000,
                    zeta_prior_sd: float | None = None,
                    verbose: bool = False) -> Trace:
    """Posterior sampler for the normal-approximation model.

    The mc_size Gaussian draws behind the projection functions are frozen
    per chain (common random numbers) so the chain targets a fixed
    deterministic approximation of the likelihood.

    For d = 2 the (alpha, zeta) and (mu, omega) blocks work on the exact
    collapsed likelihood (the signed sphere integral of the projection
    kernel, evaluated through a per-chain kernel table): the kernel is
    genuinely signed for d >= 2, so a latent-augmented likelihood clamped
    at zero loses the tail-index information. Latent directions are still
    sampled every sweep with the Gauss-Newton proposal against their
    (clamped) conditionals, matching the published scheme's mechanics, but
    parameter updates no longer depend on them. For d > 2 (or alpha
    windows straddling 1) the latent-based likelihood is used as written,
    with a warning.
    """
    t_start = time.time()
    data = np.ascontiguousarray(data, dtype=float)
    n, d = data.shape
    cfg = config or ProposalConfig()
    rng = as_generator(seed)

    auto_burn = burn_in == "auto"
    burn_cap = max_burn_in if auto_burn else int(burn_in)
    adapt_end, c_freeze = _burn_phases(auto_burn, burn_cap)

    # ---- initialisation --------------------------------------------------
    ml = projection_ml_summary(data, b_projections or min(10 * d, 20), rng)
    alpha = float(min(max(snap_alpha(min(max(ml.alpha_bar, 0.15), 2.0)), 0.15),
                      2.0))
    zeta = ml.zeta_center.copy()
    mu = 0.0
    omega = 1.0
    z_cloud = rng.standard_normal((mc_size, d))  # frozen per chain

    def norm_cloud(mu_, om_):
        c = mu_ + om_ * z_cloud
        nrm = np.linalg.norm(c, axis=1)
        nrm[nrm < 1e-12] = 1e-12
        return c / nrm[:, None]

    cloud = norm_cloud(mu, omega)
    cloud_prop = cloud[:_GN_M]
    latents = uniform_sphere(d, n, rng).points

    # collapsed (latent-free) likelihood for the parameter blocks where it
    # is available; the latent-based product otherwise
    use_marginal = d == 2 and 1.15 <= ml.alpha_bar
    if use_marginal:
        table = GTable(ml.alpha_bar - 0.45,
                       min(ml.alpha_bar + 0.45, 2.0))
        marg = CircleMarginal(data, table)
        k_full = marg.s_full.shape[0]
        coarse_step = 16
        s_coarse = marg.s_full[::coarse_step]
        th_full = 2.0 * math.pi * np.arange(k_full) / k_full
        th_coarse = th_full[::coarse_step]
        th_ext = np.append(th_coarse, 2.0 * math.pi)

        def marg_terms(z, a, cl):
            # sigma^alpha and beta are smooth on the circle: evaluate on the
            # coarse grid and interpolate periodically onto the full one
            if not marg.table.contains(a):
                return None
            sa_c, b_c = sigma_beta_cloud_batch(s_coarse, cl, a)
            sa_full = np.interp(th_full, th_ext, np.append(sa_c, sa_c[0]))
            b_full = np.interp(th_full, th_ext, np.append(b_c, b_c[0]))
            return marg.loglik_terms(z, a, sa_full, b_full)

        mterms = marg_terms(zeta, alpha, cloud)
        if mterms is None:
            raise ChainDivergedError(
                "initial alpha outside the kernel-table window")
        sum_mterms = float(np.sum(mterms))
        if not math.isfinite(sum_mterms):
            raise ChainDivergedError("initial state outside the support")
    else:
        import warnings
        warnings.warn(
            "collapsed likelihood unavailable (needs d = 2 and a "
            "projection-ML alpha comfortably above 1); parameter updates "
            "fall back to the clamped latent-based likelihood, which is "
            "unreliable for the tail index")
        mterms = None
        sum_mterms = 0.0

    terms = _terms_cloud(data, latents, zeta, cloud, alpha, quad)
    sum_terms = float(np.sum(terms))
    if not use_marginal and not math.isfinite(sum_terms):
        raise ChainDivergedError("initial state outside the support")

    h_theta = 2.0
    h_latent = cfg.h
    h_mu = 0.2
    a_zeta = max(4.0 * math.sqrt(ml.zeta_var), 1e-6)
    mu_center, mu_scale = 0.0, 0.1  # frozen from burn-in draws at c_freeze
    mu_frozen = False
    mu_burn = []

    log_c0 = None if cfg.envelope_c is None else math.log(cfg.envelope_c)
    blocks = {name: _BlockMH(name, cfg.max_ar_rejections, log_c0)
              for name in ("theta", "mu_omega")}
    envelopes = _LatentEnvelopes(n)
    latent_stats = {"proposed": 0, "accepted": 0, "fallback": 0, "draws": 0}
    gn_fallback_uniform = 0

    stride = max(1, int(round(1.0 / latent_fraction)))
    offsets = _gn_stencil_offsets(d)
    n_sten = offsets.shape[0]

    monitor = [[] for _ in range(d + 2)]  # alpha, zeta coords, omega
    records = {"iter": [], "alpha": [], "zeta": [], "mu": [], "omega": [],
               "log_post": [], "flags": []}
    geweke_history = []
    in_main = False
    sweeps_main = 0
    sweep = 0
    burn_used = 0

    def omega_block(om):
        return -(n + 1.0) * math.log(om) - n / (2.0 * om ** 2)

    def zeta_logprior(z):
        if zeta_prior_sd is None:
            return 0.0
        return -0.5 * float(z @ z) / zeta_prior_sd ** 2

    while True:
        burn_phase = not in_main
        collecting = burn_phase and adapt_end <= sweep < c_freeze
        for blk in blocks.values():
            blk.collecting = collecting

        # ---- latent directions (rotating subset, Gauss-Newton proposals) --
        idx = np.arange(sweep % stride, n, stride)
        if idx.size:
            m = idx.size
            x_sub = data[idx]
            s_sub = latents[idx]

            # stencil evaluations at proposal accuracy
            pts = (s_sub[:, None, :] + offsets[None, :, :]).reshape(-1, d)
            x_rep = np.repeat(x_sub, n_sten, axis=0)
            sig_a, betas = sigma_beta_cloud_batch(pts, cloud_prop, alpha)
            lp_grid = _proj_terms(x_rep, pts, zeta, alpha, sig_a, betas,
                                  proposal_quad).reshape(m, n_sten)
            grad, hess = _gn_build(lp_grid, d)

            bad = ~(np.all(np.isfinite(grad), axis=1)
                    & np.all(np.isfinite(hess.reshape(m, -1)), axis=1))
            gn_fallback_uniform += int(bad.sum())
            grad[bad] = 0.0
            hess[bad] = -np.eye(d)

            neg_h = -hess
            evals, evecs = np.linalg.eigh(neg_h)
            lam_min = evals[:, 0]
            shift = np.where(lam_min <= 0.0, np.abs(lam_min) + 1e-6, 0.0)
            # floor keeps flat conditionals (clamped regions) proposable
            evals = np.maximum(evals + shift[:, None], 1e-2)
            # proposal centre: one Newton step, clipped to an O(1) move
            ginv = np.einsum("mij,mj,mkj->mik", evecs, 1.0 / evals, evecs)
            step = np.einsum("mij,mj->mi", ginv, grad)
            step_norm = np.linalg.norm(step, axis=1, keepdims=True)
            step = np.where(step_norm > 2.0, step * (2.0 / step_norm), step)
            centers = s_sub + step
            # non-finite derivatives: flagged uniform-sphere fallback
            # (centre 0 with unit covariance normalises to uniform)
            centers[bad] = 0.0
            sqrt_cov = np.einsum("mij,mj,mkj->mik", evecs,
                                 math.sqrt(h_latent) / np.sqrt(evals), evecs)
            prec = np.einsum("mij,mj,mkj->mik", evecs, evals / h_latent,
                             evecs)
            logdet_cov = d * math.log(h_latent) \
                - np.sum(np.log(evals), axis=1)

            def lat_cand(rows, r):
                z = r.standard_normal((rows.size, d))
                y = centers[rows] + np.einsum("mij,mj->mi", sqrt_cov[rows], z)
                nrm = np.linalg.norm(y, axis=1, keepdims=True)
                nrm[nrm < 1e-12] = 1e-12
                return y / nrm

            def lat_logq(rows, s_rows):
                r = s_rows - centers[rows]
                q = -0.5 * logdet_cov[rows] \
                    - 0.5 * np.einsum("mi,mij,mj->m", r, prec[rows], r)
                q[bad[rows]] = 0.0
                return q

            def lat_logpt(rows, s_rows):
                sa, bt = sigma_beta_cloud_batch(s_rows, cloud_prop, alpha)
                return _proj_terms(x_sub[rows], s_rows, zeta, alpha, sa, bt,
                                   proposal_quad)

            def lat_logpf(rows, s_rows):
                sa, bt = sigma_beta_cloud_batch(s_rows, cloud, alpha)
                return _proj_terms(x_sub[rows], s_rows, zeta, alpha, sa, bt,
                                   quad)

            if use_marginal:
                # latent terms go stale when parameter blocks move without
                # touching them; refresh the subset being updated
                cur_lpf = lat_logpf(np.arange(m), s_sub)
            else:
                cur_lpf = terms[idx]
            cur_lpt = lat_logpt(np.arange(m), s_sub)
            cur_lq = lat_logq(np.arange(m), s_sub)
            accept, cand_s, cand_lpf, _, _, st = _latent_sweep(
                rng, idx, lat_cand, lat_logpt, lat_logpf, lat_logq,
                cur_lpf, cur_lpt, cur_lq, envelopes)
            upd = idx[accept]
            latents[upd] = cand_s[accept]
            if not use_marginal:
                terms[upd] = cand_lpf[accept]
                sum_terms = float(np.sum(terms))
            latent_stats["proposed"] += m
            latent_stats["accepted"] += st["accepted"]
            latent_stats["fallback"] += st["fallback"]
            latent_stats["draws"] += st["draws"]

        cache = {}

        # ---- (alpha, zeta) -------------------------------------------------
        alpha_scale = math.sqrt(h_theta * ml.alpha_var)
        zeta_scale = math.sqrt(h_theta * ml.zeta_var)

        def theta_sample(r):
            a = _draw_alpha_t(r, ml.alpha_bar, alpha_scale, cfg.student_t_df)
            if burn_phase:
                z = ml.zeta_center + r.uniform(-a_zeta, a_zeta, size=d)
            else:
                z = ml.zeta_center + zeta_scale \
                    * r.standard_t(cfg.student_t_df, size=d)
            return np.concatenate([[a], z])

        def theta_logq(th):
            lq = float(_student_t_logpdf(th[0], cfg.student_t_df,
                                         ml.alpha_bar, alpha_scale))
            if burn_phase:
                if np.any(np.abs(th[1:] - ml.zeta_center) > a_zeta):
                    return -math.inf
                return lq
            return lq + float(np.sum(_student_t_logpdf(
                th[1:], cfg.student_t_df, ml.zeta_center, zeta_scale)))

        def theta_logp(th):
            a, z = th[0], th[1:]
            if not (0.0 < a <= 2.0):
                return -math.inf
            a = snap_alpha(a)
            if use_marginal:
                t = marg_terms(z, a, cloud)
                if t is None:
                    return -math.inf
            else:
                t = _terms_cloud(data, latents, z, cloud, a, quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            cache["theta_terms"] = t
            return s + zeta_logprior(z)

        cur_logp = (sum_mterms if use_marginal else sum_terms) \
            + zeta_logprior(zeta)
        blk = blocks["theta"]
        accepted, cand, _ = blk.step(
            rng, cur_logp, theta_logq(np.concatenate([[alpha], zeta])),
            theta_sample, theta_logp, theta_logq)
        if accepted and cand is not None:
            alpha = float(snap_alpha(cand[0]))
            zeta = np.asarray(cand[1:], dtype=float).copy()
            if use_marginal:
                mterms = cache["theta_terms"]
                sum_mterms = float(np.sum(mterms))
            else:
                terms = cache["theta_terms"]
                sum_terms = float(np.sum(terms))

        # ---- (mu, omega) ----------------------------------------------------
        def mu_omega_sample(r):
            x = r.chisquare(n)
            om = math.sqrt(n / max(x, 1e-12))
            if mu_frozen:
                m_ = mu_center + mu_scale * r.standard_t(cfg.student_t_df)
            else:
                m_ = mu + h_mu * r.standard_t(cfg.student_t_df)
            return np.array([m_, om])

        def mu_omega_logq(mo):
            lq = _chi2_omega_logpdf(mo[1], n)
            if mu_frozen:
                lq += float(_student_t_logpdf(mo[0], cfg.student_t_df,
                                              mu_center, mu_scale))
            # random-walk mu term is symmetric during burn-in and omitted
            return lq

        def mu_omega_logp(mo):
            m_, om = mo
            if om <= 0.0:
                return -math.inf
            cl = norm_cloud(m_, om)
            if use_marginal:
                t = marg_terms(zeta, alpha, cl)
                if t is None:
                    return -math.inf
            else:
                t = _terms_cloud(data, latents, zeta, cl, alpha, quad)
            s = float(np.sum(t))
            if not math.isfinite(s):
                return -math.inf
            cache["mo_terms"] = t
            cache["mo_cloud"] = cl
            return s + omega_block(om)

        cur_logp = (sum_mterms if use_marginal else sum_terms) \
            + omega_block(omega)
        blk = blocks["mu_omega"]
        accepted, cand, _ = blk.step(
            rng, cur_logp, mu_omega_logq(np.array([mu, omega])),
            mu_omega_sample, mu_omega_logp, mu_omega_logq)
        if accepted and cand is not None:
            mu, omega = float(cand[0]), float(cand[1])
            cloud = cache["mo_cloud"]
            cloud_prop = cloud[:_GN_M]
            if use_marginal:
                mterms = cache["mo_terms"]
                sum_mterms = float(np.sum(mterms))
            else:
                terms = cache["mo_terms"]
                sum_terms = float(np.sum(terms))

        # ---- bookkeeping ----------------------------------------------------
        log_post = (sum_mterms if use_marginal else sum_terms) \
            + omega_block(omega) + zeta_logprior(zeta)
        if not math.isfinite(log_post):
            raise ChainDivergedError(
                "log posterior became non-finite",
                state={"sweep": sweep, "alpha": float(alpha),
                       "zeta": zeta.tolist(), "mu": mu, "omega": omega})

        if verbose and (sweep + 1) % 500 == 0:
            print(f"sweep {sweep + 1} ({'burn' if burn_phase else 'main'}) "
                  f"alpha={alpha:.3f} logpost={log_post:.1f} "
                  f"{time.time() - t_start:.1f}s", flush=True)

        if burn_phase:
            monitor[0].append(alpha)
            for i in range(d):
                monitor[1 + i].append(float(zeta[i]))
            monitor[d + 1].append(omega)
            mu_burn.append(mu)
            if sweep < adapt_end and (sweep + 1) % 200 == 0:
                rate = blocks["theta"].window_rate()
                h_theta = _adapt_scale(h_theta, rate, *cfg.target_accept)
                a_zeta = _adapt_scale(a_zeta, rate, *cfg.target_accept)
                rate_mo = blocks["mu_omega"].window_rate()
                h_mu = _adapt_scale(h_mu, rate_mo, *cfg.target_accept)
            if sweep + 1 == adapt_end and not mu_frozen:
                # freeze the mu kernel before envelope calibration so the
                # collected ratios match the main-phase proposal exactly
                tail = np.asarray(mu_burn[len(mu_burn) // 2:])
                mu_center = float(np.mean(tail))
                mu_scale = max(float(np.std(tail)) * 2.0, 1e-3)
                mu_frozen = True
            if sweep + 1 == c_freeze:
                for b in blocks.values():
                    b.freeze_c()
                envelopes.freeze()
            end_burn = False
            if auto_burn:
                if (sweep + 1) % 10_000 == 0:
                    ok, zs = _geweke_ok(monitor)
                    geweke_history.append({"sweep": sweep + 1, "z": zs})
                    if ok or sweep + 1 >= max_burn_in:
                        end_burn = True
            elif sweep + 1 >= burn_cap:
                end_burn = True
            if end_burn:
                in_main = True
                burn_used = sweep + 1
                if not mu_frozen:
                    tail = np.asarray(mu_burn[len(mu_burn) // 2:])
                    mu_center = float(np.mean(tail))
                    mu_scale = max(float(np.std(tail)) * 2.0, 1e-3)
                    mu_frozen = True
                for b in blocks.values():
                    b.freeze_c()
                envelopes.freeze()
        else:
            if sweeps_main % thin == 0:
                records["iter"].append(sweep)
                records["alpha"].append(alpha)
                records["zeta"].append(zeta.copy())
                records["mu"].append(mu)
                records["omega"].append(omega)
                records["log_post"].append(log_post)
                records["flags"].append([blocks["theta"].last_flag,
                                         blocks["mu_omega"].last_flag])
            sweeps_main += 1
            if sweeps_main >= n_main:
                break
        sweep += 1

    return _wrap_up(
        "normal", records, blocks, latent_stats,
        {"gn_uniform_fallbacks": gn_fallback_uniform}, geweke_history,
        burn_used, thin, seed,
        {"M": mc_size, "n_main": n_main, "burn_in": burn_used,
         "quad_nodes": quad.nodes_per_interval,
         "weight_rel_tol": quad.weight_rel_tol,
         "latent_fraction": latent_fraction, "h_theta_final": h_theta,
         "h_latent": h_latent, "h_mu_final": h_mu,
         "mu_center_frozen": mu_center,
         "likelihood": "collapsed" if use_marginal else "latent"}, t_start)
