"""Compiled numerical kernels.

The stable projection kernel g(v, beta) is an oscillatory integral that the
samplers evaluate millions of times per chain, so its root-bracketed
Gauss-Legendre evaluation lives here and is compiled with numba when
available (see ``_jit``). No kernel draws random numbers and fastmath stays
off, so the compiled and interpreted paths agree bit for bit.

Evaluation scheme: the cosine phase eta(u) = v*u - beta*tan(pi*alpha/2)*u^alpha
(for alpha = 1, v*u + (2/pi)*beta*u*log u) is marched from u = 0, emitting a
breakpoint each time it crosses a multiple of pi/4 (the first breakpoint at
+-pi/2, matching the k = 1, 3/2, 2, ... ladder). Between breakpoints the
integrand cos(eta(u)) u^(d-1) exp(-u^alpha) completes at most a quarter
period, where fixed-order Gauss-Legendre is essentially exact. The phase has
at most one stationary point, so it is marched piecewise-monotonically.
Quadrature is carried out in u; the truncation point comes from the
gamma-shaped weight in w = u^alpha.
"""

import math

import numpy as np

from ._jit import njit

QUARTER_PI = 0.25 * math.pi
HALF_PI = 0.5 * math.pi


@njit(cache=True)
def _phase(u, v, b, alpha, alpha_is_one):
    # b is beta*tan(pi*alpha/2) for alpha != 1 and beta itself for alpha = 1
    if u <= 0.0:
        return 0.0
    if alpha_is_one:
        return v * u + (2.0 / math.pi) * b * u * math.log(u)
    return v * u - b * u ** alpha


@njit(cache=True)
def _dphase(u, v, b, alpha, alpha_is_one):
    if alpha_is_one:
        return v + (2.0 / math.pi) * b * (math.log(u) + 1.0)
    return v - alpha * b * u ** (alpha - 1.0)


@njit(cache=True)
def _phase_extremum(v, b, alpha, alpha_is_one):
    """Location of the single stationary point of the phase, or -1.0."""
    if alpha_is_one:
        if b == 0.0:
            return -1.0
        # v + (2/pi) b (log u + 1) = 0
        return math.exp(-1.0 - HALF_PI * v / b)
    if b == 0.0 or alpha == 1.0:
        return -1.0
    r = v / (alpha * b)
    if r <= 0.0:
        return -1.0
    return r ** (1.0 / (alpha - 1.0))


@njit(cache=True)
def _solve_level(level, seed, lo, hi, v, b, alpha, a1, use_newton):
    """Solve phase(u) = level on a monotone bracket [lo, hi].

    Newton from `seed` with the analytic derivative; falls back to bisection
    when it leaves the bracket or stalls. The first root of the sequence is
    always located by bisection (use_newton=False).
    """
    if use_newton:
        u = seed
        if u <= lo or u >= hi:
            u = 0.5 * (lo + hi)
        for _ in range(100):
            f = _phase(u, v, b, alpha, a1) - level
            df = _dphase(u, v, b, alpha, a1)
            if df == 0.0 or not math.isfinite(df):
                break
            step = f / df
            un = u - step
            if un <= lo or un >= hi:
                break
            u = un
            if abs(step) <= 1e-14 * (1.0 + abs(u)):
                return u
    # bisection; the bracket straddles the level by construction
    a_ = lo
    b_ = hi
    fa = _phase(a_, v, b, alpha, a1) - level
    for _ in range(200):
        mid = 0.5 * (a_ + b_)
        fm = _phase(mid, v, b, alpha, a1) - level
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (fa > 0.0):
            a_ = mid
            fa = fm
        else:
            b_ = mid
        if b_ - a_ <= 1e-14 * (1.0 + abs(b_)):
            break
    return 0.5 * (a_ + b_)


@njit(cache=True)
def _weight_cutoff(d, alpha, wtol):
    """Truncation point in w = u^alpha.

    Stops where the gamma-shaped weight w^(d/alpha-1) e^(-w) has fallen below
    wtol relative to its peak, floored at max(10*(d/alpha - 1), 10).
    """
    c = d / alpha - 1.0
    if c > 0.0:
        log_mode = c * math.log(c) - c
    else:
        log_mode = 0.0
    log_t = math.log(wtol) + log_mode
    w = max(10.0 * c, 10.0, -log_t)
    for _ in range(80):
        wn = c * math.log(w) - log_t
        if wn < 1.0:
            wn = 1.0
        w = 0.5 * (w + wn)
    return max(w, 10.0 * c, 10.0)


@njit(cache=True)
def _gl_chunk(a, b, v, bb, alpha, a1, d, glx, glw):
    """Gauss-Legendre integral of cos(eta(u)) u^(d-1) exp(-u^alpha) on [a, b]."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    s = 0.0
    dm1 = d - 1
    for i in range(glx.shape[0]):
        u = mid + half * glx[i]
        eta = _phase(u, v, bb, alpha, a1)
        if a1:
            w = math.exp(-u)
        else:
            w = math.exp(-(u ** alpha))
        if dm1 > 0:
            w *= u ** dm1
        s += glw[i] * math.cos(eta) * w
    return s * half


@njit(cache=True)
def _gl_chunk_graded(b, v, bb, alpha, a1, d, glx, glw, splits):
    """Dyadically graded integration of the chunk touching u = 0.

    u^alpha has unbounded derivatives at 0 for alpha < 2, which defeats a
    single Gauss-Legendre rule; on [a, 2a] panels the integrand is analytic
    relative to scale, so a geometric subdivision restores full accuracy.
    """
    if splits <= 0 or alpha == 2.0:
        return _gl_chunk(0.0, b, v, bb, alpha, a1, d, glx, glw)
    lo = b * 2.0 ** (-splits)
    acc = _gl_chunk(0.0, lo, v, bb, alpha, a1, d, glx, glw)
    while lo < b:
        hi = lo * 2.0
        if hi > b:
            hi = b
        acc += _gl_chunk(lo, hi, v, bb, alpha, a1, d, glx, glw)
        lo = hi
    return acc


@njit(cache=True)
def _next_level_index(eta, updir, first_done):
    """Index m of the next pi/4 level beyond phase eta in the march direction.

    Levels with |m| < 2 (phases inside (-pi/2, pi/2)) are skipped until the
    first breakpoint has been located.
    """
    if updir:
        m = int(math.floor(eta / QUARTER_PI + 1e-12)) + 1
        if not first_done and m < 2:
            m = 2
    else:
        m = int(math.ceil(eta / QUARTER_PI - 1e-12)) - 1
        if not first_done and m > -2:
            m = -2
    return m


@njit(cache=True)
def _march(v, beta, alpha, d, glx, glw, wtol, gap_tol, max_intervals,
           first_splits, roots_out, want_roots):
    """Shared phase march: integrates chunk by chunk and/or collects roots.

    Returns (value, n_roots, ok). With want_roots the breakpoints land in
    roots_out (value is still computed; callers ignore what they don't need).
    """
    a1 = alpha == 1.0
    if a1:
        b = beta
    elif alpha == 2.0:
        b = 0.0
    else:
        b = beta * math.tan(HALF_PI * alpha)

    wbar = _weight_cutoff(d, alpha, wtol)
    umax = wbar ** (1.0 / alpha)

    ustar = _phase_extremum(v, b, alpha, a1)
    two_pieces = 0.0 < ustar < umax
    npieces = 2 if two_pieces else 1

    acc = 0.0
    nchunks = 0
    nroots = 0
    u_prev = 0.0       # last breakpoint (left edge of the next chunk)
    eta_prev = 0.0     # phase at the marching position
    first_done = False
    gap_stop = False
    prev_gap = 0.0

    for piece in range(npieces):
        if gap_stop:
            break
        if piece == 0:
            blo = 0.0
            hi = ustar if two_pieces else umax
        else:
            blo = ustar
            hi = umax
            eta_prev = _phase(ustar, v, b, alpha, a1)
        eta_hi = _phase(hi, v, b, alpha, a1)
        updir = eta_hi >= eta_prev
        bracket_lo = max(u_prev, blo)
        while True:
            m = _next_level_index(eta_prev, updir, first_done)
            level = m * QUARTER_PI
            if (updir and level > eta_hi) or (not updir and level < eta_hi):
                break  # piece exhausted before the next level
            seed = u_prev + prev_gap
            root = _solve_level(level, seed, bracket_lo, hi, v, b, alpha, a1,
                                first_done)
            if u_prev == 0.0:
                acc += _gl_chunk_graded(root, v, b, alpha, a1, d, glx, glw,
                                        first_splits)
            else:
                acc += _gl_chunk(u_prev, root, v, b, alpha, a1, d, glx, glw)
            nchunks += 1
            if want_roots and nroots < roots_out.shape[0]:
                roots_out[nroots] = root
                nroots += 1
            if nchunks >= max_intervals or (want_roots
                                            and nroots >= roots_out.shape[0]):
                return np.nan, nroots, False
            gap = root - u_prev
            if first_done and gap < gap_tol:
                # oscillations now faster than gap_tol: the remaining
                # contributions cancel and are dropped
                gap_stop = True
                u_prev = root
                break
            prev_gap = gap
            u_prev = root
            bracket_lo = root
            eta_prev = level
            first_done = True

    if not gap_stop and u_prev < umax:
        if u_prev == 0.0:
            acc += _gl_chunk_graded(umax, v, b, alpha, a1, d, glx, glw,
                                    first_splits)
        else:
            acc += _gl_chunk(u_prev, umax, v, b, alpha, a1, d, glx, glw)

    return acc * (2.0 * math.pi) ** (-d), nroots, True


@njit(cache=True)
def g_kernel(v, beta, alpha, d, glx, glw, wtol, gap_tol, max_intervals,
             first_splits):
    """Projection kernel g_{alpha,d}(v, beta). NaN if max_intervals is hit."""
    dummy = np.empty(0)
    val, _, ok = _march(v, beta, alpha, d, glx, glw, wtol, gap_tol,
                        max_intervals, first_splits, dummy, False)
    if not ok:
        return np.nan
    return val


@njit(cache=True)
def g_batch(vs, betas, alpha, d, glx, glw, wtol, gap_tol, max_intervals,
            first_splits, out):
    """Vector g evaluation; returns False if any entry failed."""
    ok = True
    dummy = np.empty(0)
    for i in range(vs.shape[0]):
        gi, _, oki = _march(vs[i], betas[i], alpha, d, glx, glw, wtol,
                            gap_tol, max_intervals, first_splits, dummy,
                            False)
        out[i] = gi
        if not oki:
            ok = False
    return ok


@njit(cache=True)
def roots_kernel(v, beta, alpha, d, glx, glw, wtol, gap_tol, max_roots):
    """Ascending phase breakpoints (the r_k sequence) and their count."""
    out = np.empty(max_roots)
    _, nroots, _ = _march(v, beta, alpha, d, glx, glw, wtol, gap_tol,
                          max_roots + 1, 0, out, True)
    return out[:nroots]


@njit(cache=True)
def garch11_recursion(x, c, phi, omega, a, b):
    """AR(1)-GARCH(1,1) Gaussian quasi-likelihood recursion.

    Returns (nll, residuals eps, conditional variances sig2) for the model
    x_t = c + phi x_{t-1} + eps_t, sig2_t = omega + a eps_{t-1}^2
    + b sig2_{t-1}, initialised at the sample variance of eps.
    """
    n = x.shape[0]
    m = n - 1
    eps = np.empty(m)
    for t in range(m):
        eps[t] = x[t + 1] - c - phi * x[t]
    mu = 0.0
    for t in range(m):
        mu += eps[t]
    mu /= m
    v0 = 0.0
    for t in range(m):
        v0 += (eps[t] - mu) ** 2
    v0 = max(v0 / m, 1e-12)

    sig2 = np.empty(m)
    s = v0
    nll = 0.0
    for t in range(m):
        if t > 0:
            s = omega + a * eps[t - 1] ** 2 + b * s
        if s < 1e-12:
            s = 1e-12
        sig2[t] = s
        nll += 0.5 * (math.log(s) + eps[t] * eps[t] / s)
    return nll, eps, sig2
