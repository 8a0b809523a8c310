"""Finite-blocklength error probability of a scalar mismatched-SNN link.

The link is ``v[k] = g q[k] + z[k]`` with Gaussian codewords ``q ~ CN(0, rho)``,
noise ``z ~ CN(0, sigma2)`` and a decoder that treats ``g_hat`` as the true
channel.  The RCUs tail probability is evaluated with the saddlepoint
approximation (the production path), the normal approximation, and a
Monte-Carlo oracle used only to validate the other two.

All heavy lifting happens in vectorized ``_``-prefixed helpers that operate on
numpy arrays of links, so that a Monte-Carlo engine can evaluate thousands of
fading realizations at once.  The public functions are thin scalar wrappers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr


# Stand-in for an infinite CGF domain endpoint.
_DOMAIN_CAP = 1e6
_ZETA_TOL = 1e-9
_ZETA_MAXITER = 200

REGIMES = ("zeta_in_01", "zeta_gt_1", "zeta_lt_0", "clamped_one")


class InvalidParameterError(ValueError):
    """Link parameters are non-finite or violate their constraints."""


class DomainError(ValueError):
    """A CGF evaluation point lies outside the open domain."""

    def __init__(self, zeta, lo, hi):
        super().__init__(f"zeta={zeta} outside CGF domain ({lo}, {hi})")
        self.zeta = zeta
        self.domain = (lo, hi)


class DegenerateError(ArithmeticError):
    """The information density is (numerically) deterministic."""


@dataclass(frozen=True)
class SaddlepointParams:
    g: complex
    g_hat: complex
    rho: float
    sigma2: float
    s: float
    n: int
    rate_nats: float

    def __post_init__(self):
        vals = (self.g, self.g_hat, self.rho, self.sigma2, self.s, self.rate_nats)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidParameterError(f"non-finite link parameter in {self}")
        if self.s <= 0 or self.sigma2 <= 0 or self.rho < 0:
            raise InvalidParameterError("need s > 0, sigma2 > 0, rho >= 0")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParameterError(f"blocklength must be a positive integer, got {self.n}")
        if self.rate_nats <= 0:
            raise InvalidParameterError("rate must be positive")

    @property
    def log_m(self) -> float:
        return self.n * self.rate_nats


@dataclass(frozen=True)
class CgfEval:
    kappa: float
    kappa1: float
    kappa2: float
    zeta: float
    domain_lo: float
    domain_hi: float


@dataclass(frozen=True)
class ErrorProbResult:
    log_eps: float
    regime: str
    zeta: float
    s_used: float
    crit_rate: float

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)


# ---------------------------------------------------------------------------
# Gaussian tail
# ---------------------------------------------------------------------------

def log_q(x):
    """Natural log of the Gaussian Q-function, stable for large positive x."""
    out = log_ndtr(-np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Vectorized core
# ---------------------------------------------------------------------------

def _betas(g, g_hat, rho, sigma2, s):
    g = np.asarray(g, dtype=complex)
    g_hat = np.asarray(g_hat, dtype=complex)
    snr_hat = s * rho * np.abs(g_hat) ** 2
    beta_a = s * (rho * np.abs(g - g_hat) ** 2 + sigma2)
    beta_b = s * (rho * np.abs(g) ** 2 + sigma2) / (1.0 + snr_hat)
    num = s * s * np.abs(rho * np.abs(g) ** 2 + sigma2 - np.conj(g) * g_hat * rho) ** 2
    nu = num / (beta_a * beta_b * (1.0 + snr_hat))
    return beta_a, beta_b, nu, np.log1p(snr_hat)


def _coeffs(g, g_hat, rho, sigma2, s):
    """CGF coefficients (c, b, a): kappa(z) = -c z - log(1 + b z - a z^2)."""
    beta_a, beta_b, nu, c = _betas(g, g_hat, rho, sigma2, s)
    nu = np.clip(nu, 0.0, 1.0)
    return c, beta_b - beta_a, beta_a * beta_b * (1.0 - nu)


def _domain(b, a):
    """Roots of 1 + b z - a z^2, ordered (lo < 0 < hi); +-inf when absent."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    t = b + np.where(b >= 0, 1.0, -1.0) * np.sqrt(b * b + 4.0 * a)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(a > 0, t / (2.0 * a), np.where(t > 0, np.inf, -np.inf))
        r2 = np.where(t != 0, -2.0 / t, -np.inf)
    r1 = np.where((a <= 0) & (t == 0), np.inf, r1)
    lo = np.minimum(r1, r2)
    hi = np.maximum(r1, r2)
    return lo, hi


def _kappa(c, b, a, z):
    return -z * c - np.log1p(b * z - a * z * z)


def _kappa12(c, b, a, z):
    den = 1.0 + b * z - a * z * z
    r = (b - 2.0 * a * z) / den
    return -c - r, r * r + 2.0 * a / den


def _solve_zeta(c, b, a, rate, lo, hi):
    """Root of kappa'(z) + R on (lo, hi); returns (zeta, clamped_mask)."""
    lo_f = np.maximum(lo, -_DOMAIN_CAP)
    hi_f = np.minimum(hi, _DOMAIN_CAP)
    delta = 1e-8 * (hi_f - lo_f)
    left = lo_f + delta
    right = hi_f - delta
    f_left = _kappa12(c, b, a, left)[0] + rate
    f_right = _kappa12(c, b, a, right)[0] + rate
    # kappa' is increasing, so f(left) <= 0 <= f(right) brackets the root.
    clamp_lo = f_left > 0
    clamp_hi = f_right < 0
    z = np.clip(np.zeros_like(lo_f), left, right)
    z = np.where(clamp_lo, left, np.where(clamp_hi, right, z))
    active = ~(clamp_lo | clamp_hi)
    for _ in range(_ZETA_MAXITER):
        if not active.any():
            break
        k1, k2 = _kappa12(c, b, a, z)
        f = k1 + rate
        done = np.abs(f) <= _ZETA_TOL
        active &= ~done
        left = np.where(active & (f < 0), z, left)
        right = np.where(active & (f > 0), z, right)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = z - f / k2
        bad = ~np.isfinite(step) | (step <= left) | (step >= right)
        z = np.where(active, np.where(bad, 0.5 * (left + right), step), z)
    return z, clamp_lo | clamp_hi


def _log_psi(u, n, k2):
    x = u * np.sqrt(n * k2)
    return 0.5 * x * x + log_q(x)


def _log_sub_exp(x, y):
    """log(e^x - e^y) for x > y."""
    return x + np.log(-np.expm1(y - x))


def _saddlepoint(c, b, a, n, rate):
    """Vectorized saddlepoint evaluation.

    Returns (log_eps, regime_index, zeta, crit_rate) with regime indices into
    ``REGIMES``.
    """
    c, b, a, rate = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c, b, a, rate)))
    shape = c.shape
    log_eps = np.zeros(shape)
    regime = np.full(shape, 3, dtype=np.int8)
    zeta = np.full(shape, np.nan)

    lo, hi = _domain(b, a)
    v0 = b * b + 2.0 * a
    ok = (hi - lo > 1e-12) & (v0 > 1e-300)
    info = c + b

    crit = np.full(shape, -np.inf)
    has_one = ok & (hi > 1.0)
    if has_one.any():
        crit[has_one] = -_kappa12(c[has_one], b[has_one], a[has_one], 1.0)[0]

    gt1 = ok & (rate < crit)
    mid = ok & ~gt1 & (rate <= info)
    neg = ok & (rate > info)

    if gt1.any():
        cc, bb, aa, rr, rc = c[gt1], b[gt1], a[gt1], rate[gt1], crit[gt1]
        k2 = _kappa12(cc, bb, aa, 1.0)[1]
        sq = np.sqrt(n * k2)
        gap = rc - rr
        t1 = n * (gap + 0.5 * k2) + log_q(sq + n * gap / sq)
        t2 = log_q(-n * gap / sq)
        log_eps[gt1] = n * (_kappa(cc, bb, aa, 1.0) + rr) + np.logaddexp(t1, t2)
        regime[gt1] = 1
        zeta[gt1] = np.inf

    rest = mid | neg
    if rest.any():
        cc, bb, aa, rr = c[rest], b[rest], a[rest], rate[rest]
        z, clamped = _solve_zeta(cc, bb, aa, rr, lo[rest], hi[rest])
        kap = _kappa(cc, bb, aa, z)
        k2 = _kappa12(cc, bb, aa, z)[1]
        expo = n * (kap + z * rr)
        is_mid = z >= 0
        le = np.empty_like(z)
        reg = np.empty(z.shape, dtype=np.int8)
        zm = np.clip(z, 0.0, 1.0)
        lp = np.logaddexp(_log_psi(zm, n, k2), _log_psi(1.0 - zm, n, k2))
        le_mid = expo + lp
        zn = np.minimum(z, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            inner = expo + _log_sub_exp(_log_psi(-zn, n, k2), _log_psi(1.0 - zn, n, k2))
            le_neg = np.log(-np.expm1(np.minimum(inner, -1e-300)))
        le = np.where(is_mid, le_mid, le_neg)
        reg = np.where(is_mid, 0, 2).astype(np.int8)
        # A clamp on the zeta < 0 side means the rate is unattainable.
        one = clamped & ~is_mid
        le = np.where(one, 0.0, le)
        reg = np.where(one, 3, reg).astype(np.int8)
        bad = ~np.isfinite(le) & ~(le == -np.inf)
        le = np.where(bad, 0.0, le)
        reg = np.where(bad, 3, reg).astype(np.int8)
        log_eps[rest] = le
        regime[rest] = reg
        zeta[rest] = z

    return np.minimum(log_eps, 0.0), regime, zeta, crit


def log_eps_links(g, g_hat, rho, sigma2, s, n, rate_nats):
    """Saddlepoint log error probability for arrays of links at fixed ``s``."""
    c, b, a = _coeffs(g, g_hat, rho, sigma2, s)
    return _saddlepoint(c, b, a, n, rate_nats)[0]


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def optimize_s_links(g, g_hat, rho, sigma2, n, rate_nats, iters: int = 30, span: float = 2.0,
                     grid: int = 17):
    """Minimize log eps over log10(s), elementwise.

    The bracket is ``log10(s_A) +- span`` with ``s_A = 1/(rho|g - g_hat|^2 +
    sigma2)``, which reduces to ``1/sigma2`` for matched CSI.  Away from its
    optimum the bound saturates at eps = 1, so a plain golden-section search
    can stall on that plateau; a coarse log-grid scan picks the basin first
    and golden-section refines it.  ``s0 = 1/sigma2`` is always a candidate,
    so the result never exceeds the unoptimized value.
    Returns ``(s_star, log_eps_star)``.
    """
    g, g_hat, rho, sigma2 = np.broadcast_arrays(
        np.asarray(g, dtype=complex), np.asarray(g_hat, dtype=complex),
        np.asarray(rho, dtype=float), np.asarray(sigma2, dtype=float))

    def f(log_s):
        return log_eps_links(g, g_hat, rho, sigma2, 10.0 ** log_s, n, rate_nats)

    x0 = -np.log10(sigma2)
    xc = -np.log10(rho * np.abs(g - g_hat) ** 2 + sigma2)
    offsets = np.linspace(-span, span, grid)
    vals = np.stack([f(xc + d) for d in offsets])
    k = np.argmin(vals, axis=0)
    step = offsets[1] - offsets[0]
    lo = xc + offsets[k] - step
    hi = xc + offsets[k] + step
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        xn = np.where(left, hi - _INVPHI * (hi - lo), lo + _INVPHI * (hi - lo))
        fn = f(xn)
        x1, f1, x2, f2 = (np.where(left, xn, x2), np.where(left, fn, f2),
                          np.where(left, x1, xn), np.where(left, f1, fn))
    cands = np.stack([x1, x2, xc + offsets[k], x0])
    fvals = np.stack([f1, f2, np.take_along_axis(vals, k[None], 0)[0], f(x0)])
    j = np.argmin(fvals, axis=0)
    best_x = np.take_along_axis(cands, j[None], 0)[0]
    best_f = np.take_along_axis(fvals, j[None], 0)[0]
    return 10.0 ** best_x, best_f


def log_eps_optimized(g, g_hat, rho, sigma2, n, rate_nats):
    """Per-link log eps with ``s`` optimized; the Monte-Carlo engine entry point."""
    return optimize_s_links(g, g_hat, rho, sigma2, n, rate_nats)[1]


# ---------------------------------------------------------------------------
# Scalar public API
# ---------------------------------------------------------------------------

def betas(g: complex, g_hat: complex, rho: float, sigma2: float, s: float):
    """Return ``(beta_A, beta_B, nu)`` for one link."""
    vals = (g, g_hat, rho, sigma2, s)
    if not all(np.isfinite(v) for v in vals):
        raise InvalidParameterError("non-finite input")
    if s <= 0 or sigma2 <= 0:
        raise InvalidParameterError("need s > 0 and sigma2 > 0")
    beta_a, beta_b, nu, _ = _betas(g, g_hat, rho, sigma2, s)
    nu = float(nu)
    if nu < -1e-9 or nu > 1.0 + 1e-9:
        raise InvalidParameterError(f"nu={nu} outside [0, 1]")
    return float(beta_a), float(beta_b), min(max(nu, 0.0), 1.0)


def cgf_domain(params: SaddlepointParams) -> tuple[float, float]:
    _, b, a = _coeffs(params.g, params.g_hat, params.rho, params.sigma2, params.s)
    lo, hi = _domain(b, a)
    return float(lo), float(hi)


def cgf(params: SaddlepointParams, zeta: float) -> CgfEval:
    """CGF of the negated information density and its first two derivatives."""
    c, b, a = _coeffs(params.g, params.g_hat, params.rho, params.sigma2, params.s)
    lo, hi = (float(v) for v in _domain(b, a))
    if not lo < zeta < hi:
        raise DomainError(zeta, lo, hi)
    k1, k2 = _kappa12(c, b, a, zeta)
    return CgfEval(float(_kappa(c, b, a, zeta)), float(k1), float(k2), float(zeta), lo, hi)


def info_and_dispersion(params: SaddlepointParams) -> tuple[float, float]:
    """Generalized mutual information ``I_s`` and dispersion ``V_s`` in nats."""
    ev = cgf(params, 0.0)
    return -ev.kappa1, ev.kappa2


def solve_zeta(params: SaddlepointParams) -> tuple[float, bool]:
    """Saddlepoint ``zeta`` solving ``R = -kappa'(zeta)``; second item flags a clamp."""
    c, b, a = _coeffs(params.g, params.g_hat, params.rho, params.sigma2, params.s)
    lo, hi = _domain(b, a)
    if not (min(hi, _DOMAIN_CAP) - max(lo, -_DOMAIN_CAP) >= 1e-12) or b * b + 2 * a <= 1e-300:
        raise DegenerateError(f"degenerate CGF domain ({float(lo)}, {float(hi)})")
    z, clamped = _solve_zeta(*(np.atleast_1d(v) for v in (c, b, a, params.rate_nats, lo, hi)))
    return float(z[0]), bool(clamped[0])


def saddlepoint_eps(params: SaddlepointParams) -> ErrorProbResult:
    c, b, a = _coeffs(params.g, params.g_hat, params.rho, params.sigma2, params.s)
    le, reg, z, crit = _saddlepoint(*(np.atleast_1d(v) for v in (c, b, a)), params.n,
                                    np.atleast_1d(params.rate_nats))
    return ErrorProbResult(float(le[0]), REGIMES[int(reg[0])], float(z[0]), params.s, float(crit[0]))


def log_m_minus_1(log_m):
    """``log(e^x - 1)`` evaluated as ``x + log(1 - e^-x)``."""
    log_m = np.asarray(log_m, dtype=float)
    return log_m + np.log(-np.expm1(-log_m))


def normal_approx_eps(params: SaddlepointParams) -> float:
    """Log error probability under the normal approximation."""
    info, disp = info_and_dispersion(params)
    if not disp > 0:
        raise DegenerateError("zero dispersion")
    n = params.n
    arg = (n * info - float(log_m_minus_1(params.log_m))) / math.sqrt(n * disp)
    return float(log_q(arg))


def optimize_s(link, n: int, rate_nats: float) -> tuple[float, ErrorProbResult]:
    """Minimize the saddlepoint error probability over ``s`` for ``link = (g, g_hat, rho, sigma2)``."""
    g, g_hat, rho, sigma2 = link
    SaddlepointParams(g, g_hat, rho, sigma2, 1.0 / sigma2, n, rate_nats)  # validates
    s_star, _ = optimize_s_links(g, g_hat, rho, sigma2, n, rate_nats)
    s_star = float(s_star)
    return s_star, saddlepoint_eps(SaddlepointParams(g, g_hat, rho, sigma2, s_star, n, rate_nats))


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleEstimate:
    eps: float
    ci_lo: float
    ci_hi: float
    num_samples: int

    @property
    def log_ci(self) -> tuple[float, float]:
        return (math.log(self.ci_lo) if self.ci_lo > 0 else -math.inf, math.log(self.ci_hi))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, center - half), min(1.0, center + half)


def info_density(q, v, g_hat, rho, s):
    """Generalized information density of Gaussian codebooks, per symbol."""
    snr_hat = s * rho * abs(g_hat) ** 2
    return -s * np.abs(v - g_hat * q) ** 2 + s * np.abs(v) ** 2 / (1 + snr_hat) + math.log1p(snr_hat)


def _quadratic_form(params: SaddlepointParams):
    # i_s = const - x^H B x with x = [q/sqrt(rho), z/sigma] ~ CN(0, I_2).
    p = params
    sig = math.sqrt(p.sigma2)
    t = p.s / (1.0 + p.s * p.rho * abs(p.g_hat) ** 2)
    alpha = np.array([(p.g - p.g_hat) * math.sqrt(p.rho), sig])
    gamma = np.array([p.g * math.sqrt(p.rho), sig])
    mat = p.s * np.outer(alpha.conj(), alpha) - t * np.outer(gamma.conj(), gamma)
    return math.log1p(p.s * p.rho * abs(p.g_hat) ** 2), np.linalg.eigvalsh(mat)


def rcus_mc_oracle(params: SaddlepointParams, num_samples: int, rng_seed, method: str = "gamma",
                   chunk: int = 200_000) -> OracleEstimate:
    """Monte-Carlo estimate of the RCUs tail probability with a 95% Wilson interval.

    ``method="direct"`` simulates codeword symbols, noise and channel outputs
    literally.  ``method="gamma"`` samples the same sum exactly through its
    representation as a difference of two Gamma(n) variables (the information
    density is a 2x2 Hermitian quadratic form in Gaussians), which makes
    1e7-sample runs cheap.
    """
    if num_samples < 10_000:
        raise ValueError("num_samples must be at least 1e4")
    rng = np.random.default_rng(rng_seed)
    p = params
    log_m1 = float(log_m_minus_1(p.log_m))
    hits = 0
    done = 0
    if method == "gamma":
        const, lam = _quadratic_form(p)
    while done < num_samples:
        m = min(chunk, num_samples - done)
        if method == "gamma":
            gam = rng.standard_gamma(p.n, size=(m, 2))
            total = p.n * const - gam @ lam
        elif method == "direct":
            rows = max(1, min(m, 2_000_000 // p.n))
            m = rows
            q = math.sqrt(p.rho / 2) * (rng.standard_normal((m, p.n)) + 1j * rng.standard_normal((m, p.n)))
            z = math.sqrt(p.sigma2 / 2) * (rng.standard_normal((m, p.n)) + 1j * rng.standard_normal((m, p.n)))
            v = p.g * q + z
            total = info_density(q, v, p.g_hat, p.rho, p.s).sum(axis=1)
        else:
            raise ValueError(f"unknown method {method!r}")
        u = rng.random(m)
        hits += int(np.count_nonzero(total <= log_m1 - np.log(u)))
        done += m
    lo, hi = wilson_interval(hits, done)
    return OracleEstimate(hits / done, lo, hi, done)
