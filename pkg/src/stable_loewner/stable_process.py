"""Symmetric alpha-stable and truncated alpha-stable driving paths.

All samplers use the convention E[exp(i*theta*S_t)] = exp(-t*|theta|**alpha),
so S_1 is standard Cauchy for alpha = 1 and N(0, 2) for alpha = 2.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import integrate, special

from .errors import NumericalError, ParameterError

SCALE_CONVENTION = "E[exp(i theta S_t)] = exp(-t |theta|^alpha)"


def _check_alpha(alpha, upper_inclusive=True):
    ok = 0.0 < alpha <= 2.0 if upper_inclusive else 0.0 < alpha < 2.0
    if not (np.isfinite(alpha) and ok):
        bound = "(0, 2]" if upper_inclusive else "(0, 2)"
        raise ParameterError(f"alpha must lie in {bound}, got {alpha!r}")


@dataclass(frozen=True)
class StableParams:
    """Index ``alpha`` and time-speed multiplier ``kappa`` (driver is S at time kappa*t)."""

    alpha: float
    kappa: float = 1.0
    scale_convention: str = SCALE_CONVENTION

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ParameterError(f"kappa must be positive, got {self.kappa!r}")
        if self.scale_convention != SCALE_CONVENTION:
            raise ParameterError("only the exp(-t|theta|^alpha) convention is supported")


# ---------------------------------------------------------------------------
# Levy measure constants


def levy_constant_closed_form(alpha):
    """Gamma(1+alpha) sin(pi alpha/2) / pi, used only to cross-check the calibration."""
    _check_alpha(alpha, upper_inclusive=False)
    return special.gamma(1.0 + alpha) * math.sin(math.pi * alpha / 2.0) / math.pi


@lru_cache(maxsize=64)
def levy_constant(alpha):
    """Constant c with  int (1 - cos h) c |h|^(-1-alpha) dh = 1.

    Computed by quadrature so that the Levy measure matches the
    characteristic-function convention at theta = 1.
    """
    _check_alpha(alpha, upper_inclusive=False)
    a = float(alpha)
    # (1 - cos h) h^(-1-a) = [(1 - cos h)/h^2] * h^(1-a) on [0, 1]
    def head(h):
        if h == 0.0:
            return 0.5
        return 2.0 * math.sin(h / 2.0) ** 2 / (h * h)

    near, err1 = integrate.quad(head, 0.0, 1.0, weight="alg", wvar=(1.0 - a, 0.0))
    # int_1^inf h^(-1-a) dh - int_1^inf cos(h) h^(-1-a) dh
    osc, err2 = integrate.quad(lambda h: h ** (-1.0 - a), 1.0, np.inf, weight="cos", wvar=1.0)
    total = near + 1.0 / a - osc
    if err1 + err2 > 1e-7 * abs(total):
        raise NumericalError("Levy constant quadrature did not converge", err1 + err2)
    return 1.0 / (2.0 * total)


def small_jump_variance(alpha, eps, c_alpha=None):
    """Variance per unit time of the jumps smaller than ``eps``: 2 c eps^(2-alpha)/(2-alpha)."""
    c = levy_constant(alpha) if c_alpha is None else c_alpha
    return 2.0 * c * eps ** (2.0 - alpha) / (2.0 - alpha)


def small_jump_rate(alpha, eps, c_alpha=None, cutoff=1.0):
    """Mass of c|h|^(-1-alpha) on eps < |h| <= cutoff."""
    c = levy_constant(alpha) if c_alpha is None else c_alpha
    return 2.0 * c * (eps ** -alpha - cutoff ** -alpha) / alpha


def large_jump_rate(alpha, c_alpha=None):
    """Mass of the Levy measure on |h| > 1 (jumps per unit of stable time)."""
    c = levy_constant(alpha) if c_alpha is None else c_alpha
    return 2.0 * c / alpha


@dataclass(frozen=True)
class TruncationConfig:
    """Levy-Ito split of the truncated process.

    Jumps in (small_jump_threshold, cutoff] are simulated as compound Poisson,
    smaller ones are replaced by a Brownian term of matching variance.
    """

    alpha: float
    small_jump_threshold: float = 1e-3
    cutoff: float = 1.0
    levy_constant: float = field(default=None)

    def __post_init__(self):
        _check_alpha(self.alpha, upper_inclusive=False)
        if self.cutoff != 1.0:
            raise ParameterError("the jump cutoff is fixed at 1")
        eps = self.small_jump_threshold
        if not (0.0 < eps < self.cutoff):
            raise ParameterError(f"small_jump_threshold must lie in (0, 1), got {eps!r}")
        if self.levy_constant is None:
            object.__setattr__(self, "levy_constant", levy_constant(self.alpha))
        elif not self.levy_constant > 0:
            raise ParameterError("levy_constant must be positive")

    @property
    def brownian_variance(self):
        return small_jump_variance(self.alpha, self.small_jump_threshold, self.levy_constant)

    @property
    def jump_rate(self):
        return small_jump_rate(self.alpha, self.small_jump_threshold, self.levy_constant, self.cutoff)


def _check_truncation(params, trunc):
    if trunc.alpha != params.alpha:
        raise ParameterError("TruncationConfig.alpha differs from StableParams.alpha")


# ---------------------------------------------------------------------------
# Samplers


def chambers_mallows_stuck(alpha, v, e):
    """Map V ~ U(-pi/2, pi/2) and E ~ Exp(1) to a standard symmetric stable draw.

    Odd in ``v``, so negating the uniform stream negates the output exactly.
    """
    v = np.asarray(v, dtype=float)
    e = np.asarray(e, dtype=float)
    if alpha == 1.0:
        return np.tan(v)
    if alpha == 2.0:
        return 2.0 * np.sin(v) * np.sqrt(e)
    cos_v = np.cos(v)
    return (np.sin(alpha * v) / cos_v ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / e) ** ((1.0 - alpha) / alpha))


def _standard_stable(alpha, size, rng):
    v = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size)
    e = rng.standard_exponential(size)
    return chambers_mallows_stuck(alpha, v, e)


def sample_stable_increment(params, dt, rng, size=None):
    """Draw S_{t+dt} - S_t (no time speed-up applied; ``params.kappa`` is ignored)."""
    if not (np.isfinite(dt) and dt > 0):
        raise ParameterError(f"dt must be positive, got {dt!r}")
    x = dt ** (1.0 / params.alpha) * _standard_stable(params.alpha, size, rng)
    return float(x) if size is None else x


@dataclass
class LevyPath:
    """A sampled driving path.

    ``values[k]`` is the (right-continuous) value at ``times[k]``.
    ``large_jumps`` is an (m, 2) array of (time, size) with |size| > 1. For a
    grid-sampled stable path these are grid increments exceeding 1 in
    magnitude, a proxy for true jumps; only the recombined construction
    records exact jumps. ``poisson_jumps`` holds the compound-Poisson jumps of
    a truncated path.
    """

    times: np.ndarray
    values: np.ndarray
    large_jumps: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    poisson_jumps: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.large_jumps = np.asarray(self.large_jumps, dtype=float).reshape(-1, 2)
        self.poisson_jumps = np.asarray(self.poisson_jumps, dtype=float).reshape(-1, 2)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ParameterError("times and values must be 1-d arrays of equal length")
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ParameterError("paths start at time 0")
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("times must be strictly increasing")

    @property
    def horizon(self):
        return float(self.times[-1])

    def value_at(self, t):
        """Right-continuous evaluation on the piecewise-constant interpolation."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    def is_large_jump(self):
        """Boolean mask over ``times`` flagging recorded large jumps."""
        mask = np.zeros(self.times.size, dtype=bool)
        if len(self.large_jumps):
            idx = np.searchsorted(self.times, self.large_jumps[:, 0])
            mask[idx] = True
        return mask


def _check_grid(horizon, n_steps):
    if not (np.isfinite(horizon) and horizon > 0):
        raise ParameterError(f"horizon must be positive, got {horizon!r}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ParameterError(f"n_steps must be a positive integer, got {n_steps!r}")


def sample_stable_path(params, horizon, n_steps, rng):
    """Stable path S_{kappa t} on the uniform grid k*horizon/n_steps."""
    _check_grid(horizon, n_steps)
    times = np.linspace(0.0, horizon, int(n_steps) + 1)
    dt = horizon / n_steps
    incr = sample_stable_increment(params, params.kappa * dt, rng, size=int(n_steps))
    values = np.concatenate(([0.0], np.cumsum(incr)))
    big = np.abs(incr) > 1.0
    large = np.column_stack((times[1:][big], incr[big]))
    return LevyPath(times, values, large)


def _exponential_arrivals(rate, horizon, rng):
    """Arrival times of a rate-``rate`` Poisson process on (0, horizon)."""
    if rate <= 0:
        return np.empty(0)
    out = []
    t = 0.0
    batch = max(16, int(rate * horizon * 1.2) + 16)
    while True:
        gaps = rng.standard_exponential(batch) / rate
        arr = t + np.cumsum(gaps)
        keep = arr[arr < horizon]
        out.append(keep)
        if keep.size < arr.size:
            break
        t = arr[-1]
    return np.concatenate(out)


def _random_signs(n, rng):
    return np.where(rng.uniform(-1.0, 1.0, n) < 0.0, -1.0, 1.0)


def sample_small_jump_sizes(trunc, n, rng):
    """I.i.d. jumps with density proportional to |h|^(-1-alpha) on eps < |h| <= 1."""
    a, eps = trunc.alpha, trunc.small_jump_threshold
    top = eps ** -a
    u = rng.random(n)
    mag = (top - u * (top - 1.0)) ** (-1.0 / a)
    return _random_signs(n, rng) * mag


def sample_large_jump_sizes(alpha, n, rng):
    """I.i.d. jumps with density proportional to |h|^(-1-alpha) on |h| > 1."""
    mag = (1.0 - rng.random(n)) ** (-1.0 / alpha)
    return _random_signs(n, rng) * mag


def sample_truncated_path(params, trunc, horizon, n_steps, rng):
    """Truncated stable path hat-S_{kappa t}: compound Poisson jumps at their
    exact arrival times plus a Brownian stand-in for jumps below the threshold."""
    _check_truncation(params, trunc)
    _check_grid(horizon, n_steps)
    grid = np.linspace(0.0, horizon, int(n_steps) + 1)
    jt = _exponential_arrivals(trunc.jump_rate * params.kappa, horizon, rng)
    jt = jt[(jt > 0.0) & ~np.isin(jt, grid)]
    js = sample_small_jump_sizes(trunc, jt.size, rng)

    times = np.union1d(grid, jt)
    dts = np.diff(times)
    sigma = math.sqrt(trunc.brownian_variance * params.kappa)
    incr = sigma * np.sqrt(dts) * rng.standard_normal(dts.size)
    pos = np.searchsorted(times, jt)
    incr[pos - 1] += js
    values = np.concatenate(([0.0], np.cumsum(incr)))
    return LevyPath(times, values, poisson_jumps=np.column_stack((jt, js)))


def sample_truncated_marginal(params, trunc, t, size, rng):
    """Vectorised draws of hat-S_{kappa t} (same construction as the path sampler)."""
    _check_truncation(params, trunc)
    eff = params.kappa * t
    counts = rng.poisson(trunc.jump_rate * eff, size)
    out = math.sqrt(trunc.brownian_variance * eff) * rng.standard_normal(size)
    total = int(counts.sum())
    if total:
        sizes = sample_small_jump_sizes(trunc, total, rng)
        owner = np.repeat(np.arange(size), counts)
        out += np.bincount(owner, weights=sizes, minlength=size)
    return out


def sample_large_jumps(params, horizon, rng):
    """Times and sizes of the jumps of S_{kappa t} exceeding 1 on (0, horizon)."""
    rate = large_jump_rate(params.alpha) * params.kappa
    times = _exponential_arrivals(rate, horizon, rng)
    return times, sample_large_jump_sizes(params.alpha, times.size, rng)


def recombine_large_jumps(truncated_segments, jump_times, jump_sizes):
    """Glue truncated segments together with large jumps inserted at ``jump_times``.

    Segment k covers [T_k, T_{k+1}) in its own clock starting at 0; the value
    at T_k is the left limit plus the jump xi_k.
    """
    jump_times = np.asarray(jump_times, dtype=float)
    jump_sizes = np.asarray(jump_sizes, dtype=float)
    segments = list(truncated_segments)
    if jump_times.shape != jump_sizes.shape or len(segments) != jump_times.size + 1:
        raise ParameterError("need len(segments) == len(jump_times) + 1 == len(jump_sizes) + 1")
    if jump_times.size and (jump_times[0] <= 0 or np.any(np.diff(jump_times) <= 0)):
        raise ParameterError("jump_times must be positive and strictly increasing")
    if np.any(np.abs(jump_sizes) <= 1.0):
        raise ParameterError("large jumps must exceed 1 in magnitude")
    starts = np.concatenate(([0.0], jump_times))
    for k in range(jump_times.size):
        span = segments[k].horizon
        if not math.isclose(span, jump_times[k] - starts[k], rel_tol=1e-9, abs_tol=1e-12):
            raise ParameterError(f"segment {k} spans {span}, expected {jump_times[k] - starts[k]}")

    times, values, poisson = [], [], []
    offset = 0.0
    for k, seg in enumerate(segments):
        last = k == len(segments) - 1
        t = seg.times if last else seg.times[:-1]
        v = seg.values if last else seg.values[:-1]
        times.append(starts[k] + t)
        values.append(offset + v)
        if len(seg.poisson_jumps):
            pj = seg.poisson_jumps.copy()
            pj[:, 0] += starts[k]
            poisson.append(pj)
        if not last:
            offset += seg.values[-1] + jump_sizes[k]
    large = np.column_stack((jump_times, jump_sizes))
    pj = np.concatenate(poisson) if poisson else np.empty((0, 2))
    return LevyPath(np.concatenate(times), np.concatenate(values), large, pj)


def sample_recombined_path(params, trunc, horizon, n_steps, rng):
    """Stable path S_{kappa t} built from truncated pieces and exact large jumps.

    ``n_steps`` sets the grid density (per unit time) of each truncated piece.
    """
    _check_grid(horizon, n_steps)
    jump_times, jump_sizes = sample_large_jumps(params, horizon, rng)
    starts = np.concatenate(([0.0], jump_times))
    ends = np.concatenate((jump_times, [horizon]))
    step = horizon / n_steps
    segments = []
    for a, b in zip(starts, ends):
        n = max(1, int(math.ceil((b - a) / step)))
        segments.append(sample_truncated_path(params, trunc, b - a, n, rng))
    return recombine_large_jumps(segments, jump_times, jump_sizes)


# ---------------------------------------------------------------------------
# Truncated fractional Laplacian


def truncated_frac_laplacian(f, x, alpha, quad_tol=1e-8, c_alpha=None):
    """int_{-1}^{1} (f(x+h) - f(x) - f'(x) h) c |h|^(-1-alpha) dh.

    The odd term integrates to zero over the symmetric domain, so the
    integrand is folded to (f(x+h) + f(x-h) - 2 f(x)) h^(-1-alpha) on (0, 1],
    whose singularity at 0 is O(h^(1-alpha)) and handled by an algebraic weight.
    """
    _check_alpha(alpha, upper_inclusive=False)
    if not quad_tol > 0:
        raise ParameterError("quad_tol must be positive")
    c = levy_constant(alpha) if c_alpha is None else c_alpha
    fx = f(x)

    h_min = 1e-4

    def second_difference(h):
        # QAWS samples the endpoint; fall back to a finite-difference f''(x)
        h = max(h, h_min)
        return (f(x + h) + f(x - h) - 2.0 * fx) / (h * h)

    split = 0.125
    kinks = [p for p in (abs(x),) if split < p < 1.0]
    with warnings.catch_warnings():
        # the achieved error is checked below, so quad's own warning is redundant
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        near, err_near = integrate.quad(second_difference, 0.0, split, weight="alg",
                                        wvar=(1.0 - alpha, 0.0), epsabs=quad_tol / 4,
                                        epsrel=0.0, limit=200)
        far, err_far = integrate.quad(lambda h: second_difference(h) * h ** (1.0 - alpha),
                                      split, 1.0, points=kinks or None, epsabs=quad_tol / 4,
                                      epsrel=0.0, limit=200)
    # rounding in f(x+h) + f(x-h) - 2 f(x) is about 4 eps |f(x)|, amplified by h^(-1-alpha)
    roundoff = 4.0 * np.finfo(float).eps * abs(fx) * h_min ** -alpha / alpha
    err = c * (err_near + err_far + roundoff)
    if not err < quad_tol:
        raise NumericalError(f"quadrature error {err:.3g} exceeds {quad_tol:.3g}", err)
    return c * (near + far)


def truncated_char_exponent(theta, alpha, c_alpha=None):
    """Levy-Khintchine exponent int_{-1}^{1} (cos(theta h) - 1) c |h|^(-1-alpha) dh."""
    c = levy_constant(alpha) if c_alpha is None else c_alpha
    th = float(theta)
    if th == 0.0:
        return 0.0

    def g(h):
        if h == 0.0:
            return -0.5 * th * th
        return -2.0 * math.sin(th * h / 2.0) ** 2 / (h * h)

    val, _ = integrate.quad(g, 0.0, 1.0, weight="alg", wvar=(1.0 - alpha, 0.0),
                            epsabs=1e-12, limit=200)
    return 2.0 * c * val
