"""Backward-flow dynamics X_t + i Y_t = f_t(z) - W_t, log-derivatives and real-line flows.

Between driver jumps the backward flow is an exact slit map, so the state,
log|f_t'(z)| and first-passage times of Y are all available in closed form
along each constant piece.
"""

from dataclasses import dataclass, replace
import math
import warnings

import numpy as np

from .errors import NumericalError, ParameterError
from .loewner_core import _backward_sqrt, swallow_tolerance
from .reports import proportion_report, run_chunked
from .stable_process import (StableParams, TruncationConfig, _standard_stable,
                             sample_small_jump_sizes)

CENSOR_WARN = 0.10


@dataclass(frozen=True)
class BackwardFlowState:
    t: float
    X: float
    Y: float
    log_deriv: float = 0.0

    @property
    def zeta(self):
        return complex(self.X, self.Y)


@dataclass(frozen=True)
class TimeChangeRecord:
    u: float
    gamma_u: float
    log_deriv: float = math.nan


def step_backward_xy(state, dW, dt):
    """Advance by the exact constant-driver flow over ``dt``, then jump X by -dW."""
    if not state.Y > 0:
        raise NumericalError(f"backward flow state corrupted: Y={state.Y}")
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    zeta, L = state.zeta, state.log_deriv
    if dt > 0:
        new = complex(_backward_sqrt(np.asarray(zeta), dt))
        L += math.log(abs(zeta)) - math.log(abs(new))
        zeta = new
    return BackwardFlowState(state.t + dt, zeta.real - dW, zeta.imag, L)


def _arc_integrand(zeta0, s):
    zeta = complex(_backward_sqrt(np.asarray(zeta0), s))
    x, y = zeta.real, zeta.imag
    r2 = x * x + y * y
    return 2.0 * (x * x - y * y) / (r2 * r2)


def log_deriv_quadrature(zeta0, dt, tol=1e-10, max_depth=60):
    """Adaptive Simpson for int_0^dt 2(X^2-Y^2)/(X^2+Y^2)^2 ds along the
    constant-driver arc started at ``zeta0``; an independent route to the
    closed-form increment used by :func:`step_backward_xy`."""

    def f(s):
        return _arc_integrand(zeta0, s)

    def simpson(a, fa, b, fb):
        m = 0.5 * (a + b)
        fm = f(m)
        return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, fa, b, fb, m, fm, whole, eps, depth):
        lm, flm, left = simpson(a, fa, m, fm)
        rm, frm, right = simpson(m, fm, b, fb)
        delta = left + right - whole
        if depth <= 0:
            raise NumericalError("adaptive Simpson exhausted its depth", abs(delta))
        if abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        return (rec(a, fa, m, fm, lm, flm, left, eps / 2, depth - 1)
                + rec(m, fm, b, fb, rm, frm, right, eps / 2, depth - 1))

    fa, fb = f(0.0), f(dt)
    m, fm, whole = simpson(0.0, fa, dt, fb)
    return rec(0.0, fa, dt, fb, m, fm, whole, tol, max_depth)


def _crossing_time(zeta0, height):
    """s >= 0 at which Im sqrt(zeta0^2 - 4s) equals ``height`` (> Im zeta0)."""
    q = zeta0 * zeta0
    a_star = (q.imag ** 2 - 4.0 * height ** 4) / (4.0 * height ** 2)
    return (q.real - a_star) / 4.0


def _pieces(driver, T):
    if T > driver.horizon * (1 + 1e-12):
        raise ParameterError(f"T={T} exceeds the driver horizon {driver.horizon}")
    bps = driver.breakpoints
    keep = bps < T
    starts = bps[keep]
    ends = np.minimum(np.append(bps[1:], driver.horizon), T)[keep]
    levels = driver.levels[keep]
    nxt = np.append(levels[1:], driver.level_at(T) if T in bps else levels[-1])
    return starts, ends, levels, nxt


def backward_trajectory(z, driver, T):
    """States at every piece end (after the jump into the next piece).

    Returns arrays t, X, Y, log_deriv starting with the initial state.
    """
    z = complex(z)
    if not z.imag > 0:
        raise ParameterError("backward flow needs Im z > 0")
    starts, ends, levels, nxt = _pieces(driver, T)
    state = BackwardFlowState(0.0, z.real - driver.levels[0], z.imag, 0.0)
    rows = [(0.0, state.X, state.Y, 0.0)]
    for a, b, w, w_next in zip(starts, ends, levels, nxt):
        state = step_backward_xy(state, w_next - w, b - a)
        rows.append((state.t, state.X, state.Y, state.log_deriv))
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def run_backward_flow(z, driver, T, u_levels=()):
    """Final state plus first-passage records gamma_u = inf{t: Y_t >= Y_0 e^u}.

    gamma_u is located exactly inside its piece (Y has a closed form there);
    u levels not reached by T get gamma_u = inf.
    """
    z = complex(z)
    if not z.imag > 0:
        raise ParameterError("backward flow needs Im z > 0")
    u_levels = np.sort(np.asarray(u_levels, dtype=float))
    if np.any(u_levels < 0):
        raise ParameterError("u levels must be non-negative")
    starts, ends, levels, nxt = _pieces(driver, T)
    y0 = z.imag
    targets = y0 * np.exp(u_levels)
    records = []
    j = 0
    while j < u_levels.size and u_levels[j] == 0.0:
        records.append(TimeChangeRecord(0.0, 0.0, 0.0))
        j += 1
    state = BackwardFlowState(0.0, z.real - driver.levels[0], y0, 0.0)
    for a, b, w, w_next in zip(starts, ends, levels, nxt):
        dt = b - a
        end = step_backward_xy(state, 0.0, dt)
        while j < u_levels.size and end.Y >= targets[j]:
            s = min(max(_crossing_time(state.zeta, targets[j]), 0.0), dt)
            mid = step_backward_xy(state, 0.0, s) if s > 0 else state
            records.append(TimeChangeRecord(float(u_levels[j]), a + s, mid.log_deriv))
            j += 1
        state = replace(end, X=end.X - (w_next - w))
    records.extend(TimeChangeRecord(float(u), math.inf) for u in u_levels[j:])
    return state, records


def flow_map(driver, T, z):
    """f_T(z) as a composition of backward slit maps in time order (arrays accepted).

    Independent of the X/Y bookkeeping; used for finite-difference checks.
    """
    z = np.asarray(z, dtype=complex)
    starts, ends, levels, _ = _pieces(driver, T)
    for a, b, w in zip(starts, ends, levels):
        z = w + _backward_sqrt(z - w, b - a)
    return z


def time_changed_log_deriv(z, driver, T, u, samples_per_piece=64):
    """log|f'| at gamma_u computed in the u-parametrisation.

    Uses d(log|f'|) = (X^2 - Y^2)/(X^2 + Y^2) du, with du = 2/(X^2+Y^2) dt,
    integrated by the trapezoid rule on a dense sampling of each piece.
    """
    state, recs = run_backward_flow(z, driver, T, [u])
    if not math.isfinite(recs[0].gamma_u):
        return math.nan
    g = recs[0].gamma_u
    starts, ends, levels, nxt = _pieces(driver, T)
    y0 = complex(z).imag
    total = 0.0
    st = BackwardFlowState(0.0, complex(z).real - driver.levels[0], y0, 0.0)
    for a, b, w, w_next in zip(starts, ends, levels, nxt):
        stop = min(b, g)
        if stop > a:
            s = (np.linspace(0.0, 1.0, samples_per_piece + 1) ** 2) * (stop - a)
            zeta = _backward_sqrt(np.full(s.size, st.zeta), s)
            x, y = zeta.real, zeta.imag
            uu = np.log(y / y0)
            total += np.trapezoid((x * x - y * y) / (x * x + y * y), uu)
        if b >= g:
            break
        end = step_backward_xy(st, 0.0, b - a)
        st = replace(end, X=end.X - (w_next - w))
    return total


# ---------------------------------------------------------------------------
# Real-line flows


@dataclass
class RealFlowResult:
    times: np.ndarray
    X: np.ndarray
    hit_time: float = math.inf


def real_line_flow(x, driver, T, direction="forward", tol_swallow=None):
    """X_t = Z_t - W_t for dZ = +-2/(Z - W) dt on the real line.

    Each constant piece is solved exactly: X^2 changes by +-4 dt with the
    sign of X preserved. The backward flow stops when |X| <= tol_swallow.
    """
    if x == 0:
        raise ParameterError("x must be nonzero")
    if direction not in ("forward", "backward"):
        raise ParameterError("direction must be 'forward' or 'backward'")
    sign4 = 4.0 if direction == "forward" else -4.0
    tol = swallow_tolerance(x) if tol_swallow is None else tol_swallow
    starts, ends, levels, nxt = _pieces(driver, T)
    X = float(x) - driver.levels[0]
    times, xs = [0.0], [X]
    for a, b, w, w_next in zip(starts, ends, levels, nxt):
        sq = X * X + sign4 * (b - a)
        if sq <= tol * tol:
            hit = a + (X * X - tol * tol) / 4.0
            times.append(hit)
            xs.append(math.copysign(tol, X))
            return RealFlowResult(np.array(times), np.array(xs), hit)
        X = math.copysign(math.sqrt(sq), X) - (w_next - w)
        times.append(b)
        xs.append(X)
        if abs(X) <= tol:
            return RealFlowResult(np.array(times), np.array(xs), b)
    return RealFlowResult(np.array(times), np.array(xs))


def harmonic_u(x, alpha):
    """|x|^(alpha-1) for alpha != 1, log|x| for alpha = 1."""
    x = abs(x)
    return math.log(x) if alpha == 1.0 else x ** (alpha - 1.0)


def _exit_chunk(alpha, kappa, x0, r, R, t_max, dt, direction):
    sign4 = 4.0 if direction == "forward" else -4.0
    scale = (kappa * dt) ** (1.0 / alpha)
    n_steps = int(math.ceil(t_max / dt - 1e-9))

    def run(n, rng):
        X = np.full(n, float(x0))
        outcome = np.full(n, -1, dtype=np.int8)  # 1: tau_r first, 0: tau_R first, -1: censored
        active = np.arange(n)
        for _ in range(n_steps):
            if active.size == 0:
                break
            x = X[active]
            sq = x * x + sign4 * dt
            if direction == "backward":
                inner = sq < r * r
            else:
                inner = np.zeros(active.size, dtype=bool)
            outer = sq > R * R
            x = np.sign(x) * np.sqrt(np.maximum(sq, 0.0))
            x = x - scale * _standard_stable(alpha, active.size, rng)
            inner |= np.abs(x) < r
            outer |= np.abs(x) > R
            outer &= ~inner
            outcome[active[inner]] = 1
            outcome[active[outer]] = 0
            X[active] = x
            active = active[~(inner | outer)]
        return outcome

    return run


def exit_probability_experiment(alpha, x0, r, R, n_paths, t_max, seed, direction="forward",
                                kappa=1.0, dt=0.01, mapper=map):
    """Monte Carlo P_x(tau_r < tau_R) for the real-line flow with a stable driver.

    tau_r = inf{t: |X_t| < r}, tau_R = inf{t: |X_t| > R}; R may be infinite.
    Paths still inside (r, R) at ``t_max`` are censored and count as misses.
    """
    StableParams(alpha, kappa)
    if not 0 < r < abs(x0) < R:
        raise ParameterError("need 0 < r < |x0| < R")
    outcome = run_chunked(_exit_chunk(alpha, kappa, x0, r, R, t_max, dt, direction),
                          seed, n_paths, mapper)
    hits = int(np.sum(outcome == 1))
    censored = int(np.sum(outcome == -1))
    ur = harmonic_u(r, alpha)
    bound = harmonic_u(x0, alpha) / ur if ur != 0 else math.nan
    rep = proportion_report("P(tau_r < tau_R)", hits, n_paths, seed, censored,
                            alpha=alpha, x0=x0, r=r, R=R, t_max=t_max, dt=dt,
                            direction=direction, kappa=kappa, supermartingale_bound=bound)
    if rep.censoring_fraction > CENSOR_WARN:
        rep.warnings.append(f"censoring fraction {rep.censoring_fraction:.3f} exceeds 10%")
    return rep


# ---------------------------------------------------------------------------
# Batched backward flow with random drivers


class GridStableSource:
    """Stable driver S_{kappa t} on a uniform grid of mesh ``dt``."""

    def __init__(self, alpha, kappa=1.0, dt=0.01):
        StableParams(alpha, kappa)
        self.alpha, self.kappa, self.dt = alpha, kappa, dt
        self.scale = (kappa * dt) ** (1.0 / alpha)
        self.jump_rate = 0.0

    def grid_increment(self, n, rng):
        return self.scale * _standard_stable(self.alpha, n, rng)

    def jump_sizes(self, n, rng):
        return np.zeros(n)


class TruncatedSource:
    """Truncated driver hat-S_{kappa t}: Brownian part on a grid of mesh ``dt``
    plus compound-Poisson jumps at exact exponential times."""

    def __init__(self, alpha, kappa=1.0, dt=0.01, trunc=None):
        StableParams(alpha, kappa)
        self.trunc = TruncationConfig(alpha) if trunc is None else trunc
        self.alpha, self.kappa, self.dt = alpha, kappa, dt
        self.sigma = math.sqrt(self.trunc.brownian_variance * kappa * dt)
        self.jump_rate = self.trunc.jump_rate * kappa

    def grid_increment(self, n, rng):
        return self.sigma * rng.standard_normal(n)

    def jump_sizes(self, n, rng):
        return sample_small_jump_sizes(self.trunc, n, rng)


def simulate_backward_batch(z, n, source, t_max, rng, u=None, tail_horizon=None):
    """Run ``n`` independent backward flows from ``z`` to time ``t_max``.

    Each path advances event by event (grid times and driver jumps), using
    the exact slit map in between. Returns a dict of arrays:
    gamma (first time Y >= Y_0 e^u, inf if not reached), log_deriv_gamma,
    max_log_deriv (sup of log|f_t'(z)| over t <= tail_horizon), final Y.
    """
    z = complex(z)
    h = z.imag * math.exp(u) if u is not None else math.inf
    tail = -1.0 if tail_horizon is None else float(tail_horizon)
    stop_at = t_max if tail_horizon is None else max(t_max, tail)

    zeta = np.full(n, z)
    t = np.zeros(n)
    L = np.zeros(n)
    Lmax = np.zeros(n)
    gamma = np.full(n, math.inf)
    Lgamma = np.full(n, math.nan)
    if u is not None and u <= 0:
        gamma[:] = 0.0
        Lgamma[:] = 0.0
    next_grid = np.full(n, source.dt)
    next_jump = (rng.standard_exponential(n) / source.jump_rate if source.jump_rate > 0
                 else np.full(n, math.inf))
    need_gamma = np.isinf(gamma)
    active = np.arange(n)

    while active.size:
        zt, tt = zeta[active], t[active]
        ng, nj = next_grid[active], next_jump[active]
        target = np.minimum(np.minimum(ng, nj), stop_at)
        dt = target - tt
        new = _backward_sqrt(zt, dt)
        # log|f'| increment over the piece is log|zeta_start| - log|zeta_end|
        logabs0 = np.log(np.abs(zt))
        Lend = L[active] + logabs0 - np.log(np.abs(new))

        # first passage of Y through h inside this piece
        ng_mask = need_gamma[active] & (new.imag >= h) & (tt < t_max)
        if np.any(ng_mask):
            idx = np.flatnonzero(ng_mask)
            q = zt[idx] ** 2
            a_star = (q.imag ** 2 - 4.0 * h ** 4) / (4.0 * h * h)
            s = np.clip((q.real - a_star) / 4.0, 0.0, dt[idx])
            cross = tt[idx] + s
            ok = cross <= t_max
            sel = active[idx[ok]]
            gamma[sel] = cross[ok]
            mid = _backward_sqrt(zt[idx[ok]], s[ok])
            Lgamma[sel] = L[sel] + logabs0[idx[ok]] - np.log(np.abs(mid))
            need_gamma[sel] = False

        if tail > 0:
            upto = np.clip(tail - tt, 0.0, dt)
            q = zt * zt
            s_peak = np.clip(q.real / 4.0, 0.0, upto)
            # |zeta(s)|^2 = |q - 4s| is smallest at s_peak
            peak = L[active] + logabs0 - 0.5 * np.log(np.abs(q - 4.0 * s_peak))
            Lmax[active] = np.maximum(Lmax[active], peak)

        zeta[active] = new
        L[active] = Lend
        t[active] = target

        hit_grid = ng <= target
        if np.any(hit_grid):
            gi = active[hit_grid]
            zeta[gi] -= source.grid_increment(gi.size, rng)
            next_grid[gi] += source.dt
        hit_jump = nj <= target
        if np.any(hit_jump):
            ji = active[hit_jump]
            zeta[ji] -= source.jump_sizes(ji.size, rng)
            next_jump[ji] += rng.standard_exponential(ji.size) / source.jump_rate

        done = t[active] >= stop_at
        if tail <= 0:
            done |= ~need_gamma[active]
        elif u is not None:
            done |= (~need_gamma[active]) & (t[active] >= tail)
        active = active[~done]

    return {"gamma": gamma, "log_deriv_gamma": Lgamma, "max_log_deriv": Lmax,
            "Y": zeta.imag}


def height_reach_experiment(alpha, z, u, n_paths, t_max, seed, kappa=1.0, dt=0.01,
                            mapper=map):
    """P_z(gamma_u < t_max) for the backward flow driven by S_{kappa t}."""
    z = complex(z)
    if not z.imag > 0:
        raise ParameterError("need Im z > 0")
    if u < 0:
        raise ParameterError("u must be non-negative")
    source = GridStableSource(alpha, kappa, dt)

    def chunk(n, rng):
        return simulate_backward_batch(z, n, source, t_max, rng, u=u)["gamma"]

    gamma = run_chunked(chunk, seed, n_paths, mapper)
    reached = int(np.sum(gamma <= t_max))
    rep = proportion_report("P(gamma_u < t_max)", reached, n_paths, seed,
                            censored=n_paths - reached, alpha=alpha, z=[z.real, z.imag],
                            u=u, t_max=t_max, dt=dt, kappa=kappa)
    if rep.censoring_fraction > CENSOR_WARN:
        rep.warnings.append(f"censoring fraction {rep.censoring_fraction:.3f} exceeds 10%")
    return rep


def warn_censoring(report):
    for w in report.warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
