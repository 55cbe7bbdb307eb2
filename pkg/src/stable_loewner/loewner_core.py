"""Chordal Loewner evolution for piecewise-constant drivers.

On an interval where the driver equals ``w`` the forward flow is the slit map
``w + sqrt((z - w)**2 + 4 dt)`` and the backward flow ``w + sqrt((z - w)**2 - 4 dt)``.
Composing these per constant piece solves both equations exactly.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ParameterError, SwallowedError

DEFAULT_LIFT = 1e-8


def swallow_tolerance(z):
    return 1e-9 * (1.0 + abs(z))


# ---------------------------------------------------------------------------
# Elementary maps


@dataclass(frozen=True)
class SlitStep:
    w: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"SlitStep.dt must be positive, got {self.dt!r}")


def _forward_sqrt(zeta, dt):
    s = np.sqrt(zeta * zeta + 4.0 * dt)
    flip = (s.imag < 0) | ((s.imag == 0) & (zeta.real < 0))
    return np.where(flip, -s, s)


def _backward_sqrt(zeta, dt):
    # product of principal roots is continuous on the closed upper half-plane
    # and lands in it; no cancellation near the slit tips
    a = 2.0 * np.sqrt(dt)
    return np.sqrt(zeta - a) * np.sqrt(zeta + a)


def forward_step(z, step):
    """Time-``dt`` forward flow with constant driver ``w`` (arrays accepted)."""
    zeta = np.asarray(z, dtype=complex) - step.w
    out = step.w + _forward_sqrt(zeta, step.dt)
    return out if out.ndim else complex(out)


def backward_step(z, step):
    """Time-``dt`` backward flow with constant driver ``w``; never lowers Im z."""
    zeta = np.asarray(z, dtype=complex) - step.w
    out = step.w + _backward_sqrt(zeta, step.dt)
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# Drivers and chains


@dataclass
class Driver:
    """Right-continuous piecewise-constant driving function on [0, horizon].

    ``levels[k]`` holds on [breakpoints[k], breakpoints[k+1]). A final
    breakpoint equal to ``horizon`` is allowed; it only sets W at the horizon.
    """

    breakpoints: np.ndarray
    levels: np.ndarray
    horizon: float

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.breakpoints.ndim != 1 or self.breakpoints.shape != self.levels.shape:
            raise ParameterError("breakpoints and levels must be 1-d arrays of equal length")
        if self.breakpoints.size == 0 or self.breakpoints[0] != 0.0:
            raise ParameterError("driver breakpoints start at 0")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ParameterError("driver breakpoints must be strictly increasing")
        if self.breakpoints[-1] > self.horizon:
            raise ParameterError("breakpoints extend beyond the horizon")

    @classmethod
    def constant(cls, level, horizon):
        return cls([0.0], [float(level)], float(horizon))

    @classmethod
    def from_levy_path(cls, path):
        return cls(path.times, path.values, path.horizon)

    @classmethod
    def from_steps(cls, levels, durations):
        durations = np.asarray(durations, dtype=float)
        starts = np.concatenate(([0.0], np.cumsum(durations)[:-1]))
        return cls(starts, levels, float(np.sum(durations)))

    def level_at(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return self.levels[np.clip(idx, 0, None)]

    def piece_index(self, t):
        return np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, None)

    def durations(self):
        return np.diff(np.append(self.breakpoints, self.horizon))

    def jump_times(self, min_size=0.0):
        """Breakpoints (after 0) where the level changes by more than ``min_size``."""
        d = np.abs(np.diff(self.levels))
        return self.breakpoints[1:][(d > min_size) & (d > 0)]

    def negated(self):
        return Driver(self.breakpoints, -self.levels, self.horizon)

    def restricted(self, T):
        if T > self.horizon * (1 + 1e-12):
            raise ParameterError(f"T={T} exceeds the driver horizon {self.horizon}")
        keep = self.breakpoints <= T
        return Driver(self.breakpoints[keep], self.levels[keep], float(T))

    def with_jumps(self, times, sizes):
        """Add jumps of the given sizes at the given times (in (0, horizon))."""
        times = np.asarray(times, dtype=float)
        sizes = np.asarray(sizes, dtype=float)
        if times.shape != sizes.shape:
            raise ParameterError("times and sizes must have equal length")
        if np.any((times <= 0) | (times >= self.horizon)):
            raise ParameterError("jump times must lie in (0, horizon)")
        bp = np.union1d(self.breakpoints, times)
        order = np.argsort(times)
        shift = np.concatenate(([0.0], np.cumsum(sizes[order])))
        shift = shift[np.searchsorted(times[order], bp, side="right")]
        return Driver(bp, self.level_at(bp) + shift, self.horizon)

    def reversed(self):
        """The driver s -> W_{(T-s)-}, so that its backward flow at T is g_T^{-1}."""
        d = self.durations()
        pos = d > 0
        return Driver.from_steps(self.levels[pos][::-1], d[pos][::-1])


@dataclass(frozen=True)
class MapChain:
    """Ordered slit steps representing g_t (forward) and g_t^{-1} (inverse)."""

    steps: tuple = ()

    @property
    def total_time(self):
        return float(sum(s.dt for s in self.steps))

    @property
    def levels(self):
        return np.array([s.w for s in self.steps])

    @property
    def dts(self):
        return np.array([s.dt for s in self.steps])

    def append(self, step):
        return MapChain(self.steps + (step,))

    def __len__(self):
        return len(self.steps)


def build_chain(driver, T):
    """One slit step per constant piece of ``driver`` on [0, T]."""
    if T < 0:
        raise ParameterError("T must be non-negative")
    if T > driver.horizon * (1 + 1e-12):
        raise ParameterError(f"T={T} exceeds the driver horizon {driver.horizon}")
    ends = np.minimum(np.append(driver.breakpoints[1:], driver.horizon), T)
    starts = driver.breakpoints
    steps = tuple(SlitStep(float(w), float(b - a))
                  for w, a, b in zip(driver.levels, starts, ends) if b > a)
    return MapChain(steps)


def evaluate_forward(chain, z, check=True):
    """g_T(z); raises SwallowedError if z hits the driver before ``total_time``."""
    z = complex(z)
    for k, st in enumerate(chain.steps):
        if check:
            zeta = z - st.w
            tol = swallow_tolerance(z)
            s_hit = _first_hit_in_step(zeta, st.dt, tol)
            if s_hit is not None:
                raise SwallowedError(f"point swallowed during step {k}", k)
        z = forward_step(z, st)
    return z


def evaluate_inverse(chain, z):
    """g_T^{-1}(z): backward steps applied in reverse order. Accepts arrays."""
    z = np.asarray(z, dtype=complex)
    for st in reversed(chain.steps):
        z = st.w + _backward_sqrt(z - st.w, st.dt)
    return z if z.ndim else complex(z)


def capacity_coefficient(chain, R=1e6):
    """(g_T(z) - z) * z at z = iR, accumulated without cancellation.

    Tends to the half-plane capacity 2T as R grows.
    """
    z0 = complex(0.0, R)
    disp = 0j
    for st in chain.steps:
        zeta = z0 + disp - st.w
        s = _forward_sqrt(np.asarray(zeta), st.dt)
        disp += complex(4.0 * st.dt / (s + zeta))
    return disp * z0


# ---------------------------------------------------------------------------
# Swallowing


@dataclass
class SwallowResult:
    T_z: float
    trajectory: np.ndarray
    terminal_kind: str
    times: np.ndarray = field(default_factory=lambda: np.empty(0))


def _first_hit_in_step(zeta, dt, tol):
    """First s in [0, dt] with |zeta^2 + 4s| <= tol^2, i.e. |g - w| <= tol; else None."""
    q = zeta * zeta
    a, b = q.real, q.imag
    tol2 = tol * tol
    if abs(b) > tol2:
        return None
    s_star = min(max(-a / 4.0, 0.0), dt)
    if abs(complex(a + 4.0 * s_star, b)) > tol2:
        return None
    s = (-a - math.sqrt(max(tol2 * tol2 - b * b, 0.0))) / 4.0
    return max(s, 0.0)


def swallow_time(driver, z, T, tol_swallow=None):
    """Swallowing time of ``z`` under the forward flow up to time ``T``."""
    z = complex(z)
    if z.imag < 0:
        raise ParameterError("z must lie in the closed upper half-plane")
    if z == 0:
        raise ParameterError("z = 0 is the driver's starting point")
    tol = swallow_tolerance(z) if tol_swallow is None else tol_swallow
    bps = driver.breakpoints
    ends = np.minimum(np.append(bps[1:], driver.horizon), T)
    traj, times = [z], [0.0]
    g = z
    for k, (w, a, b) in enumerate(zip(driver.levels, bps, ends)):
        if a > T:
            break
        if abs(g - w) <= tol:
            kind = "jump_hit" if k > 0 and driver.levels[k - 1] != w else "continuous_hit"
            return SwallowResult(float(a), np.array(traj), kind, np.array(times))
        dt = b - a
        if dt <= 0:
            continue
        s = _first_hit_in_step(g - w, dt, tol)
        if s is not None:
            hit = complex(w + _forward_sqrt(np.asarray(g - w), s))
            traj.append(hit)
            times.append(a + s)
            return SwallowResult(float(a + s), np.array(traj), "continuous_hit", np.array(times))
        g = forward_step(g, SlitStep(float(w), float(dt)))
        traj.append(g)
        times.append(float(b))
    return SwallowResult(math.inf, np.array(traj), "survived", np.array(times))


# ---------------------------------------------------------------------------
# Trace


@dataclass
class HullApprox:
    """Trace samples gamma(t) with time stamps.

    ``piece`` gives the driver piece each sample belongs to; the last sample
    of a piece is its tip gamma(t_{k+1}-), so a jump time appears twice: once
    as the tip of the old branch and once as the base of the new one.
    ``jump_times`` are the driver's level changes in (0, T].
    """

    times: np.ndarray
    points: np.ndarray
    jump_times: np.ndarray
    capacity: float
    piece: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=complex)
        self.jump_times = np.asarray(self.jump_times, dtype=float)
        if self.piece is None:
            self.piece = np.zeros(self.times.size, dtype=int)
        self.piece = np.asarray(self.piece, dtype=int)

    @property
    def T(self):
        return self.capacity / 2.0

    def segments(self):
        """Index ranges [a, b) of samples lying on one continuous branch."""
        cuts = np.flatnonzero(np.diff(self.piece)) + 1
        edges = np.concatenate(([0], cuts, [self.times.size]))
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def is_branch_start(self):
        flag = np.zeros(self.times.size, dtype=bool)
        for a, _ in self.segments()[1:]:
            flag[a] = True
        return flag

    def before(self, piece):
        """Samples from pieces earlier than ``piece``."""
        keep = self.piece < piece
        return HullApprox(self.times[keep], self.points[keep],
                          self.jump_times[self.jump_times <= self.times[keep].max(initial=0.0)],
                          self.capacity, self.piece[keep])

    def rescaled(self, factor):
        return HullApprox(self.times * factor ** 2, self.points * factor,
                          self.jump_times * factor ** 2, self.capacity * factor ** 2, self.piece)


def piece_points(driver, piece, s, lift=DEFAULT_LIFT):
    """g_{t_k}^{-1}(w_k + sqrt((i lift)^2 - 4 s)) for samples (piece k, offset s).

    This is gamma(t_k + s); s equal to the piece duration gives the tip. All
    samples are grouped by piece and swept through the backward steps of the
    earlier pieces once.
    """
    piece = np.asarray(piece, dtype=int)
    s = np.asarray(s, dtype=float)
    if piece.size == 0:
        return np.empty(0, dtype=complex)
    lv = driver.levels
    order = np.argsort(piece, kind="stable")
    p_sorted = piece[order]
    zeta = np.full(piece.size, complex(0.0, lift))
    z = lv[p_sorted] + _backward_sqrt(zeta, np.maximum(s[order], 0.0))
    durations = driver.durations()
    first = np.searchsorted(p_sorted, np.arange(lv.size + 1), side="left")
    for m in range(int(p_sorted[-1]) - 1, -1, -1):
        start = first[m + 1]
        if durations[m] <= 0:
            continue
        z[start:] = lv[m] + _backward_sqrt(z[start:] - lv[m], durations[m])
    out = np.empty_like(z)
    out[order] = z
    return out


def trace_points(driver, times, lift=DEFAULT_LIFT, left_limit=False):
    """gamma(t) = g_t^{-1}(W_t + i*lift) for an array of times.

    With ``left_limit`` the level in force just before ``t`` is used, which
    gives the tip gamma(t-) of the branch grown up to a jump at ``t``.
    """
    times = np.asarray(times, dtype=float)
    if left_limit:
        piece = np.searchsorted(driver.breakpoints, times, side="left") - 1
        if np.any(piece < 0):
            raise ParameterError("left limits need t > 0")
    else:
        piece = driver.piece_index(times)
    return piece_points(driver, piece, times - driver.breakpoints[piece], lift)


def compute_trace(driver, T, n_samples, lift=DEFAULT_LIFT, resolution=None,
                  max_rounds=40, max_points=2_000_000):
    """Sample the trace gamma on [0, T].

    Every constant piece contributes its base and its tip; ``n_samples``
    uniform times are added on top. With ``resolution`` the samples of each
    piece are bisected (in sqrt of the offset, matching the sqrt growth of a
    fresh slit) until consecutive points are closer than ``resolution`` or
    the point budget is exhausted.
    """
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    drv = driver.restricted(T)
    dur = drv.durations()
    npieces = drv.levels.size
    base_t = np.linspace(0.0, T, int(n_samples) + 1)
    bp = drv.piece_index(base_t)
    pos = np.flatnonzero(dur > 0)
    piece = np.concatenate((np.arange(npieces), pos, bp))
    s = np.concatenate((np.zeros(npieces), dur[pos], base_t - drv.breakpoints[bp]))
    key = np.unique(np.column_stack((piece, s)), axis=0)
    piece, s = key[:, 0].astype(int), key[:, 1]
    points = piece_points(drv, piece, s, lift)

    if resolution is not None:
        for _ in range(max_rounds):
            gap = np.abs(np.diff(points))
            same = piece[1:] == piece[:-1]
            bad = np.flatnonzero(same & (gap > resolution))
            if bad.size == 0 or s.size + bad.size > max_points:
                break
            mid = (0.5 * (np.sqrt(s[bad]) + np.sqrt(s[bad + 1]))) ** 2
            ok = (mid > s[bad]) & (mid < s[bad + 1])
            if not np.any(ok):
                break
            new_piece, new_s = piece[bad][ok], mid[ok]
            new = piece_points(drv, new_piece, new_s, lift)
            piece = np.concatenate((piece, new_piece))
            s = np.concatenate((s, new_s))
            points = np.concatenate((points, new))
            order = np.lexsort((s, piece))
            piece, s, points = piece[order], s[order], points[order]

    times = drv.breakpoints[piece] + s
    return HullApprox(times, points, drv.jump_times(), 2.0 * T, piece)
