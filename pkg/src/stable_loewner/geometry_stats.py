"""Geometric and statistical checks on hulls, traces and backward flows."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import Falsification, FitError, ParameterError, ResolutionError
from .flow_dynamics import CENSOR_WARN, TruncatedSource, simulate_backward_batch
from .loewner_core import (DEFAULT_LIFT, Driver, build_chain, compute_trace, evaluate_inverse,
                           forward_step, SlitStep, swallow_time, trace_points)
from .reports import mean_report, run_chunked, wilson_interval
from .stable_process import StableParams, sample_stable_path


def _as_points(obj):
    pts = obj.points if hasattr(obj, "points") else obj
    return np.asarray(pts, dtype=complex).ravel()


# ---------------------------------------------------------------------------
# Box counting


def box_count(points, eps):
    """Number of occupied cells of the eps-grid anchored at the origin."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    pts = _as_points(points)
    if pts.size == 0:
        raise ParameterError("need at least one point")
    cells = np.column_stack((np.floor(pts.real / eps), np.floor(pts.imag / eps))).astype(np.int64)
    return int(np.unique(cells, axis=0).shape[0])


@dataclass
class DimensionFit:
    scales: np.ndarray
    counts: np.ndarray
    slope: float  # None when r2 < 0.98
    r2: float
    raw_slope: float
    warnings: list = field(default_factory=list)


def _max_gap(hull):
    if not hasattr(hull, "segments"):
        return 0.0
    gaps = [np.max(np.abs(np.diff(hull.points[a:b]))) for a, b in hull.segments() if b - a > 1]
    return float(max(gaps)) if gaps else 0.0


def dimension_estimate(hull, eps_range, min_r2=0.98):
    """Least-squares slope of log N(eps) against log(1/eps) on nested dyadic grids."""
    emin, emax = map(float, eps_range)
    if not 0 < emin < emax:
        raise ParameterError("need 0 < eps_min < eps_max")
    if math.log10(emax / emin) < 1.5 - 1e-9:
        raise ParameterError("eps range must span at least 1.5 decades")
    k = int(math.floor(math.log2(emax / emin) + 1e-9))
    scales = emax / 2.0 ** np.arange(k + 1)
    counts = np.array([box_count(hull, e) for e in scales])
    if np.all(counts == counts[0]):
        raise FitError("all box counts are equal; slope undefined")
    x, y = np.log(1.0 / scales), np.log(counts)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    fit = DimensionFit(scales, counts, float(slope) if r2 >= min_r2 else None, r2, float(slope))
    gap = _max_gap(hull)
    if gap > emin:
        fit.warnings.append(f"trace spacing {gap:.3g} exceeds eps_min {emin:.3g}")
    return fit


# ---------------------------------------------------------------------------
# Hausdorff distance


def _directed(a, b):
    tree = cKDTree(np.column_stack((b.real, b.imag)))
    d, _ = tree.query(np.column_stack((a.real, a.imag)))
    return float(d.max())


def hausdorff_distance(A, B):
    A, B = _as_points(A), _as_points(B)
    if A.size == 0 or B.size == 0:
        raise ParameterError("point sets must be nonempty")
    return max(_directed(A, B), _directed(B, A))


def segment_distance(points, a, b):
    """Exact distance from each point to the segment [a, b]."""
    p = _as_points(points)
    d = b - a
    s = np.clip(((p - a) * np.conj(d)).real / abs(d) ** 2, 0.0, 1.0)
    return np.abs(p - (a + s * d))


def hausdorff_to_segment(points, a=0j, b=2j, n_segment=1000):
    p = _as_points(points)
    forward = float(segment_distance(p, a, b).max())
    seg = a + (b - a) * np.linspace(0.0, 1.0, n_segment)
    return max(forward, _directed(seg, p))


# ---------------------------------------------------------------------------
# Hull scaling


def rescaled_hull_experiment(alpha, s_values, n_paths, seed, n_steps=1000, eps_h=0.5,
                             kappa=1.0, n_samples=1000, mapper=map):
    """For each s, the law of (1/s) K_{s^2} under W = S_{kappa t}.

    Reports per s: Hausdorff distance to [0, 2i] (mean, median, CI) and the
    frequency with which the rescaled hull reaches height ``eps_h``.
    """
    params = StableParams(alpha, kappa)
    reports = []
    for s in s_values:
        if not s > 0:
            raise ParameterError("s values must be positive")
        T = s * s

        def chunk(n, rng, T=T, s=s):
            dist = np.empty(n)
            height = np.empty(n)
            for i in range(n):
                path = sample_stable_path(params, T, n_steps, rng)
                hull = compute_trace(Driver.from_levy_path(path), T, n_samples)
                pts = hull.points / s
                dist[i] = hausdorff_to_segment(pts)
                height[i] = pts.imag.max()
            return {"dist": dist, "height": height}

        res = run_chunked(chunk, seed, n_paths, mapper)
        hits = int(np.sum(res["height"] > eps_h))
        lo, hi = wilson_interval(hits, n_paths)
        rep = mean_report("hausdorff distance of K_{s^2}/s to [0,2i]", res["dist"], seed,
                          s=s, alpha=alpha, kappa=kappa, n_steps=n_steps, eps_h=eps_h,
                          height_exceed_frequency=hits / n_paths,
                          height_exceed_ci=[lo, hi],
                          quantiles=np.quantile(res["dist"], [0.1, 0.25, 0.5, 0.75, 0.9]))
        reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# Theorem certificates


@dataclass
class Certificate:
    name: str
    checked: bool
    passed: bool
    details: dict = field(default_factory=dict)


def check_lemma_l1(driver, T, interval_center=None, hull=None, tol=1e-9, n_samples=200):
    """Confinement of the hull by the driver's range and occupation times.

    (a) every trace point has Re in [min W - tol, max W + tol];
    (b) for I of length sqrt(T) centred at ``interval_center``, with eps the
        fraction of [0, T] that W spends in 10I, no trace point lies in
        I x [4 sqrt(eps T), inf).
    Raises Falsification with the offending point on violation.
    """
    drv = driver.restricted(T)
    hull = compute_trace(drv, T, n_samples) if hull is None else hull
    pts = hull.points
    a, b = float(drv.levels.min()), float(drv.levels.max())
    bad = (pts.real < a - tol) | (pts.real > b + tol)
    if np.any(bad):
        raise Falsification("trace leaves the driver's range", pts[bad][0])
    details = {"a": a, "b": b}
    if interval_center is not None:
        half = 0.5 * math.sqrt(T)
        c = float(interval_center)
        dur = drv.durations()
        inside10 = np.abs(drv.levels - c) <= 10 * half
        eps = float(dur[inside10].sum()) / T
        details.update(interval=(c - half, c + half), occupation_fraction=eps)
        if eps < 1.0:
            level = 4.0 * math.sqrt(eps * T)
            in_I = np.abs(pts.real - c) <= half
            bad = in_I & (pts.imag >= level + tol)
            if np.any(bad):
                raise Falsification("trace enters I x [4 sqrt(eps T), inf)", pts[bad][0])
            details["height_bound"] = level
    return Certificate("lemma_l1", True, True, details)


def relative_forward_trajectory(z, driver, T):
    """X^z_t = g_t(z) - W_t at t = 0 and just after every breakpoint in (0, T]."""
    g = complex(z)
    bps = driver.breakpoints
    ends = np.minimum(np.append(bps[1:], driver.horizon), T)
    out = [g - driver.levels[0]]
    for k, (w, a, b) in enumerate(zip(driver.levels, bps, ends)):
        if a >= T:
            break
        if b > a:
            g = forward_step(g, SlitStep(float(w), float(b - a)))
        if k + 1 < bps.size and bps[k + 1] <= T:
            out.append(g - driver.levels[k + 1])
        else:
            out.append(g - w)
    return np.array(out)


def check_lemma_l2(driver, T, z0, rng, n_probe=32):
    """If |Re X^{z0}_t| >= eps on [0, T] then B(z0, eps) misses K_T.

    |Re X| grows inside each constant piece, so its minimum is taken at t=0
    or right after a breakpoint. Random probes in the ball are pushed
    forward and must never be swallowed or touch Re X = 0.
    """
    drv = driver.restricted(T)
    eps = float(np.min(np.abs(relative_forward_trajectory(z0, drv, T).real)))
    if eps <= 0:
        return Certificate("lemma_l2", False, True, {"eps": eps})
    r = 0.999 * eps * np.sqrt(rng.random(n_probe))
    th = rng.uniform(0.0, 2 * math.pi, n_probe)
    probes = complex(z0) + r * np.exp(1j * th)
    probes = probes[probes.imag >= 0]
    for z in probes:
        if z == 0:
            continue
        res = swallow_time(drv, z, T)
        if res.terminal_kind != "survived":
            raise Falsification("point of B(z0, eps) swallowed", z)
        x = relative_forward_trajectory(z, drv, T)
        if np.any(np.abs(x.real) <= 0):
            raise Falsification("Re X^z vanished inside B(z0, eps)", z)
    return Certificate("lemma_l2", True, True, {"eps": eps, "n_probe": int(probes.size)})


# ---------------------------------------------------------------------------
# Derivative moments


def derivative_moment_experiment(alpha, kappa, beta, delta, z, u, n_paths, seed, t_max=1e3,
                                 dt=0.01, rho=None, tail_T=1.0, source=None, mapper=map):
    """E_z[|f~'_u(z)|^beta ; gamma_u < t_max] for the backward flow driven by
    the truncated process, with the comparison bound
    exp(-(beta - delta) u) (x^2 + y^2)^(beta/2) y^(-beta).

    With ``rho`` also estimates P(max_{t <= tail_T} |f_t'(z)| >= y^(rho - 1)).
    """
    z = complex(z)
    x, y = z.real, z.imag
    if not 0 < y < 1:
        raise ParameterError("need 0 < Im z < 1")
    if not 0 <= u <= -math.log(y) * (1 + 1e-12):
        raise ParameterError("need 0 <= u <= -log y")
    if not 0 < beta < 2:
        raise ParameterError("need 0 < beta < 2")
    src = TruncatedSource(alpha, kappa, dt) if source is None else source
    tail = tail_T if rho is not None else None

    def chunk(n, rng):
        out = simulate_backward_batch(z, n, src, t_max, rng, u=u, tail_horizon=tail)
        return {"gamma": out["gamma"], "L": out["log_deriv_gamma"], "Lmax": out["max_log_deriv"]}

    res = run_chunked(chunk, seed, n_paths, mapper)
    ok = res["gamma"] <= t_max
    values = np.where(ok, np.exp(beta * np.nan_to_num(res["L"])), 0.0)
    bound = math.exp(-(beta - delta) * u) * (x * x + y * y) ** (beta / 2) * y ** -beta
    censored = int(np.sum(~ok))
    rep = mean_report("E[|f'_u|^beta; gamma_u < t_max]", values, seed, censored,
                      alpha=alpha, kappa=kappa, beta=beta, delta=delta, z=[x, y], u=u,
                      t_max=t_max, dt=dt, bound=bound)
    if rho is not None:
        thresh = (rho - 1.0) * math.log(y)
        hits = int(np.sum(res["Lmax"] >= thresh))
        lo, hi = wilson_interval(hits, n_paths)
        rep.extra.update(rho=rho, tail_T=tail_T, tail_probability=hits / n_paths,
                         tail_ci=[lo, hi])
    if rep.censoring_fraction > CENSOR_WARN:
        rep.warnings.append(f"censoring fraction {rep.censoring_fraction:.3f} exceeds 10%")
    return rep


# ---------------------------------------------------------------------------
# Hoelder modulus


@dataclass
class HolderReport:
    exponent: float
    meshes: list
    gammas: np.ndarray
    log_constants: np.ndarray


def _pair_offsets(max_ratio=10):
    offs = []
    for dx in range(0, max_ratio + 1):
        for dy in range(-max_ratio, max_ratio + 1):
            if dx == 0 and dy <= 0:
                continue
            if 1.0 <= math.hypot(dx, dy) <= max_ratio:
                offs.append((dx, dy))
    return offs


def modulus_estimate(driver, T, region, mesh, refinements=2, tol=0.02,
                     gammas=np.linspace(0.0, 1.5, 301), func=None):
    """Largest exponent whose fitted Hoelder constant stays stable under mesh halving.

    f = g_T^{-1} (composed backward maps) is sampled on dyadic meshes of the
    rectangle ``region = (x0, x1, y0, y1)``. For each mesh h the constant
    C(gamma, h) = max |f(z) - f(z')| / |z - z'|^gamma over grid pairs with
    h <= |z - z'| <= 10 h. An exponent is stable when C grows by at most a
    factor (1 + tol) at every refinement.
    """
    x0, x1, y0, y1 = map(float, region)
    if not (x1 > x0 and y1 > y0 and y0 >= 0):
        raise ParameterError("region must be a rectangle in the closed upper half-plane")
    if mesh * 4 > min(x1 - x0, y1 - y0):
        raise ResolutionError("mesh too coarse for the region")
    if func is None:
        chain = build_chain(driver, T)

        def func(zz):
            return evaluate_inverse(chain, zz)

    offsets = _pair_offsets()
    meshes = [mesh / 2 ** k for k in range(refinements + 1)]
    logc = []
    for h in meshes:
        nx = int(round((x1 - x0) / h)) + 1
        ny = int(round((y1 - y0) / h)) + 1
        xs = x0 + h * np.arange(nx)
        ys = y0 + h * np.arange(ny)
        Z = xs[None, :] + 1j * ys[:, None]
        F = np.asarray(func(Z.ravel())).reshape(Z.shape)
        best = np.full(gammas.size, -np.inf)
        for dx, dy in offsets:
            if dy < 0:
                a, b = F[-dy:ny, 0:nx - dx], F[0:ny + dy, dx:nx]
            else:
                a, b = F[0:ny - dy, 0:nx - dx], F[dy:ny, dx:nx]
            if a.size == 0:
                continue
            m = np.max(np.abs(a - b))
            if m <= 0:
                continue
            d = h * math.hypot(dx, dy)
            best = np.maximum(best, math.log(m) - gammas * math.log(d))
        logc.append(best)
    logc = np.array(logc)
    growth = np.diff(logc, axis=0)
    stable = np.all(growth <= math.log1p(tol), axis=0)
    if not stable[0]:
        exponent = 0.0
    else:
        first_bad = np.flatnonzero(~stable)
        exponent = float(gammas[first_bad[0] - 1] if first_bad.size else gammas[-1])
    return HolderReport(exponent, meshes, gammas, logc)


# ---------------------------------------------------------------------------
# RCLL structure


@dataclass
class RcllReport:
    passed: bool
    modulus_exponent: float
    modulus: list
    jumps: list = field(default_factory=list)


def rcll_check(hull, driver, j_min=0.5, levels=6, h_min=0.05, lift=DEFAULT_LIFT,
               gap_tol=1e-6, attach_factor=2.0):
    """Check the trace is RCLL: continuous between level changes, with a left
    limit and a new branch attached to the existing hull at every jump >= j_min.

    (i) On each constant piece the trace is resampled on uniform grids of
        2^m points (m = 1..levels); the largest consecutive gap omega_m must
        decrease with m and fit omega ~ C delta^h with h >= h_min.
    (ii) At each jump of size >= j_min: gamma(t - delta) converges to the tip
        gamma(t-) as delta -> 0, gamma(t) differs from gamma(t-) by more than
        ``gap_tol``, and gamma(t) lies on R (Im <= sqrt(lift)) or within
        the sampling spacing of the trace grown before t.
    Raises Falsification when a check fails.
    """
    T = hull.capacity / 2.0
    drv = driver.restricted(T)
    dur = drv.durations()
    pieces = np.flatnonzero(dur > 0)
    omegas, deltas = [], []
    for m in range(1, levels + 1):
        k = 2 ** m
        frac = np.arange(k + 1) / k
        t = (drv.breakpoints[pieces][:, None] + frac[None, :] * dur[pieces][:, None]).ravel()
        pts = trace_points(drv, np.minimum(t, T), lift).reshape(pieces.size, k + 1)
        # the last sample of each piece is the left limit at the next breakpoint
        ends = drv.breakpoints[pieces] + dur[pieces]
        tips = trace_points(drv, ends, lift, left_limit=True)
        pts[:, -1] = tips
        gaps = np.abs(np.diff(pts, axis=1)).max(axis=1)
        omegas.append(float(gaps.max()))
        deltas.append(float((dur[pieces] / k).max()))
    omegas_arr, deltas_arr = np.array(omegas), np.array(deltas)
    if np.any(np.diff(omegas_arr) > 1e-12 * omegas_arr[0] + 1e-15):
        raise Falsification("inter-jump modulus does not decrease under refinement", omegas)
    pos = omegas_arr > 0
    h = float(np.polyfit(np.log(deltas_arr[pos]), np.log(omegas_arr[pos]), 1)[0]) \
        if pos.sum() >= 2 else math.inf
    if h < h_min:
        raise Falsification(f"fitted modulus exponent {h:.3f} below {h_min}", omegas)

    jump_reports = []
    big = np.abs(np.diff(drv.levels)) >= j_min
    jt = drv.breakpoints[1:][big]
    jt = jt[jt <= T]
    for tj in jt:
        k = int(np.searchsorted(drv.breakpoints, tj)) - 1
        prev = dur[k]
        tip = trace_points(drv, [tj], lift, left_limit=True)[0]
        approach = tj - prev * 2.0 ** -np.arange(0, 25)
        seq = trace_points(drv, approach, lift)
        dist = np.abs(seq - tip)
        cauchy = bool(np.all(np.diff(dist) <= 1e-12 + 1e-9 * dist[0])
                      and dist[-1] <= max(1e-3 * dist[0], 1e-9))
        post = trace_points(drv, [tj], lift)[0]
        gap = abs(post - tip)
        pre = hull.before(k + 1)
        pre_pts = pre.points
        spacing = _max_gap(pre)
        d_hull = float(np.min(np.abs(pre_pts - post))) if pre_pts.size else math.inf
        attached = post.imag <= math.sqrt(lift) or d_hull <= attach_factor * spacing + 1e-9
        rec = {"time": float(tj), "size": float(drv.levels[k + 1] - drv.levels[k]), "gap": gap,
               "left_limit_cauchy": cauchy, "attached": bool(attached),
               "distance_to_prior_hull": d_hull}
        jump_reports.append(rec)
        if not cauchy:
            raise Falsification("no left limit at jump", rec)
        if gap <= gap_tol:
            raise Falsification("jump produced no trace discontinuity", rec)
        if not attached:
            raise Falsification("new branch not attached to the hull", rec)
    return RcllReport(True, h, omegas, jump_reports)
