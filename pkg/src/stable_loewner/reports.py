"""Monte Carlo reports and seed splitting."""

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

Z95 = 1.959963984540054
DEFAULT_CHUNK = 250


@dataclass
class ExperimentReport:
    statistic: str
    n: int
    estimate: float
    ci_low: float
    ci_high: float
    seed: int
    censoring_fraction: float = 0.0
    standard_error: float = float("nan")
    median: float = float("nan")
    extra: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def wilson_interval(successes, n, z=Z95):
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds are exactly 0 or 1 at the extremes; pin them against roundoff
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def proportion_report(statistic, hits, n, seed, censored=0, **extra):
    lo, hi = wilson_interval(hits, n)
    p = hits / n if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    return ExperimentReport(statistic, n, p, lo, hi, seed, censored / n if n else 0.0,
                            standard_error=se, extra=dict(extra))


def mean_report(statistic, values, seed, censored=0, **extra):
    values = np.asarray(values, dtype=float)
    n = values.size
    m = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return ExperimentReport(statistic, n, m, m - Z95 * se, m + Z95 * se, seed,
                            censored / n if n else 0.0, standard_error=se,
                            median=float(np.median(values)), extra=dict(extra))


def chunk_generators(seed, n_paths, chunk_size=DEFAULT_CHUNK):
    """Fixed partition of ``n_paths`` into chunks, each with its own generator.

    The partition and the per-chunk streams depend only on (seed, n_paths,
    chunk_size), so results do not depend on how chunks are scheduled.
    """
    out = []
    for k, start in enumerate(range(0, n_paths, chunk_size)):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(k,))
        out.append((min(chunk_size, n_paths - start), np.random.default_rng(ss)))
    return out


def run_chunked(fn, seed, n_paths, mapper=map, chunk_size=DEFAULT_CHUNK):
    """Apply ``fn(n, rng)`` per chunk through ``mapper`` and concatenate in chunk order."""
    tasks = chunk_generators(seed, n_paths, chunk_size)
    parts = list(mapper(lambda task: fn(*task), tasks))
    if parts and isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return np.concatenate(parts)
