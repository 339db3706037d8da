"""Detector-count sampling and count-based correlation estimates.

Each shot ``k`` draws one 64-bit word from a Philox block keyed by
``(seed, stream)`` at counter ``k``. Outcomes depend only on that word and
on integer thresholds derived from the Born probabilities, so any split of
the shot range into chunks reproduces the sequential table exactly.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError
from .nri import JointSetting, NriValue
from .qcore import StateVector, apply, projector_along
from .states import PATH, SPIN2

QUANT_BITS = 50  # 2**-50 ~ 8.9e-16 probability resolution
DRIFT_RENORM = 1e-12
DRIFT_FATAL = 1e-9
CSV_HEADER = ("setting_id", "n3p", "n3m", "n4p", "n4m", "total")


@dataclass(frozen=True)
class CountTable:
    """Counts at D'3, D''3, D'4, D''4 (channel 3/4, spin +/-)."""

    n3p: int
    n3m: int
    n4p: int
    n4m: int

    def __post_init__(self):
        for v in self.counts:
            if v < 0:
                raise ValueError("counts must be non-negative")

    @property
    def counts(self) -> tuple:
        return (self.n3p, self.n3m, self.n4p, self.n4m)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __add__(self, other: "CountTable") -> "CountTable":
        return CountTable(*(a + b for a, b in zip(self.counts, other.counts)))

    def as_row(self, setting_id: str) -> list:
        return [setting_id, *self.counts, self.total]


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    shots: int
    stream: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be at least 1")
        if not 0 <= self.seed < 2 ** 64 or not 0 <= self.stream < 2 ** 64:
            raise ValueError("seed and stream must be unsigned 64-bit integers")


def born_probabilities(state: StateVector, j: JointSetting) -> np.ndarray:
    """Probabilities for (channel 3, +), (3, -), (4, +), (4, -)."""
    out = []
    for proj in j.path.projectors():
        after_path = apply(proj, state)
        for sign in (1, -1):
            out.append(apply(projector_along(j.spin, sign, SPIN2), after_path).norm() ** 2)
    p = np.array(out)
    if abs(p.sum() - 1) > 1e-12:
        raise InvariantError(f"Born probabilities sum to {p.sum()!r}")
    return p


def _checked(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    drift = max(float(-p.min()), float(p.max() - 1), abs(float(p.sum()) - 1), 0.0)
    if drift > DRIFT_FATAL:
        raise InvariantError(f"probabilities drift {drift:.3e} from a distribution")
    p = np.clip(p, 0.0, 1.0)
    if drift > DRIFT_RENORM:
        p = p / p.sum()
    return p


def _thresholds(p) -> np.ndarray:
    scale = 1 << QUANT_BITS
    cum = np.round(np.cumsum(p) * scale).astype(np.int64)
    cum[-1] = scale
    return np.minimum(cum, scale)


def _sample_range(cum, cfg: SamplerConfig, start: int, stop: int) -> np.ndarray:
    n = stop - start
    gen = np.random.Philox(key=[cfg.seed, cfg.stream], counter=start)
    words = gen.random_raw(4 * n)[::4] >> np.uint64(64 - QUANT_BITS)
    idx = np.searchsorted(cum, words.astype(np.int64), side="right")
    return np.bincount(idx, minlength=len(cum)).astype(np.int64)


def sample_categorical(probs, cfg: SamplerConfig, workers: int = 1, chunk: int = 1 << 16) -> np.ndarray:
    """Counts per category for ``cfg.shots`` independent draws."""
    cum = _thresholds(_checked(probs))
    bounds = list(range(0, cfg.shots, chunk)) + [cfg.shots]
    ranges = list(zip(bounds[:-1], bounds[1:]))
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda r: _sample_range(cum, cfg, *r), ranges))
    else:
        parts = [_sample_range(cum, cfg, a, b) for a, b in ranges]
    return np.sum(parts, axis=0)


def sample_counts(state: StateVector, j: JointSetting, cfg: SamplerConfig, workers: int = 1) -> CountTable:
    counts = sample_categorical(born_probabilities(state, j), cfg, workers)
    return CountTable(*(int(c) for c in counts))


def estimate_correlation(t: CountTable) -> float:
    if t.total < 1:
        raise ValueError("cannot estimate a correlation from zero counts")
    return (t.n3p - t.n3m - t.n4p + t.n4m) / t.total


def correlation_stderr(t: CountTable, exact: float | None = None) -> float:
    """Binomial standard error ``sqrt((1 - E^2) / N)``; uses ``exact`` E if given."""
    e = estimate_correlation(t) if exact is None else exact
    return math.sqrt(max(0.0, 1 - e * e) / t.total)


def estimate_nri(tables) -> tuple:
    """``(NriValue, stderr of s)`` from four tables ordered A1b1, A1b2, A2b1, A2b2."""
    tables = list(tables)
    if len(tables) != 4:
        raise ValueError("need exactly four count tables")
    es = [estimate_correlation(t) for t in tables]
    se = math.sqrt(sum(correlation_stderr(t) ** 2 for t in tables))
    return NriValue(*es), se


def write_csv(rows, fh=None) -> str:
    """CSV with header ``setting_id,n3p,n3m,n4p,n4m,total``."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for setting_id, table in rows:
        w.writerow(table.as_row(setting_id))
    return buf.getvalue() if fh is None else ""


def read_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        table = CountTable(*(int(v) for v in rec[1:5]))
        if table.total != int(rec[5]):
            raise ValueError(f"row {rec[0]!r}: total {rec[5]} != sum of counts {table.total}")
        rows.append((rec[0], table))
    return rows
