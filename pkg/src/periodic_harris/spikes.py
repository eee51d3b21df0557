"""Spike detection from the gating variables and ISI distribution diagnostics.

A spike starts when m crosses above h and ends when, after a deterministic
refractory period delta, the path is next found with m below h.  Crossing
times are refined by linear interpolation of m - h between grid points; an
exact tie m = h at a grid point counts as not yet crossed.  Interspike
intervals are the gaps between successive spike starts; their empirical
distribution functions are compared with an exact sup-distance over jump
points.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ModelSpec
from .sde import PathRecord, SimConfig, iter_path_blocks

__all__ = [
    "DEFAULT_DELTA", "Region", "SpikeTrain", "EmpiricalCDF", "GCReport",
    "classify", "detect_spikes", "isi_cdf", "ks_distance", "merge_cdfs",
    "block_ks_table", "gc_report", "write_spike_csv", "write_cdf_csv",
]

DEFAULT_DELTA = 2.0


class Region(enum.Enum):
    SPIKE = "spike"
    BETWEEN = "between"
    BOUNDARY = "boundary"


def classify(x) -> Region:
    """Spiking region by the gating order: m > h spiking, m < h between."""
    m, h = float(x[2]), float(x[3])
    if m > h:
        return Region.SPIKE
    if m < h:
        return Region.BETWEEN
    return Region.BOUNDARY


@dataclass(frozen=True)
class SpikeTrain:
    """Interleaved spike starts and ends: sigma_{n-1} < tau_n, tau_n + delta <= sigma_n.

    `truncated` counts spike starts dropped because the path ended before
    the matching end could be located.
    """

    taus: tuple
    sigmas: tuple
    delta: float
    source: str = ""
    truncated: int = 0

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.delta <= 0.0:
            raise ValueError("the refractory period must be positive")
        if len(self.taus) != len(self.sigmas):
            raise ValueError("every recorded spike needs both a start and an end")
        prev_sigma = -math.inf
        for t, s in zip(self.taus, self.sigmas):
            if not prev_sigma < t:
                raise ValueError("spike starts must come strictly after the previous end")
            if s - t < self.delta - 1e-9:
                raise ValueError("spike ends must respect the refractory period")
            prev_sigma = s

    def __len__(self) -> int:
        return len(self.taus)

    @property
    def isis(self) -> np.ndarray:
        return np.diff(np.asarray(self.taus, dtype=float))


class _Scanner:
    """Incremental m - h crossing scanner, fed consecutive path chunks.

    Keeps the last processed sample so segments spanning chunk seams are
    seen exactly once; callers must drop any overlap row themselves.
    """

    def __init__(self, delta: float, t_origin: float):
        self.delta = delta
        self.prev_t = float(t_origin)
        self.prev_g: Optional[float] = None
        self.sigma_prev = float(t_origin)
        self.pending_tau: Optional[float] = None
        self.taus: list = []
        self.sigmas: list = []

    @property
    def count(self) -> int:
        """Spike starts seen so far, including one awaiting its end."""
        return len(self.taus) + (self.pending_tau is not None)

    @staticmethod
    def _root(t0, g0, t1, g1):
        return t0 if g1 == g0 else t0 + (t1 - t0) * (-g0) / (g1 - g0)

    def feed(self, times, g) -> None:
        times = np.asarray(times, dtype=float)
        g = np.asarray(g, dtype=float)
        if self.prev_g is None:
            if not len(g):
                return
            self.prev_t, self.prev_g = float(times[0]), float(g[0])
            times, g = times[1:], g[1:]
        if not len(g):
            return
        ts = np.concatenate(([self.prev_t], times))
        gs = np.concatenate(([self.prev_g], g))
        # segment ends k with an up-crossing g[k-1] <= 0 < g[k]
        up = np.flatnonzero((gs[1:] > 0.0) & (gs[:-1] <= 0.0)) + 1
        neg = np.flatnonzero(gs < 0.0)
        i = 1
        while True:
            if self.pending_tau is None:
                j = int(np.searchsorted(up, i))
                tau = None
                while j < len(up):
                    k = int(up[j])
                    r = self._root(ts[k - 1], gs[k - 1], ts[k], gs[k])
                    if r > self.sigma_prev:
                        tau = r
                        break
                    # crossing pinned at or before the previous end: not yet crossed
                    j += 1
                if tau is None:
                    break
                self.pending_tau = float(tau)
                i = k + 1
            else:
                expiry = self.pending_tau + self.delta
                start = max(i, int(np.searchsorted(ts, expiry, side="left")))
                j = int(np.searchsorted(neg, start))
                if j == len(neg):
                    break
                k = int(neg[j])
                if gs[k - 1] >= 0.0:
                    sigma = max(self._root(ts[k - 1], gs[k - 1], ts[k], gs[k]), expiry)
                else:
                    # already below the boundary when the refractory window closed
                    sigma = expiry
                self.taus.append(self.pending_tau)
                self.sigmas.append(float(sigma))
                self.sigma_prev = float(sigma)
                self.pending_tau = None
                i = k + 1
        self.prev_t, self.prev_g = float(ts[-1]), float(gs[-1])

    def finish(self, source: str = "") -> SpikeTrain:
        return SpikeTrain(taus=tuple(self.taus), sigmas=tuple(self.sigmas),
                          delta=self.delta, source=source,
                          truncated=int(self.pending_tau is not None))


def detect_spikes(path: PathRecord, delta: float = DEFAULT_DELTA) -> SpikeTrain:
    """Scan a recorded path for spike starts and ends."""
    if delta <= 0.0:
        raise ValueError("the refractory period must be positive")
    if path.dim < 4:
        raise ValueError("spike detection needs the gating coordinates m and h")
    sc = _Scanner(delta, path.t0)
    sc.feed(path.times, path.states[:, 2] - path.states[:, 3])
    return sc.finish(source=f"seed={path.seed}")


@dataclass(frozen=True)
class EmpiricalCDF:
    """Right-continuous step function t -> (1/n) * #{samples <= t}."""

    samples: tuple

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("empirical CDF of an empty sample")
        object.__setattr__(self, "samples",
                           tuple(sorted(float(s) for s in self.samples)))

    @property
    def n(self) -> int:
        return len(self.samples)

    def __call__(self, t):
        arr = np.asarray(self.samples)
        out = np.searchsorted(arr, np.asarray(t, dtype=float), side="right") / self.n
        return float(out) if out.ndim == 0 else out

    @property
    def jumps(self) -> np.ndarray:
        return np.unique(np.asarray(self.samples))


def merge_cdfs(a: EmpiricalCDF, b: EmpiricalCDF) -> EmpiricalCDF:
    """Pool the samples; associative, so partial CDFs combine in any order."""
    return EmpiricalCDF(samples=a.samples + b.samples)


def isi_cdf(train: SpikeTrain) -> EmpiricalCDF:
    if len(train) < 2:
        raise ValueError("fewer than 2 spikes: no interspike intervals")
    return EmpiricalCDF(samples=tuple(train.isis))


def ks_distance(a: EmpiricalCDF, b: EmpiricalCDF) -> float:
    """Exact sup |F_a - F_b| over the union of jump points.

    Both functions are right-continuous steps, so the sup is attained at a
    jump, either as the value there or as the left limit.  Counts stay in
    integer arithmetic; only the final ratio is floating point.
    """
    sa = np.asarray(a.samples)
    sb = np.asarray(b.samples)
    pts = np.union1d(a.jumps, b.jumps)
    ca_r = np.searchsorted(sa, pts, side="right").astype(np.int64)
    cb_r = np.searchsorted(sb, pts, side="right").astype(np.int64)
    ca_l = np.searchsorted(sa, pts, side="left").astype(np.int64)
    cb_l = np.searchsorted(sb, pts, side="left").astype(np.int64)
    num = max(int(np.max(np.abs(ca_r * b.n - cb_r * a.n))),
              int(np.max(np.abs(ca_l * b.n - cb_l * a.n))))
    return num / (a.n * b.n)


def block_ks_table(isis, block: Optional[int]):
    """KS distances between consecutive ISI blocks and from each to the pool.

    The sample is cut into disjoint blocks of `block` values in order (a
    trailing remainder shorter than `block` is dropped).  block=None pools
    everything into a single block, so both tables come back empty.
    """
    isis = np.asarray(isis, dtype=float)
    if block is None:
        if len(isis) == 0:
            raise ValueError("no interspike intervals to compare")
        return (), ()
    if block < 1 or len(isis) < block:
        raise ValueError("block size must be >= 1 and fit in the sample")
    nb = len(isis) // block
    cdfs = [EmpiricalCDF(tuple(isis[k * block:(k + 1) * block])) for k in range(nb)]
    pooled = EmpiricalCDF(tuple(isis[:nb * block]))
    consecutive = tuple(ks_distance(cdfs[k], cdfs[k + 1]) for k in range(nb - 1))
    against_pool = tuple(ks_distance(c, pooled) for c in cdfs)
    return consecutive, against_pool


@dataclass(frozen=True)
class GCReport:
    """ISI-distribution convergence diagnostics along one streamed path."""

    kind: str
    delta: float
    block: Optional[int]
    seed: int
    dt: float
    requested: int
    isis: tuple
    train: SpikeTrain
    taus_seen: int
    truncated: int
    consecutive_ks: tuple
    pooled_ks: tuple
    spike_free_windows: int
    windows_scanned: int
    checkpoints: tuple
    partial: bool
    horizon: float

    @property
    def spike_free_frequency(self) -> float:
        if self.windows_scanned == 0:
            return 0.0
        return self.spike_free_windows / self.windows_scanned

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind, "delta": self.delta, "block": self.block,
            "seed": self.seed, "dt": self.dt, "requested": self.requested,
            "n_isis": len(self.isis), "isis": list(self.isis),
            "taus_seen": self.taus_seen, "truncated": self.truncated,
            "consecutive_ks": list(self.consecutive_ks),
            "pooled_ks": list(self.pooled_ks),
            "spike_free_windows": self.spike_free_windows,
            "windows_scanned": self.windows_scanned,
            "spike_free_frequency": self.spike_free_frequency,
            "checkpoints": [[t, c] for t, c in self.checkpoints],
            "partial": self.partial, "horizon": self.horizon,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, **kw)


def gc_report(spec: ModelSpec, x0, total_spikes: int, block: Optional[int] = None,
              delta: float = DEFAULT_DELTA, dt: float = 0.01, seed: int = 0,
              max_steps: int = 50_000_000, block_steps: int = 100_000) -> GCReport:
    """Simulate until `total_spikes` interspike intervals are collected.

    The path is streamed in chunks and never stored whole.  At each chunk
    end a checkpoint (time, cumulative spike starts) is recorded.  Spike
    free windows are the full periods [kT, (k+1)T) containing no spike
    start.  If `max_steps` grid steps pass first, the report is partial.
    """
    if spec.dim < 4:
        raise ValueError("spike detection needs the gating coordinates m and h")
    if total_spikes < 1:
        raise ValueError("need at least 1 interspike interval, so 2 spike starts")
    if block is not None and block < 100:
        raise ValueError("block size must be >= 100")
    if max_steps < 1 or block_steps < 1:
        raise ValueError("step counts must be positive")
    config = SimConfig(dt=dt, horizon=max_steps * dt, seed=seed)
    sc = _Scanner(delta, 0.0)
    checkpoints = []
    horizon = 0.0
    first = True
    for t_start, states in iter_path_blocks(spec, x0, 0.0, config,
                                            block_steps=block_steps):
        times = t_start + dt * np.arange(states.shape[0])
        lo = 0 if first else 1  # later chunks repeat the previous last row
        sc.feed(times[lo:], states[lo:, 2] - states[lo:, 3])
        first = False
        horizon = float(times[-1])
        checkpoints.append((horizon, sc.count))
        if len(sc.taus) >= total_spikes + 1:
            break
    train = sc.finish(source=f"seed={seed}")
    isis = train.isis[:total_spikes]
    partial = len(isis) < total_spikes
    if len(isis) and (block is None or len(isis) >= block):
        consecutive, pooled = block_ks_table(isis, block)
    else:
        consecutive, pooled = (), ()
    T = spec.period
    full_windows = int(math.floor(horizon / T + 1e-9))
    if full_windows and len(train.taus):
        idx = np.floor(np.asarray(train.taus) / T).astype(int)
        counts = np.bincount(idx[idx < full_windows], minlength=full_windows)
        spike_free = int(np.sum(counts == 0))
    else:
        spike_free = full_windows
    return GCReport(kind=spec.kind, delta=delta, block=block, seed=seed, dt=dt,
                    requested=total_spikes,
                    isis=tuple(float(v) for v in isis), train=train,
                    taus_seen=len(train.taus), truncated=train.truncated,
                    consecutive_ks=consecutive, pooled_ks=pooled,
                    spike_free_windows=spike_free, windows_scanned=full_windows,
                    checkpoints=tuple(checkpoints), partial=partial,
                    horizon=horizon)


def write_spike_csv(train: SpikeTrain, fp) -> None:
    """Rows (n, tau, sigma, isi); isi is the gap to the next spike start."""
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "w")
        close = True
    try:
        fp.write("n,tau,sigma,isi\n")
        isis = train.isis
        for i, (t, s) in enumerate(zip(train.taus, train.sigmas)):
            gap = f"{isis[i]:.17g}" if i < len(isis) else ""
            fp.write(f"{i + 1},{t:.17g},{s:.17g},{gap}\n")
    finally:
        if close:
            fp.close()


def write_cdf_csv(cdf: EmpiricalCDF, fp) -> None:
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "w")
        close = True
    try:
        fp.write("sample\n")
        for s in cdf.samples:
            fp.write(f"{s:.17g}\n")
    finally:
        if close:
            fp.close()
