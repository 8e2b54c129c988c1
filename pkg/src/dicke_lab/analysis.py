"""Photon-stream analysis: binning, transition detection, coupling axis and g2.

The chain mirrors the experimental procedure. Each run is binned in 100 us
bins to locate the transition, the time axis is mapped onto the relative
coupling x, the pre-transition record is cut into subtraces that shrink
towards the critical point, and g2 is estimated per subtrace on a 2 us grid.
Subtrace estimates are then pooled per coupling bin across runs.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import DataError, DomainError, NoTransitionError
from .params import PhysicalParams
from .synth import THRESHOLD_RATE, ClickTrace

TRANSITION_BIN = 100e-6
TRANSITION_OFFSET = 1e-3
G2_BIN = 2e-6


@dataclass
class BinnedCounts:
    width: float
    counts: np.ndarray
    start: float = 0.0

    @property
    def rates(self) -> np.ndarray:
        return self.counts / self.width

    @property
    def edges(self) -> np.ndarray:
        return self.start + self.width * np.arange(len(self.counts) + 1)


def bin_counts(trace: ClickTrace, width: float, t0: float = 0.0, t1: float | None = None) -> BinnedCounts:
    """Counts in consecutive bins of ``width`` covering [t0, t1)."""
    if width <= 0:
        raise DomainError("bin width must be > 0")
    t1 = trace.duration if t1 is None else t1
    nbins = int(math.floor((t1 - t0) / width + 1e-9))
    ns = trace.timestamps.astype(np.int64)
    lo, hi = int(round(t0 * 1e9)), int(round((t0 + nbins * width) * 1e9))
    sel = ns[(ns >= lo) & (ns < hi)]
    idx = ((sel - lo) / (width * 1e9)).astype(np.int64)
    idx = np.minimum(idx, nbins - 1)
    return BinnedCounts(width, np.bincount(idx, minlength=nbins).astype(np.int64), t0)


# -- transition and coupling axis ---------------------------------------------------


def detect_transition(trace: ClickTrace, threshold: float = THRESHOLD_RATE,
                      bin_width: float = TRANSITION_BIN, offset: float = TRANSITION_OFFSET) -> float:
    """Critical time: start of the first bin above ``threshold`` (counts/s) minus ``offset``."""
    b = bin_counts(trace, bin_width)
    over = np.flatnonzero(b.counts > threshold * bin_width)
    if over.size == 0:
        raise NoTransitionError(
            f"no transition found: no {bin_width * 1e6:g} us bin exceeds {threshold:.3g} counts/s")
    return round(float(b.edges[over[0]]) - offset, 12)


@dataclass(frozen=True)
class CouplingAxis:
    """Map from recording time to relative coupling, anchored at x(t_cr) = 1."""

    t_cr: float
    slope: float  # dx/dt of the linear power ramp (1/s)
    duration: float
    atom_loss: float = 0.0

    @classmethod
    def from_schedule(cls, t_cr: float, schedule: dict, atom_loss: float = 0.0) -> "CouplingAxis":
        slope = (schedule["x_end"] - schedule["x_start"]) / schedule["duration"]
        return cls(t_cr, slope, schedule["duration"], atom_loss)

    def __call__(self, t):
        x = 1.0 + self.slope * (np.asarray(t, dtype=float) - self.t_cr)
        if self.atom_loss:
            n = lambda u: 1.0 - self.atom_loss * u / self.duration
            x = x * n(np.asarray(t, dtype=float)) / n(self.t_cr)
        return float(x) if np.ndim(x) == 0 else x

    def to_dict(self) -> dict:
        return {"t_cr": self.t_cr, "slope": self.slope, "duration": self.duration,
                "atom_loss": self.atom_loss}


def time_to_coupling(t, t_cr: float, schedule: dict, atom_loss: float = 0.0):
    """Relative coupling at time(s) t. ``atom_loss`` rescales by N(t)/N(t_cr)."""
    return CouplingAxis.from_schedule(t_cr, schedule, atom_loss)(t)


def photon_number_from_rate(r, p: PhysicalParams):
    """Intracavity photon number (r - r_b)/(2 kappa eta), clamped at 0.

    Returns ``(nbar, clamped)`` where ``clamped`` marks rates below background.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("count rate must be >= 0")
    n = (r - p.r_b) / p.detection_scale
    clamped = n < 0
    n = np.where(clamped, 0.0, n)
    if n.ndim == 0:
        return float(n), bool(clamped)
    return n, clamped


# -- subtraces ------------------------------------------------------------------------


@dataclass(frozen=True)
class Subtrace:
    t0: float
    t1: float
    x: float = float("nan")

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def subtrace_lengths(span: float, min_length: float = 4e-3, max_length: float = 50e-3,
                     ratio: float = 1.1) -> list[float]:
    """Lengths from t_cr backwards: min_length * ratio^k capped at max_length.

    The leftover at the start of the record is merged into the earliest piece,
    so lengths never increase towards the critical point.
    """
    if span <= min_length:
        return [span]
    out: list[float] = []
    left = span
    k = 0
    while left > 1e-12:
        L = min(max_length, min_length * ratio**k)
        if left < L and out:
            out[-1] += left
            break
        L = min(L, left)
        out.append(L)
        left -= L
        k += 1
    return out[::-1]


def split_subtraces(t_start: float, t_cr: float, axis: CouplingAxis | None = None,
                    min_length: float = 4e-3, max_length: float = 50e-3,
                    ratio: float = 1.1) -> list[Subtrace]:
    """Partition [t_start, t_cr] into subtraces shrinking towards t_cr."""
    if t_cr <= t_start:
        raise DomainError("t_cr must lie after the trace start")
    lengths = subtrace_lengths(t_cr - t_start, min_length, max_length, ratio)
    edges = t_start + np.concatenate([[0.0], np.cumsum(lengths)])
    edges[-1] = t_cr
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        x = axis(0.5 * (a + b)) if axis is not None else float("nan")
        out.append(Subtrace(float(a), float(b), float(x)))
    return out


# -- g2 estimation --------------------------------------------------------------------


@dataclass
class G2Estimate:
    tau: np.ndarray
    g2: np.ndarray
    err: np.ndarray
    x: float = float("nan")
    n_runs: int = 1
    pairs: np.ndarray | None = None  # (bins - k) * mean^2, the Poisson information per lag
    nodes: np.ndarray | None = None  # rows (x, subtrace length, total time) behind the estimate
    unit_var: np.ndarray | None = None  # product variance / mean^2, unfloored

    def validate(self):
        if np.any(self.g2 < 0) or np.any(self.err < 0):
            raise DataError("g2 values and errors must be non-negative")
        d = np.diff(self.tau)
        if d.size and not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise DataError("tau grid must be uniform")


def _autocorr(a: np.ndarray, nlag: int) -> np.ndarray:
    n = len(a)
    L = sfft.next_fast_len(n + nlag)
    F = sfft.rfft(a, L)
    return sfft.irfft(F * np.conj(F), L)[:nlag]


def g2_from_counts(counts: np.ndarray, bin_width: float, max_lag: float,
                   x: float = float("nan")) -> G2Estimate:
    """Binned-product estimator on an array of counts per bin."""
    c = np.asarray(counts, dtype=float)
    N = len(c)
    if c.sum() < 2:
        raise DataError("g2 needs at least 2 clicks")
    nlag = min(int(round(max_lag / bin_width)) + 1, N)
    m = c.mean()
    k = np.arange(nlag)
    n_k = N - k
    prod = np.rint(_autocorr(c, nlag))
    prod2 = np.rint(_autocorr(c * c, nlag))
    prod[0] = np.sum(c * (c - 1))
    prod2[0] = np.sum((c * (c - 1)) ** 2)
    mean_p = prod / n_k
    var_p = np.maximum(prod2 / n_k - mean_p**2, 0.0)
    # Poisson expectation of the product variance keeps errors finite without coincidences
    floor = np.where(k == 0, 2 * m**2 + 4 * m**3, m**2 + 2 * m**3)
    g = mean_p / m**2
    err = np.sqrt(np.maximum(var_p, floor) / n_k) / m**2
    return G2Estimate(tau=k * bin_width, g2=g, err=err, x=x, n_runs=1, pairs=n_k * m**2,
                      unit_var=var_p / m**2)


def g2_estimator(trace: ClickTrace, t0: float, t1: float, bin_width: float = G2_BIN,
                 max_lag: float = 1e-3, x: float = float("nan")) -> G2Estimate:
    """g2(tau) of the clicks in [t0, t1) on a uniform lag grid of ``bin_width``."""
    b = bin_counts(trace, bin_width, t0, t1)
    if len(b.counts) < 2:
        raise DataError("subtrace shorter than two g2 bins")
    return g2_from_counts(b.counts, bin_width, max_lag, x)


def average_runs(estimates: list[G2Estimate]) -> G2Estimate:
    """Inverse-variance weighted mean over estimates on a common lag grid.

    The variance of estimate r at lag k is modelled as s_k^2 / pairs_rk, with
    the per-unit variance s_k^2 pooled over all estimates from their
    unfloored product variances. Weights are then proportional to the Poisson
    information ``pairs``. Using each estimate's own error instead would
    favour low g2 values, and single short subtraces rarely contain enough
    coincidences for a stable error of their own.
    """
    if not estimates:
        raise DataError("no estimates to average")
    if len(estimates) == 1:
        return estimates[0]
    n = min(len(e.tau) for e in estimates)
    w = np.array([e.pairs[:n] if e.pairs is not None else 1.0 / np.maximum(e.err[:n], 1e-300) ** 2
                  for e in estimates])
    g = np.array([e.g2[:n] for e in estimates])
    W = w.sum(axis=0)
    mean = (w * g).sum(axis=0) / W
    if all(e.unit_var is not None and e.pairs is not None for e in estimates):
        uv = np.array([e.unit_var[:n] for e in estimates])
        s2 = (w * uv).sum(axis=0) / W
        # fall back to the propagated errors where no lag saw a coincidence
        prop = (w**2 * np.array([e.err[:n] for e in estimates]) ** 2).sum(axis=0) / W**2
        var = np.where(s2 > 0, s2 / W, prop)
        unit = s2
    else:
        var = (w**2 * np.array([e.err[:n] for e in estimates]) ** 2).sum(axis=0) / W**2
        unit = None
    x_w = w[:, 0]
    xs = np.array([e.x for e in estimates])
    x = float(np.sum(x_w * xs) / np.sum(x_w)) if np.all(np.isfinite(xs)) else float("nan")
    nodes = [e.nodes for e in estimates if e.nodes is not None]
    return G2Estimate(tau=estimates[0].tau[:n], g2=mean, err=np.sqrt(var), x=x,
                      n_runs=sum(e.n_runs for e in estimates), pairs=W,
                      nodes=merge_nodes(nodes) if nodes else None, unit_var=unit)


def average_groups(groups: dict) -> dict:
    """average_runs per key; empty groups are skipped with a warning."""
    out = {}
    for key, ests in groups.items():
        if not ests:
            warnings.warn(f"coupling bin {key} has no estimates; skipped", stacklevel=2)
            continue
        out[key] = average_runs(ests)
    return out


def merge_nodes(nodes: list[np.ndarray], resolution: float = 1e-3) -> np.ndarray:
    """Pool (x, length, total time) rows whose x agree to ``resolution``.

    Lengths are matched to 0.1 ms, so run-to-run jitter of the detected
    transition does not multiply the nodes.
    """
    rows = np.concatenate([np.atleast_2d(n) for n in nodes])
    acc: dict[tuple, list[float]] = defaultdict(lambda: [0.0, 0.0, 0.0])
    for x, L, T in rows:
        key = (round(x / resolution), round(L * 1e4))
        a = acc[key]
        a[0] += x * T
        a[1] += L * T
        a[2] += T
    out = np.array([[a[0] / a[2], a[1] / a[2], a[2]] for a in acc.values()])
    return out[np.argsort(out[:, 0])]


# -- coupling bins --------------------------------------------------------------------


def default_coupling_edges(x_lo: float = 0.55, coarse_width: float = 0.05, fine_width: float = 0.01,
                           x_fine: float = 0.9) -> np.ndarray:
    """Coarse bins up to ``x_fine``, then fine bins up to the critical point.

    The default coarse width exceeds the coupling span of the longest (50 ms) subtrace.
    """
    if not (0 < coarse_width and 0 < fine_width and x_lo < x_fine < 1.0):
        raise DomainError("need positive widths and x_lo < x_fine < 1")
    coarse = np.arange(x_lo, x_fine - 1e-9, coarse_width)
    fine = np.arange(x_fine, 1.0 + 1e-9, fine_width)
    return np.round(np.concatenate([coarse, fine]), 10)


def bin_label(lo: float, hi: float) -> str:
    return f"{0.5 * (lo + hi):.4f}"


@dataclass
class RunAnalysis:
    t_cr: float
    axis: CouplingAxis
    g2: dict  # bin index -> list[G2Estimate]
    rate_counts: np.ndarray  # counts per nbar bin
    rate_time: np.ndarray  # exposure per nbar bin (s)


def analyze_run(trace: ClickTrace, edges: np.ndarray, nbar_edges: np.ndarray,
                max_lag: float = 1e-3, atom_loss: float = 0.0,
                subtrace_kw: dict | None = None, pool: bool = True) -> RunAnalysis:
    """Transition, coupling axis, per-subtrace g2 and rate exposure of one run.

    With ``pool`` the subtraces falling into one coupling bin are averaged
    right away, which is what :func:`combine_runs` would do anyway.
    """
    t_cr = detect_transition(trace)
    axis = CouplingAxis.from_schedule(t_cr, trace.schedule, atom_loss)
    if t_cr <= 0:
        raise DataError("transition detected before the start of the record")
    subs = split_subtraces(0.0, t_cr, axis, **(subtrace_kw or {}))
    groups: dict[int, list[G2Estimate]] = defaultdict(list)
    for s in subs:
        i = int(np.searchsorted(edges, s.x, side="right")) - 1
        if not 0 <= i < len(edges) - 1:
            continue
        try:
            est = g2_estimator(trace, s.t0, s.t1, max_lag=max_lag, x=s.x)
        except DataError:
            continue
        est.nodes = np.array([[s.x, s.length, s.length]])
        groups[i].append(est)
    # count rates on a fine x grid, using 100 us bins assigned by their centre
    b = bin_counts(trace, TRANSITION_BIN)
    xc = axis(b.edges[:-1] + 0.5 * b.width)
    j = np.searchsorted(nbar_edges, xc, side="right") - 1
    ok = (j >= 0) & (j < len(nbar_edges) - 1)
    counts = np.bincount(j[ok], weights=b.counts[ok], minlength=len(nbar_edges) - 1)
    time = np.bincount(j[ok], minlength=len(nbar_edges) - 1) * b.width
    if pool:
        groups = {i: [_pool_run(ests)] for i, ests in groups.items()}
    return RunAnalysis(t_cr, axis, dict(groups), counts, time)


def _pool_run(ests: list[G2Estimate]) -> G2Estimate:
    e = average_runs(ests)
    e.n_runs = 1
    return e


@dataclass
class NbarTable:
    x: np.ndarray
    rate: np.ndarray
    rate_err: np.ndarray
    nbar: np.ndarray
    nbar_err: np.ndarray
    clamped: np.ndarray


def nbar_table(runs: list[RunAnalysis], nbar_edges: np.ndarray, p: PhysicalParams) -> NbarTable:
    """Mean rate and photon number per x bin; errors from run-to-run scatter."""
    C = np.array([r.rate_counts for r in runs])
    T = np.array([r.rate_time for r in runs])
    tot_T = T.sum(axis=0)
    keep = tot_T > 0
    rate = np.where(keep, C.sum(axis=0) / np.where(keep, tot_T, 1), 0.0)
    if len(runs) > 1:
        with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # bins seen by a single run
            per = np.where(T > 0, C / np.where(T > 0, T, 1), np.nan)
            nrun = np.sum(np.isfinite(per), axis=0)
            sd = np.nanstd(per, axis=0, ddof=1) if per.size else 0
        err = np.where(nrun > 1, sd / np.sqrt(np.maximum(nrun, 1)), np.sqrt(rate / np.maximum(tot_T, 1e-300)))
    else:
        err = np.sqrt(C.sum(axis=0)) / np.maximum(tot_T, 1e-300)
    x = 0.5 * (nbar_edges[:-1] + nbar_edges[1:])
    nbar, clamped = photon_number_from_rate(rate, p)
    nerr = err / p.detection_scale
    return NbarTable(x[keep], rate[keep], err[keep], np.asarray(nbar)[keep], nerr[keep],
                     np.asarray(clamped)[keep])


@dataclass
class AnalysisResult:
    bins: dict  # bin index -> G2Estimate
    edges: np.ndarray
    nbar: NbarTable
    t_cr: list[float] = field(default_factory=list)
    axes: list[CouplingAxis] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def flagged(self, i: int, x_flag: float = 0.97) -> bool:
        return self.edges[i] >= x_flag - 1e-12


def combine_runs(runs: list[RunAnalysis], edges: np.ndarray, nbar_edges: np.ndarray,
                 p: PhysicalParams) -> AnalysisResult:
    groups: dict[int, list[G2Estimate]] = defaultdict(list)
    for r in runs:
        for i, ests in r.g2.items():
            # pool the subtraces of one run first so n_runs counts runs
            groups[i].append(_pool_run(ests))
    bins = average_groups({i: groups.get(i, []) for i in range(len(edges) - 1)})
    return AnalysisResult(bins=bins, edges=edges, nbar=nbar_table(runs, nbar_edges, p),
                          t_cr=[r.t_cr for r in runs], axes=[r.axis for r in runs])


def default_nbar_edges(x_lo: float = 0.55, x_hi: float = 1.0, width: float = 0.005) -> np.ndarray:
    return np.round(np.arange(x_lo, x_hi + 1e-9, width), 10)
