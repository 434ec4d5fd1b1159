"""Lane positioning from windowed read counts of two side-looking readers.

Each reader counts, over a window of length tau, how many of its n
interrogations produced a read of a lane-marker tag. Counts are modelled as
Binomial(n, p) with p given by a read-rate curve of the vehicle's lateral
offset, and the offset is recovered by maximum likelihood.

Sign convention: ``pos`` is the vehicle's lateral offset from the lane
centre, positive toward the left marker. A curve ``p(x)`` gives the right
reader's per-interrogation read probability at offset ``x``; the left reader
sees the mirror image, ``p(-x)``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .geometry import Side


class NonIdentifiable(ValueError):
    pass


class DegenerateSeries(ValueError):
    pass


class CalibrationSource(str, enum.Enum):
    synthetic_from_sim = "synthetic_from_sim"
    table = "table"


@dataclass(frozen=True)
class ReadRateCurve:
    """Piecewise-linear read probability versus lateral offset.

    Outside the tabulated range the end values are held.
    """

    offsets: tuple[float, ...]
    probabilities: tuple[float, ...]
    calibration_source: CalibrationSource = CalibrationSource.table

    def __post_init__(self):
        x = np.asarray(self.offsets, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if x.ndim != 1 or x.size < 2 or x.size != p.size:
            raise ValueError("need at least two (offset, probability) points of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("offsets must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def plateau(cls, p0: float, plateau_end: float, zero_at: float, start: float = -5.0) -> "ReadRateCurve":
        """Flat at ``p0`` up to ``plateau_end``, then linear decay to zero at ``zero_at``."""
        if not start < plateau_end < zero_at:
            raise ValueError("need start < plateau_end < zero_at")
        return cls((start, plateau_end, zero_at, zero_at + 1.0), (p0, p0, 0.0, 0.0))

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    def __call__(self, offset):
        out = np.interp(offset, self.x, self.p)
        return float(out) if np.ndim(out) == 0 else out

    def half_width(self) -> float:
        """Largest |pos| for which both p(pos) and p(-pos) stay in the table."""
        return float(min(-self.x[0], self.x[-1]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["offset_m", "probability"])
            for x, p in zip(self.offsets, self.probabilities):
                w.writerow([repr(float(x)), repr(float(p))])

    @classmethod
    def from_csv(cls, path, source: CalibrationSource = CalibrationSource.table) -> "ReadRateCurve":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"offset_m", "probability"}:
            raise ValueError(f"{path}: expected columns offset_m, probability")
        return cls(tuple(float(r["offset_m"]) for r in rows),
                   tuple(float(r["probability"]) for r in rows), source)


@dataclass(frozen=True)
class CountWindow:
    t_start: float
    tau_s: float
    n: int
    z_left: int
    z_right: int
    # interrogations of the right reader when it differs from the left
    n_right: int | None = None

    def __post_init__(self):
        if not (0 <= self.z_left <= self.n and 0 <= self.z_right <= self.n_r):
            raise ValueError("counts must lie in [0, n]")

    @property
    def n_r(self) -> int:
        return self.n if self.n_right is None else self.n_right


@dataclass(frozen=True)
class LaneWindowEstimate:
    pos: float
    log_likelihood: float
    converged: bool
    iterations: int


def tau_max(W_lane: float, v: float, alpha_max: float) -> float:
    """Longest admissible window: W / (2 v cos(alpha_max))."""
    if v <= 0:
        raise ValueError("v must be > 0")
    if not 0.0 <= alpha_max < math.pi / 2:
        raise ValueError("alpha_max must lie in [0, pi/2)")
    return W_lane / (2.0 * v * math.cos(alpha_max))


def window_counts(
    trace: Sequence,
    tau_s: float,
    antenna_side: Side | str,
    interrogation_times: Sequence[float],
    t_start: float = 0.0,
    t_end: float | None = None,
) -> list[CountWindow]:
    """Bin one reader's reads and interrogations into consecutive tau windows.

    ``trace`` holds that reader's read events (anything with ``t``);
    ``interrogation_times`` are the start times of its inventory rounds.
    Counts land in ``z_left`` or ``z_right`` according to ``antenna_side``.
    A round counts as one success however many tags it read.
    """
    if tau_s <= 0:
        raise ValueError("tau_s must be > 0")
    side = Side(antenna_side)
    rounds = np.asarray(interrogation_times, dtype=float)
    if t_end is None:
        t_end = float(rounds[-1]) if rounds.size else t_start
    n_win = max(int(math.floor((t_end - t_start) / tau_s + 1e-9)), 0)
    edges = t_start + tau_s * np.arange(n_win + 1)
    n = np.histogram(rounds, edges)[0] if n_win else np.zeros(0, int)
    # a read belongs to the round that started last before it
    t_reads = np.asarray([ev.t for ev in trace], dtype=float)
    idx = np.searchsorted(rounds, t_reads, side="right") - 1
    read_round_t = np.unique(rounds[idx[idx >= 0]]) if rounds.size else np.zeros(0)
    z = np.histogram(read_round_t, edges)[0] if n_win else np.zeros(0, int)
    out = []
    for k in range(n_win):
        zl, zr = (int(z[k]), 0) if side is Side.left else (0, int(z[k]))
        nk = int(n[k])
        out.append(CountWindow(float(edges[k]), tau_s, nk, min(zl, nk), min(zr, nk)))
    return out


def merge_sides(left: Sequence[CountWindow], right: Sequence[CountWindow]) -> list[CountWindow]:
    """Combine per-reader windows (same tau and start) into two-sided windows."""
    if len(left) != len(right):
        raise ValueError("left and right window lists differ in length")
    return [CountWindow(a.t_start, a.tau_s, a.n, a.z_left, b.z_right, b.n)
            for a, b in zip(left, right)]


def log_likelihood(pos, z_left, z_right, n, curve: ReadRateCurve, n_right=None):
    """Binomial log-likelihood of both readers' counts at offset ``pos``."""
    nr = n if n_right is None else n_right
    pos = np.asarray(pos, dtype=float)
    pr = np.clip(curve(pos), 0.0, 1.0)
    pl = np.clip(curve(-pos), 0.0, 1.0)
    const = (gammaln(n + 1) - gammaln(z_left + 1) - gammaln(n - z_left + 1)
             + gammaln(nr + 1) - gammaln(z_right + 1) - gammaln(nr - z_right + 1))
    ll = (xlogy(z_left, pl) + xlogy(n - z_left, 1.0 - pl)
          + xlogy(z_right, pr) + xlogy(nr - z_right, 1.0 - pr) + const)
    return float(ll) if ll.ndim == 0 else ll


def _pick(cands: np.ndarray, ll: np.ndarray, pos_prev: float, atol: float = 1e-9) -> int:
    best = np.max(ll)
    tied = np.flatnonzero(ll >= best - atol * max(1.0, abs(best)))
    return int(tied[np.argmin(np.abs(cands[tied] - pos_prev))])


def _closed_form(z_l, z_r, n, nr, curve, pos_prev, lo, hi):
    # breakpoints of p(pos) and of p(-pos)
    xs = curve.x
    bps = np.unique(np.concatenate([xs, -xs, [lo, hi]]))
    bps = bps[(bps >= lo) & (bps <= hi)]
    cands = [float(np.clip(pos_prev, lo, hi))]
    for a, b in zip(bps[:-1], bps[1:]):
        cands.extend((a, b))
        mid = 0.5 * (a + b)
        pr0, pl0 = curve(mid), curve(-mid)
        br = (curve(b) - curve(a)) / (b - a)
        bl = (curve(-b) - curve(-a)) / (b - a)
        # stationarity on this piece, with u = pos - mid:
        # br*(z_r - nr*pr)*pl*(1-pl) + bl*(z_l - n*pl)*pr*(1-pr) = 0
        P = np.polynomial.Polynomial
        pr = P([pr0, br])
        pl = P([pl0, bl])
        if bl == 0.0:
            # the left reader's term is constant here
            poly = br * (z_r - nr * pr)
        elif br == 0.0:
            poly = bl * (z_l - n * pl)
        else:
            poly = br * (z_r - nr * pr) * pl * (1 - pl) + bl * (z_l - n * pl) * pr * (1 - pr)
        coef = poly.coef
        if coef.size == 0 or np.all(np.abs(coef) < 1e-300):
            cands.append(float(np.clip(pos_prev, a, b)))
            continue
        for r in poly.roots():
            if abs(r.imag) < 1e-9:
                u = r.real + mid
                if a <= u <= b:
                    cands.append(float(u))
        cands.append(float(np.clip(pos_prev, a, b)))
    c = np.asarray(cands)
    ll = log_likelihood(c, z_l, z_r, n, curve, nr)
    k = _pick(c, ll, pos_prev)
    return LaneWindowEstimate(float(c[k]), float(ll[k]), True, 1)


def _golden(f, a, b, tol, max_iter):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b), it, b - a <= tol


def _iterative(z_l, z_r, n, nr, curve, pos_prev, lo, hi, grid=401, tol=1e-3, max_iter=100, peaks=8):
    f = lambda x: log_likelihood(x, z_l, z_r, n, curve, nr)
    xs = np.linspace(lo, hi, grid)
    ll = f(xs)
    # refine the best few local maxima of the coarse grid
    padded = np.concatenate([[-np.inf], ll, [-np.inf]])
    local = np.flatnonzero((ll >= padded[:-2]) & (ll >= padded[2:]))
    local = local[np.argsort(-ll[local], kind="stable")][:peaks]
    cands, iters, conv = [], 0, True
    for k in local:
        x, it, ok = _golden(f, xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)], tol, max_iter)
        cands.append(x)
        iters = max(iters, it)
        conv = conv and ok
    c = np.asarray(cands)
    lls = f(c)
    j = _pick(c, lls, pos_prev)
    best, llb = float(c[j]), float(lls[j])
    # on a flat ridge, walk toward pos_prev while the likelihood stays tied
    target = float(np.clip(pos_prev, lo, hi))
    tie = 1e-9 * max(1.0, abs(llb))
    step = math.copysign(1e-6, target - best)
    if abs(target - best) <= 1e-6 or f(best + step) < llb - tie:
        pass
    elif f(target) >= llb - tie:
        best = target
    else:
        a, b = best, target
        while abs(b - a) > 1e-9:
            m = 0.5 * (a + b)
            if f(m) >= llb - tie:
                a = m
            else:
                b = m
        best = a
    return LaneWindowEstimate(best, float(f(best)), conv, iters)


def estimate_position(
    z_left: int,
    z_right: int,
    n: int,
    curve: ReadRateCurve,
    pos_prev: float = 0.0,
    n_right: int | None = None,
    method: str = "closed_form",
    bounds: tuple[float, float] | None = None,
    strict: bool = False,
) -> LaneWindowEstimate:
    """Maximum-likelihood lateral offset for one window.

    ``method="closed_form"`` solves the stationarity cubic on every linear
    piece of the curve; ``"iterative"`` runs a grid search and golden-section
    refinement. Ties go to the candidate nearest ``pos_prev``.
    """
    nr = n if n_right is None else n_right
    if not (0 <= z_left <= n and 0 <= z_right <= nr):
        raise ValueError("counts must lie in [0, n]")
    if bounds is None:
        hw = curve.half_width()
        bounds = (-hw, hw)
    lo, hi = bounds
    if z_left == 0 and z_right == 0 and float(np.max(curve.p)) < 1e-12:
        if strict:
            raise NonIdentifiable("no reads and a read-rate curve that is zero everywhere")
        return LaneWindowEstimate(pos_prev, 0.0, False, 0)
    if method == "closed_form":
        return _closed_form(z_left, z_right, n, nr, curve, pos_prev, lo, hi)
    if method == "iterative":
        return _iterative(z_left, z_right, n, nr, curve, pos_prev, lo, hi)
    raise ValueError(f"unknown method {method!r}")


def estimate_series(windows: Sequence[CountWindow], curve: ReadRateCurve, pos0: float = 0.0,
                    method: str = "closed_form") -> list[LaneWindowEstimate]:
    out = []
    pos = pos0
    for w in windows:
        if w.n == 0 and w.n_r == 0:
            est = LaneWindowEstimate(pos, 0.0, False, 0)
        else:
            est = estimate_position(w.z_left, w.z_right, w.n, curve, pos, w.n_r, method)
        out.append(est)
        pos = est.pos
    return out


def cross_correlation(est_series, ref_series) -> float:
    """Pearson correlation at zero lag."""
    a = np.asarray(est_series, dtype=float)
    b = np.asarray(ref_series, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("series must be 1-D, equal length, and at least 2 long")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateSeries("series has zero variance")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cross_correlation_lags(est_series, ref_series, max_lag: int) -> dict[int, float]:
    """Correlation of est[k + lag] with ref[k] for lag in [-max_lag, max_lag]."""
    a = np.asarray(est_series, dtype=float)
    b = np.asarray(ref_series, dtype=float)
    out = {}
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            x, y = a[lag:], b[: b.size - lag]
        else:
            x, y = a[: a.size + lag], b[-lag:]
        if x.size >= 2:
            out[lag] = cross_correlation(x, y)
    return out
