"""Sequence-level expected global error: averaging over TX bit histories and bit intervals.

The :class:`AnalyticEngine` does the heavy lifting. For one scenario it caches,
per distinct receiver link and RX threshold, the per-history link error
probabilities for a whole column of FC thresholds at once, so that a sweep over
``(xi_R, xi_FC)`` costs one pass per ``xi_R`` value.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from coopmc import detection as det
from coopmc.fusion import fuse_asymmetric, fuse_symmetric, global_error
from coopmc.scenario import FusionRule, Scenario

logger = logging.getLogger(__name__)

MAX_EXACT_LENGTH = 12
DEFAULT_XI_MAX = 40
PERFECT = "perfect"
NOISY = "noisy"


@dataclass
class ErrorReport:
    per_interval: np.ndarray  # (L, 3): q_md, q_fa, q_err averaged over histories
    q_bar: float
    method: str
    n_samples: int | None = None
    seed: int | None = None
    ci_halfwidth: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def q_md(self) -> np.ndarray:
        return self.per_interval[:, 0]

    @property
    def q_fa(self) -> np.ndarray:
        return self.per_interval[:, 1]

    @property
    def q_err(self) -> np.ndarray:
        return self.per_interval[:, 2]

    @property
    def q_md_bar(self) -> float:
        return float(self.q_md.mean())

    @property
    def q_fa_bar(self) -> float:
        return float(self.q_fa.mean())


@dataclass
class SweepGrid:
    """Axes of a threshold sweep. ``xi_r`` entries are shared ints or per-RX tuples."""

    xi_r: list = field(default_factory=lambda: list(range(1, DEFAULT_XI_MAX + 1)))
    xi_fc: list = field(default_factory=lambda: list(range(1, DEFAULT_XI_MAX + 1)))
    k: list | None = None
    rules: list | None = None

    def __post_init__(self):
        if not self.xi_r or not self.xi_fc:
            raise ValueError("sweep axes must be non-empty")
        for x in self.xi_fc:
            if int(x) != x or x < 1:
                raise ValueError(f"FC thresholds must be integers >= 1, got {x}")
        for x in self.xi_r:
            for v in np.atleast_1d(x):
                if int(v) != v or v < 1:
                    raise ValueError(f"RX thresholds must be integers >= 1, got {x}")


@dataclass
class OptimizationResult:
    xi_r: tuple
    xi_fc: int
    q_bar: float
    surface: np.ndarray  # (len(grid.xi_r), len(grid.xi_fc))
    grid: SweepGrid


@dataclass
class HistorySet:
    """TX histories preceding each interval ``j``: ``bits[j-1]`` is ``(H_j, j-1)``."""

    bits: list
    weights: list
    inverse: list | None = None
    n_samples: int | None = None
    seed: int | None = None

    @property
    def method(self) -> str:
        return "exact-enumeration" if self.n_samples is None else "monte-carlo"


def exact_histories(length: int, p_one: float) -> HistorySet:
    bits, weights = [], []
    for j in range(1, length + 1):
        n = j - 1
        codes = np.arange(2**n)
        b = ((codes[:, None] >> np.arange(n)[::-1]) & 1).astype(float)
        ones = b.sum(axis=1)
        bits.append(b)
        weights.append(p_one**ones * (1 - p_one) ** (n - ones))
    return HistorySet(bits, weights)


def sampled_histories(length: int, p_one: float, n_samples: int, seed: int) -> HistorySet:
    rng = np.random.Generator(np.random.PCG64(seed))
    seqs = (rng.random((n_samples, length)) < p_one).astype(np.uint8)
    bits, weights, inverse = [], [], []
    for j in range(1, length + 1):
        prefix = seqs[:, : j - 1]
        if j == 1:
            uniq, inv = np.zeros((1, 0)), np.zeros(n_samples, dtype=int)
        else:
            uniq, inv = np.unique(prefix, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
        counts = np.bincount(inv, minlength=len(uniq))
        bits.append(uniq.astype(float))
        weights.append(counts / n_samples)
        inverse.append(inv)
    return HistorySet(bits, weights, inverse, n_samples=n_samples, seed=seed)


class AnalyticEngine:
    """Per-scenario cache of link error tables.

    ``xi_fc_max`` bounds the FC thresholds that can be queried in noisy mode.
    """

    def __init__(
        self,
        scenario: Scenario,
        reporting: str = NOISY,
        histories: HistorySet | None = None,
        xi_fc_max: int = DEFAULT_XI_MAX,
        eps: float = det.PRUNE_EPS,
    ):
        if reporting not in (PERFECT, NOISY):
            raise ValueError(f"reporting must be 'perfect' or 'noisy', got {reporting!r}")
        self.scenario = scenario
        self.reporting = reporting
        self.length = scenario.timing.length
        self.histories = histories or exact_histories(self.length, scenario.physical.p_one)
        self.xi_fc_max = xi_fc_max
        self.eps = eps
        self.weights = det.precompute_weights(scenario)
        phys = scenario.physical
        self._link_keys = [
            (self.weights.rx[k].tobytes(), self.weights.fc[k].tobytes(), phys.molecules_tx, phys.molecules_rx[k])
            for k in range(scenario.k)
        ]
        self._cache: dict = {}
        self.pruned_mass = 0.0

    def _local(self, wrx: np.ndarray, xi: int, amplitude: float):
        """Per interval: ``(p_md, p_fa, lam_past)`` for every history."""
        out = []
        for bits in self.histories.bits:
            lam0, lam1 = det._local_split(bits, amplitude, wrx)
            p_md = det.poisson_below(lam1, xi)
            p_fa = 1 - det.poisson_below(lam0, xi)
            out.append((np.atleast_1d(p_md), np.atleast_1d(p_fa), bits))
        return out

    def link_tables(self, k: int, xi: int):
        """List over intervals of ``(e_md, e_fa)``, each ``(H_j, C)``; ``C = 1`` for perfect reporting."""
        key = (self._link_keys[k], int(xi))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        phys = self.scenario.physical
        wrx, wfc = self.weights.rx[k], self.weights.fc[k]
        tables = []
        for j, (p_md, p_fa, bits) in enumerate(self._local(wrx, xi, phys.molecules_tx), start=1):
            if self.reporting == PERFECT:
                tables.append((p_md[:, None], p_fa[:, None]))
                continue
            n = j - 1
            lam_past = det._lambda_matrix(bits, phys.molecules_tx, wrx[:n])
            p_one = 1 - det.poisson_below(lam_past, xi) if n else np.zeros((len(bits), 0))
            contrib = phys.molecules_rx[k] * wfc[n:0:-1] if n else np.zeros(0)
            hist, sig, prob, pruned, _ = det.decision_support(np.atleast_2d(p_one), contrib, self.eps)
            self.pruned_mass = max(self.pruned_mass, float(pruned.max()))
            current = phys.molecules_rx[k] * wfc[0]
            b0, b1, mass = det.fc_below_tables(hist, sig, prob, len(bits), current, self.xi_fc_max)
            tables.append(det.compose_link(p_md, p_fa, b0, b1, mass))
        self._cache[key] = tables
        return tables

    def interval_errors(
        self, xi_r: Sequence[int], xi_fc: Sequence[int], symmetric_fast_path: bool = True, rule: FusionRule | None = None
    ) -> np.ndarray:
        """History-averaged ``(q_md, q_fa, q_err)``, shape ``(L, len(xi_fc), 3)``.

        ``rule`` overrides the scenario's fusion rule; link tables do not depend on it.
        """
        sc = self.scenario
        rule = sc.rule if rule is None else rule.normalize(sc.k)
        if rule.is_soft:
            raise ValueError("soft fusion goes through soft_interval_errors")
        xi_r = tuple(int(x) for x in xi_r)
        cols = np.asarray(xi_fc, dtype=int) - 1
        if self.reporting == PERFECT:
            cols = np.zeros_like(cols)
        elif cols.max() >= self.xi_fc_max:
            raise ValueError(f"xi_fc up to {self.xi_fc_max} supported by this engine")
        per_rx = [self.link_tables(k, xi_r[k]) for k in range(sc.k)]
        same = symmetric_fast_path and len({(self._link_keys[k], xi_r[k]) for k in range(sc.k)}) == 1
        p1 = sc.physical.p_one
        out = np.empty((self.length, len(cols), 3))
        for j in range(self.length):
            w = self.histories.weights[j]
            if same:
                e_md, e_fa = per_rx[0][j]
                q_md, q_fa = fuse_symmetric(rule, e_md[:, cols], e_fa[:, cols], sc.k)
            else:
                e_md = np.stack([t[j][0][:, cols] for t in per_rx], axis=-1)
                e_fa = np.stack([t[j][1][:, cols] for t in per_rx], axis=-1)
                q_md, q_fa = fuse_asymmetric(rule, e_md, e_fa)
            q_err = global_error(q_md, q_fa, p1)
            out[j, :, 0] = w @ q_md
            out[j, :, 1] = w @ q_fa
            out[j, :, 2] = w @ q_err
        return out

    def per_history_error(self, xi_r: Sequence[int], xi_fc: int) -> list:
        """``Q_FC[j | history]`` arrays, used for Monte-Carlo confidence intervals."""
        sc = self.scenario
        col = 0 if self.reporting == PERFECT else int(xi_fc) - 1
        per_rx = [self.link_tables(k, int(xi_r[k])) for k in range(sc.k)]
        res = []
        for j in range(self.length):
            e_md = np.stack([t[j][0][:, col] for t in per_rx], axis=-1)
            e_fa = np.stack([t[j][1][:, col] for t in per_rx], axis=-1)
            q_md, q_fa = fuse_asymmetric(sc.rule, e_md, e_fa)
            res.append(global_error(q_md, q_fa, sc.physical.p_one))
        return res

    def soft_interval_errors(self, xi_soft: Sequence[int]) -> np.ndarray:
        """Pooled-observation fusion: one Poisson statistic with the summed receiver means."""
        sc = self.scenario
        pooled = self.weights.rx.sum(axis=0)
        xi = np.asarray(xi_soft, dtype=int)
        out = np.empty((self.length, len(xi), 3))
        p1 = sc.physical.p_one
        for j, bits in enumerate(self.histories.bits):
            lam0, lam1 = det._local_split(bits, sc.physical.molecules_tx, pooled)
            table0 = det.poisson_below_table(np.atleast_1d(lam0), int(xi.max()))
            table1 = det.poisson_below_table(np.atleast_1d(lam1), int(xi.max()))
            q_md = table1[:, xi - 1]
            q_fa = 1 - table0[:, xi - 1]
            w = self.histories.weights[j]
            out[j, :, 0] = w @ q_md
            out[j, :, 1] = w @ q_fa
            out[j, :, 2] = w @ global_error(q_md, q_fa, p1)
        return out


def _histories_for(scenario: Scenario, method: str, n_samples: int | None, seed: int | None) -> HistorySet:
    L = scenario.timing.length
    if method == "exact":
        if L > MAX_EXACT_LENGTH:
            raise ValueError(
                f"exact enumeration supports L <= {MAX_EXACT_LENGTH} (got L={L}); "
                "pass method='monte-carlo' with n_samples and seed"
            )
        return exact_histories(L, scenario.physical.p_one)
    if method == "monte-carlo":
        if not n_samples or seed is None:
            raise ValueError("monte-carlo averaging needs n_samples and seed")
        return sampled_histories(L, scenario.physical.p_one, n_samples, seed)
    raise ValueError(f"unknown method {method!r}")


def _report(per_interval: np.ndarray, hs: HistorySet, **meta) -> ErrorReport:
    return ErrorReport(
        per_interval=per_interval,
        q_bar=float(per_interval[:, 2].mean()),
        method=hs.method,
        n_samples=hs.n_samples,
        seed=hs.seed,
        metadata=meta,
    )


def _mc_halfwidth(engine: AnalyticEngine, xi_r, xi_fc) -> float:
    hs = engine.histories
    per_hist = engine.per_history_error(xi_r, xi_fc)
    per_sample = np.mean([q[inv] for q, inv in zip(per_hist, hs.inverse)], axis=0)
    return float(1.96 * per_sample.std(ddof=1) / np.sqrt(hs.n_samples))


def expected_error(
    scenario: Scenario,
    reporting: str = NOISY,
    method: str = "exact",
    n_samples: int | None = None,
    seed: int | None = None,
    symmetric_fast_path: bool = True,
) -> ErrorReport:
    """Expected average global error of ``scenario`` at its configured thresholds."""
    hs = _histories_for(scenario, method, n_samples, seed)
    if scenario.rule.is_soft:
        return soft_fusion_error(scenario, scenario.rule.threshold, histories=hs)
    xi_fc = scenario.detector.fc_int()
    engine = AnalyticEngine(scenario, reporting, hs, xi_fc_max=max(xi_fc, 1))
    xi_r = scenario.detector.rx_int()
    res = engine.interval_errors(xi_r, [xi_fc], symmetric_fast_path)[:, 0, :]
    report = _report(res, hs, reporting=reporting, xi_r=xi_r, xi_fc=xi_fc, pruned_mass=engine.pruned_mass)
    if hs.n_samples is not None:
        report.ci_halfwidth = _mc_halfwidth(engine, xi_r, xi_fc)
    return report


def soft_fusion_error(scenario: Scenario, xi_soft: int, histories: HistorySet | None = None) -> ErrorReport:
    engine = AnalyticEngine(scenario, PERFECT, histories)
    res = engine.soft_interval_errors([int(xi_soft)])[:, 0, :]
    return _report(res, engine.histories, reporting="soft", xi_soft=int(xi_soft))


def optimize_soft(scenario: Scenario, xi_values: Sequence[int] = range(1, DEFAULT_XI_MAX + 1)):
    """Best pooled threshold; returns ``(xi, q_bar, curve)``. Ties go to the smallest threshold."""
    engine = AnalyticEngine(scenario, PERFECT)
    xi_values = list(xi_values)
    if not xi_values:
        raise ValueError("empty threshold list")
    curve = engine.soft_interval_errors(xi_values)[:, :, 2].mean(axis=0)
    best = int(np.argmin(curve))
    return xi_values[best], float(curve[best]), curve


def _assignment(x, k: int) -> tuple[int, ...]:
    if np.ndim(x) == 0:
        return (int(x),) * k
    t = tuple(int(v) for v in x)
    if len(t) != k:
        raise ValueError(f"per-RX threshold assignment {t} does not match K={k}")
    return t


def _surface_chunk(scenario: Scenario, reporting: str, assignments, xi_fc, symmetric_fast_path=True):
    engine = AnalyticEngine(scenario, reporting, xi_fc_max=max(max(xi_fc), 1))
    res = [engine.interval_errors(a, xi_fc, symmetric_fast_path).transpose(1, 0, 2) for a in assignments]
    return np.array(res).reshape(len(assignments), len(xi_fc), scenario.timing.length, 3)


def error_surface(
    scenario: Scenario, grid: SweepGrid, reporting: str = NOISY, workers: int = 1, symmetric_fast_path: bool = True
) -> np.ndarray:
    """Per-interval errors for every grid point: shape ``(n_xi_r, n_xi_fc, L, 3)``.

    With ``workers > 1`` the ``xi_r`` axis is split across processes; results are
    assembled in grid order regardless of completion order.
    """
    assignments = [_assignment(x, scenario.k) for x in grid.xi_r]
    xi_fc = [int(x) for x in grid.xi_fc]
    if workers <= 1 or len(assignments) < 2:
        res = _surface_chunk(scenario, reporting, assignments, xi_fc, symmetric_fast_path)
    else:
        chunks = [assignments[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(
                ex.map(
                    _surface_chunk,
                    [scenario] * workers,
                    [reporting] * workers,
                    chunks,
                    [xi_fc] * workers,
                    [symmetric_fast_path] * workers,
                )
            )
        res = np.empty((len(assignments), len(xi_fc), scenario.timing.length, 3))
        for i, part in enumerate(parts):
            if len(part):
                res[i::workers] = part
    return res


def optimize_thresholds(scenario: Scenario, grid: SweepGrid | None = None, reporting: str = NOISY, workers: int = 1) -> OptimizationResult:
    """Exhaustive grid search for the smallest average error.

    Ties resolve to the smallest ``xi_FC``, then the lexicographically smallest RX assignment.
    """
    grid = grid or SweepGrid()
    surface = error_surface(scenario, grid, reporting, workers)[..., 2].mean(axis=-1)
    assignments = [_assignment(x, scenario.k) for x in grid.xi_r]
    best = None
    for i, a in enumerate(assignments):
        for f, xf in enumerate(grid.xi_fc):
            key = (surface[i, f], int(xf), a)
            if best is None or key < best[0]:
                best = (key, i, f)
    (q, xf, a), _, _ = best
    return OptimizationResult(xi_r=a, xi_fc=xf, q_bar=float(q), surface=surface, grid=grid)


def baseline_error(kind: str, threshold: int | None = None, p_one: float = 0.5, xi_values=range(1, DEFAULT_XI_MAX + 1), **overrides) -> ErrorReport:
    """Point-to-point reference link (``tx-rx`` or ``tx-fc``) at a given or optimised threshold."""
    from coopmc.presets import baseline_scenario

    scenario = baseline_scenario(kind, threshold=threshold or 1, p_one=p_one, **overrides)
    if threshold is None:
        engine = AnalyticEngine(scenario, PERFECT)
        xi_values = list(xi_values)
        curves = np.array([engine.interval_errors((x,), [1])[:, 0, 2].mean() for x in xi_values])
        threshold = xi_values[int(np.argmin(curves))]
        scenario = scenario.with_detector(threshold_rx=threshold)
    report = expected_error(scenario, PERFECT)
    report.metadata.update(kind=kind, threshold=int(threshold))
    return report
