"""Particle-based simulation of the three-phase protocol.

Molecules move by free Brownian motion and are only observed at sampling
instants, so positions are drawn exactly from the Gaussian transition kernel
between those instants; there is no integration time step.

Two exact shortcuts keep this affordable on one core:

* the coordinates of free diffusion are independent Brownian motions, so the
  axial coordinate is simulated for every molecule and the two transverse
  coordinates only at the instants where the axial one lies inside some
  observer's slab (elsewhere the molecule cannot be inside an observer);
* every RX's reporting burst is simulated for every interval whether or not it
  is actually released, and only released bursts are counted. This is
  equal in distribution to simulating released bursts only, and lets one set of
  trajectories serve a whole grid of detection thresholds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from coopmc.evaluator import NOISY, PERFECT, ErrorReport
from coopmc.scenario import UM, Scenario

RNG_ALGORITHM = "numpy PCG64, per-trial SeedSequence([base_seed, trial_index]) spawned into 3 streams"


def trial_streams(base_seed: int, index: int):
    """Independent generators for TX bits, information molecules and reporter molecules."""
    children = np.random.SeedSequence([int(base_seed), int(index)]).spawn(3)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


@numba.njit(cache=True, inline="always")
def _advance(x, sd, rng):
    return x + sd * rng.standard_normal()


@numba.njit(cache=True)
def _slab_kernel(rng, n, D, times, src, centers, radii, axis, o1, o2, lo, hi, counts):
    n_t = len(times)
    n_obs = centers.shape[0]
    n_slab = len(lo)
    sd_axis = np.sqrt(2 * D * np.diff(np.concatenate((np.zeros(1), times))))
    xs = np.empty(n_t)
    for _ in range(n):
        x = src[axis]
        for s in range(n_t):
            x = _advance(x, sd_axis[s], rng)
            xs[s] = x
        y = src[o1]
        z = src[o2]
        t_last = 0.0
        for s in range(n_t):
            x = xs[s]
            in_slab = False
            for b in range(n_slab):
                if lo[b] <= x and x <= hi[b]:
                    in_slab = True
                    break
            if not in_slab:
                continue
            # transverse coordinates jump straight from their last drawn instant
            sd = np.sqrt(2 * D * (times[s] - t_last))
            y = _advance(y, sd, rng)
            z = _advance(z, sd, rng)
            t_last = times[s]
            for o in range(n_obs):
                dx = x - centers[o, axis]
                dy = y - centers[o, o1]
                dz = z - centers[o, o2]
                if dx * dx + dy * dy + dz * dz <= radii[o] * radii[o]:
                    counts[o, s] += 1


def _merged_slabs(lo: np.ndarray, hi: np.ndarray):
    order = np.argsort(lo)
    out_lo, out_hi = [lo[order[0]]], [hi[order[0]]]
    for i in order[1:]:
        if lo[i] <= out_hi[-1]:
            out_hi[-1] = max(out_hi[-1], hi[i])
        else:
            out_lo.append(lo[i])
            out_hi.append(hi[i])
    return np.array(out_lo), np.array(out_hi)


@numba.njit(cache=True)
def _axis_endpoints(rng, n, D, times, out):
    sd = np.sqrt(2 * D * np.diff(np.concatenate((np.zeros(1), times))))
    for i in range(n):
        x = 0.0
        for s in range(len(times)):
            x = _advance(x, sd[s], rng)
        out[i] = x


def displacement_samples(rng: np.random.Generator, n: int, D: float, times) -> np.ndarray:
    """One-axis displacement after ``times[-1]``, stepping through every instant in ``times``."""
    out = np.empty(int(n))
    _axis_endpoints(rng, int(n), float(D), np.asarray(times, dtype=float), out)
    return out


def count_hits(
    rng: np.random.Generator,
    source,
    n: int,
    D: float,
    times,
    centers,
    radii,
) -> np.ndarray:
    """Counts of ``n`` molecules released at ``source`` at time 0 inside each sphere at each time.

    Returns an integer array ``(n_observers, len(times))``; membership is ``|x - c| <= r``.
    """
    source = np.asarray(source, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    times = np.asarray(times, dtype=float)
    counts = np.zeros((len(centers), len(times)), dtype=np.int64)
    n = int(round(n))
    if n == 0 or len(times) == 0:
        return counts
    # the axis along which the observers sit furthest from the source prunes the most
    axis = int(np.argmax(np.min(np.abs(centers - source), axis=0)))
    o1, o2 = (a for a in range(3) if a != axis)
    lo, hi = _merged_slabs(centers[:, axis] - radii, centers[:, axis] + radii)
    _slab_kernel(rng, n, float(D), times, source, centers, radii, axis, o1, o2, lo, hi, counts)
    return counts


@dataclass
class TrialCounts:
    """Threshold-independent outcome of one trial.

    ``rx_samples[k, j, m]``: information molecules inside RX k at sample m of interval j.
    ``report_samples[k, i, j, m]``: molecules of RX k's burst from interval i inside the
    FC at FC sample m of interval j (zero for j < i), whether or not the burst is released.
    """

    tx_bits: np.ndarray
    rx_samples: np.ndarray
    report_samples: np.ndarray

    @property
    def rx_counts(self) -> np.ndarray:
        return self.rx_samples.sum(axis=-1)

    @property
    def report_counts(self) -> np.ndarray:
        return self.report_samples.sum(axis=-1)


@dataclass
class TrialRecord:
    tx_bits: np.ndarray
    rx_decisions: np.ndarray
    fc_received: np.ndarray
    global_decisions: np.ndarray
    errors: np.ndarray
    rx_counts: np.ndarray = field(repr=False)
    fc_counts: np.ndarray = field(repr=False)


def simulate_counts(scenario: Scenario, base_seed: int, index: int = 0, tx_bits=None) -> TrialCounts:
    """Run the molecule-level part of one trial (seeded by ``(base_seed, index)``)."""
    g_bits, g_info, g_report = trial_streams(base_seed, index)
    tim, phys = scenario.timing, scenario.physical
    L, K, T = tim.length, scenario.k, tim.bit_interval
    if tx_bits is None:
        bits = (g_bits.random(L) < phys.p_one).astype(np.uint8)
    else:
        bits = np.asarray(tx_bits, dtype=np.uint8)
        if bits.shape != (L,):
            raise ValueError(f"tx_bits must have length L={L}")

    tx = np.asarray(scenario.topology.tx_position) * UM
    rx_c = np.asarray(scenario.topology.rx_positions) * UM
    fc_c = np.asarray(scenario.topology.fc_position) * UM
    rx_off, fc_off = tim.rx_sample_offsets(), tim.fc_sample_offsets()
    M, Mf = len(rx_off), len(fc_off)

    rx_samples = np.zeros((K, L, M), dtype=np.int64)
    for i in np.flatnonzero(bits):
        lags = np.arange(L - i)
        times = (lags[:, None] * T + rx_off[None, :]).ravel()
        c = count_hits(g_info, tx, phys.molecules_tx, phys.diffusion_info, times, rx_c, scenario.rx_radii)
        rx_samples[:, i:, :] += c.reshape(K, L - i, M)

    report = np.zeros((K, L, L, Mf), dtype=np.int64)
    for k in range(K):
        for i in range(L):
            lags = np.arange(L - i)
            times = (lags[:, None] * T + fc_off[None, :]).ravel()
            c = count_hits(
                g_report, rx_c[k], phys.molecules_rx[k], phys.diffusion_report[k], times, fc_c[None, :], [scenario.fc_radius]
            )
            report[k, i, i:, :] = c.reshape(L - i, Mf)
    return TrialCounts(bits, rx_samples, report)


def _counting_n(scenario: Scenario) -> int | None:
    return None if scenario.rule.is_soft else scenario.rule.n


def decide(
    scenario: Scenario,
    counts: TrialCounts,
    xi_r: Sequence[float] | None = None,
    xi_fc: float | None = None,
    reporting: str = NOISY,
) -> TrialRecord:
    """Apply detectors, reporting and fusion to a simulated trial."""
    xi_r = np.floor(np.asarray(scenario.detector.threshold_rx if xi_r is None else xi_r, dtype=float))
    xi_fc = math.floor(scenario.detector.threshold_fc if xi_fc is None else xi_fc)
    rx_counts = counts.rx_counts
    dec = (rx_counts >= xi_r[:, None]).astype(np.uint8)
    if reporting == PERFECT:
        fc_counts = rx_counts.copy()
        recv = dec.copy()
    elif reporting == NOISY:
        fc_counts = np.einsum("ki,kij->kj", dec.astype(np.int64), counts.report_counts)
        recv = (fc_counts >= xi_fc).astype(np.uint8)
    else:
        raise ValueError(f"unknown reporting {reporting!r}")
    if scenario.rule.is_soft:
        glob = (rx_counts.sum(axis=0) >= math.floor(scenario.rule.threshold)).astype(np.uint8)
    else:
        glob = (recv.sum(axis=0) >= _counting_n(scenario)).astype(np.uint8)
    return TrialRecord(
        tx_bits=counts.tx_bits,
        rx_decisions=dec,
        fc_received=recv,
        global_decisions=glob,
        errors=(glob != counts.tx_bits).astype(np.uint8),
        rx_counts=rx_counts,
        fc_counts=fc_counts,
    )


def simulate_trial(scenario: Scenario, seed: int, index: int = 0, reporting: str = NOISY, tx_bits=None) -> TrialRecord:
    return decide(scenario, simulate_counts(scenario, seed, index, tx_bits), reporting=reporting)


class _Tally:
    """Per-interval error counts for one threshold setting."""

    def __init__(self, L: int):
        self.ones = np.zeros(L)
        self.zeros = np.zeros(L)
        self.missed = np.zeros(L)
        self.alarms = np.zeros(L)

    def add(self, bits: np.ndarray, glob: np.ndarray):
        one = bits == 1
        self.ones += one
        self.zeros += ~one
        self.missed += one & (glob == 0)
        self.alarms += (~one) & (glob == 1)

    def report(self, n_trials: int, base_seed: int, **meta) -> ErrorReport:
        L = len(self.ones)
        errors = self.missed + self.alarms
        with np.errstate(invalid="ignore", divide="ignore"):
            q_md = np.where(self.ones > 0, self.missed / self.ones, 0.0)
            q_fa = np.where(self.zeros > 0, self.alarms / self.zeros, 0.0)
        q_err = errors / n_trials
        q = float(errors.sum() / (n_trials * L))
        return ErrorReport(
            per_interval=np.column_stack([q_md, q_fa, q_err]),
            q_bar=q,
            method="monte-carlo",
            n_samples=n_trials,
            seed=base_seed,
            ci_halfwidth=1.96 * math.sqrt(q * (1 - q) / (n_trials * L)),
            metadata={"rng": RNG_ALGORITHM, "n_errors": int(errors.sum()), **meta},
        )


def estimate_error_grid(
    scenario: Scenario,
    n_trials: int,
    base_seed: int,
    points: Iterable[tuple],
    reporting: str = NOISY,
    tx_bits=None,
    progress=None,
) -> list[ErrorReport]:
    """Simulated error for several ``(xi_r, xi_fc)`` settings sharing the same trials.

    ``xi_r`` may be a scalar (shared) or a per-RX sequence.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    K, L = scenario.k, scenario.timing.length
    pts = []
    for xr, xf in points:
        xr_vec = np.full(K, float(xr)) if np.ndim(xr) == 0 else np.asarray(xr, dtype=float)
        pts.append((xr_vec, xf))
    tallies = [_Tally(L) for _ in pts]
    for t in range(n_trials):
        counts = simulate_counts(scenario, base_seed, t, tx_bits)
        for (xr, xf), tally in zip(pts, tallies):
            rec = decide(scenario, counts, xr, xf, reporting)
            tally.add(rec.tx_bits, rec.global_decisions)
        if progress is not None:
            progress(t)
    return [
        tally.report(n_trials, base_seed, reporting=reporting, xi_r=tuple(int(v) for v in xr), xi_fc=int(xf))
        for (xr, xf), tally in zip(pts, tallies)
    ]


def estimate_error(scenario: Scenario, n_trials: int, base_seed: int, reporting: str = NOISY, tx_bits=None) -> ErrorReport:
    """Empirical average error rate over ``n_trials`` independent trials of ``L`` bits."""
    point = (scenario.detector.threshold_rx, scenario.detector.threshold_fc)
    return estimate_error_grid(scenario, n_trials, base_seed, [point], reporting, tx_bits)[0]


def write_trace(scenario: Scenario, counts: TrialCounts, record: TrialRecord, path) -> None:
    """Per-sample observer counts of one trial as CSV (``time, species, observer, count``)."""
    tim = scenario.timing
    T = tim.bit_interval
    released = record.rx_decisions.astype(np.int64)
    fc_samples = np.einsum("ki,kijm->kjm", released, counts.report_samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "species", "observer", "count"])
        for j in range(tim.length):
            for m, off in enumerate(tim.rx_sample_offsets()):
                for k in range(scenario.k):
                    w.writerow([repr(float(j * T + off)), 0, f"rx{k + 1}", int(counts.rx_samples[k, j, m])])
            for m, off in enumerate(tim.fc_sample_offsets()):
                for k in range(scenario.k):
                    w.writerow([repr(float(j * T + tim.t_trans + off)), k + 1, "fc", int(fc_samples[k, j, m])])
