"""Poisson signal model for the TX -> RX_k and TX -> RX_k -> FC links.

Observed counts are Poisson with a mean built from lag weights: the summed
per-sample hit probabilities for a release ``lag`` bit intervals ago. The
end-to-end link additionally averages the FC-side probabilities over the
random history of RX_k's own past decisions (``DecisionHistoryDistribution``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from coopmc.channel import hit_prob_point_source, hit_prob_sphere
from coopmc.scenario import Scenario

PRUNE_EPS = 1e-12
_LOG_PATH_LAMBDA = 700.0


@dataclass(frozen=True)
class ChannelWeights:
    """``rx[k, lag]`` and ``fc[k, lag]``: summed hit probabilities per single released molecule."""

    rx: np.ndarray
    fc: np.ndarray


def link_weights(dist, D, lags, bit_interval, offsets, *, volume=None, radius=None):
    """Sum of hit probabilities over one detector's sampling instants, for each lag."""
    t = np.asarray(lags, dtype=float)[:, None] * bit_interval + np.asarray(offsets)[None, :]
    if radius is not None:
        p = hit_prob_sphere(t, dist, D, radius)
    else:
        p = hit_prob_point_source(t, dist, D, volume)
    return np.asarray(p).sum(axis=1)


def precompute_weights(scenario: Scenario, horizon: int | None = None) -> ChannelWeights:
    tim = scenario.timing
    lags = np.arange(horizon or tim.length)
    T = tim.bit_interval
    rx = np.array(
        [
            link_weights(d, scenario.physical.diffusion_info, lags, T, tim.rx_sample_offsets(), volume=v)
            for d, v in zip(scenario.tx_distances, scenario.rx_volumes)
        ]
    )
    fc = np.array(
        [
            link_weights(d, Dk, lags, T, tim.fc_sample_offsets(), radius=scenario.fc_radius)
            for d, Dk in zip(scenario.fc_distances, scenario.physical.diffusion_report)
        ]
    )
    return ChannelWeights(rx=rx, fc=fc)


def mean_observed(source_bits, amplitude, weights, j: int) -> float:
    """Mean count in interval ``j`` (1-based) from emissions ``source_bits[0..j-1]``."""
    bits = np.asarray(source_bits, dtype=float)[:j]
    if len(bits) < j:
        raise ValueError(f"need at least {j} bits, got {len(bits)}")
    lagged = np.asarray(weights, dtype=float)[j - 1 :: -1][:j]
    return float(amplitude * np.dot(bits, lagged))


def poisson_below_table(lam, xi_max: int) -> np.ndarray:
    """``out[..., c] = Pr(X < c + 1)`` for ``X ~ Poisson(lam)``, ``c = 0 .. xi_max-1``."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape + (xi_max,))
    small = lam <= _LOG_PATH_LAMBDA
    if np.any(small):
        ls = lam[small]
        term = np.exp(-ls)
        acc = term.copy()
        cols = [acc.copy()]
        for n in range(1, xi_max):
            term = term * ls / n
            acc += term
            cols.append(acc.copy())
        out[small] = np.stack(cols, axis=-1)
    if np.any(~small):
        lb = lam[~small][..., None]
        n = np.arange(xi_max)
        logpmf = -lb + n * np.log(lb) - gammaln(n + 1)
        out[~small] = np.exp(np.logaddexp.accumulate(logpmf, axis=-1))
    return np.minimum(out, 1.0)


def poisson_below(lam, xi):
    """``Pr(X < xi)`` for ``X ~ Poisson(lam)``; ``xi`` is floored to an integer >= 1."""
    xi = np.floor(np.asarray(xi)).astype(int)
    if np.any(xi < 1):
        raise ValueError("threshold must be >= 1")
    lam = np.asarray(lam, dtype=float)
    lam_b, xi_b = np.broadcast_arrays(lam, xi)
    table = poisson_below_table(lam_b, int(xi_b.max()) if xi_b.size else 1)
    res = np.take_along_axis(table, (xi_b - 1)[..., None], axis=-1)[..., 0]
    return res if res.ndim else float(res)


def _lambda_matrix(bits: np.ndarray, amplitude: float, weights: np.ndarray) -> np.ndarray:
    """``lam[h, i]`` = mean in interval ``i+1`` for every bit row ``h``."""
    n = bits.shape[-1]
    if n == 0:
        return np.zeros(bits.shape)
    idx = np.arange(n)
    lag = idx[None, :] - idx[:, None]
    toeplitz = np.where(lag >= 0, weights[np.clip(lag, 0, None)], 0.0)
    return amplitude * (bits @ toeplitz)


def _local_split(bits: np.ndarray, amplitude: float, weights: np.ndarray):
    """Means for the current interval under bit 0 (ISI only) and under bit 1."""
    j = bits.shape[-1] + 1
    w = weights[j - 1 : 0 : -1] if j > 1 else weights[:0]
    isi = amplitude * (bits @ w) if j > 1 else np.zeros(bits.shape[:-1])
    return isi, isi + amplitude * weights[0]


def local_error_probs(scenario: Scenario, k: int, tx_history, j: int | None = None, weights: ChannelWeights | None = None):
    """Return ``(P_md, P_fa)`` of RX ``k`` (0-based) in interval ``j = len(tx_history) + 1``."""
    hist = np.asarray(tx_history, dtype=float)
    if j is not None and j != len(hist) + 1:
        raise ValueError("tx_history must hold exactly the j-1 bits preceding interval j")
    weights = weights or precompute_weights(scenario, len(hist) + 1)
    xi = scenario.detector.rx_int()[k]
    S0 = scenario.physical.molecules_tx
    lam0, lam1 = _local_split(hist[None, :], S0, weights.rx[k])
    return float(poisson_below(lam1[0], xi)), float(1 - poisson_below(lam0[0], xi))


@dataclass(frozen=True)
class DecisionHistoryDistribution:
    """Distribution of RX_k's decision history over intervals ``1..n``.

    ``signature[s]`` is that history's contribution to the FC mean in interval
    ``n + 1``; ``decisions[s]`` is one representative history (merged entries
    share a signature). ``pruned_mass`` is probability dropped below ``eps``.
    """

    decisions: np.ndarray
    signature: np.ndarray
    prob: np.ndarray
    pruned_mass: float

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(b) for b in row): float(p) for row, p in zip(self.decisions, self.prob)}


def decision_support(p_one: np.ndarray, contrib: np.ndarray, eps: float = PRUNE_EPS, keep_decisions: bool = False):
    """Enumerate decision histories for many TX histories at once.

    ``p_one[h, i]``: probability RX decides 1 in interval ``i`` for TX history ``h``.
    ``contrib[i]``: FC-mean contribution if it did. Branches with mass below
    ``eps`` are dropped; entries with identical ``(h, signature)`` are merged.

    Returns ``(hist, sig, prob, pruned, decisions)``, the flat support sorted by ``hist``.
    """
    H, n = p_one.shape
    hist = np.arange(H)
    sig = np.zeros(H)
    prob = np.ones(H)
    dec = np.zeros((H, 0), dtype=np.uint8) if keep_decisions else None
    pruned = np.zeros(H)
    for i in range(n):
        p = p_one[hist, i]
        hist = np.concatenate([hist, hist])
        sig = np.concatenate([sig, sig + contrib[i]])
        prob = np.concatenate([prob * (1 - p), prob * p])
        if dec is not None:
            m = len(dec)
            dec = np.concatenate(
                [
                    np.hstack([dec, np.zeros((m, 1), np.uint8)]),
                    np.hstack([dec, np.ones((m, 1), np.uint8)]),
                ]
            )
        drop = prob < eps
        if np.any(drop):
            # smallest branches go first, and only while the history's total pruned mass stays <= eps
            cand = np.flatnonzero(drop)
            cand = cand[np.lexsort((prob[cand], hist[cand]))]
            csum = np.cumsum(prob[cand])
            first = np.r_[True, hist[cand][1:] != hist[cand][:-1]]
            group_start = np.maximum.accumulate(np.where(first, np.arange(len(cand)), 0))
            offset = np.where(group_start > 0, csum[group_start - 1], 0.0)
            running = csum - offset + pruned[hist[cand]]
            drop = np.zeros_like(drop)
            drop[cand[running <= eps]] = True
        if np.any(drop):
            pruned += np.bincount(hist[drop], weights=prob[drop], minlength=H)
            keep = ~drop
            hist, sig, prob = hist[keep], sig[keep], prob[keep]
            if dec is not None:
                dec = dec[keep]
        order = np.lexsort((sig, hist))
        hist, sig, prob = hist[order], sig[order], prob[order]
        if dec is not None:
            dec = dec[order]
        new = np.ones(len(hist), dtype=bool)
        new[1:] = (hist[1:] != hist[:-1]) | (sig[1:] != sig[:-1])
        if not np.all(new):
            starts = np.flatnonzero(new)
            prob = np.add.reduceat(prob, starts)
            hist, sig = hist[starts], sig[starts]
            if dec is not None:
                dec = dec[starts]
    return hist, sig, prob, pruned, dec


def rx_decision_distribution(
    scenario: Scenario,
    k: int,
    tx_bits,
    weights: ChannelWeights | None = None,
    eps: float = PRUNE_EPS,
) -> DecisionHistoryDistribution:
    """Exact distribution of RX ``k``'s decisions for a fixed TX realisation ``tx_bits``.

    Decisions in different intervals are independent given the TX bits.
    """
    bits = np.asarray(tx_bits, dtype=float)[None, :]
    n = bits.shape[1]
    weights = weights or precompute_weights(scenario, n + 1)
    lam = _lambda_matrix(bits, scenario.physical.molecules_tx, weights.rx[k][:n])
    p_one = 1 - poisson_below(lam, scenario.detector.rx_int()[k])
    contrib = scenario.physical.molecules_rx[k] * weights.fc[k][n:0:-1] if n else np.zeros(0)
    _, sig, prob, pruned, dec = decision_support(np.atleast_2d(p_one), contrib, eps, keep_decisions=True)
    return DecisionHistoryDistribution(decisions=dec, signature=sig, prob=prob, pruned_mass=float(pruned[0]))


def fc_below_tables(hist, sig, prob, n_hist: int, current: float, xi_max: int):
    """History-averaged FC ``Pr(count < xi)`` given the RX's current decision is 0 or 1.

    Returns ``(below0, below1, mass)`` with shapes ``(H, xi_max)``, ``(H, xi_max)``, ``(H,)``;
    ``mass`` is the retained (unpruned) probability per history.
    """
    starts = np.flatnonzero(np.r_[True, hist[1:] != hist[:-1]])
    t0 = poisson_below_table(sig, xi_max) * prob[:, None]
    t1 = poisson_below_table(sig + current, xi_max) * prob[:, None]
    below0 = np.add.reduceat(t0, starts, axis=0)
    below1 = np.add.reduceat(t1, starts, axis=0)
    mass = np.add.reduceat(prob, starts)
    if len(starts) != n_hist:
        raise RuntimeError("a history lost its entire support during pruning")
    return below0, below1, mass


def compose_link(p_md, p_fa, below0, below1, mass):
    """Combine RX-level errors with the RX -> FC reporting errors (two-term decomposition)."""
    p_md = np.asarray(p_md)[..., None]
    p_fa = np.asarray(p_fa)[..., None]
    mass = np.asarray(mass)[..., None]
    e_md = (1 - p_md) * below1 + p_md * below0
    e_fa = p_fa * (mass - below1) + (1 - p_fa) * (mass - below0)
    return np.clip(e_md, 0, 1), np.clip(e_fa, 0, 1)


def end_to_end_error_probs(
    scenario: Scenario,
    k: int,
    tx_history,
    j: int | None = None,
    weights: ChannelWeights | None = None,
    eps: float = PRUNE_EPS,
):
    """Return ``(P~_md, P~_fa)`` of the TX -> RX_k -> FC link in interval ``len(tx_history) + 1``."""
    hist_bits = np.asarray(tx_history, dtype=float)
    n = len(hist_bits)
    if j is not None and j != n + 1:
        raise ValueError("tx_history must hold exactly the j-1 bits preceding interval j")
    weights = weights or precompute_weights(scenario, n + 1)
    p_md, p_fa = local_error_probs(scenario, k, hist_bits, weights=weights)
    dist = rx_decision_distribution(scenario, k, hist_bits, weights, eps)
    xi_fc = scenario.detector.fc_int()
    current = scenario.physical.molecules_rx[k] * weights.fc[k][0]
    b0, b1, mass = fc_below_tables(np.zeros(len(dist.prob), int), dist.signature, dist.prob, 1, current, xi_fc)
    e_md, e_fa = compose_link(np.array([p_md]), np.array([p_fa]), b0, b1, mass)
    return float(e_md[0, xi_fc - 1]), float(e_fa[0, xi_fc - 1])
