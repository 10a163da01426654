"""Global miss / false-alarm probabilities for counting (N-out-of-K) fusion of hard decisions.

All functions broadcast over leading axes; the receiver axis is the last one.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from coopmc.scenario import FusionRule


def _resolve_n(rule: FusionRule | int, k: int) -> int:
    if isinstance(rule, (int, np.integer)):
        n = int(rule)
    else:
        if rule.is_soft:
            raise ValueError("soft-sum fusion pools observations; use evaluator.soft_fusion_error")
        n = rule.normalize(k).n
    if not 1 <= n <= k:
        raise ValueError(f"need 1 <= N <= K, got N={n}, K={k}")
    return n


def at_least_n(p, n: int) -> np.ndarray:
    """Pr(at least ``n`` of the independent events with probabilities ``p[..., k]`` occur).

    Poisson-binomial dynamic programme over the receiver axis.
    """
    p = np.asarray(p, dtype=float)
    k = p.shape[-1]
    # dist[..., c] = Pr(c successes so far); counts >= n are lumped into the last slot
    dist = np.zeros(p.shape[:-1] + (n + 1,))
    dist[..., 0] = 1.0
    for i in range(k):
        pi = p[..., i, None]
        shifted = np.zeros_like(dist)
        shifted[..., 1:] = dist[..., :-1]
        shifted[..., n] += dist[..., n]
        dist = dist * (1 - pi) + shifted * pi
        dist[..., n] = np.minimum(dist[..., n], 1.0)
    return dist[..., n]


def fuse_asymmetric(rule: FusionRule | int, p_md, p_fa):
    """Return ``(q_md, q_fa)`` for per-receiver error probabilities (last axis = receivers)."""
    p_md = np.asarray(p_md, dtype=float)
    p_fa = np.asarray(p_fa, dtype=float)
    k = p_md.shape[-1]
    n = _resolve_n(rule, k)
    if n == 1:
        q_md = np.prod(p_md, axis=-1)
        q_fa = 1 - np.prod(1 - p_fa, axis=-1)
    elif n == k:
        q_md = 1 - np.prod(1 - p_md, axis=-1)
        q_fa = np.prod(p_fa, axis=-1)
    else:
        q_md = 1 - at_least_n(1 - p_md, n)
        q_fa = at_least_n(p_fa, n)
    return np.clip(q_md, 0, 1), np.clip(q_fa, 0, 1)


def fuse_symmetric(rule: FusionRule | int, p_md, p_fa, k: int):
    """``(q_md, q_fa)`` when all ``k`` receivers share the same error probabilities."""
    p_md = np.asarray(p_md, dtype=float)
    p_fa = np.asarray(p_fa, dtype=float)
    n = _resolve_n(rule, k)
    if n == 1:
        return p_md**k, 1 - (1 - p_fa) ** k
    if n == k:
        return 1 - (1 - p_md) ** k, p_fa**k
    q_md = 1.0 - sum(math.comb(k, m) * (1 - p_md) ** m * p_md ** (k - m) for m in range(n, k + 1))
    q_fa = sum(math.comb(k, m) * p_fa**m * (1 - p_fa) ** (k - m) for m in range(n, k + 1))
    return np.clip(q_md, 0, 1), np.clip(q_fa, 0, 1)


def global_error(q_md, q_fa, p_one):
    return p_one * np.asarray(q_md) + (1 - p_one) * np.asarray(q_fa)


def subset_sum_fusion(rule: FusionRule | int, p_md, p_fa):
    """Literal sum over receiver subsets of size ``n >= N``. Exponential in K; reference only."""
    p_md = [float(x) for x in p_md]
    p_fa = [float(x) for x in p_fa]
    k = len(p_md)
    n_min = _resolve_n(rule, k)
    detect = 0.0
    alarm = 0.0
    for n in range(n_min, k + 1):
        for subset in itertools.combinations(range(k), n):
            inside = set(subset)
            detect += math.prod((1 - p_md[i]) if i in inside else p_md[i] for i in range(k))
            alarm += math.prod(p_fa[i] if i in inside else (1 - p_fa[i]) for i in range(k))
    return 1 - detect, alarm


def brute_force_fusion(rule: FusionRule | int, p_md, p_fa):
    """Enumerate every received decision vector under each hypothesis and apply the counting rule."""
    p_md = [float(x) for x in p_md]
    p_fa = [float(x) for x in p_fa]
    k = len(p_md)
    if k > 20:
        raise ValueError("brute force limited to K <= 20")
    n = _resolve_n(rule, k)
    q_md = 0.0
    q_fa = 0.0
    for vec in itertools.product((0, 1), repeat=k):
        ones = sum(vec)
        pr1 = 1.0
        pr0 = 1.0
        for v, m, f in zip(vec, p_md, p_fa):
            pr1 *= (1 - m) if v else m
            pr0 *= f if v else (1 - f)
        if ones >= n:
            q_fa += pr0
        else:
            q_md += pr1
    return q_md, q_fa
