"""Independent brute-force references used as test oracles.

Deliberately written with plain Python floats and loops, sharing no code with
the package under test. Keep it that way: these functions are the other side
of every dual-route check.
"""

from __future__ import annotations

import math


def ref_softmax(logits: list[float]) -> list[float]:
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    z = sum(exps)
    return [e / z for e in exps]


def ref_entropy(probs: list[float]) -> float:
    h = 0.0
    for p in probs:
        if p > 0.0:
            h -= p * math.log(p)
    return h


def ref_cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def ref_kl(a: list[float], b: list[float], floor: float = 1e-12) -> float:
    total = 0.0
    for x, y in zip(a, b):
        xf = max(x, floor)
        yf = max(y, floor)
        total += x * (math.log(xf) - math.log(yf))
    return total


def ref_percentile_threshold(values: list[float], rho: float) -> float:
    """Nearest-rank percentile: rank = ceil(rho/100 * n), 1-indexed."""
    if not values:
        raise ValueError("empty list")
    ordered = sorted(values)
    rank = math.ceil(rho / 100.0 * len(ordered))
    rank = max(rank, 1)
    return ordered[rank - 1]


def ref_prompt_pipeline(cosines: list[list[float]], beta: float, rho: float):
    """Entropy-percentile selection over an N x K cosine matrix.

    Returns (per_prompt_probs, entropies, threshold, mask, aggregate) with the
    aggregate being the mask-normalized average of selected prompt
    distributions.
    """
    n = len(cosines)
    k = len(cosines[0])
    probs = [ref_softmax([c / beta for c in row]) for row in cosines]
    ents = [ref_entropy(p) for p in probs]
    tau = ref_percentile_threshold(ents, rho)
    mask = [h <= tau for h in ents]
    count = sum(mask)
    agg = [0.0] * k
    for j in range(n):
        if mask[j]:
            for i in range(k):
                agg[i] += probs[j][i]
    agg = [a / count for a in agg]
    return probs, ents, tau, mask, agg


def ref_mean_aggregate(cosines: list[list[float]], beta: float) -> list[float]:
    n = len(cosines)
    k = len(cosines[0])
    probs = [ref_softmax([c / beta for c in row]) for row in cosines]
    agg = [0.0] * k
    for j in range(n):
        for i in range(k):
            agg[i] += probs[j][i]
    return [a / n for a in agg]


def ref_argmax(values: list[float]) -> int:
    """Index of the maximum, ties broken by the lowest index."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def ref_ece(confidences: list[float], correct: list[bool], bins: int = 10) -> float:
    n = len(confidences)
    total = 0.0
    for b in range(bins):
        lo = b / bins
        hi = (b + 1) / bins
        members = [i for i, c in enumerate(confidences)
                   if (lo <= c < hi) or (b == bins - 1 and c == 1.0)]
        if not members:
            continue
        acc = sum(1.0 for i in members if correct[i]) / len(members)
        conf = sum(confidences[i] for i in members) / len(members)
        total += (len(members) / n) * abs(acc - conf)
    return total


def finite_difference(f, theta, index, h: float = 1e-5) -> float:
    """Central finite difference of scalar f with respect to theta[index]."""
    orig = theta[index]
    theta[index] = orig + h
    fp = f()
    theta[index] = orig - h
    fm = f()
    theta[index] = orig
    return (fp - fm) / (2.0 * h)


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a) + abs(b), floor)
