"""Independent reference implementations used as test oracles.

Everything here is plain Python (lists, loops, math) and shares no code with
the package, so agreement is meaningful.
"""

import hashlib
import math
from fractions import Fraction


def euclid(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += (float(x) - float(y)) ** 2
    return math.sqrt(s)


def greedy_nn_tour(points, start=0):
    """Nearest unvisited neighbour tour; ties go to the lowest index."""
    n = len(points)
    visited = [False] * n
    visited[start] = True
    tour = [start]
    cur = start
    for _ in range(n - 1):
        best, best_d = None, math.inf
        for j in range(n):
            if visited[j]:
                continue
            d = euclid(points[cur], points[j])
            if d < best_d:
                best, best_d = j, d
        visited[best] = True
        tour.append(best)
        cur = best
    return tour


def threshold_violations(points, path, fallbacks, t, r):
    """Non-fallback positions whose pick is within t of one of the previous r picks."""
    bad = []
    for pos in range(1, len(path)):
        if pos in fallbacks:
            continue
        for q in range(max(0, pos - r), pos):
            if not euclid(points[path[pos]], points[path[q]]) > t:
                bad.append(pos)
                break
    return bad


def fallback_justified(points, path, pos, t, r):
    """True when no unvisited candidate at ``pos`` clears the threshold."""
    recent = path[max(0, pos - r):pos]
    for j in path[pos:]:
        if all(euclid(points[j], points[q]) > t for q in recent):
            return False
    return True


def interpolated_percentile(values, p):
    """Sort, then interpolate between closest ranks with h = (N-1) p / 100."""
    xs = sorted(values)
    h = (len(xs) - 1) * p / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def all_pair_distances(points):
    out = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            out.append(euclid(points[i], points[j]))
    return out


def rate(records, **cond):
    hits = total = 0
    for r in records:
        if all(r[k] == v for k, v in cond.items()):
            total += 1
            hits += r["prediction"] == 1
    return Fraction(hits, total)


def dpd(records):
    return float(abs(rate(records, group=1) - rate(records, group=0)))


def eod_parts(records):
    m_tp = abs(rate(records, label=1, group=0) - rate(records, label=1, group=1))
    m_fp = abs(rate(records, label=0, group=0) - rate(records, label=0, group=1))
    return float(m_tp), float(m_fp), float(max(m_tp, m_fp))


def feature_hash(text, dim, seed):
    """Seeded bag-of-words hashing into ``dim`` unit-normalized buckets."""
    row = [0.0] * dim
    words = text.lower().split()
    for w in words:
        h = hashlib.blake2b(w.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little", signed=True))
        row[int.from_bytes(h.digest(), "little") % dim] += 1.0
    norm = math.sqrt(sum(v * v for v in row))
    return [v / norm for v in row]


def mean_pairwise(points):
    d = all_pair_distances(points)
    return sum(d) / len(d)
