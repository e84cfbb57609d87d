"""Independent brute-force reference implementations used by the tests.

Nothing here imports package code paths under test; everything is written
with plain Python loops or textbook numpy so that agreement means something.
"""
import math

import numpy as np


def percentile(values, q):
    s = sorted(float(v) for v in values)
    pos = (q / 100.0) * (len(s) - 1)
    i = min(int(math.floor(pos)), len(s) - 1)
    frac = pos - i
    lo, hi = s[i], s[min(i + 1, len(s) - 1)]
    return lo + (hi - lo) * frac


def columnwise_percentile(rows, q):
    rows = [list(map(float, r)) for r in rows]
    return np.array([percentile([r[j] for r in rows], q) for j in range(len(rows[0]))])


def knn(train, labels, query, k):
    """Exhaustive kNN with the documented tie rules."""
    out = []
    for qv in query:
        d = [(math.dist(qv, t), i) for i, t in enumerate(train)]
        d.sort()
        votes, sums = {}, {}
        for dist, i in d[:k]:
            lab = labels[i]
            votes[lab] = votes.get(lab, 0) + 1
            sums[lab] = sums.get(lab, 0.0) + dist
        best = max(votes.values())
        tied = [lab for lab in votes if votes[lab] == best]
        out.append(min(tied, key=lambda lab: (sums[lab], lab)))
    return out


def f1_per_class(true, pred):
    classes = sorted(set(true) | set(pred))
    scores = {}
    for c in classes:
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores[c] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return scores


def f1_weighted_micro(true, pred):
    per = f1_per_class(true, pred)
    support = {c: sum(1 for t in true if t == c) for c in per}
    weighted = sum(per[c] * support[c] for c in per) / len(true)
    correct = sum(1 for t, p in zip(true, pred) if t == p)
    # pooled counts: every error is one false positive and one false negative
    prec = rec = correct / len(true)
    micro = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return weighted, micro


def mlp_forward(params, x):
    """Inference pass written directly from the layer definition."""
    h = np.asarray(x, dtype=np.float64)
    for i, spec in enumerate(params.specs):
        w = params.tensors[f"layer{i}.weight"]
        b = params.tensors[f"layer{i}.bias"]
        h = h @ w.T + b
        if spec.has_prelu:
            a = params.tensors[f"layer{i}.prelu"][0]
            h = np.where(h >= 0, h, a * h)
    return h


def truncated_normal_moments(mu, sigma, lo, hi):
    """Mean and standard deviation of N(mu, sigma) restricted to [lo, hi] by
    numerical integration."""
    from scipy import integrate

    def pdf(x):
        return math.exp(-0.5 * ((x - mu) / sigma) ** 2)

    # integrate over a finite window where the mass lives
    a = max(lo, mu - 12 * sigma)
    b = min(hi, mu + 12 * sigma)
    mass = integrate.quad(pdf, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    m1 = integrate.quad(lambda x: x * pdf(x), a, b, epsabs=0, epsrel=1e-12, limit=200)[0] / mass
    m2 = integrate.quad(lambda x: (x - m1) ** 2 * pdf(x), a, b, epsabs=0, epsrel=1e-12,
                        limit=200)[0] / mass
    return m1, math.sqrt(m2)


AGE_CUTS = [(36, 45), (46, 50), (51, 55), (56, 60), (61, 65), (66, 75)]


def age_cell(age):
    for lo, hi in AGE_CUTS:
        if lo <= age <= hi:
            return f"{lo}-{hi}"
    return None


def risk_oracle(patients, bfh, dist_for_cell, clamp=False, min_size=4):
    """Brute-force risk groups.

    ``patients`` and ``bfh`` are lists of (sex, age, raw feature vector);
    ``dist_for_cell(members)`` returns the metric d(u, v) on raw vectors for
    that reference cell. Returns a list of (group, score or None).
    """
    cells = {}
    for sex, age, vec in bfh:
        cells.setdefault((sex, age_cell(age)), []).append(vec)
    out = []
    for sex, age, vec in patients:
        members = cells.get((sex, age_cell(age)), [])
        if len(members) < min_size:
            out.append(("unassigned", None))
            continue
        d = dist_for_cell(members)
        med = columnwise_percentile(members, 50.0)
        n_ends = sorted([d(columnwise_percentile(members, 2.5), med),
                         d(columnwise_percentile(members, 97.5), med)])
        lr_ends = [d(columnwise_percentile(members, 1.0), med),
                   d(columnwise_percentile(members, 99.0), med)]
        lr_lo = min(lr_ends + n_ends)
        lr_hi = max(lr_ends + n_ends)
        score = d(vec, med)
        n_lo = 0.0 if clamp else n_ends[0]
        lr_lo = 0.0 if clamp else lr_lo
        if n_lo <= score <= n_ends[1]:
            group = "normal"
        elif lr_lo <= score <= lr_hi:
            group = "lower_risk"
        else:
            group = "higher_risk"
        out.append((group, score))
    return out
