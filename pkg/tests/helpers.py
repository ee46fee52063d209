"""Independent oracles and small statistics utilities used across the tests.

These deliberately avoid the library code paths they are checking: the
Wootters recipe works on the full 4x4 matrix, the trace-norm oracle
diagonalizes the difference matrix directly, and the fold oracle applies
per-step updates one at a time.
"""

import numpy as np
from scipy.stats import chisquare

from halfparity import full_matrix, step


def fold_steps(x0, vs, cfg):
    """Apply per-step updates one readout at a time (composition oracle)."""
    state = x0
    for v in vs:
        state = step(state, float(v), cfg)
    return state


def wootters_concurrence(rho: np.ndarray) -> float:
    """General two-qubit concurrence from the spin-flipped eigenvalue recipe."""
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]])
    flip = np.kron(sy, sy)
    r = rho @ flip @ rho.conj() @ flip
    lam = np.sort(np.sqrt(np.clip(np.linalg.eigvals(r).real, 0.0, None)))
    return max(0.0, lam[3] - lam[2] - lam[1] - lam[0])


def trace_distance_oracle(times, states_a, states_b) -> float:
    """Time-averaged trace distance via dense diagonalization of the difference."""
    from halfparity import XState

    norms = np.empty(times.size)
    for k in range(times.size):
        diff = full_matrix(XState.from_array(states_a[k], renormalize=True)) \
            - full_matrix(XState.from_array(states_b[k], renormalize=True))
        norms[k] = np.abs(np.linalg.eigvalsh(diff)).sum()
    return float(np.trapezoid(norms, times) / (2.0 * (times[-1] - times[0])))


def merge_sparse_bins(counts, expected, min_expected=5.0):
    """Left-to-right merge of bins until every expected count reaches the floor."""
    out_c, out_e = [], []
    acc_c, acc_e = 0.0, 0.0
    for c, e in zip(counts, expected):
        acc_c += c
        acc_e += e
        if acc_e >= min_expected:
            out_c.append(acc_c)
            out_e.append(acc_e)
            acc_c, acc_e = 0.0, 0.0
    if acc_e > 0 and out_e:
        out_c[-1] += acc_c
        out_e[-1] += acc_e
    return np.asarray(out_c), np.asarray(out_e)


def chi2_pvalue(counts, expected) -> float:
    """Goodness-of-fit p-value after sparse-bin merging and renormalization."""
    c, e = merge_sparse_bins(counts, expected)
    e = e * (c.sum() / e.sum())
    return float(chisquare(c, e).pvalue)


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a cdf."""
    xs = np.sort(np.asarray(samples))
    n = xs.size
    F = cdf(xs)
    up = np.max(np.arange(1, n + 1) / n - F)
    lo = np.max(F - np.arange(0, n) / n)
    return float(max(up, lo))


def bin_index(t, width, n_bins) -> int:
    return min(int(t / width), n_bins - 1)
