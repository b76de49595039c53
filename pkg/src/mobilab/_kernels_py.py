"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` must agree with them.
"""

from __future__ import annotations

import numpy as np


def group_means(values, codes, n_groups):
    values = np.asarray(values, dtype=np.float64)
    one_d = values.ndim == 1
    if one_d:
        values = values[:, None]
    counts = np.bincount(codes, minlength=n_groups).astype(np.float64)
    out = np.empty((n_groups, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(codes, weights=values[:, j], minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        out /= counts[:, None]
    return out[:, 0] if one_d else out


def group_demean(values, codes, n_groups):
    values = np.asarray(values, dtype=np.float64)
    means = group_means(values, codes, n_groups)
    return values - means[codes]


def group_logsumexp(values, codes, n_groups):
    values = np.asarray(values, dtype=np.float64)
    peak = np.full(n_groups, -np.inf)
    np.maximum.at(peak, codes, values)
    sums = np.bincount(codes, weights=np.exp(values - peak[codes]), minlength=n_groups)
    with np.errstate(divide="ignore"):
        return peak + np.log(sums)


def cd_gram(gram, xty, beta, l1, l2, tol, max_iter):
    """Cyclic coordinate descent on the covariance (Gram) form.

    Minimises ``0.5 b'Gb - c'b + sum_j (l1_j |b_j| + 0.5 l2_j b_j^2)``.
    Returns ``(beta, n_iter, max_delta)``; ``n_iter == max_iter`` with
    ``max_delta >= tol`` signals non-convergence.
    """
    gram = np.asarray(gram, dtype=np.float64)
    beta = np.array(beta, dtype=np.float64)
    k = beta.shape[0]
    gb = gram @ beta
    diag = np.diag(gram).copy()
    max_delta = np.inf
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        max_delta = 0.0
        for j in range(k):
            if diag[j] <= 0.0:
                continue
            old = beta[j]
            rho = xty[j] - gb[j] + diag[j] * old
            if rho > l1[j]:
                new = (rho - l1[j]) / (diag[j] + l2[j])
            elif rho < -l1[j]:
                new = (rho + l1[j]) / (diag[j] + l2[j])
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                gb += delta * gram[:, j]
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            break
    return beta, n_iter, max_delta
