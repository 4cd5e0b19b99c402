"""Shared samplers and reference implementations used across test modules."""

import numpy as np

from uips.core import make_rng
from uips.logging_fit import confidence_interval
from uips.weights import WeightInput


def sample_weight_instances(n, seed, gamma=1.0, eta=1.0):
    """Random (input, interval, lam) triples with log-uniform ratio in [1e-3, 1e3],
    uncertainty in [0, 3] and lam log-uniform in [0.1, 50]."""
    rng = make_rng(seed)
    out = []
    for _ in range(n):
        beta_hat = float(10.0 ** rng.uniform(-3, 0))
        ratio = float(10.0 ** rng.uniform(-3, 3))
        pi = min(1.0, ratio * beta_hat)
        u = float(rng.uniform(0.0, 3.0))
        lam = float(10.0 ** rng.uniform(np.log10(0.1), np.log10(50.0)))
        winput = WeightInput(pi=pi, beta_hat=beta_hat, u=u)
        out.append((winput, confidence_interval(beta_hat, u, gamma, eta), lam))
    return out


def count_ips_reference(dataset, policy, cap):
    """Dict-based empirical-propensity weighting, independent of the estimator module.

    Per-sample terms are built one record at a time from hand-rolled count
    tables; only the final averaging reuses numpy so that comparisons with
    the library value are exact rather than summation-order noise.
    """
    counts = {}
    group_sizes = {}
    for i in range(len(dataset)):
        key = dataset.xs[i].tobytes()
        group_sizes[key] = group_sizes.get(key, 0) + 1
        pair = (key, int(dataset.actions[i]))
        counts[pair] = counts.get(pair, 0) + 1
    terms = []
    for i in range(len(dataset)):
        key = dataset.xs[i].tobytes()
        emp = counts[(key, int(dataset.actions[i]))] / group_sizes[key]
        w = min(cap, policy.prob(dataset.xs[i], int(dataset.actions[i])) / emp)
        terms.append(w * dataset.rewards[i])
    return float(np.mean(np.asarray(terms)))
