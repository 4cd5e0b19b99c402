"""Core bandit-feedback types and the softmax-linear policy family.

Policies are immutable values: every operation is a pure function of the
policy, a context and (where sampling is involved) an explicit RNG state.
Randomness everywhere in the package goes through :func:`make_rng`, which
wraps numpy's Philox counter-based bit generator so that runs are
reproducible bit-for-bit across platforms and can be split into
independent per-seed streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator (Philox 4x64).

    Philox is a keyed counter-based RNG: the stream is a pure function of
    (key, counter), so identical seeds give identical draws on every
    platform, and independent child streams can be produced with
    ``rng.spawn(n)``.
    """
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class LoggedSample:
    """One bandit-feedback record: context, chosen action, observed reward.

    ``true_logging_prob`` is the probability the logging policy assigned to
    the chosen action. It is only available in synthetic settings and is
    required by the true-propensity estimator.
    """

    x: np.ndarray
    action: int
    reward: float
    true_logging_prob: Optional[float] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("context must be a finite 1-d vector")
        object.__setattr__(self, "x", x)
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward must lie in [0, 1], got {self.reward}")
        if self.true_logging_prob is not None and not 0.0 < self.true_logging_prob <= 1.0:
            raise ValueError("true_logging_prob must lie in (0, 1]")


@dataclass
class LoggedDataset:
    """Column-major view of a logged dataset.

    ``xs`` has shape (n, dim), ``actions`` and ``rewards`` have shape (n,),
    and ``true_logging_probs`` is either None or shape (n,). All actions
    must lie in ``[0, action_count)``.
    """

    xs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    action_count: int
    true_logging_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.actions = np.asarray(self.actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.xs.ndim != 2:
            raise ValueError("xs must have shape (n, dim)")
        n = self.xs.shape[0]
        if self.actions.shape != (n,) or self.rewards.shape != (n,):
            raise ValueError("actions/rewards must match the number of contexts")
        if n and (self.actions.min() < 0 or self.actions.max() >= self.action_count):
            raise ValueError("action index out of range")
        if self.true_logging_probs is not None:
            self.true_logging_probs = np.asarray(self.true_logging_probs, dtype=float)
            if self.true_logging_probs.shape != (n,):
                raise ValueError("true_logging_probs must match the number of samples")

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    @property
    def samples(self) -> Iterator[LoggedSample]:
        probs = self.true_logging_probs
        for i in range(len(self)):
            yield LoggedSample(
                x=self.xs[i],
                action=int(self.actions[i]),
                reward=float(self.rewards[i]),
                true_logging_prob=None if probs is None else float(probs[i]),
            )

    def subset(self, indices: np.ndarray) -> "LoggedDataset":
        probs = self.true_logging_probs
        return LoggedDataset(
            xs=self.xs[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            action_count=self.action_count,
            true_logging_probs=None if probs is None else probs[indices],
        )

    @classmethod
    def from_samples(cls, samples: list[LoggedSample], action_count: int) -> "LoggedDataset":
        if not samples:
            raise ValueError("dataset must contain at least one sample")
        has_prob = all(s.true_logging_prob is not None for s in samples)
        return cls(
            xs=np.stack([s.x for s in samples]),
            actions=np.array([s.action for s in samples]),
            rewards=np.array([s.reward for s in samples]),
            action_count=action_count,
            true_logging_probs=(
                np.array([s.true_logging_prob for s in samples]) if has_prob else None
            ),
        )

    def to_jsonl(self, path) -> None:
        """One JSON object per line with keys x, a, r and optional beta_star."""
        with open(path, "w") as fh:
            probs = self.true_logging_probs
            for i in range(len(self)):
                record = {
                    "x": [float(v) for v in self.xs[i]],
                    "a": int(self.actions[i]),
                    "r": float(self.rewards[i]),
                }
                if probs is not None:
                    record["beta_star"] = float(probs[i])
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path, action_count: int) -> "LoggedDataset":
        xs, actions, rewards, probs = [], [], [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                xs.append(record["x"])
                actions.append(record["a"])
                rewards.append(record["r"])
                probs.append(record.get("beta_star"))
        has_prob = all(p is not None for p in probs)
        return cls(
            xs=np.asarray(xs, dtype=float),
            actions=np.asarray(actions, dtype=int),
            rewards=np.asarray(rewards, dtype=float),
            action_count=action_count,
            true_logging_probs=np.asarray(probs, dtype=float) if has_prob else None,
        )


@dataclass(frozen=True)
class SoftmaxLinearPolicy:
    """Stochastic policy with pi(a|x) proportional to exp(x . theta_a / tau).

    ``theta`` has shape (action_count, dim); ``tau`` > 0 controls skewness
    (small tau concentrates mass on the top-scoring action). Probabilities
    are computed with max-score subtraction so extreme tau never overflows.
    The policy itself is exactly normalized; flooring of probabilities only
    happens downstream where they appear as denominators.
    """

    theta: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("theta must have shape (action_count, dim)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def action_count(self) -> int:
        return self.theta.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def _check_context(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"context has length {x.shape}, expected ({self.dim},)")
        return x

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Pre-softmax scores x . theta_a / tau for every action."""
        return self.theta @ self._check_context(x) / self.tau

    def distribution(self, x: np.ndarray) -> np.ndarray:
        """Probability vector over actions; sums to 1 within 1e-12."""
        s = self.scores(x)
        s = s - s.max()
        e = np.exp(s)
        return e / e.sum()

    def distribution_matrix(self, xs: np.ndarray) -> np.ndarray:
        """Row-wise distributions for a batch of contexts, shape (n, actions)."""
        s = xs @ self.theta.T / self.tau
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def prob(self, x: np.ndarray, action: int) -> float:
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} out of range [0, {self.action_count})")
        return float(self.distribution(x)[action])

    def sample_action(self, x: np.ndarray, rng: np.random.Generator) -> int:
        p = self.distribution(x)
        return int(rng.choice(self.action_count, p=p))

    def log_prob_grad(self, x: np.ndarray, action: int) -> np.ndarray:
        """Gradient of log pi(action|x) with respect to theta.

        Row a' equals x/tau * (1{a'==action} - pi(a'|x)); rows sum to zero.
        """
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} out of range [0, {self.action_count})")
        x = self._check_context(x)
        p = self.distribution(x)
        coeff = -p
        coeff[action] += 1.0
        return np.outer(coeff, x / self.tau)

    def to_json(self) -> str:
        return json.dumps(
            {"theta": [[float(v) for v in row] for row in self.theta], "tau": float(self.tau)},
            sort_keys=True,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "SoftmaxLinearPolicy":
        obj = json.loads(text)
        return cls(theta=np.asarray(obj["theta"], dtype=float), tau=float(obj["tau"]))

    @classmethod
    def load(cls, path) -> "SoftmaxLinearPolicy":
        with open(path) as fh:
            return cls.from_json(fh.read())

    @classmethod
    def uniform(cls, action_count: int, dim: int, tau: float = 1.0) -> "SoftmaxLinearPolicy":
        return cls(theta=np.zeros((action_count, dim)), tau=tau)


def policy_matrix(policy, xs: np.ndarray) -> np.ndarray:
    """Distribution rows of any policy object for a batch of contexts."""
    batched = getattr(policy, "distribution_matrix", None)
    if batched is not None:
        return batched(xs)
    return np.stack([policy.distribution(x) for x in xs])
