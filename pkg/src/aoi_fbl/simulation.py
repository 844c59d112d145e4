"""Monte-Carlo simulation of the per-period AoI process.

Randomness: trial ``i`` of a run with base seed ``s`` draws its uniforms from
``PCG64(SeedSequence(s).spawn(trials)[i])`` as one ``(periods, M)`` block.
Sensor m fails in period k iff ``u[k, m] < eps_m``. Policies run with the same
base seed therefore see identical channel realizations (common random numbers).

The discounted AoI ``D = sum_k gamma**(k-1) |A_k|`` is estimated by default
from the conditional expectation ``E[|A_k| | A_{k-1}] = M + sum_m eps_m A_m(k-1)``
of each simulated period (same mean as the realized sum, much lower variance);
``estimator="realized"`` sums the sampled ages instead.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .fbl import ChannelSpec, packet_error_rate
from .policies import BlocklengthPolicy, MinPerPolicy, OneStepPolicy, UniformPolicy, channel_key

ESTIMATORS = ("conditional", "realized")


@dataclass(frozen=True)
class Scenario:
    name: str
    snr_db: tuple[float, ...]
    payload_bits: int = 16
    n_max: int = 500
    eps_max: float = 0.1
    periods: int = 500
    trials: int = 500
    gamma: float = 0.9
    a_max: int = 8
    initial_ages: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if not self.snr_db:
            raise ValueError("scenario needs at least one sensor")
        for fname in ("payload_bits", "n_max", "periods", "trials", "a_max"):
            value = getattr(self, fname)
            if int(value) != value or value < 1:
                raise ValueError(f"{fname} must be a positive integer, got {value!r}")
        if not 0.0 < self.eps_max < 0.5:
            raise ValueError(f"eps_max must lie in (0, 0.5), got {self.eps_max!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        ages = self.initial_ages if self.initial_ages is not None else (1,) * len(self.snr_db)
        ages = tuple(int(a) for a in ages)
        if len(ages) != len(self.snr_db) or min(ages) < 1:
            raise ValueError(f"initial_ages must hold {len(self.snr_db)} ages >= 1, got {ages!r}")
        object.__setattr__(self, "initial_ages", ages)

    @property
    def n_sensors(self) -> int:
        return len(self.snr_db)

    @property
    def specs(self) -> list[ChannelSpec]:
        return [ChannelSpec.from_db(s, self.payload_bits) for s in self.snr_db]

    @property
    def d_lower(self) -> float:
        """Discounted AoI when every delivery succeeds."""
        return self.n_sensors * (1.0 - self.gamma**self.periods) / (1.0 - self.gamma)

    def channel_key(self) -> tuple:
        return channel_key(self.snr_db, self.payload_bits, self.n_max, self.eps_max)

    def policy_params(self) -> dict:
        return {
            "snr_db": self.snr_db,
            "payload_bits": self.payload_bits,
            "n_max": self.n_max,
            "eps_max": self.eps_max,
        }


POLICY_NAMES = ("uniform", "minper", "onestep", "mdp")


def make_policy(name: str, scenario: Scenario, **kwargs) -> BlocklengthPolicy:
    """Unfitted policy estimator configured for ``scenario``."""
    params = scenario.policy_params()
    if name == "uniform":
        return UniformPolicy(**params)
    if name == "minper":
        return MinPerPolicy(**params)
    if name == "onestep":
        return OneStepPolicy(**params)
    if name == "mdp":
        from .mdp import MdpPolicy

        params.update(a_max=scenario.a_max, gamma=scenario.gamma)
        params.update(kwargs)
        return MdpPolicy(**params)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


@dataclass
class Trajectory:
    ages: np.ndarray  # (K, M): ages at the end of each period
    allocations: np.ndarray  # (K, M)
    successes: np.ndarray  # (K, M) bool
    expected_sums: np.ndarray  # (K,): E[|A_k| | A_{k-1}]
    initial_ages: tuple[int, ...]

    def __len__(self) -> int:
        return self.ages.shape[0]

    @property
    def age_sums(self) -> np.ndarray:
        return self.ages.sum(axis=1)


@dataclass
class SimMetrics:
    delta_D_mean: float
    var_D: float
    delta_mean_abs_A: float
    var_abs_A: float
    feasible: bool = True
    infeasible_reason: str = ""
    trials: int = 0
    periods: int = 0
    estimator: str = "conditional"
    variance_ddof: int = 0
    max_age: int = 0
    state_counts: Counter | None = field(default=None, repr=False)
    d_values: np.ndarray | None = field(default=None, repr=False)

    def exceedance(self, age: int) -> float:
        """Fraction of simulated periods in which some sensor's age exceeds ``age``."""
        if self.state_counts is None:
            raise ValueError("state counts were not recorded")
        total = sum(self.state_counts.values())
        over = sum(c for s, c in self.state_counts.items() if max(s) > age)
        return over / total


def trial_seeds(base_seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(base_seed).spawn(trials)


def _uniforms(seed, periods: int, n_sensors: int) -> np.ndarray:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed)).random((periods, n_sensors))


def step(ages, alloc, specs, randomness) -> np.ndarray:
    """Ages after one period. ``randomness`` is a Generator or per-sensor uniforms."""
    ages = np.asarray(ages, dtype=int)
    eps = np.array([packet_error_rate(s, n) if n >= 1 else 1.0 for s, n in zip(specs, alloc)])
    if isinstance(randomness, np.random.Generator):
        u = randomness.random(len(eps))
    else:
        u = np.asarray(randomness, dtype=float)
    return np.where(u < eps, ages + 1, 1)


def _simulate(scenario: Scenario, policy: BlocklengthPolicy, uniforms: np.ndarray):
    """Run all trials in lock-step. ``uniforms`` has shape (T, K, M)."""
    n_trials, periods, n_sensors = uniforms.shape
    ages = np.tile(np.asarray(scenario.initial_ages, dtype=int), (n_trials, 1))
    out_ages = np.empty((n_trials, periods, n_sensors), dtype=np.int64)
    out_alloc = np.empty_like(out_ages)
    out_ok = np.empty((n_trials, periods, n_sensors), dtype=bool)
    expected = np.empty((n_trials, periods))
    for k in range(periods):
        alloc = policy.predict(ages)
        eps = policy.error_rates(alloc)
        expected[:, k] = n_sensors + (eps * ages).sum(axis=1)
        ok = uniforms[:, k, :] >= eps
        ages = np.where(ok, 1, ages + 1)
        out_ages[:, k] = ages
        out_alloc[:, k] = alloc
        out_ok[:, k] = ok
    return out_ages, out_alloc, out_ok, expected


def _check_policy(scenario: Scenario, policy: BlocklengthPolicy):
    if policy.scenario_key() != scenario.channel_key():
        raise ValueError(f"{policy.name} policy does not match scenario {scenario.name!r}")
    if not hasattr(policy, "specs_"):
        policy.fit()


def run_episode(scenario: Scenario, policy: BlocklengthPolicy, seed) -> Trajectory:
    """One trial of ``scenario.periods`` periods from the initial ages."""
    _check_policy(scenario, policy)
    u = _uniforms(seed, scenario.periods, scenario.n_sensors)[None]
    ages, alloc, ok, expected = _simulate(scenario, policy, u)
    return Trajectory(ages[0], alloc[0], ok[0], expected[0], scenario.initial_ages)


def discounted_aoi(values, gamma: float) -> float:
    """``sum_k gamma**(k-1) * values[k-1]``; a Trajectory contributes its realized age sums."""
    if isinstance(values, Trajectory):
        values = values.age_sums
    values = np.asarray(values, dtype=float)
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(np.dot(gamma ** np.arange(values.shape[-1]), values))


def _feasibility(policy: BlocklengthPolicy) -> tuple[bool, str]:
    report = getattr(policy, "feasibility", None)
    if report is None:
        return True, ""
    r = report()
    return r.feasible, r.reason


def monte_carlo(
    scenario: Scenario,
    policy: BlocklengthPolicy,
    base_seed: int = 0,
    *,
    estimator: str = "conditional",
    keep_states: bool = False,
) -> SimMetrics:
    """Aggregate AoI statistics over ``scenario.trials`` independent episodes.

    Instantaneous ``|A|`` statistics pool every trial x period sample;
    variances use the population (ddof=0) denominator.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    _check_policy(scenario, policy)
    u = np.stack([_uniforms(s, scenario.periods, scenario.n_sensors) for s in trial_seeds(base_seed, scenario.trials)])
    ages, _, _, expected = _simulate(scenario, policy, u)
    weights = scenario.gamma ** np.arange(scenario.periods)
    per_period = expected if estimator == "conditional" else ages.sum(axis=2)
    d_values = per_period @ weights
    sums = ages.sum(axis=2).ravel()
    feasible, reason = _feasibility(policy)
    counts = None
    if keep_states:
        flat = ages.reshape(-1, scenario.n_sensors)
        uniq, cnt = np.unique(flat, axis=0, return_counts=True)
        counts = Counter({tuple(int(a) for a in row): int(c) for row, c in zip(uniq, cnt)})
    return SimMetrics(
        delta_D_mean=float(d_values.mean() - scenario.d_lower),
        var_D=float(d_values.var()),
        delta_mean_abs_A=float(sums.mean() - scenario.n_sensors),
        var_abs_A=float(sums.var()),
        feasible=feasible,
        infeasible_reason=reason,
        trials=scenario.trials,
        periods=scenario.periods,
        estimator=estimator,
        max_age=int(ages.max()),
        state_counts=counts,
        d_values=d_values,
    )
