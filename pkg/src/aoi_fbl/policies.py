"""Blocklength allocation policies.

Every policy is a scikit-learn style estimator: hyper-parameters describe the
scenario (SNRs, payload, budget, reliability target), ``fit`` precomputes the
per-sensor error-rate tables and minimal blocklengths, and ``predict`` maps an
``(n_samples, M)`` array of AoI states to an ``(n_samples, M)`` array of
integer blocklengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .fbl import ChannelSpec, InfeasibleError, min_blocklength, packet_error_rate

__all__ = [
    "BlocklengthPolicy",
    "FeasibilityReport",
    "MinPerPolicy",
    "OneStepPolicy",
    "UniformPolicy",
    "allocate",
    "channel_key",
    "feasibility_check",
    "min_per_allocation",
    "one_step_allocation",
    "relaxed_balance_residual",
    "uniform_allocation",
]


@dataclass(frozen=True)
class FeasibilityReport:
    error_rates: tuple[float, ...]
    eps_max: float
    infeasible: tuple[int, ...] = field(default=())

    @property
    def feasible(self) -> bool:
        return not self.infeasible

    @property
    def reason(self) -> str:
        if self.feasible:
            return ""
        parts = [f"sensor {m + 1}: eps={self.error_rates[m]:.4g} > {self.eps_max:g}" for m in self.infeasible]
        return "; ".join(parts)


def _as_specs(specs) -> list[ChannelSpec]:
    specs = list(specs)
    if not specs:
        raise ValueError("at least one sensor is required")
    return specs


def _error_tables(specs, n_max: int) -> np.ndarray:
    """``table[m, n - 1]`` is the error rate of sensor m at blocklength n, for n in 1..n_max."""
    n = np.arange(1, n_max + 1)
    return np.vstack([packet_error_rate(s, n) for s in specs])


def _min_blocklengths(specs, eps_max: float, n_max: int) -> np.ndarray:
    out = []
    for m, spec in enumerate(specs):
        try:
            out.append(min_blocklength(spec, eps_max, max_blocklength=10 * n_max))
        except InfeasibleError as exc:
            raise InfeasibleError(f"sensor {m + 1}: {exc}") from None
    return np.array(out, dtype=int)


def _check_budget(n_min: np.ndarray, n_max: int):
    if n_min.sum() > n_max:
        raise InfeasibleError(
            f"minimal blocklengths {n_min.tolist()} sum to {int(n_min.sum())} > budget {n_max}"
        )


def channel_key(snr_db, payload_bits, n_max, eps_max) -> tuple:
    """Hashable identity of the channel parameters a policy was built for."""
    snr = np.atleast_1d(np.asarray(snr_db, dtype=float))
    bits = np.atleast_1d(np.asarray(payload_bits))
    if bits.size == 1:
        bits = np.repeat(bits, snr.size)
    return (
        tuple(round(float(s), 9) for s in snr),
        tuple(int(b) for b in bits),
        int(n_max),
        round(float(eps_max), 12),
    )


def uniform_allocation(n_sensors: int, n_max: int) -> np.ndarray:
    """Even split; the remainder of ``n_max / n_sensors`` stays idle."""
    if n_sensors < 1 or n_max < n_sensors:
        raise ValueError(f"need 1 <= n_sensors <= n_max, got {n_sensors}, {n_max}")
    return np.full(n_sensors, n_max // n_sensors, dtype=int)


def feasibility_check(alloc, specs, eps_max: float) -> FeasibilityReport:
    alloc = np.asarray(alloc, dtype=int)
    specs = _as_specs(specs)
    if alloc.shape != (len(specs),):
        raise ValueError(f"allocation shape {alloc.shape} does not match {len(specs)} sensors")
    eps = tuple(float(packet_error_rate(s, n)) for s, n in zip(specs, alloc))
    bad = tuple(m for m, e in enumerate(eps) if e > eps_max)
    return FeasibilityReport(eps, eps_max, bad)


def _objective(tables, weights, n) -> float:
    return float(sum(w * tables[m, k - 1] for m, (w, k) in enumerate(zip(weights, n))))


def _balanced_start(tables, weights, n_min, n_max) -> np.ndarray:
    """Integer allocation that (approximately) equalizes ``weight * eps`` across sensors.

    Bisection on the common level ``lam``: each sensor takes the fewest units
    with ``w * eps <= lam`` (but at least its minimum); the smallest level whose
    demand fits the budget wins, and leftover units go greedily to the sensor
    with the largest objective decrease.
    """
    n_sensors = len(weights)

    def demand(lam):
        out = np.empty(n_sensors, dtype=int)
        for m in range(n_sensors):
            w_eps = weights[m] * tables[m]
            # decreasing branch only: positions at or after the minimum
            ok = np.nonzero(w_eps[n_min[m] - 1:] <= lam)[0]
            out[m] = n_min[m] + ok[0] if ok.size else n_max + 1
        return out

    hi = max(weights[m] * tables[m, n_min[m] - 1] for m in range(n_sensors))
    lo = hi
    while demand(lo).sum() <= n_max and lo > 1e-300:
        lo /= 2.0
    if demand(lo).sum() <= n_max:
        n = demand(lo)
    else:
        for _ in range(200):
            mid = math.sqrt(lo * hi) if lo > 0 else hi / 2.0
            if demand(mid).sum() <= n_max:
                hi = mid
            else:
                lo = mid
            if hi / lo < 1.0 + 1e-12:
                break
        n = demand(hi)
    n = np.maximum(n, n_min)
    while n.sum() < n_max:
        gains = [
            weights[m] * (tables[m, n[m] - 1] - tables[m, n[m]]) if n[m] < n_max else -np.inf
            for m in range(n_sensors)
        ]
        n[int(np.argmax(gains))] += 1
    return n


def _local_exchange(tables, weights, n, n_min, max_moves: int) -> np.ndarray:
    """Steepest single-unit moves between sensor pairs while the weighted error sum drops."""
    n = n.copy()
    n_sensors = len(n)
    n_max = tables.shape[1]
    current = _objective(tables, weights, n)
    for _ in range(max_moves):
        best, best_move = current, None
        for i in range(n_sensors):
            if n[i] >= n_max:
                continue
            for j in range(n_sensors):
                if i == j or n[j] - 1 < n_min[j]:
                    continue
                trial = current + weights[i] * (tables[i, n[i]] - tables[i, n[i] - 1]) + weights[j] * (
                    tables[j, n[j] - 2] - tables[j, n[j] - 1]
                )
                if trial < best - 1e-15 * max(abs(best), 1e-300):
                    best, best_move = trial, (i, j)
        if best_move is None:
            break
        i, j = best_move
        n[i] += 1
        n[j] -= 1
        current = _objective(tables, weights, n)
    return n


def _scan_two(tables, weights, n_min, n_max) -> np.ndarray:
    n1 = np.arange(n_min[0], n_max - n_min[1] + 1)
    obj = weights[0] * tables[0, n1 - 1] + weights[1] * tables[1, n_max - n1 - 1]
    k = int(np.argmin(obj))  # first minimum: smallest n1 wins ties
    return np.array([n1[k], n_max - n1[k]], dtype=int)


def min_per_allocation(specs, n_max: int, eps_max: float, *, _tables=None, _n_min=None) -> np.ndarray:
    """Allocation minimizing the summed packet error rate under the budget."""
    specs = _as_specs(specs)
    n_min = _min_blocklengths(specs, eps_max, n_max) if _n_min is None else _n_min
    _check_budget(n_min, n_max)
    tables = _error_tables(specs, n_max) if _tables is None else _tables
    weights = np.ones(len(specs))
    start = _balanced_start(tables, weights, n_min, n_max)
    return _local_exchange(tables, weights, start, n_min, 10 * len(specs) * n_max)


def one_step_allocation(ages, specs, n_max: int, eps_max: float, *, _tables=None, _n_min=None) -> np.ndarray:
    """Allocation minimizing the expected AoI sum at the end of the coming period.

    Two sensors: exact scan over every feasible split. More sensors: balanced
    start on ``eps * age`` followed by local exchange.
    """
    specs = _as_specs(specs)
    ages = np.asarray(ages, dtype=float)
    if ages.shape != (len(specs),) or np.any(ages < 1):
        raise ValueError(f"ages must be {len(specs)} values >= 1, got {ages!r}")
    n_min = _min_blocklengths(specs, eps_max, n_max) if _n_min is None else _n_min
    _check_budget(n_min, n_max)
    tables = _error_tables(specs, n_max) if _tables is None else _tables
    if len(specs) == 1:
        return np.array([n_max], dtype=int)
    if len(specs) == 2:
        return _scan_two(tables, ages, n_min, n_max)
    start = _balanced_start(tables, ages, n_min, n_max)
    return _local_exchange(tables, ages, start, n_min, 10 * len(specs) * n_max)


def relaxed_balance_residual(alloc, ages, specs) -> float:
    """Largest pairwise relative gap of ``eps * age`` over sensors."""
    xi = np.array([packet_error_rate(s, n) * a for s, n, a in zip(_as_specs(specs), alloc, ages)])
    worst = 0.0
    for i in range(len(xi)):
        for j in range(i + 1, len(xi)):
            top = max(xi[i], xi[j])
            if top > 0:
                worst = max(worst, abs(xi[i] - xi[j]) / top)
    return float(worst)


class BlocklengthPolicy(BaseEstimator):
    """Base estimator: scenario hyper-parameters plus AoI-state -> allocation mapping.

    Parameters
    ----------
    snr_db : sequence of float
        Uplink SNR of each sensor in dB.
    payload_bits : int or sequence of int
        Message length in bits, shared or per sensor.
    n_max : int
        Blocklength budget per period.
    eps_max : float
        Maximal allowed packet error rate per sensor.
    """

    name = "base"

    def __init__(self, snr_db=(-13.0, -6.0), payload_bits=16, n_max=500, eps_max=0.1):
        self.snr_db = snr_db
        self.payload_bits = payload_bits
        self.n_max = n_max
        self.eps_max = eps_max

    def _channel_specs(self) -> list[ChannelSpec]:
        snr = list(np.atleast_1d(np.asarray(self.snr_db, dtype=float)))
        bits = np.atleast_1d(np.asarray(self.payload_bits))
        if bits.size == 1:
            bits = np.repeat(bits, len(snr))
        if bits.size != len(snr):
            raise ValueError("payload_bits must be a scalar or match the number of sensors")
        return [ChannelSpec.from_db(s, int(d)) for s, d in zip(snr, bits)]

    def fit(self, X=None, y=None):
        if int(self.n_max) < 1:
            raise ValueError(f"n_max must be positive, got {self.n_max!r}")
        self.specs_ = self._channel_specs()
        self.n_sensors_ = len(self.specs_)
        self.tables_ = _error_tables(self.specs_, int(self.n_max))
        self._fit()
        return self

    def _fit(self):
        pass

    def _validate_states(self, X) -> np.ndarray:
        check_is_fitted(self, "specs_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.n_sensors_:
            raise ValueError(f"expected {self.n_sensors_} ages per state, got {X.shape[1]}")
        if np.any(X < 1):
            raise ValueError("ages must be >= 1")
        return X

    def predict(self, X) -> np.ndarray:
        X = self._validate_states(X)
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        rows = np.vstack([self._allocate_one(state) for state in uniq])
        return rows[inverse.reshape(-1)]

    def _allocate_one(self, ages) -> np.ndarray:
        raise NotImplementedError

    def error_rates(self, alloc) -> np.ndarray:
        """Error rates of allocations ``(..., M)`` looked up in the fitted tables."""
        alloc = np.asarray(alloc, dtype=int)
        idx = np.clip(alloc, 1, None) - 1
        out = np.empty(alloc.shape, dtype=float)
        for m in range(self.n_sensors_):
            out[..., m] = self.tables_[m, idx[..., m]]
        # zero units means nothing is sent
        return np.where(alloc < 1, 1.0, out)

    def scenario_key(self) -> tuple:
        """Channel parameters a compatible scenario must share."""
        return channel_key(self.snr_db, self.payload_bits, self.n_max, self.eps_max)

    @property
    def state_dependent(self) -> bool:
        return True


class _ConstantPolicy(BlocklengthPolicy):
    @property
    def state_dependent(self) -> bool:
        return False

    def predict(self, X) -> np.ndarray:
        X = self._validate_states(X)
        return np.tile(self.allocation_, (X.shape[0], 1))

    def feasibility(self) -> FeasibilityReport:
        check_is_fitted(self, "allocation_")
        return feasibility_check(self.allocation_, self.specs_, self.eps_max)


class UniformPolicy(_ConstantPolicy):
    """Equal blocklength per sensor, regardless of the AoI state."""

    name = "uniform"

    def _fit(self):
        self.allocation_ = uniform_allocation(self.n_sensors_, int(self.n_max))


class MinPerPolicy(_ConstantPolicy):
    """Minimizes the summed packet error rate; ignores the AoI state."""

    name = "minper"

    def _fit(self):
        self.n_min_ = _min_blocklengths(self.specs_, self.eps_max, int(self.n_max))
        self.allocation_ = min_per_allocation(
            self.specs_, int(self.n_max), self.eps_max, _tables=self.tables_, _n_min=self.n_min_
        )


class OneStepPolicy(BlocklengthPolicy):
    """Minimizes the expected AoI sum of the next period only."""

    name = "onestep"

    def _fit(self):
        self.n_min_ = _min_blocklengths(self.specs_, self.eps_max, int(self.n_max))
        _check_budget(self.n_min_, int(self.n_max))

    def _allocate_one(self, ages):
        return one_step_allocation(
            ages, self.specs_, int(self.n_max), self.eps_max, _tables=self.tables_, _n_min=self.n_min_
        )

    def predict(self, X) -> np.ndarray:
        X = self._validate_states(X)
        if self.n_sensors_ != 2:
            return super().predict(X)
        n_max = int(self.n_max)
        n1 = np.arange(self.n_min_[0], n_max - self.n_min_[1] + 1)
        e1 = self.tables_[0, n1 - 1]
        e2 = self.tables_[1, n_max - n1 - 1]
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        obj = uniq[:, :1] * e1[None, :] + uniq[:, 1:] * e2[None, :]
        best = n1[np.argmin(obj, axis=1)]
        rows = np.column_stack([best, n_max - best])
        return rows[inverse.reshape(-1)]


def allocate(policy: BlocklengthPolicy, ages, scenario=None) -> np.ndarray:
    """Allocation for a single AoI state.

    With ``scenario`` given, the policy's channel parameters (and, for table
    lookups, the age truncation) must match it.
    """
    if scenario is not None:
        if policy.scenario_key() != scenario.channel_key():
            raise ValueError(f"{policy.name} policy was built for a different scenario than {scenario.name!r}")
        a_max = getattr(policy, "a_max", None)
        if a_max is not None and int(a_max) != int(scenario.a_max):
            raise ValueError(f"policy table covers ages up to {a_max}, scenario uses {scenario.a_max}")
    return policy.predict(np.asarray(ages, dtype=int).reshape(1, -1))[0]
