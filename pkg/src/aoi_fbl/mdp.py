"""Long-term (discounted) AoI optimization for two sensors.

The AoI state space is truncated to ``{1..a_max}^2``; a failed delivery ages a
sensor by one period, saturating at ``a_max``. Actions are the blocklengths
``n1`` of sensor 1 between its minimum and ``n_max - n2_min``; sensor 2 gets
the rest. The Q-matrix is solved by synchronous value iteration and the
stationary policy is its row-wise argmax.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fbl import ChannelSpec, packet_error_rate
from .policies import BlocklengthPolicy, _check_budget, _min_blocklengths

logger = logging.getLogger(__name__)

__all__ = [
    "MdpPolicy",
    "MdpSpec",
    "QTable",
    "TransitionDistribution",
    "expected_reward",
    "extract_policy",
    "policy_value",
    "train",
    "transition_probs",
]


@dataclass(frozen=True)
class MdpSpec:
    specs: tuple[ChannelSpec, ChannelSpec]
    n_max: int = 500
    eps_max: float = 0.1
    a_max: int = 8
    gamma: float = 0.9
    l_max: int = 100
    eps_min: float = 1e-5
    action_grid: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if len(self.specs) != 2:
            raise ValueError("the MDP model covers exactly two sensors")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if self.a_max < 2:
            raise ValueError(f"a_max must be >= 2, got {self.a_max!r}")
        if self.l_max < 1 or self.eps_min <= 0:
            raise ValueError("l_max must be >= 1 and eps_min > 0")
        n_min = _min_blocklengths(self.specs, self.eps_max, self.n_max)
        _check_budget(n_min, self.n_max)
        full = tuple(range(int(n_min[0]), self.n_max - int(n_min[1]) + 1))
        if not self.action_grid:
            object.__setattr__(self, "action_grid", full)
        elif not set(self.action_grid) <= set(full):
            raise ValueError("action grid violates the minimal blocklengths")
        object.__setattr__(self, "action_grid", tuple(int(a) for a in self.action_grid))

    @property
    def n_states(self) -> int:
        return self.a_max**2

    def model_dict(self) -> dict:
        """Fields that determine the trained table (solver tolerances excluded)."""
        return {
            "snr_linear": [repr(float(s.snr_linear)) for s in self.specs],
            "payload_bits": [int(s.payload_bits) for s in self.specs],
            "n_max": int(self.n_max),
            "eps_max": repr(float(self.eps_max)),
            "a_max": int(self.a_max),
            "gamma": repr(float(self.gamma)),
            "action_grid": list(self.action_grid),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.model_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def state_index(self, state) -> int:
        a1, a2 = (int(a) for a in state)
        if not (1 <= a1 <= self.a_max and 1 <= a2 <= self.a_max):
            raise ValueError(f"state {state!r} outside [1, {self.a_max}]^2")
        return (a1 - 1) * self.a_max + (a2 - 1)

    def states(self) -> np.ndarray:
        """Row i holds the ages of state index i."""
        a = np.arange(1, self.a_max + 1)
        return np.array([(a1, a2) for a1 in a for a2 in a], dtype=int)

    def action_index(self, n1: int) -> int:
        try:
            return self.action_grid.index(int(n1))
        except ValueError:
            raise ValueError(f"n1={n1} is not in the action grid") from None

    def error_rates(self) -> tuple[np.ndarray, np.ndarray]:
        grid = np.asarray(self.action_grid)
        return packet_error_rate(self.specs[0], grid), packet_error_rate(self.specs[1], self.n_max - grid)


@dataclass(frozen=True)
class TransitionDistribution:
    successors: tuple[tuple[int, int], ...]
    probs: tuple[float, ...]

    def as_dict(self) -> dict:
        return dict(zip(self.successors, self.probs))


def _branches(state, e1: float, e2: float, a_max: int):
    a1, a2 = state
    f1, f2 = min(a1 + 1, a_max), min(a2 + 1, a_max)
    return (
        ((f1, f2), e1 * e2),
        ((f1, 1), e1 * (1.0 - e2)),
        ((1, f2), (1.0 - e1) * e2),
        ((1, 1), (1.0 - e1) * (1.0 - e2)),
    )


def transition_probs(state, n1: int, spec: MdpSpec, *, eps=None) -> TransitionDistribution:
    """Four-branch successor distribution of ``state`` under action ``n1``.

    ``eps`` overrides the channel-derived ``(eps1, eps2)`` pair.
    """
    spec.state_index(state)
    j = spec.action_index(n1)
    if eps is None:
        e1, e2 = spec.error_rates()
        eps = (float(e1[j]), float(e2[j]))
    branches = _branches(tuple(int(a) for a in state), float(eps[0]), float(eps[1]), spec.a_max)
    return TransitionDistribution(tuple(b[0] for b in branches), tuple(b[1] for b in branches))


def expected_reward(state, n1: int, spec: MdpSpec, *, eps=None) -> float:
    """Negative expected AoI sum after one period."""
    dist = transition_probs(state, n1, spec, eps=eps)
    return -sum(p * (s[0] + s[1]) for s, p in zip(dist.successors, dist.probs))


@dataclass
class QTable:
    """Trained state x action values with index maps.

    ``states[i]`` is the AoI state of row i and ``actions[j]`` the ``n1`` of
    column j.
    """

    values: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    spec: MdpSpec
    converged: bool
    sweeps_used: int
    deltas: list = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint()

    def state_values(self) -> np.ndarray:
        return self.values.max(axis=1)


class _Model:
    """Dense arrays of the truncated MDP: rewards and successor indices per (state, action)."""

    def __init__(self, spec: MdpSpec):
        self.spec = spec
        st = spec.states()
        a_max = spec.a_max
        e1, e2 = spec.error_rates()
        f1 = np.minimum(st[:, 0] + 1, a_max)
        f2 = np.minimum(st[:, 1] + 1, a_max)
        idx = lambda x, y: (x - 1) * a_max + (y - 1)  # noqa: E731
        # successor order: fail/fail, fail/ok, ok/fail, ok/ok
        self.succ = np.stack([idx(f1, f2), idx(f1, 1), idx(1, f2), np.zeros_like(f1)], axis=1)
        size = np.stack([f1 + f2, f1 + 1, 1 + f2, np.full_like(f1, 2)], axis=1).astype(float)
        probs = np.stack([e1 * e2, e1 * (1 - e2), (1 - e1) * e2, (1 - e1) * (1 - e2)], axis=0)  # (4, J)
        self.probs = probs
        self.reward = -(size @ probs)  # (I, J)

    def backup(self, v: np.ndarray) -> np.ndarray:
        nxt = v[self.succ]  # (I, 4)
        return self.reward + self.spec.gamma * (nxt @ self.probs)

    def policy_matrix(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Transition matrix and reward vector of a fixed column per state."""
        n = self.spec.n_states
        P = np.zeros((n, n))
        for i, j in enumerate(actions):
            for b in range(4):
                P[i, self.succ[i, b]] += self.probs[b, j]
        return P, self.reward[np.arange(n), actions]


def policy_value(spec: MdpSpec, actions) -> np.ndarray:
    """Exact discounted value of a stationary policy given as per-state action columns."""
    model = _Model(spec)
    P, r = model.policy_matrix(np.asarray(actions, dtype=int))
    return np.linalg.solve(np.eye(spec.n_states) - spec.gamma * P, r)


def train(spec: MdpSpec, init: str = "one_step") -> QTable:
    """Synchronous value iteration on the Q-matrix.

    ``init="zero"`` starts from an all-zero table. ``init="one_step"`` starts
    from the exact value of the myopic policy, which reaches the same fixed
    point in fewer sweeps. Stops once the per-state value moves by at most
    ``eps_min`` in sup-norm, or after ``l_max`` sweeps.
    """
    model = _Model(spec)
    if init == "zero":
        v = np.zeros(spec.n_states)
    elif init == "one_step":
        st = spec.states()
        e1, e2 = spec.error_rates()
        myopic = np.argmin(st[:, :1] * e1[None, :] + st[:, 1:] * e2[None, :], axis=1)
        v = policy_value(spec, myopic)
    else:
        raise ValueError(f"unknown init {init!r}")

    deltas = []
    converged = False
    for sweep in range(1, spec.l_max + 1):
        q = model.backup(v)
        v_new = q.max(axis=1)
        delta = float(np.max(np.abs(v_new - v)))
        deltas.append(delta)
        v = v_new
        if delta <= spec.eps_min:
            converged = True
            break
    logger.debug("value iteration: %d sweeps, last delta %.3g", sweep, deltas[-1])
    return QTable(
        values=q,
        states=spec.states(),
        actions=np.asarray(spec.action_grid, dtype=int),
        spec=spec,
        converged=converged,
        sweeps_used=sweep,
        deltas=deltas,
    )


def extract_policy(q: QTable) -> np.ndarray:
    """``table[a1 - 1, a2 - 1]`` is the optimal ``n1``; ties go to the smallest ``n1``."""
    if not q.converged:
        warnings.warn("extracting a policy from a non-converged Q-table", RuntimeWarning, stacklevel=2)
    best = q.actions[np.argmax(q.values, axis=1)]
    a_max = q.spec.a_max
    table = np.empty((a_max, a_max), dtype=int)
    table[q.states[:, 0] - 1, q.states[:, 1] - 1] = best
    return table


class MdpPolicy(BlocklengthPolicy):
    """Stationary long-term optimal policy looked up from a trained Q-table.

    Ages above ``a_max`` use the ``a_max`` row/column. Pass a previously
    trained ``q_table`` to skip training; its fingerprint must match.
    """

    name = "mdp"

    def __init__(
        self,
        snr_db=(-13.0, -6.0),
        payload_bits=16,
        n_max=500,
        eps_max=0.1,
        a_max=8,
        gamma=0.9,
        l_max=100,
        eps_min=1e-5,
        init="one_step",
        q_table=None,
    ):
        super().__init__(snr_db=snr_db, payload_bits=payload_bits, n_max=n_max, eps_max=eps_max)
        self.a_max = a_max
        self.gamma = gamma
        self.l_max = l_max
        self.eps_min = eps_min
        self.init = init
        self.q_table = q_table

    def mdp_spec(self) -> MdpSpec:
        return MdpSpec(
            specs=tuple(self._channel_specs()),
            n_max=int(self.n_max),
            eps_max=float(self.eps_max),
            a_max=int(self.a_max),
            gamma=float(self.gamma),
            l_max=int(self.l_max),
            eps_min=float(self.eps_min),
        )

    def _fit(self):
        if self.n_sensors_ != 2:
            raise ValueError("MDP policy supports exactly two sensors")
        spec = self.mdp_spec()
        if self.q_table is not None:
            if self.q_table.fingerprint != spec.fingerprint():
                raise ValueError("q_table was trained for a different scenario (fingerprint mismatch)")
            self.q_table_ = self.q_table
        else:
            self.q_table_ = train(spec, init=self.init)
        self.n_min_ = np.array([spec.action_grid[0], self.n_max - spec.action_grid[-1]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if self.q_table_.converged else "default")
            self.policy_table_ = extract_policy(self.q_table_)

    def predict(self, X) -> np.ndarray:
        X = self._validate_states(X)
        clipped = np.minimum(X, int(self.a_max)) - 1
        n1 = self.policy_table_[clipped[:, 0], clipped[:, 1]]
        return np.column_stack([n1, int(self.n_max) - n1])
