"""Scenario files, Q-table persistence and result export.

Scenario file (JSON)::

    {"scenarios": {"<name>": {"snr_db": [..], "payload_bits": 16, "n_max": 500,
                              "eps_max": 0.1, "periods": 500, "trials": 500,
                              "gamma": 0.9, "a_max": 8, "initial_ages": [1, 1]}}}

``initial_ages`` is optional (all ones); every other field is required.
SNRs stay in dB on disk and are converted to linear ratios on use.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .fbl import ChannelSpec
from .mdp import MdpSpec, QTable
from .simulation import Scenario, SimMetrics, Trajectory

QTABLE_FORMAT = "aoi-fbl-qtable"
QTABLE_VERSION = 1

REQUIRED_FIELDS = ("snr_db", "payload_bits", "n_max", "eps_max", "periods", "trials", "gamma", "a_max")
INT_FIELDS = ("payload_bits", "n_max", "periods", "trials", "a_max")

RESULT_COLUMNS = (
    "scenario",
    "policy",
    "n1_at_A0",
    "delta_D_mean",
    "var_D",
    "delta_mean_abs_A",
    "var_abs_A",
    "feasible",
    "seed",
)


class ConfigError(ValueError):
    pass


class QTableError(ValueError):
    pass


def fmt_float(x: float) -> str:
    return format(float(x), ".10g")


# -- scenarios ---------------------------------------------------------------


def default_config_path() -> Path:
    return Path(str(resources.files("aoi_fbl") / "data" / "scenarios.json"))


def _scenario_from_entry(name: str, entry, where: str) -> Scenario:
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: scenario {name!r} must be an object")
    for key in REQUIRED_FIELDS:
        if key not in entry:
            raise ConfigError(f"{where}: scenario {name!r} is missing field {key!r}")
    unknown = set(entry) - set(REQUIRED_FIELDS) - {"initial_ages"}
    if unknown:
        raise ConfigError(f"{where}: scenario {name!r} has unknown field(s) {sorted(unknown)}")
    for key in INT_FIELDS:
        v = entry[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{where}: scenario {name!r} field {key!r} must be a positive integer, got {v!r}")
    snr = entry["snr_db"]
    if not isinstance(snr, list) or not snr or not all(isinstance(s, (int, float)) for s in snr):
        raise ConfigError(f"{where}: scenario {name!r} field 'snr_db' must be a non-empty list of numbers")
    try:
        return Scenario(name=name, **entry)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: scenario {name!r}: {exc}") from None


def load_scenarios(path=None) -> list[Scenario]:
    """Validated scenarios from a JSON file (the bundled defaults when ``path`` is None)."""
    path = Path(path) if path is not None else default_config_path()
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno <= len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("scenarios"), dict):
        raise ConfigError(f"{path}: top level must be an object with a 'scenarios' mapping")
    return [_scenario_from_entry(name, entry, str(path)) for name, entry in doc["scenarios"].items()]


def get_scenario(name: str, path=None) -> Scenario:
    for sc in load_scenarios(path):
        if sc.name == name:
            return sc
    raise KeyError(name)


def scenario_to_dict(sc: Scenario) -> dict:
    out = {key: getattr(sc, key) for key in REQUIRED_FIELDS}
    out["snr_db"] = list(sc.snr_db)
    out["initial_ages"] = list(sc.initial_ages)
    return out


def save_scenarios(scenarios, path):
    doc = {"scenarios": {sc.name: scenario_to_dict(sc) for sc in scenarios}}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# -- Q-tables ----------------------------------------------------------------


def save_qtable(q: QTable, path):
    spec = q.spec
    doc = {
        "format": QTABLE_FORMAT,
        "version": QTABLE_VERSION,
        "fingerprint": q.fingerprint,
        "spec": {
            "snr_linear": [float(s.snr_linear) for s in spec.specs],
            "payload_bits": [int(s.payload_bits) for s in spec.specs],
            "n_max": spec.n_max,
            "eps_max": spec.eps_max,
            "a_max": spec.a_max,
            "gamma": spec.gamma,
            "l_max": spec.l_max,
            "eps_min": spec.eps_min,
            "action_grid": list(spec.action_grid),
        },
        "converged": bool(q.converged),
        "sweeps_used": int(q.sweeps_used),
        "deltas": [float(d) for d in q.deltas],
        "states": q.states.tolist(),
        "actions": q.actions.tolist(),
        # repr() of a float round-trips exactly
        "values": [[float(v) for v in row] for row in q.values],
    }
    Path(path).write_text(json.dumps(doc))


def load_qtable(path, expected: MdpSpec | str | None = None) -> QTable:
    """Read a Q-table; ``expected`` (spec or fingerprint) must match if given."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise QTableError(f"{path}: corrupt Q-table file ({exc})") from None
    try:
        if doc["format"] != QTABLE_FORMAT or doc["version"] != QTABLE_VERSION:
            raise QTableError(f"{path}: not a version-{QTABLE_VERSION} {QTABLE_FORMAT} file")
        s = doc["spec"]
        spec = MdpSpec(
            specs=tuple(ChannelSpec(snr, bits) for snr, bits in zip(s["snr_linear"], s["payload_bits"])),
            n_max=s["n_max"],
            eps_max=s["eps_max"],
            a_max=s["a_max"],
            gamma=s["gamma"],
            l_max=s["l_max"],
            eps_min=s["eps_min"],
            action_grid=tuple(s["action_grid"]),
        )
        q = QTable(
            values=np.array(doc["values"], dtype=float),
            states=np.array(doc["states"], dtype=int),
            actions=np.array(doc["actions"], dtype=int),
            spec=spec,
            converged=bool(doc["converged"]),
            sweeps_used=int(doc["sweeps_used"]),
            deltas=list(doc["deltas"]),
        )
    except QTableError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise QTableError(f"{path}: corrupt Q-table file ({exc!r})") from None
    if q.values.shape != (spec.n_states, len(spec.action_grid)) or q.fingerprint != doc["fingerprint"]:
        raise QTableError(f"{path}: corrupt Q-table file (dimension or fingerprint inconsistency)")
    if expected is not None:
        want = expected if isinstance(expected, str) else expected.fingerprint()
        if want != q.fingerprint:
            raise QTableError(f"{path}: Q-table fingerprint does not match the requested scenario")
    return q


# -- results -----------------------------------------------------------------


@dataclass
class ResultRecord:
    scenario: str
    policy: str
    metrics: SimMetrics
    n1_at_A0: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        meta = {
            "tool_version": __version__,
            "estimator_D": self.metrics.estimator,
            "variance_ddof": self.metrics.variance_ddof,
            "trials": self.metrics.trials,
            "periods": self.metrics.periods,
            "capacity": "log2(1+snr) bits/use",
            "dispersion": "1-(1+snr)^-2",
        }
        if not self.metrics.feasible:
            meta["infeasible_reason"] = self.metrics.infeasible_reason
        meta.update(self.metadata)
        self.metadata = meta

    def row(self) -> dict:
        m = self.metrics
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "n1_at_A0": str(int(self.n1_at_A0)),
            "delta_D_mean": fmt_float(m.delta_D_mean),
            "var_D": fmt_float(m.var_D),
            "delta_mean_abs_A": fmt_float(m.delta_mean_abs_A),
            "var_abs_A": fmt_float(m.var_abs_A),
            "feasible": "true" if m.feasible else "false",
            "seed": str(int(self.seed)),
        }

    def to_json(self) -> dict:
        m = self.metrics
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "n1_at_A0": int(self.n1_at_A0),
            "delta_D_mean": float(fmt_float(m.delta_D_mean)),
            "var_D": float(fmt_float(m.var_D)),
            "delta_mean_abs_A": float(fmt_float(m.delta_mean_abs_A)),
            "var_abs_A": float(fmt_float(m.var_abs_A)),
            "feasible": bool(m.feasible),
            "seed": int(self.seed),
            "metadata": self.metadata,
        }


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def export_results(records, fmt: str, path):
    records = list(records)
    if not records:
        raise ValueError("no result records to export")
    if fmt == "csv":
        _write_csv(path, RESULT_COLUMNS, [r.row() for r in records])
    elif fmt == "json":
        Path(path).write_text(json.dumps([r.to_json() for r in records], indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unsupported format {fmt!r}")


def export_plot_data(kind: str, inputs, path):
    """Plot-ready CSV data.

    ``state_scatter``: ``inputs`` maps policy name to trajectories (or state
    count mappings); one row per visited (A1, A2) state.
    ``policy_surface``: ``inputs`` is ``(n1_lt,)`` or ``(n1_lt, n1_os)``,
    each an ``a_max x a_max`` table; one row per grid state.
    """
    if kind == "state_scatter":
        rows = []
        for policy, data in inputs.items():
            counts = {}
            items = data if isinstance(data, (list, tuple)) else [data]
            for item in items:
                if isinstance(item, Trajectory):
                    if item.ages.shape[1] != 2:
                        raise ValueError("state scatter needs two-sensor trajectories")
                    for a1, a2 in item.ages:
                        counts[(int(a1), int(a2))] = counts.get((int(a1), int(a2)), 0) + 1
                else:
                    for state, c in dict(item).items():
                        if len(state) != 2:
                            raise ValueError("state scatter needs two-sensor states")
                        counts[tuple(state)] = counts.get(tuple(state), 0) + int(c)
            for (a1, a2), c in sorted(counts.items()):
                rows.append({"A1": a1, "A2": a2, "count": c, "policy": policy})
        _write_csv(path, ("A1", "A2", "count", "policy"), rows)
    elif kind == "policy_surface":
        tables = [np.asarray(t) for t in inputs]
        if not 1 <= len(tables) <= 2:
            raise ValueError("policy_surface takes one or two policy tables")
        shape = tables[0].shape
        if len(shape) != 2 or shape[0] != shape[1] or any(t.shape != shape for t in tables):
            raise ValueError(f"policy tables must share a square shape, got {[t.shape for t in tables]}")
        rows = []
        for a1 in range(1, shape[0] + 1):
            for a2 in range(1, shape[1] + 1):
                rows.append(
                    {
                        "A1": a1,
                        "A2": a2,
                        "n1_lt": int(tables[0][a1 - 1, a2 - 1]),
                        "n1_os": int(tables[1][a1 - 1, a2 - 1]) if len(tables) > 1 else "",
                    }
                )
        _write_csv(path, ("A1", "A2", "n1_lt", "n1_os"), rows)
    else:
        raise ValueError(f"unknown plot data kind {kind!r}")

