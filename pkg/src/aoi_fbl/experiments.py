"""Policy comparison runs and reference-table reproduction reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiment_io import ResultRecord, fmt_float
from .simulation import POLICY_NAMES, Scenario, make_policy, monte_carlo

# Reference values, keyed by scenario name then policy. None marks an N/A cell
# (policy infeasible for the scenario).
REFERENCE_N1 = {
    "scenario1": {"minper": 402, "uniform": 250},
    "scenario2": {"minper": 442, "uniform": 250},
    "scenario3": {"minper": 411, "uniform": 250},
    "scenario4": {"minper": 250, "uniform": 250},
}

REFERENCE_DISCOUNTED = {  # (delta_D_mean, var_D)
    "scenario1": {"mdp": (1.1808, 3.6537e-3), "onestep": (1.2383, 3.5642e-3), "minper": (1.2397, 3.0787e-3), "uniform": None},
    "scenario2": {"mdp": (0.64029, 8.4297e-4), "onestep": (0.68276, 9.5663e-4), "minper": (0.68036, 5.9690e-4), "uniform": None},
    "scenario3": {
        "mdp": (5.9570e-3, 2.7321e-10),
        "onestep": (6.3155e-3, 1.1603e-9),
        "minper": (6.3148e-3, 3.9019e-10),
        "uniform": (0.27194, 8.0836e-5),
    },
    "scenario4": {
        "mdp": (0.0117, 6.0254e-10),
        "onestep": (0.0117, 1.9271e-9),
        "minper": (0.0117, 2.5542e-9),
        "uniform": (0.0117, 1.5954e-9),
    },
}

REFERENCE_INSTANT = {  # (delta_mean_abs_A, var_abs_A)
    "scenario1": {"mdp": (0.11751, 1.2484e-1), "onestep": (0.12476, 1.3137e-1), "minper": (0.12436, 1.3338e-1), "uniform": None},
    "scenario2": {"mdp": (6.4327e-2, 6.7281e-2), "onestep": (6.8890e-2, 7.1667e-2), "minper": (6.8287e-2, 7.1265e-2), "uniform": None},
    "scenario3": {
        "mdp": (5.1497e-4, 5.1464e-4),
        "onestep": (6.3155e-4, 6.8602e-4),
        "minper": (6.3148e-4, 5.9435e-4),
        "uniform": (2.7481e-2, 2.8254e-2),
    },
    "scenario4": {
        "mdp": (1.1856e-3, 1.1843e-3),
        "onestep": (1.3174e-3, 1.1316e-3),
        "minper": (1.1058e-3, 1.1047e-3),
        "uniform": (1.1816e-3, 1.1880e-3),
    },
}

N1_ABS_TOL = 1
N1_FALLBACK_REL_TOL = 0.02
MEAN_REL_TOL = 0.10
VAR_FACTOR = 3.0


@dataclass
class PolicyRun:
    policy: object
    record: ResultRecord


def compare_policies(scenario: Scenario, seed: int = 0, *, mdp_policy=None, estimator="conditional", keep_states=False):
    """Run every policy on common per-trial seeds. Returns ``{name: PolicyRun}``."""
    runs = {}
    for name in POLICY_NAMES:
        if name == "mdp" and mdp_policy is not None:
            policy = mdp_policy
        else:
            policy = make_policy(name, scenario).fit()
        metrics = monte_carlo(scenario, policy, seed, estimator=estimator, keep_states=keep_states)
        n1 = int(policy.predict(np.asarray([scenario.initial_ages]))[0, 0])
        record = ResultRecord(
            scenario.name, name, metrics, n1, seed, metadata={"common_random_numbers": True}
        )
        runs[name] = PolicyRun(policy, record)
    return runs


@dataclass
class ReportCell:
    table: int
    scenario: str
    policy: str
    quantity: str
    reference: float | None
    reproduced: float
    tolerance: str
    status: str  # pass | fallback | fail | info

    @property
    def rel_deviation(self):
        if self.reference is None or self.reference == 0:
            return None
        return (self.reproduced - self.reference) / self.reference

    def row(self) -> dict:
        dev = self.rel_deviation
        return {
            "table": self.table,
            "scenario": self.scenario,
            "policy": self.policy,
            "quantity": self.quantity,
            "reference": "N/A" if self.reference is None else fmt_float(self.reference),
            "reproduced": fmt_float(self.reproduced),
            "rel_deviation": "" if dev is None else fmt_float(dev),
            "tolerance": self.tolerance,
            "status": self.status,
            "provenance": f"reference table {self.table}, {self.scenario} / {self.policy}",
        }


REPORT_COLUMNS = (
    "table",
    "scenario",
    "policy",
    "quantity",
    "reference",
    "reproduced",
    "rel_deviation",
    "tolerance",
    "status",
    "provenance",
)


def n1_cell(scenario: str, policy: str, n1: int) -> ReportCell:
    ref = REFERENCE_N1[scenario][policy]
    if abs(n1 - ref) <= N1_ABS_TOL:
        status = "pass"
    elif abs(n1 - ref) <= N1_FALLBACK_REL_TOL * ref:
        status = "fallback"
    else:
        status = "fail"
    return ReportCell(2, scenario, policy, "n1", ref, n1, f"+-{N1_ABS_TOL} (fallback +-{N1_FALLBACK_REL_TOL:.0%})", status)


def mean_cell(table, scenario, policy, quantity, ref, value) -> ReportCell:
    ok = abs(value - ref) <= MEAN_REL_TOL * abs(ref)
    return ReportCell(table, scenario, policy, quantity, ref, value, f"+-{MEAN_REL_TOL:.0%} rel", "pass" if ok else "fail")


def var_cell(table, scenario, policy, quantity, ref, value, counted=True) -> ReportCell:
    ok = value > 0 and ref / VAR_FACTOR <= value <= ref * VAR_FACTOR
    status = ("pass" if ok else "fail") if counted else "info"
    return ReportCell(table, scenario, policy, quantity, ref, value, f"factor {VAR_FACTOR:g}", status)


def infeasible_cell(table, scenario, policy, quantity, feasible, value) -> ReportCell:
    return ReportCell(table, scenario, policy, quantity, None, value, "flagged infeasible", "fail" if feasible else "pass")


def table2_cells(scenarios) -> list[ReportCell]:
    cells = []
    for sc in scenarios:
        if sc.name not in REFERENCE_N1:
            continue
        for policy in ("minper", "uniform"):
            n1 = int(make_policy(policy, sc).fit().predict([list(sc.initial_ages)])[0, 0])
            cells.append(n1_cell(sc.name, policy, n1))
    return cells


def mc_cells(tables, runs_by_scenario) -> list[ReportCell]:
    cells = []
    for sc_name, runs in runs_by_scenario.items():
        for policy, run in runs.items():
            m = run.record.metrics
            if 3 in tables and sc_name in REFERENCE_DISCOUNTED:
                ref = REFERENCE_DISCOUNTED[sc_name][policy]
                if ref is None:
                    cells.append(infeasible_cell(3, sc_name, policy, "delta_D_mean", m.feasible, m.delta_D_mean))
                else:
                    cells.append(mean_cell(3, sc_name, policy, "delta_D_mean", ref[0], m.delta_D_mean))
                    cells.append(var_cell(3, sc_name, policy, "var_D", ref[1], m.var_D))
            if 4 in tables and sc_name in REFERENCE_INSTANT:
                ref = REFERENCE_INSTANT[sc_name][policy]
                if ref is None:
                    cells.append(infeasible_cell(4, sc_name, policy, "delta_mean_abs_A", m.feasible, m.delta_mean_abs_A))
                else:
                    cells.append(mean_cell(4, sc_name, policy, "delta_mean_abs_A", ref[0], m.delta_mean_abs_A))
                    cells.append(var_cell(4, sc_name, policy, "var_abs_A", ref[1], m.var_abs_A, counted=False))
    return cells


def write_report(cells, out_dir, meta: dict):
    out_dir = Path(out_dir)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
    writer.writeheader()
    writer.writerows(c.row() for c in cells)
    (out_dir / "report.csv").write_text(buf.getvalue())
    summary = {
        "metadata": meta,
        "cells": [c.row() for c in cells],
        "failed": sum(c.status == "fail" for c in cells),
        "fallback": sum(c.status == "fallback" for c in cells),
    }
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def format_report(cells) -> str:
    lines = [f"{'tab':>3} {'scenario':<10} {'policy':<8} {'quantity':<17} {'reference':>12} {'reproduced':>12} {'dev':>8}  status"]
    for c in cells:
        dev = c.rel_deviation
        ref = "N/A" if c.reference is None else f"{c.reference:.5g}"
        d = "" if dev is None or not math.isfinite(dev) else f"{dev:+.1%}"
        lines.append(
            f"{c.table:>3} {c.scenario:<10} {c.policy:<8} {c.quantity:<17} {ref:>12} {c.reproduced:>12.5g} {d:>8}  {c.status}"
        )
    return "\n".join(lines)
