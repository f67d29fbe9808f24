"""The acceptance suite: eight criteria, each a set of thresholded metrics.

Density solves made while the suite runs are collected; the conservation
criterion is judged on all of them together with dedicated uniform-start
runs on every built-in problem, so it is evaluated last.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import experiments as ex
from . import io as pio
from .pde import collect_fp_reports


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    experiments: tuple
    budget_s: float | None = None


CRITERIA = (
    Criterion(1, "Gradient oracle: functional gradient vs central differences of J", ("gradient_check",), 60.0),
    Criterion(2, "Descent and pointwise monotonicity over 200 Armijo steps", ("descent",), 300.0),
    Criterion(3, "Two-basin counter-example on the quartic double well", ("two_basin",), 300.0),
    Criterion(4, "Exponential rate in the strongly concave regime", ("rate",), 600.0),
    Criterion(5, "Mass conservation and positivity of every density solve", ("conservation",), None),
    Criterion(6, "Monte Carlo vs PDE cost; identity-design regression step", ("mc_consistency",), None),
    Criterion(7, "Regularity, growth, implicit-map and coupling probes", ("regularity_probes",), 600.0),
    Criterion(8, "Second-order refinement of both solvers", ("discretisation_order",), None),
)
_BY_NUMBER = {c.number: c for c in CRITERIA}


@dataclass
class CriterionResult:
    criterion: Criterion
    reports: list = field(default_factory=list)
    wall_s: float = 0.0
    error: str | None = None

    @property
    def passed(self) -> bool:
        if self.error is not None:
            return False
        return all(r.passed for r in self.reports)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        c = self.criterion
        budget = f", budget {c.budget_s:.0f} s" if c.budget_s else ""
        text = f"{verdict}  [{c.number}] {c.title} ({self.wall_s:.1f} s{budget})"
        if self.error:
            text += f" -- error: {self.error}"
        else:
            bad = [m.name for r in self.reports for m in r.failures()]
            if bad:
                text += " -- failed: " + ", ".join(bad)
        return text


def list_criteria() -> list[str]:
    return [f"[{c.number}] {c.title}" + (f" (budget {c.budget_s:.0f} s)" if c.budget_s else "") for c in CRITERIA]


def run_criterion(number: int, overrides: dict | None = None, out_dir=None, fp_reports=()) -> CriterionResult:
    """Run one criterion; ``overrides`` maps experiment setting names to values."""
    crit = _BY_NUMBER[number]
    res = CriterionResult(crit)
    t0 = time.perf_counter()
    try:
        for name in crit.experiments:
            if name == "conservation":
                rep = ex.run_conservation_check(overrides, out_dir, extra_reports=fp_reports)
            else:
                rep = ex.EXPERIMENTS[name](overrides, out_dir)
            res.reports.append(rep)
    except Exception as exc:  # a crash is a failed criterion, reported with its message
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_s = time.perf_counter() - t0
    if crit.budget_s is not None and res.reports:
        res.reports[-1].add("runtime_s", res.wall_s, crit.budget_s, "<")
    return res


def run_acceptance(
    selected=None,
    overrides: dict | None = None,
    out_dir=None,
    echo: Callable[[str], None] | None = print,
) -> list[CriterionResult]:
    """Run the selected criteria (all by default) and return their results in numeric order.

    ``overrides`` maps a criterion number to a settings dictionary.
    """
    numbers = sorted(selected) if selected else [c.number for c in CRITERIA]
    overrides = overrides or {}
    results = {}
    with collect_fp_reports() as bucket:
        for k in [k for k in numbers if k != 5]:
            results[k] = run_criterion(k, overrides.get(k), out_dir)
            if echo:
                echo(results[k].line())
    if 5 in numbers:
        results[5] = run_criterion(5, overrides.get(5), out_dir, fp_reports=list(bucket))
        if echo:
            echo(results[5].line())
    ordered = [results[k] for k in numbers]
    if out_dir is not None:
        write_verdicts(Path(out_dir) / "acceptance.csv", ordered)
    return ordered


def write_verdicts(path, results, digest: str | None = None) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in results:
        rows.append([r.criterion.number, "criterion", "PASS" if r.passed else "FAIL", r.wall_s, r.error or ""])
        for rep in r.reports:
            for m in rep.metrics:
                verdict = "pass" if m.passed else ("info" if m.informational else "FAIL")
                rows.append([r.criterion.number, f"{rep.name}.{m.name}", verdict, m.value, f"{m.op} {m.threshold}"])
    return pio.write_csv(path, ("criterion", "item", "verdict", "value", "detail"), rows, digest)
