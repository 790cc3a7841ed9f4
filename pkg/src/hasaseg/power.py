"""Measurement accuracy needed to detect a group difference in volume change.

Two groups (cases, controls) are scanned twice; each patient's measured volume
change carries independent error from both timepoints. ``required_epsilon`` is
the closed-form bound, ``monte_carlo_power`` checks it by simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Accuracies quoted for n = (240, 10000), keyed by z.
STATED_ACCURACY = {1.96: 0.9447, 1.645: 0.9341}


@dataclass(frozen=True)
class PowerSpec:
    n_cases: int = 240
    n_controls: int = 10_000
    z: float = 1.96
    effect: float = 0.10
    eps: float = 0.0
    trials: int = 10_000
    v_avg: float = 20_000.0

    def __post_init__(self):
        if self.n_cases < 1 or self.n_controls < 1:
            raise ValueError("group sizes must be positive integers")
        if not self.z > 0:
            raise ValueError("z must be > 0")
        if self.eps < 0 or self.v_avg <= 0:
            raise ValueError("eps must be >= 0 and v_avg > 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def se_factor(n_cases: float, n_controls: float) -> float:
    if not (n_cases > 0 and n_controls > 0):
        raise ValueError("group sizes must be positive")
    return math.sqrt(2.0 / n_cases + 2.0 / n_controls)


def required_epsilon(spec: PowerSpec) -> float:
    """Largest relative error per measurement at which the effect still clears z."""
    return spec.effect / (spec.z * se_factor(spec.n_cases, spec.n_controls))


def required_accuracy(spec: PowerSpec) -> float:
    return 1.0 - required_epsilon(spec)


def monte_carlo_power(spec: PowerSpec, seed: int = 0, chunk: int = 250) -> float:
    """Fraction of simulated studies in which a one-sided z-test detects the effect.

    Each patient's change is ``true_change + noise`` with noise sd
    ``sqrt(2) * eps * V``; cases have true change ``effect * V``, controls 0. The
    test uses the known measurement sd, as the closed-form bound does.
    """
    if spec.trials < 1000:
        raise ValueError("monte_carlo_power needs at least 1000 trials")
    v = spec.v_avg
    sd = math.sqrt(2.0) * spec.eps * v
    se = spec.eps * v * se_factor(spec.n_cases, spec.n_controls)
    seeds = np.random.SeedSequence(seed).spawn(math.ceil(spec.trials / chunk))
    detected = 0
    done = 0
    for ss in seeds:
        m = min(chunk, spec.trials - done)
        rng = np.random.default_rng(ss)
        cases = spec.effect * v + sd * rng.standard_normal((m, spec.n_cases))
        controls = sd * rng.standard_normal((m, spec.n_controls))
        diff = cases.mean(axis=1) - controls.mean(axis=1)
        if se == 0:
            detected += int(np.sum(diff > 0))
        else:
            detected += int(np.sum(diff / se > spec.z))
        done += m
    return detected / spec.trials


def power_rows(n_cases: int, n_controls: int, zs=(1.96, 1.645), effect: float = 0.10,
               trials: int = 10_000, seed: int = 0) -> list[dict]:
    """One row per z: closed-form bound, both readings of it, simulated detection rates."""
    rows = []
    for z in zs:
        base = PowerSpec(n_cases, n_controls, z, effect, trials=trials)
        eps = required_epsilon(base)
        stated = STATED_ACCURACY.get(z) if (n_cases, n_controls) == (240, 10_000) else None
        rows.append({
            "n_cases": n_cases,
            "n_controls": n_controls,
            "z": z,
            "se_factor": se_factor(n_cases, n_controls),
            "eps_formula": eps,
            "accuracy_formula": 1.0 - eps,
            "accuracy_tenfold": 1.0 - eps / 10.0,
            "accuracy_stated": stated,
            "power_at_eps": monte_carlo_power(
                PowerSpec(n_cases, n_controls, z, effect, eps, trials), seed),
            "power_at_eps_tenth": monte_carlo_power(
                PowerSpec(n_cases, n_controls, z, effect, eps / 10.0, trials), seed),
        })
    return rows


def format_power_table(rows: list[dict]) -> str:
    cols = ["n_cases", "n_controls", "z", "se_factor", "eps_formula", "accuracy_formula",
            "accuracy_tenfold", "accuracy_stated", "power_at_eps", "power_at_eps_tenth"]

    def fmt(v, digits=4):
        if v is None:
            return "-"
        if isinstance(v, int):
            return str(v)
        return f"{v:.{digits}f}"

    cells = [cols] + [[fmt(r[c], 5 if c == "se_factor" else 4) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
