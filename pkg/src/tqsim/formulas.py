"""Closed-form quantities of the timed-quorum construction.

All the sizing and probability formulas live here: quorum size, the churn
inflation factor D, dissemination-tree geometry, replica decay floors and
the consultation miss bound. Everything is a pure function of its inputs;
the simulator and the CLI both call into this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class ParameterError(ValueError):
    """A configuration violates one of the model's bounds."""


@dataclass(frozen=True)
class SystemParams:
    """Run parameters: population size n, churn fraction c per time unit,
    quorum lifetime delta, confidence parameter beta, branching factor k."""

    n: int
    c: float
    delta: float
    beta: float
    k: int

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ParameterError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.n < 1:
            out.append(f"n must be >= 1 (got {self.n})")
        if not 0.0 <= self.c < 1.0:
            out.append(f"churn c must be in [0, 1) (got {self.c})")
        if self.delta <= 0:
            out.append(f"delta must be positive (got {self.delta})")
        if self.beta <= 0:
            out.append(f"beta must be positive (got {self.beta})")
        if self.k < 1:
            out.append(f"branching k must be >= 1 (got {self.k})")
        return out


def quorum_size_raw(p: SystemParams) -> float:
    """Un-ceiled quorum size beta*sqrt(n) / (1-c)^(delta/2).

    Exposed separately because the miss-bound identity e^(-beta^2) holds
    exactly only for this real-valued form.
    """
    return p.beta * math.sqrt(p.n) / (1.0 - p.c) ** (p.delta / 2.0)


def quorum_size(p: SystemParams) -> int:
    """Quorum size q = ceil(beta*sqrt(n) / (1-c)^(delta/2)).

    Ceiling, not rounding: the guarantees need at least the formula value.
    Raises ParameterError when the result exceeds n, since a quorum cannot
    be larger than the population.
    """
    p.validate()
    raw = quorum_size_raw(p)
    nearest = round(raw)
    # Guard against float overshoot turning an exact integer into ceil+1.
    q = nearest if abs(raw - nearest) < 1e-9 else math.ceil(raw)
    if q > p.n:
        raise ParameterError(f"quorum size {q} exceeds population n={p.n}")
    return max(q, 1)


def d_factor(c: float, delta: float) -> float:
    """Churn inflation factor D = (1-c)^(-delta); 1 when there is no churn."""
    return (1.0 - c) ** (-delta)


def tree_size(k: int, depth: int) -> int:
    """Number of nodes reached by a dissemination of branching k and depth
    `depth`: (k^(depth+1) - 1) / (k - 1), the size of a balanced tree where
    every node contacts k children.

    For k = 1 the closed form is 0/0; the geometric-sum limit depth+1 (a
    chain) is used instead.
    """
    if k < 1:
        raise ParameterError(f"branching k must be >= 1 (got {k})")
    if depth < 0:
        raise ParameterError(f"depth must be >= 0 (got {depth})")
    if k == 1:
        return depth + 1
    return (k ** (depth + 1) - 1) // (k - 1)


def dissemination_depth(q: int, k: int) -> int:
    """Smallest depth whose dissemination tree covers at least q nodes."""
    if q < 1:
        raise ParameterError(f"quorum size must be >= 1 (got {q})")
    depth = 0
    while tree_size(k, depth) < q:
        depth += 1
    return depth


def replaced_ratio(c: float, tau: float) -> float:
    """Fraction of an initial node set replaced after tau time units of
    churn c: 1 - (1-c)^tau."""
    return 1.0 - (1.0 - c) ** tau


def min_uptodate_replicas(q: int, c: float, delta: float) -> float:
    """Lower bound on nodes holding an up-to-date value when a propagation
    to q nodes starts at least every delta time units: q * (1-c)^delta."""
    return q * (1.0 - c) ** delta


def consultation_miss_bound(p: SystemParams, q: float) -> float:
    """Upper bound on the probability that a consultation of q uniformly
    drawn nodes misses every up-to-date replica: exp(-(q^2/n) * (1-c)^delta).

    With q equal to the un-ceiled quorum size this is exactly e^(-beta^2).
    Accepts a real-valued q so that identity can be checked directly.
    """
    return math.exp(-(q * q / p.n) * (1.0 - p.c) ** p.delta)
