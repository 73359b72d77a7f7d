"""Uhrig timing grids and the three-layer nested schedule.

Pulse instants follow ``T_j = T sin^2(j pi / (2N + 2))``. Each layer
subdivides every free interval of the layer above it with the same rule.
Interval fractions are kept as ``fractions.Fraction`` whenever every
``sin^2`` value involved is rational (N = 2 is the case that matters), and
as floats otherwise.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .opalgebra import ControlId

Number = Union[Fraction, float]

END = "End"

# rational values of cos(r*pi) for rational r (Niven), keyed by r mod 2
_RATIONAL_COS = {
    Fraction(0): Fraction(1),
    Fraction(1, 3): Fraction(1, 2),
    Fraction(1, 2): Fraction(0),
    Fraction(2, 3): Fraction(-1, 2),
    Fraction(1): Fraction(-1),
    Fraction(4, 3): Fraction(-1, 2),
    Fraction(3, 2): Fraction(0),
    Fraction(5, 3): Fraction(1, 2),
}


class InvalidOrder(ValueError):
    pass


def sin2_fraction(k: int, n: int) -> Number:
    """``sin^2(k pi / (2n + 2))``, exact when the value is rational."""
    r = Fraction(k, n + 1) % 2
    c = _RATIONAL_COS.get(r)
    if c is not None:
        return (1 - c) / 2
    return math.sin(k * math.pi / (2 * n + 2)) ** 2


def _check_even(n: int) -> None:
    if not isinstance(n, int) or n < 2 or n % 2:
        raise InvalidOrder(f"nested schedules need an even order N >= 2, got {n!r}")


def uhrig_times(n: int, t_total: float = 1.0) -> list:
    """The ``n`` interior pulse instants of a UDD sequence over ``[0, t_total]``."""
    if not isinstance(n, int) or n < 1:
        raise InvalidOrder(f"UDD order must be a positive integer, got {n!r}")
    if t_total <= 0:
        raise ValueError("t_total must be positive")
    return [t_total * sin2_fraction(j, n) for j in range(1, n + 1)]


def _subdivide(start: Number, stop: Number, n: int) -> list:
    """Boundary list ``[start, T_1, ..., T_n, stop]`` of a UDD subdivision."""
    width = stop - start
    return [start] + [start + width * sin2_fraction(k, n) for k in range(1, n + 1)] + [stop]


@dataclass(frozen=True)
class NestedGrid:
    """Pulse instants of the three layers.

    ``outer[j]`` for j = 0..N+1 includes the boundaries 0 and T.
    ``middle[j][k]`` for k = 0..N+1 subdivides ``[outer[j], outer[j+1]]``.
    ``inner[j][k][l]`` for l = 0..N+1 subdivides ``[middle[j][k], middle[j][k+1]]``.
    """

    order: int
    outer: tuple
    middle: tuple
    inner: tuple

    def outer_pulses(self) -> list:
        return list(self.outer[1:-1])

    def middle_pulses(self) -> list:
        return [t for row in self.middle for t in row[1:-1]]

    def inner_pulses(self) -> list:
        return [t for seg in self.inner for row in seg for t in row[1:-1]]


def nested_times(n: int, t_total: Number = 1) -> NestedGrid:
    _check_even(n)
    if t_total <= 0:
        raise ValueError("t_total must be positive")
    outer = _subdivide(0 * t_total, t_total, n)
    middle = []
    inner = []
    for j in range(n + 1):
        mid = _subdivide(outer[j], outer[j + 1], n)
        middle.append(tuple(mid))
        inner.append(tuple(tuple(_subdivide(mid[k], mid[k + 1], n)) for k in range(n + 1)))
    return NestedGrid(n, tuple(outer), tuple(middle), tuple(inner))


@dataclass(frozen=True)
class NuddSchedule:
    """One run of the nested sequence as (interval fraction, following pulse) pairs.

    Event ``i`` means: evolve freely for ``delta_i`` of the run, then apply
    ``pulse_i``. The last pulse is ``END``.
    """

    order: int
    events: tuple

    @property
    def deltas(self) -> list:
        return [d for d, _ in self.events]

    @property
    def pulses(self) -> list:
        return [p for _, p in self.events if p != END]

    def counts(self) -> dict:
        c = Counter(self.pulses)
        return {cid: c.get(cid, 0) for cid in ControlId}

    @property
    def n_pulses(self) -> int:
        return len(self.pulses)

    def cumulative(self) -> list:
        out = []
        acc = 0
        for d, _ in self.events:
            acc = acc + d
            out.append(acc)
        return out

    def pulse_times(self, cid=None) -> list:
        """Instants (as run fractions) of all pulses, or only those of ``cid``."""
        times = []
        for t, (_, p) in zip(self.cumulative(), self.events):
            if p == END:
                continue
            if cid is None or p == ControlId(cid):
                times.append(t)
        return times

    def is_exact(self) -> bool:
        return all(isinstance(d, Fraction) for d in self.deltas)

    def table(self) -> str:
        lines = ["index\tdelta\tcumulative\tpulse"]
        for i, ((d, p), c) in enumerate(zip(self.events, self.cumulative()), start=1):
            lines.append(f"{i}\t{_fmt(d)}\t{_fmt(c)}\t{p}")
        return "\n".join(lines)


def _fmt(x: Number) -> str:
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    return f"{x:.15g}"


def build_nudd_schedule(n: int) -> NuddSchedule:
    """Nested schedule: X0 innermost, X1 middle, Xphi outermost.

    Generated by recursive subdivision, emitting intervals depth-first so
    that the operator order matches the written-out sequence.
    """
    grid = nested_times(n, Fraction(1))
    events = []
    for j in range(n + 1):
        for k in range(n + 1):
            row = grid.inner[j][k]
            for l in range(n + 1):
                delta = row[l + 1] - row[l]
                if l < n:
                    pulse = ControlId.X0
                elif k < n:
                    pulse = ControlId.X1
                elif j < n:
                    pulse = ControlId.XPHI
                else:
                    pulse = END
                events.append((delta, pulse))
    return NuddSchedule(n, tuple(events))


def pulse_count_formula(n: int) -> int:
    """Pulses in one run of an order-``n`` nested sequence, ``n((n+1)^2 + n + 2)``."""
    _check_even(n)
    return n * ((n + 1) ** 2 + n + 2)
