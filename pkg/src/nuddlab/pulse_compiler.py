"""Compile the control involutions into NMR-style native gate programs.

Native gates are selective rotations ``exp(-i angle/2 (cos phi X + sin phi Y))``
on one qubit and free scalar-coupling evolution ``exp(-i 2 pi J t Iz Iz)``.
Rotations that share a block run simultaneously and are centred on the
block. Correctness of a program is judged by global-phase equivalence of
the ideal gate product with the target matrix.

Decompositions used here:

* ``X0 ~ Rz1(-pi/2) Rz2(pi/2) ZZ(tau12)``, ``X1`` is the same with both
  z-rotation senses flipped. A z rotation is a sandwich of three pi/2
  pulses whose middle pulse carries the variable phase (x / -x on qubit 1,
  y / -y on qubit 2), so X1 differs from X0 only by negating those phases.
* ``Xphi = Z1 SWAP Z1`` with ``SWAP ~ exp(-i pi/4 (XX + YY + ZZ))``, each
  term obtained from one tau12 delay by basis-changing pi/2 pulses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .noise_models import IZ, SX, SY, SystemParams, on_qubit
from .opalgebra import ControlId, build_control
from .qlinalg import NotUnitary, as_matrix, is_unitary
from .udd_timing import NuddSchedule

PI = math.pi
# 90-degree pulse lengths of the two rf channels, seconds
DEFAULT_PW90 = (7.6e-6, 15.6e-6)
VERIFY_TOL = 1e-10

# axis phases in radians
X_, Y_, MX, MY = 0.0, PI / 2, PI, -PI / 2


class CompilationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class NativeGate:
    kind: str  # "rotation", "zz_delay" or "barrier"
    qubit: Optional[int] = None
    phase: float = 0.0
    angle: float = 0.0
    width: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rotation", "zz_delay", "barrier"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.width < 0:
            raise ValueError("gate width must be non-negative")
        if self.kind == "rotation":
            if self.qubit not in (1, 2):
                raise ValueError("rotation qubit must be 1 or 2")
            if not -2 * PI < self.angle <= 2 * PI:
                raise ValueError("rotation angle must lie in (-2pi, 2pi]")

    @property
    def duration(self) -> float:
        return self.width

    def unitary(self, j12: float) -> np.ndarray:
        if self.kind == "rotation":
            axis = math.cos(self.phase) * SX + math.sin(self.phase) * SY
            r = math.cos(self.angle / 2) * np.eye(2) - 1j * math.sin(self.angle / 2) * axis
            return on_qubit(r, self.qubit)
        if self.kind == "zz_delay":
            zz = np.diag(on_qubit(IZ, 1) @ on_qubit(IZ, 2)).real
            return np.diag(np.exp(-1j * 2 * PI * j12 * self.width * zz))
        return np.eye(4, dtype=complex)


def rotation(qubit: int, phase: float, angle: float, pw90: tuple) -> NativeGate:
    return NativeGate("rotation", qubit, phase, angle, abs(angle) / (PI / 2) * pw90[qubit - 1])


@dataclass(frozen=True)
class PulseProgram:
    """Native gates with their start times, in execution order."""

    target: ControlId
    gates: tuple
    starts: tuple
    total_duration: float
    j12: float

    def unitary(self) -> np.ndarray:
        u = np.eye(4, dtype=complex)
        for g in self.gates:
            u = g.unitary(self.j12) @ u
        return u

    def rf_on_time(self) -> float:
        """Length of the union of all rotation intervals."""
        spans = sorted((s, s + g.width) for g, s in zip(self.gates, self.starts) if g.kind == "rotation")
        total, cur_a, cur_b = 0.0, None, None
        for a, b in spans:
            if cur_b is None or a > cur_b:
                if cur_b is not None:
                    total += cur_b - cur_a
                cur_a, cur_b = a, b
            else:
                cur_b = max(cur_b, b)
        if cur_b is not None:
            total += cur_b - cur_a
        return total

    def check_overlaps(self) -> None:
        for q in (1, 2):
            spans = sorted((s, s + g.width) for g, s in zip(self.gates, self.starts)
                           if g.kind == "rotation" and g.qubit == q)
            for (a0, b0), (a1, _) in zip(spans, spans[1:]):
                if a1 < b0 - 1e-15:
                    raise ValueError(f"overlapping rotations on qubit {q} at {a1:.3e} s")

    def table(self) -> str:
        lines = ["start_us\tqubit\tphase_deg\tangle_deg\twidth_us"]
        for g, s in zip(self.gates, self.starts):
            if g.kind == "rotation":
                lines.append(f"{s * 1e6:.4f}\t{g.qubit}\t{math.degrees(g.phase) % 360:.1f}\t"
                             f"{math.degrees(g.angle):.1f}\t{g.width * 1e6:.4f}")
            elif g.kind == "zz_delay":
                lines.append(f"{s * 1e6:.4f}\tzz\t-\t-\t{g.width * 1e6:.4f}")
            else:
                lines.append(f"{s * 1e6:.4f}\tbarrier\t-\t-\t0")
        return "\n".join(lines)


def _layout(target: ControlId, blocks: list, j12: float) -> PulseProgram:
    """Sequence blocks in time; rotations inside a block are centred."""
    gates, starts = [], []
    t = 0.0
    for block in blocks:
        if isinstance(block, NativeGate):
            gates.append(block)
            starts.append(t)
            t += block.width
            continue
        if len({g.qubit for g in block}) != len(block):
            raise ValueError("a block may hold at most one rotation per qubit")
        span = max(g.width for g in block)
        for g in block:
            gates.append(g)
            starts.append(t + (span - g.width) / 2)
        t += span
    prog = PulseProgram(target, tuple(gates), tuple(starts), t, j12)
    prog.check_overlaps()
    return prog


def _both(phase: float, angle: float, pw90: tuple) -> list:
    return [rotation(1, phase, angle, pw90), rotation(2, phase, angle, pw90)]


def _blocks_x0_x1(phi1: float, phi2: float, tau: float, pw90: tuple) -> list:
    h = PI / 2
    return [
        [rotation(1, MY, h, pw90), rotation(2, MX, h, pw90)],
        [rotation(1, phi1, h, pw90), rotation(2, phi2, h, pw90)],
        [rotation(1, Y_, h, pw90), rotation(2, X_, h, pw90)],
        NativeGate("zz_delay", width=tau),
    ]


def _blocks_xphi(tau: float, pw90: tuple) -> list:
    h = PI / 2
    z1 = [[rotation(1, X_, PI, pw90)], [rotation(1, Y_, PI, pw90)]]
    delay = NativeGate("zz_delay", width=tau)
    return (
        z1
        + [_both(X_, h, pw90), delay, _both(MX, h, pw90)]    # YY
        + [_both(MY, h, pw90), delay, _both(Y_, h, pw90)]    # XX
        + [delay]                                            # ZZ
        + z1
    )


def compile_control(cid, params: SystemParams | None = None, pw90: tuple = DEFAULT_PW90) -> PulseProgram:
    """Native program for a control involution, verified against its matrix."""
    cid = ControlId(cid)
    params = SystemParams() if params is None else params
    if not params.j12 > 0:
        raise ValueError("compilation needs a positive scalar coupling j12")
    tau = 1.0 / (2.0 * params.j12)
    if cid is ControlId.X0:
        blocks = _blocks_x0_x1(X_, Y_, tau, pw90)
    elif cid is ControlId.X1:
        blocks = _blocks_x0_x1(MX, MY, tau, pw90)
    else:
        blocks = _blocks_xphi(tau, pw90)
    prog = _layout(cid, blocks, params.j12)
    dev = phase_deviation(prog.unitary(), build_control(cid).matrix)
    if dev > VERIFY_TOL:
        raise CompilationFailed(f"{cid}: compiled unitary deviates by {dev:.3e}")
    return prog


def phase_deviation(u, v) -> float:
    """``max |u - e^{i a} v|`` minimised over the global phase ``a``."""
    u = as_matrix(u)
    v = as_matrix(v)
    ov = np.trace(v.conj().T @ u)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    return float(np.max(np.abs(u - phase * v)))


def phase_equivalent(u, v, tol: float = 1e-9) -> bool:
    """True iff ``|tr(u^dag v)| = dim`` within ``tol``."""
    u = as_matrix(u)
    v = as_matrix(v)
    if u.shape != v.shape:
        raise ValueError("shape mismatch")
    for m in (u, v):
        if not is_unitary(m):
            raise NotUnitary("phase_equivalent needs unitary inputs")
    return abs(abs(np.trace(u.conj().T @ v)) - u.shape[0]) <= tol


def compile_all(params: SystemParams | None = None, pw90: tuple = DEFAULT_PW90) -> dict:
    return {cid: compile_control(cid, params, pw90) for cid in ControlId}


@dataclass
class FeasibilityReport:
    t_run: float
    min_free_interval: float
    program_durations: dict
    feasible: bool
    duty_cycle: float
    violations: list = field(default_factory=list)

    def lines(self) -> list:
        out = [f"t_run_s\t{self.t_run:.6g}",
               f"min_free_interval_s\t{self.min_free_interval:.6g}"]
        for cid, d in self.program_durations.items():
            out.append(f"duration_{cid}_s\t{d:.6g}")
        out.append(f"duty_cycle\t{self.duty_cycle:.6g}")
        out.append(f"feasible\t{self.feasible}")
        out.extend(f"violation\t{v}" for v in self.violations[:5])
        return out


def schedule_feasibility(schedule: NuddSchedule, t_run: float, programs: dict) -> FeasibilityReport:
    """Check that every centred program fits between its neighbours.

    Pulse instants are taken at their nominal positions inside a run of
    length ``t_run``; consecutive programs must satisfy
    ``(w_k + w_{k+1}) / 2 <= interval``, and the first and last must stay
    inside the run.
    """
    durations = {ControlId(c): float(p.total_duration) for c, p in programs.items()}
    rf = {ControlId(c): float(p.rf_on_time()) for c, p in programs.items()}
    intervals = [float(d) * t_run for d in schedule.deltas]
    widths = [durations.get(ControlId(p), 0.0) for p in schedule.pulses]
    need = ([widths[0] / 2]
            + [(a + b) / 2 for a, b in zip(widths, widths[1:])]
            + [widths[-1] / 2])
    violations = [f"interval {i + 1}: needs {n:.4g} s, has {have:.4g} s"
                  for i, (n, have) in enumerate(zip(need, intervals)) if n > have]
    rf_total = sum(rf.get(ControlId(p), 0.0) for p in schedule.pulses)
    return FeasibilityReport(
        t_run=t_run,
        min_free_interval=min(intervals),
        program_durations=durations,
        feasible=not violations,
        duty_cycle=rf_total / t_run,
        violations=violations,
    )
