"""Execution of nested decoupling runs against a noise backend.

A run is laid out on a wall-clock timeline: the free intervals of the
schedule (scaled by ``t_free``) separated by pulse slots. Whatever part of
``t_run`` is not free evolution is spread over the slots in proportion to
the pulse widths (equally when all pulses are instantaneous), and every
pulse is centred in its slot. With ``t_free == t_run`` the slots vanish and
finite pulses are centred on their nominal instants.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .noise_models import (
    LindbladConfig,
    SpinBathConfig,
    SystemParams,
    hamiltonian_superoperator,
    lindblad_superoperator,
    rotating_frame_hamiltonian,
    sample_bath_hamiltonian,
    unvec,
    vec,
)
from .opalgebra import ControlId, build_control
from .qlinalg import fidelity, hermitian_eig, partial_trace_bath, tensor
from .udd_timing import END, NuddSchedule, build_nudd_schedule

# wall-clock slack when checking pulse overlap, seconds
TIMING_TOL = 1e-15


class WidthExceedsInterval(ValueError):
    pass


class RegimeViolation(ValueError):
    pass


def drive_hamiltonian(control: np.ndarray, width: float) -> np.ndarray:
    """Constant drive whose action over ``width`` is exactly ``control``.

    For a Hermitian involution X, ``exp(-i pi/2 (I - X)) = X``.
    """
    d = control.shape[0]
    return (math.pi / (2.0 * width)) * (np.eye(d) - control)


class LindbladBackend:
    """Markovian T1/T2 noise plus the rotating-frame Hamiltonian on the bare pair."""

    kind = "lindblad"
    bath_dim = 1

    def __init__(self, cfg: LindbladConfig, params: SystemParams | None = None,
                 hamiltonian: np.ndarray | None = None):
        self.cfg = cfg
        self.params = SystemParams() if params is None else params
        self.hamiltonian = (rotating_frame_hamiltonian(self.params)
                            if hamiltonian is None else np.asarray(hamiltonian, dtype=complex))
        self.generator = lindblad_superoperator(cfg, self.hamiltonian)
        self._cache = {}

    def embed(self, rho_sys: np.ndarray) -> np.ndarray:
        return np.array(rho_sys, dtype=complex)

    def system_state(self, state: np.ndarray) -> np.ndarray:
        return state

    def identity(self) -> np.ndarray:
        return np.eye(16, dtype=complex)

    def free_propagator(self, duration: float) -> np.ndarray:
        key = float(duration)
        if key not in self._cache:
            self._cache[key] = expm(self.generator * key) if key else self.identity()
        return self._cache[key]

    def pulse_propagator(self, control: np.ndarray) -> np.ndarray:
        return np.kron(control, control.conj())

    def drive_propagator(self, control: np.ndarray, width: float) -> np.ndarray:
        gen = self.generator + hamiltonian_superoperator(drive_hamiltonian(control, width))
        return expm(gen * width)

    def apply(self, prop: np.ndarray, state: np.ndarray) -> np.ndarray:
        return unvec(prop @ vec(state))


class SpinBathBackend:
    """Closed evolution of the qubit pair and a sampled spin bath.

    The bath starts maximally mixed.
    """

    kind = "spin_bath"

    def __init__(self, cfg: SpinBathConfig, params: SystemParams | None = None,
                 hamiltonian: np.ndarray | None = None):
        self.cfg = cfg
        self.params = params
        self.hamiltonian = (sample_bath_hamiltonian(cfg, params)
                            if hamiltonian is None else np.asarray(hamiltonian, dtype=complex))
        self.bath_dim = self.hamiltonian.shape[0] // 4
        self._w, self._v = hermitian_eig(self.hamiltonian, tol=1e-10)
        self._eye_b = np.eye(self.bath_dim, dtype=complex)

    def embed(self, rho_sys: np.ndarray) -> np.ndarray:
        return tensor(rho_sys, self._eye_b / self.bath_dim)

    def system_state(self, state: np.ndarray) -> np.ndarray:
        return partial_trace_bath(state, self.bath_dim)

    def identity(self) -> np.ndarray:
        return np.eye(4 * self.bath_dim, dtype=complex)

    def free_propagator(self, duration: float) -> np.ndarray:
        return (self._v * np.exp(-1j * self._w * float(duration))) @ self._v.conj().T

    def pulse_propagator(self, control: np.ndarray) -> np.ndarray:
        return tensor(control, self._eye_b)

    def drive_propagator(self, control: np.ndarray, width: float) -> np.ndarray:
        h = self.hamiltonian + tensor(drive_hamiltonian(control, width), self._eye_b)
        w, v = hermitian_eig(h, tol=1e-10)
        return (v * np.exp(-1j * w * width)) @ v.conj().T

    def apply(self, prop: np.ndarray, state: np.ndarray) -> np.ndarray:
        return prop @ state @ prop.conj().T


def evolve_segment(state: np.ndarray, duration: float, backend) -> np.ndarray:
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        return state
    return backend.apply(backend.free_propagator(duration), state)


def apply_pulse(state: np.ndarray, control, backend, width: float = 0.0) -> np.ndarray:
    """Apply a control, instantaneously (``width == 0``) or as a finite drive."""
    x = _control_matrix(control)
    if width < 0:
        raise ValueError("pulse width must be non-negative")
    if width == 0:
        return backend.apply(backend.pulse_propagator(x), state)
    return backend.apply(backend.drive_propagator(x, width), state)


def _control_matrix(control) -> np.ndarray:
    if isinstance(control, np.ndarray):
        return control
    if hasattr(control, "matrix"):
        return control.matrix
    return build_control(control).matrix


@dataclass(frozen=True)
class RunPlan:
    """How one experiment arm is executed.

    ``t_run`` is the wall duration of one run and ``t_free`` the part spent
    in the schedule's free intervals (defaults to ``t_run``).
    ``pulse_widths`` maps control ids to finite widths in seconds; missing
    entries are instantaneous. ``sample_points`` lists the (1-based) runs
    after which the state is recorded.
    """

    schedule: NuddSchedule
    t_run: float
    repetitions: int = 1
    sample_points: Optional[tuple] = None
    t_free: Optional[float] = None
    pulse_widths: dict = field(default_factory=dict)
    idle_controls: bool = False
    mid_run: bool = False

    def __post_init__(self):
        if not self.t_run > 0:
            raise ValueError("t_run must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.t_free is not None and not 0 < self.t_free <= self.t_run * (1 + 1e-12):
            raise ValueError("t_free must lie in (0, t_run]")
        pts = self.points()
        if any(b <= a for a, b in zip(pts, pts[1:])) or pts[0] < 1 or pts[-1] > self.repetitions:
            raise ValueError("sample_points must be strictly increasing within 1..repetitions")

    @property
    def free_time(self) -> float:
        return self.t_run if self.t_free is None else self.t_free

    def points(self) -> tuple:
        if self.sample_points is None:
            return tuple(range(1, self.repetitions + 1))
        return tuple(self.sample_points)


@dataclass(frozen=True)
class Step:
    kind: str  # "free" or "pulse"
    duration: float
    control: Optional[ControlId] = None


def build_timeline(plan: RunPlan) -> list:
    """Wall-clock steps of one run; raises if finite pulses collide."""
    sched = plan.schedule
    t_free = plan.free_time
    deltas = [float(d) for d in sched.deltas]
    pulses = sched.pulses
    n = len(pulses)
    widths = [float(plan.pulse_widths.get(ControlId(p), 0.0)) for p in pulses]
    overhead = max(plan.t_run - t_free, 0.0)
    total_w = sum(widths)
    if total_w > 0:
        slots = [overhead * w / total_w for w in widths]
    else:
        slots = [overhead / n] * n

    steps = []
    cursor = 0.0  # end of previous occupied region
    edge = 0.0  # wall time at the start of the current free interval
    for k in range(n):
        edge += deltas[k] * t_free
        center = edge + slots[k] / 2
        start, stop = center - widths[k] / 2, center + widths[k] / 2
        if start < cursor - TIMING_TOL:
            raise WidthExceedsInterval(
                f"pulse {k + 1} ({pulses[k]}) starts at {start:.6g} s, before the previous "
                f"pulse ends at {cursor:.6g} s")
        steps.append(Step("free", max(start - cursor, 0.0)))
        steps.append(Step("pulse", widths[k], ControlId(pulses[k])))
        cursor = stop
        edge += slots[k]
    edge += deltas[n] * t_free
    if cursor > edge + TIMING_TOL:
        raise WidthExceedsInterval(f"last pulse ends at {cursor:.6g} s, after the run ends")
    steps.append(Step("free", max(edge - cursor, 0.0)))
    return steps


def step_propagator(step: Step, backend, idle: bool = False) -> np.ndarray:
    if step.kind == "free":
        return backend.free_propagator(step.duration)
    x = np.eye(4, dtype=complex) if idle else build_control(step.control).matrix
    if step.duration == 0:
        return backend.identity() if idle else backend.pulse_propagator(x)
    return backend.drive_propagator(x, step.duration)


def run_propagator(plan: RunPlan, backend) -> np.ndarray:
    """Propagator of one full nested run (earliest step applied first)."""
    prop = backend.identity()
    for step in build_timeline(plan):
        prop = step_propagator(step, backend, plan.idle_controls) @ prop
    return prop


@dataclass
class FidelityTrace:
    """Fidelity against the initial state for both arms at the sampled times."""

    rows: list
    states_unprotected: Optional[list] = None
    states_nudd: Optional[list] = None

    HEADER = ("time_s", "fidelity_unprotected", "fidelity_nudd")

    @property
    def times(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def unprotected(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def nudd(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for row in self.rows:
            w.writerow([f"{x:.12g}" for x in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fid(initial: np.ndarray, state: np.ndarray, backend) -> float:
    return fidelity(initial, backend.system_state(state))


def run_nudd(initial: np.ndarray, plan: RunPlan, backend, keep_states: bool = False) -> FidelityTrace:
    """Evolve ``initial`` with and without the nested sequence and record fidelities."""
    initial = np.asarray(initial, dtype=complex)
    start = backend.embed(initial)
    u_run = run_propagator(plan, backend)
    u_free = backend.free_propagator(plan.t_run)
    wanted = set(plan.points())

    rows = [(0.0, _fid(initial, start, backend), _fid(initial, start, backend))]
    kept_u, kept_n = [backend.system_state(start)], [backend.system_state(start)]

    def record(t, s_u, s_n):
        rows.append((t, _fid(initial, s_u, backend), _fid(initial, s_n, backend)))
        if keep_states:
            kept_u.append(backend.system_state(s_u))
            kept_n.append(backend.system_state(s_n))

    s_u = s_n = start
    if plan.mid_run:
        timeline = build_timeline(plan)
        props = [step_propagator(s, backend, plan.idle_controls) for s in timeline]
    for r in range(1, plan.repetitions + 1):
        t0 = (r - 1) * plan.t_run
        if plan.mid_run and r in wanted:
            elapsed = 0.0
            for i, (step, prop) in enumerate(zip(timeline, props)):
                s_n = backend.apply(prop, s_n)
                elapsed += step.duration
                last = i == len(timeline) - 1
                if step.kind == "pulse" or last:
                    t = t0 + (plan.t_run if last else elapsed)
                    if t > rows[-1][0]:
                        record(t, evolve_segment(s_u, t - t0, backend), s_n)
            s_u = backend.apply(u_free, s_u)
            continue
        s_n = backend.apply(u_run, s_n)
        s_u = backend.apply(u_free, s_u)
        if r in wanted:
            record(r * plan.t_run, s_u, s_n)
    if keep_states:
        return FidelityTrace(rows, kept_u, kept_n)
    return FidelityTrace(rows)


@dataclass(frozen=True)
class ProbeResult:
    """Log-log infidelity scaling of both arms; slopes are None when nothing decays."""

    t_grid: tuple
    infidelity_unprotected: tuple
    infidelity_nudd: tuple
    slope_unprotected: Optional[float]
    slope_nudd: Optional[float]

    @property
    def no_decay(self) -> bool:
        return self.slope_unprotected is None

    def describe(self) -> str:
        if self.no_decay:
            return "no decay: 1 - F below 1e-10 on the whole grid"
        return (f"slope unprotected {self.slope_unprotected:.3f}, "
                f"slope nudd {self.slope_nudd:.3f}, "
                f"gain {self.slope_nudd - self.slope_unprotected:.3f} "
                f"(window: unprotected 2 +/- 0.4, gain >= 2)")


NO_DECAY_FLOOR = 1e-10
REGIME_CEILING = 0.1


def decoupling_order_probe(order: int, bath_cfg: SpinBathConfig, t_grid: Sequence[float],
                           seeds: Iterable[int] = range(5), initial: np.ndarray | None = None,
                           params: SystemParams | None = None) -> ProbeResult:
    """Fit ``log(1 - F)`` against ``log(t)`` for one run of duration ``t``.

    Infidelities are averaged over bath seeds before fitting. The state
    defaults to a generic superposition in the protected subspace.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid.size < 3 or np.log10(t_grid[-1] / t_grid[0]) < 1.5:
        raise RegimeViolation("t_grid must hold >= 3 points spanning >= 1.5 decades")
    seeds = list(seeds)
    if initial is None:
        psi = np.array([0, math.cos(0.6), math.sin(0.6) * np.exp(-0.7j), 0])
        initial = np.outer(psi, psi.conj())
    sched = build_nudd_schedule(order)
    inf_u = np.zeros((len(seeds), t_grid.size))
    inf_n = np.zeros_like(inf_u)
    for a, seed in enumerate(seeds):
        backend = SpinBathBackend(replace(bath_cfg, seed=seed), params)
        for b, t in enumerate(t_grid):
            tr = run_nudd(initial, RunPlan(sched, float(t)), backend)
            inf_u[a, b] = 1.0 - tr.rows[-1][1]
            inf_n[a, b] = 1.0 - tr.rows[-1][2]
    worst = max(inf_u.max(), inf_n.max())
    if worst > REGIME_CEILING:
        raise RegimeViolation(f"1 - F reached {worst:.3g} > {REGIME_CEILING}; outside perturbative window")
    mean_u = inf_u.mean(axis=0)
    mean_n = inf_n.mean(axis=0)
    if mean_u.max() < NO_DECAY_FLOOR:
        return ProbeResult(tuple(t_grid), tuple(mean_u), tuple(mean_n), None, None)
    logt = np.log(t_grid)
    slope_u = float(np.polyfit(logt, np.log(np.clip(mean_u, 1e-300, None)), 1)[0])
    slope_n = float(np.polyfit(logt, np.log(np.clip(mean_n, 1e-300, None)), 1)[0])
    return ProbeResult(tuple(t_grid), tuple(mean_u), tuple(mean_n), slope_u, slope_n)
