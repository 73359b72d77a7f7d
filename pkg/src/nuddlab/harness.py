"""Experiment orchestration: configuration, protocol runs, batches, summaries, self-checks."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .engine import (
    FidelityTrace,
    LindbladBackend,
    RunPlan,
    SpinBathBackend,
    decoupling_order_probe,
    run_nudd,
)
from .noise_models import (
    LindbladConfig,
    SpinBathConfig,
    SystemParams,
    choi_matrix,
    lindblad_superoperator,
    rotating_frame_hamiltonian,
)
from .opalgebra import (
    ControlId,
    build_control,
    build_y_basis,
    commutation_table,
    layer_reduction_mismatches,
)
from .pulse_compiler import DEFAULT_PW90, compile_all, phase_deviation
from .qlinalg import check_density_matrix, fidelity
from .states import FIXTURES, StateSpec, prepare_state, state_vector, subspace_angles
from .tomography import mle_reconstruct, simulate_measurements
from .udd_timing import build_nudd_schedule, pulse_count_formula

ENV_PREFIX = "NUDDLAB_"
PULSE_MODES = ("instantaneous", "compiled_finite")
DECAY_THRESHOLD = 0.5
PROTECTED_FLOOR = 0.8


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config

_LINDBLAD_FIELDS = {f.name for f in dataclasses.fields(LindbladConfig)}
_BATH_FIELDS = {f.name for f in dataclasses.fields(SpinBathConfig)}


def _number(x):
    if isinstance(x, str):
        return float(x)  # accepts "inf"
    return x


def parse_noise(d: Optional[dict]):
    """``{"backend": "lindblad" | "spin_bath" | "none", ...fields}`` -> config object."""
    if d is None:
        return None
    d = dict(d)
    backend = d.pop("backend", None)
    if backend == "none":
        if d:
            raise ConfigError(f"backend 'none' takes no fields, got {sorted(d)}")
        return None
    if backend == "lindblad":
        allowed = _LINDBLAD_FIELDS
        cls = LindbladConfig
    elif backend == "spin_bath":
        allowed = _BATH_FIELDS
        cls = SpinBathConfig
    else:
        raise ConfigError(f"noise.backend must be 'lindblad', 'spin_bath' or 'none', got {backend!r}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {backend} fields: {sorted(unknown)}")
    return cls(**{k: _number(v) for k, v in d.items()})


def noise_to_dict(noise) -> dict:
    if noise is None:
        return {"backend": "none"}
    backend = "lindblad" if isinstance(noise, LindbladConfig) else "spin_bath"
    out = {"backend": backend}
    for k, v in dataclasses.asdict(noise).items():
        out[k] = "inf" if isinstance(v, float) and math.isinf(v) else v
    return out


def _default_noise() -> LindbladConfig:
    # placeholder relaxation times (s): dephasing-dominant, same T1 on both qubits
    return LindbladConfig(t1_q1=5.0, t1_q2=5.0, t2_q1=2.5, t2_q2=2.0)


def _default_system() -> SystemParams:
    # small unequal resonance offsets (Hz) give the coherent term the sequence refocuses
    return SystemParams(nu_h=0.15, nu_c=-0.1, j12=215.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """One protection experiment; JSON field names match the attribute names."""

    state: StateSpec = field(default_factory=lambda: StateSpec.named("01"))
    noise: object = field(default_factory=_default_noise)
    system: SystemParams = field(default_factory=_default_system)
    order_n: int = 2
    t_run: float = 0.12756
    t_free: Optional[float] = 0.05
    repetitions: int = 40
    sample_points: Optional[tuple] = None
    pulse_mode: str = "instantaneous"
    pw90_s: tuple = DEFAULT_PW90
    pseudopure_epsilon: float = 0.0
    output_path: str = "trace.csv"
    seed: int = 0
    with_tomography: bool = False
    tomography_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.t_run > 0:
            raise ConfigError("t_run must be positive")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.order_n < 2 or self.order_n % 2:
            raise ConfigError("order_n must be a positive even integer")
        if self.pulse_mode not in PULSE_MODES:
            raise ConfigError(f"pulse_mode must be one of {PULSE_MODES}")
        if self.pseudopure_epsilon < 0 or self.pseudopure_epsilon > 1:
            raise ConfigError("pseudopure_epsilon must lie in [0, 1]")
        if self.tomography_noise_sigma < 0:
            raise ConfigError("tomography_noise_sigma must be >= 0")
        if self.noise is not None and not isinstance(self.noise, (LindbladConfig, SpinBathConfig)):
            raise ConfigError("noise must be a LindbladConfig, SpinBathConfig or None")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        if "state" in kw:
            kw["state"] = StateSpec.from_dict(kw["state"])
        if "noise" in kw:
            kw["noise"] = parse_noise(kw["noise"])
        if "system" in kw:
            extra = set(kw["system"]) - {"nu_h", "nu_c", "j12"}
            if extra:
                raise ConfigError(f"unknown system fields: {sorted(extra)}")
            kw["system"] = SystemParams(**kw["system"])
        if kw.get("sample_points") is not None:
            kw["sample_points"] = tuple(int(p) for p in kw["sample_points"])
        if "pw90_s" in kw:
            kw["pw90_s"] = tuple(float(p) for p in kw["pw90_s"])
        if kw.get("t_free") is not None:
            kw["t_free"] = float(kw["t_free"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "state": self.state.to_dict(),
            "noise": noise_to_dict(self.noise),
            "system": dataclasses.asdict(self.system),
            "order_n": self.order_n,
            "t_run": self.t_run,
            "t_free": self.t_free,
            "repetitions": self.repetitions,
            "sample_points": None if self.sample_points is None else list(self.sample_points),
            "pulse_mode": self.pulse_mode,
            "pw90_s": list(self.pw90_s),
            "pseudopure_epsilon": self.pseudopure_epsilon,
            "output_path": self.output_path,
            "seed": self.seed,
            "with_tomography": self.with_tomography,
            "tomography_noise_sigma": self.tomography_noise_sigma,
        }


def _env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(d: dict, environ=None) -> dict:
    """Overlay ``NUDDLAB_<FIELD>`` variables; ``__`` separates nested keys.

    ``NUDDLAB_T_RUN=0.2`` sets ``t_run``; ``NUDDLAB_NOISE__T2_Q1=0.3`` sets
    ``noise.t2_q1``. Values are parsed as JSON when possible.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(d))
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        target = out
        for p in path[:-1]:
            if not isinstance(target.get(p), dict):
                target[p] = {}
            target = target[p]
        target[path[-1]] = _env_value(environ[key])
    return out


def load_config(path=None, environ=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """File, then environment, then explicit overrides (highest precedence)."""
    d = ExperimentConfig().to_dict()
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(user) - set(d)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d.update(user)
    d = apply_env_overrides(d, environ)
    d.update(overrides or {})
    return ExperimentConfig.from_dict(d)


# --------------------------------------------------------------------------- runs

def build_backend(cfg: ExperimentConfig):
    noise = cfg.noise
    if noise is None:
        noise = LindbladConfig(math.inf, math.inf, math.inf, math.inf)
    if isinstance(noise, LindbladConfig):
        return LindbladBackend(noise, cfg.system)
    return SpinBathBackend(noise, cfg.system)


def pulse_widths(cfg: ExperimentConfig) -> dict:
    if cfg.pulse_mode == "instantaneous":
        return {}
    return {cid: prog.total_duration for cid, prog in compile_all(cfg.system, cfg.pw90_s).items()}


def build_plan(cfg: ExperimentConfig) -> RunPlan:
    return RunPlan(
        schedule=build_nudd_schedule(cfg.order_n),
        t_run=cfg.t_run,
        repetitions=cfg.repetitions,
        sample_points=cfg.sample_points,
        t_free=cfg.t_free,
        pulse_widths=pulse_widths(cfg),
    )


@dataclass
class ProtocolResult:
    trace: FidelityTrace
    csv_path: Optional[Path] = None
    tomography_rows: list = field(default_factory=list)
    tomography_path: Optional[Path] = None


TOMO_HEADER = ("arm", "time_s", "fidelity_true", "fidelity_reconstructed",
               "reconstruction_vs_true", "residual", "converged")


def tomography_rows(cfg: ExperimentConfig, initial: np.ndarray, trace: FidelityTrace) -> list:
    """Pass both arms' final states through simulated tomography and MLE."""
    t_end = trace.rows[-1][0]
    rows = []
    for k, (arm, states) in enumerate((("unprotected", trace.states_unprotected),
                                       ("nudd", trace.states_nudd))):
        rho = states[-1]
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        rec = simulate_measurements(rho, cfg.tomography_noise_sigma, seed=cfg.seed * 2 + k)
        res = mle_reconstruct(rec)
        rows.append((arm, t_end, fidelity(initial, rho), fidelity(initial, res.rho),
                     fidelity(rho, res.rho), res.residual, res.converged))
    return rows


def tomography_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOMO_HEADER)
    for arm, t, f_true, f_rec, f_tomo, resid, ok in rows:
        w.writerow([arm, f"{t:.12g}", f"{f_true:.12g}", f"{f_rec:.12g}", f"{f_tomo:.12g}",
                    f"{resid:.6g}", str(bool(ok)).lower()])
    return buf.getvalue()


def tomography_path_for(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + "_tomography.csv")


def run_paper_protocol(cfg: ExperimentConfig, output_path=None, write: bool = True) -> ProtocolResult:
    """Prepare the state, run both arms and write the fidelity CSV.

    With ``cfg.with_tomography`` the final state of each arm is also
    measured and reconstructed; that table goes next to the trace as
    ``<stem>_tomography.csv``.
    """
    initial = prepare_state(cfg.state, cfg.pseudopure_epsilon)
    backend = build_backend(cfg)
    trace = run_nudd(initial, build_plan(cfg), backend, keep_states=cfg.with_tomography)
    result = ProtocolResult(trace)
    if cfg.with_tomography:
        result.tomography_rows = tomography_rows(cfg, initial, trace)
    if write:
        path = Path(output_path if output_path is not None else cfg.output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        trace.write_csv(path)
        result.csv_path = path
        if cfg.with_tomography:
            result.tomography_path = tomography_path_for(path)
            result.tomography_path.write_text(tomography_csv(result.tomography_rows))
    return result


# --------------------------------------------------------------------------- summaries

def first_crossing(times: Sequence[float], values: Sequence[float], level: float) -> Optional[float]:
    """Linearly interpolated time at which ``values`` first drops below ``level``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values[0] < level:
        return float(times[0])
    for i in range(1, len(values)):
        if values[i] < level:
            v0, v1 = values[i - 1], values[i]
            t0, t1 = times[i - 1], times[i]
            return float(t0 + (v0 - level) / (v0 - v1) * (t1 - t0))
    return None


def decay_time(trace: FidelityTrace, threshold: float = DECAY_THRESHOLD) -> Optional[float]:
    """Time at which the unprotected fidelity reaches ``threshold``."""
    return first_crossing(trace.times, trace.unprotected, threshold)


def protected_time(trace: FidelityTrace, floor: float = PROTECTED_FLOOR) -> Optional[float]:
    """How long the NUDD fidelity stays at or above ``floor``."""
    return first_crossing(trace.times, trace.nudd, floor)


def _censored(value: Optional[float], horizon: float) -> str:
    return f">{horizon:.6g}" if value is None else f"{value:.6g}"


def amplitude_text(psi: np.ndarray) -> str:
    a, b = psi[1], psi[2]
    if abs(a) > 1e-15:
        phase = a / abs(a)
        a, b = a / phase, b / phase
    return f"{a.real:.4f}|01> + ({b.real:.4f}{b.imag:+.4f}i)|10>"


SUMMARY_HEADER = ("state", "label", "theta_phi_deg", "decay_time_s", "protected_time_s")


def summary_row(spec: StateSpec, trace: FidelityTrace, threshold: float = DECAY_THRESHOLD,
                floor: float = PROTECTED_FLOOR) -> tuple:
    psi = state_vector(spec)
    if spec.kind == "fixture":
        fx = FIXTURES[spec.name]
        theta, phi = fx.theta_deg, fx.phi_deg
        psi = np.array([0, fx.alpha, fx.beta, 0], dtype=complex)  # print as tabulated
    else:
        theta, phi = subspace_angles(psi)
    horizon = float(trace.times[-1])
    return (amplitude_text(psi), spec.label, f"({theta:.0f},{phi:.0f})",
            _censored(decay_time(trace, threshold), horizon),
            _censored(protected_time(trace, floor), horizon))


def summary_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------- batches

@dataclass
class BatchResult:
    specs: list
    traces: list
    paths: list
    average: FidelityTrace
    summary: list


def average_trace(traces: Sequence[FidelityTrace]) -> FidelityTrace:
    times = traces[0].times
    for tr in traces[1:]:
        if tr.times.shape != times.shape or np.any(tr.times != times):
            raise ValueError("traces must share their time grid to be averaged")
    u = np.mean([tr.unprotected for tr in traces], axis=0)
    n = np.mean([tr.nudd for tr in traces], axis=0)
    return FidelityTrace([(float(t), float(a), float(b)) for t, a, b in zip(times, u, n)])


AVERAGE_HEADER = ("time_s", "mean_fidelity_unprotected", "mean_fidelity_nudd")


def batch_specs(count: int, seeds: Optional[Sequence[int]] = None, base_seed: int = 0,
                fixtures: bool = False) -> list:
    if fixtures:
        return [StateSpec.fixture(label) for label in FIXTURES][:count]
    if count < 1:
        raise ValueError("count must be >= 1")
    if seeds is None:
        seeds = [base_seed + i for i in range(count)]
    elif len(seeds) != count:
        raise ValueError(f"{len(seeds)} seeds given for count={count}")
    return [StateSpec.random(s) for s in seeds]


def batch_random_states(count: int, seeds: Optional[Sequence[int]], template: ExperimentConfig,
                        output_dir, workers: int = 4, fixtures: bool = False,
                        threshold: float = DECAY_THRESHOLD, floor: float = PROTECTED_FLOOR) -> BatchResult:
    """Run the template once per state, concurrently, then average and summarise.

    Writes ``stateNN_<label>.csv`` per member, ``average.csv`` and the
    fixture-table style ``summary.csv`` into ``output_dir``.
    """
    specs = batch_specs(count, seeds, template.seed, fixtures)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"state{i + 1:02d}_{s.label}.csv" for i, s in enumerate(specs)]

    def member(i: int) -> FidelityTrace:
        cfg = replace(template, state=specs[i], with_tomography=False)
        return run_paper_protocol(cfg, paths[i]).trace

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        traces = list(pool.map(member, range(len(specs))))

    avg = average_trace(traces)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AVERAGE_HEADER)
    for row in avg.rows:
        w.writerow([f"{x:.12g}" for x in row])
    (out / "average.csv").write_text(buf.getvalue())

    summary = [summary_row(s, tr, threshold, floor) for s, tr in zip(specs, traces)]
    (out / "summary.csv").write_text(summary_csv(summary))
    return BatchResult(specs, traces, paths, avg, summary)


# --------------------------------------------------------------------------- verify

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# frozen nested-UDD interval list for N = 2, in units of 1/64
N2_DELTAS_64 = (1, 2, 1, 2, 4, 2, 1, 2, 1, 2, 4, 2, 4, 8, 4, 2, 4, 2, 1, 2, 1, 2, 4, 2, 1, 2, 1)

# probe regime validated for one bath spin per qubit
PROBE_BATH = SpinBathConfig(bath_spins_per_qubit=1, coupling_scale=0.05, bath_internal_scale=1.0)
PROBE_GRID = tuple(np.geomspace(0.1, 4.0, 8))


def _check_deltas() -> tuple:
    from fractions import Fraction
    s = build_nudd_schedule(2)
    ok = s.is_exact() and tuple(s.deltas) == tuple(Fraction(k, 64) for k in N2_DELTAS_64) \
        and sum(s.deltas) == 1
    return ok, f"27 exact intervals, sum = {sum(s.deltas)}"


def _check_counts() -> tuple:
    parts, ok = [], True
    for n in (2, 4, 6):
        s = build_nudd_schedule(n)
        c = s.counts()
        ok &= s.n_pulses == pulse_count_formula(n)
        parts.append(f"N={n}: {c[ControlId.X0]} X0, {c[ControlId.X1]} X1, {c[ControlId.XPHI]} Xphi")
    c2 = build_nudd_schedule(2).counts()
    ok &= (c2[ControlId.X0], c2[ControlId.X1], c2[ControlId.XPHI]) == (18, 6, 2)
    return ok, "; ".join(parts)


def _check_commutation(basis) -> tuple:
    table = commutation_table(basis)
    bad = layer_reduction_mismatches(table)
    return not bad, "layer reductions match" if not bad else f"mismatches: {bad}"


def _check_involutions() -> tuple:
    worst = 0.0
    for cid in ControlId:
        x = build_control(cid).matrix
        worst = max(worst, float(np.max(np.abs(x @ x - np.eye(4)))),
                    float(np.max(np.abs(x - x.conj().T))))
    return worst <= 1e-12, f"max |X^2 - I|, |X - X^dag| = {worst:.1e}"


def _check_compiler() -> tuple:
    progs = compile_all()
    devs = {cid: phase_deviation(p.unitary(), build_control(cid).matrix) for cid, p in progs.items()}
    x0, x1 = progs[ControlId.X0], progs[ControlId.X1]
    mirrored = all(
        g0.kind == g1.kind and g0.qubit == g1.qubit
        and (math.isclose(g0.phase, g1.phase) or math.isclose(abs(g0.phase - g1.phase), math.pi))
        for g0, g1 in zip(x0.gates, x1.gates))
    ok = max(devs.values()) <= 1e-10 and mirrored
    return ok, ", ".join(f"{c} dev {d:.1e}" for c, d in devs.items()) + f"; X1 mirrors X0: {mirrored}"


def _check_cptp() -> tuple:
    cfg = LindbladConfig(t1_q1=2.0, t1_q2=3.0, t2_q1=0.7, t2_q2=1.1)
    gen = lindblad_superoperator(cfg, rotating_frame_hamiltonian(SystemParams(nu_h=1.0, nu_c=-2.0)))
    worst_psd, worst_tp = 0.0, 0.0
    for t in np.geomspace(1e-3, 10.0, 9):
        choi = choi_matrix(expm(gen * t))
        worst_psd = min(worst_psd, float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T))[0]))
        # trace preservation: tracing out the output factor leaves the identity
        tp = np.einsum("iaja->ij", choi.reshape(4, 4, 4, 4))
        worst_tp = max(worst_tp, float(np.max(np.abs(tp - np.eye(4)))))
    ok = worst_psd >= -1e-10 and worst_tp <= 1e-10
    return ok, f"min Choi eigenvalue {worst_psd:.1e}, trace-preservation defect {worst_tp:.1e}"


def _check_tomography(n_states: int = 10) -> tuple:
    rng = np.random.default_rng(2024)
    worst = 1.0
    for _ in range(n_states):
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        rho = np.outer(psi, psi.conj())
        res = mle_reconstruct(simulate_measurements(rho))
        check_density_matrix(res.rho, herm_tol=1e-9)
        worst = min(worst, fidelity(rho, res.rho))
    return worst >= 0.999, f"min fidelity over {n_states} noiseless records {worst:.6f}"


def _check_probe() -> tuple:
    res = decoupling_order_probe(2, PROBE_BATH, PROBE_GRID, seeds=range(5))
    if res.no_decay:
        return False, res.describe()
    ok = abs(res.slope_unprotected - 2.0) <= 0.4 and res.slope_nudd - res.slope_unprotected >= 2.0
    return ok, res.describe()


def verify_suite(basis=None, include_probe: bool = True,
                 emit: Optional[Callable[[str], None]] = None) -> list:
    """Run every self-check; ``basis`` replaces the Y basis (mutation testing)."""
    basis = build_y_basis() if basis is None else basis
    checks = [
        ("delta-sum", _check_deltas),
        ("pulse-counts", _check_counts),
        ("commutation-table", lambda: _check_commutation(basis)),
        ("control-involutions", _check_involutions),
        ("compiled-programs", _check_compiler),
        ("cptp", _check_cptp),
        ("tomography-round-trip", _check_tomography),
    ]
    if include_probe:
        checks.append(("decoupling-order", _check_probe))
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # failures are report content
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results
