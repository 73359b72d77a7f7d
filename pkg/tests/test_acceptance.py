"""Acceptance gate: one test per criterion, each with its runtime budget.

Every criterion records a one-line verdict that is printed in the pytest
terminal summary (see ``conftest.pytest_terminal_summary``), so a plain
``pytest tests/test_acceptance.py`` shows all nine lines.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from nuddlab import cli
from nuddlab.engine import RunPlan, SpinBathBackend, decoupling_order_probe, run_nudd
from nuddlab.harness import ExperimentConfig, batch_random_states, run_paper_protocol
from nuddlab.noise_models import LindbladConfig, SpinBathConfig, SystemParams
from nuddlab.opalgebra import ControlId, Relation, build_control, build_y_basis, classify_commutation
from nuddlab.pulse_compiler import compile_all, phase_deviation
from nuddlab.qlinalg import check_density_matrix, fidelity, random_pure_state
from nuddlab.states import FIXTURE_NORM_TOL, FIXTURES, StateSpec, prepare_state
from nuddlab.tomography import mle_reconstruct, simulate_measurements
from nuddlab.udd_timing import build_nudd_schedule, pulse_count_formula

RESULTS = {}

# the printed N = 2 interval list, in units of beta = 1/64
N2_DELTAS_64 = [1, 2, 1, 2, 4, 2, 1, 2, 1, 2, 4, 2, 4, 8, 4, 2, 4, 2, 1, 2, 1, 2, 4, 2, 1, 2, 1]


def record(key, title, passed, seconds, budget, detail):
    ok = bool(passed) and seconds < budget
    RESULTS[key] = (f"[{'PASS' if ok else 'FAIL'}] {key} {title} "
                    f"({seconds:.2f} s / budget {budget:g} s): {detail}")
    return ok


def leakage(rho):
    return float((rho[0, 0] + rho[3, 3]).real)


def test_c1_schedule_exactness():
    t0 = time.perf_counter()
    s = build_nudd_schedule(2)
    c = s.counts()
    exact = s.is_exact() and s.deltas == [Fraction(k, 64) for k in N2_DELTAS_64]
    total = sum(s.deltas)
    counts = (c[ControlId.X0], c[ControlId.X1], c[ControlId.XPHI])
    ok = exact and total == 1 and counts == (18, 6, 2) and pulse_count_formula(2) == 26 == s.n_pulses
    dt = time.perf_counter() - t0
    assert record("C1", "schedule exactness", ok, dt, 1.0,
                  f"27 exact deltas match, sum={total}, counts={counts}, formula={pulse_count_formula(2)}")


def test_c2_commutation_table():
    t0 = time.perf_counter()
    y = build_y_basis()
    rel = {cid: {i: classify_commutation(build_control(cid).matrix, y[i]) for i in range(1, 17)}
           for cid in ControlId}
    anti = {cid: {i for i, r in row.items() if r is Relation.ANTICOMMUTE} for cid, row in rel.items()}
    x0_ok = anti[ControlId.X0] == set(range(11, 17)) and all(
        rel[ControlId.X0][i] is Relation.COMMUTE for i in range(1, 11))
    x1_ok = anti[ControlId.X1] & set(range(1, 11)) == set(range(7, 11)) and all(
        rel[ControlId.X1][i] is Relation.COMMUTE for i in range(1, 7))
    xp_ok = anti[ControlId.XPHI] & set(range(1, 7)) == {6} and all(
        rel[ControlId.XPHI][i] is Relation.COMMUTE for i in range(1, 6))
    dt = time.perf_counter() - t0
    assert record("C2", "commutation table", x0_ok and x1_ok and xp_ok, dt, 1.0,
                  f"X0 anti {sorted(anti[ControlId.X0])}, X1 anti on survivors "
                  f"{sorted(anti[ControlId.X1] & set(range(1, 11)))}, Xphi anti on survivors "
                  f"{sorted(anti[ControlId.XPHI] & set(range(1, 7)))}")


def test_c3_decoupling_order():
    t0 = time.perf_counter()
    cfg = SpinBathConfig(bath_spins_per_qubit=1, coupling_scale=0.05, bath_internal_scale=1.0)
    res = decoupling_order_probe(2, cfg, np.geomspace(0.1, 4.0, 8), seeds=range(5))
    dt = time.perf_counter() - t0
    ok = (not res.no_decay and abs(res.slope_unprotected - 2.0) <= 0.4
          and res.slope_nudd - res.slope_unprotected >= 2.0)
    assert record("C3", "decoupling-order scaling", ok, dt, 120.0, res.describe())


def test_c4_protection_dominance():
    t0 = time.perf_counter()
    noise = LindbladConfig(t1_q1=5.0, t1_q2=5.0, t2_q1=1.0, t2_q2=0.8)
    specs = [StateSpec.named(n) for n in ("01", "10", "singlet", "triplet")]
    specs += [StateSpec.random(s) for s in range(8)]
    worst, compared = math.inf, 0
    for spec in specs:
        cfg = ExperimentConfig(state=spec, noise=noise, repetitions=60)
        tr = run_paper_protocol(cfg, write=False).trace
        u, n = tr.unprotected, tr.nudd
        below = np.nonzero(u <= 0.5)[0]
        end = below[0] + 1 if below.size else len(u)
        worst = min(worst, float(np.min(n[:end] - u[:end])))
        compared += end
    dt = time.perf_counter() - t0
    assert record("C4", "protection dominance", worst >= -1e-6, dt, 120.0,
                  f"12 states, {compared} samples, min(F_nudd - F_unprot) = {worst:.3e} (allowed >= -1e-6)")


def test_c5_no_leakage():
    t0 = time.perf_counter()
    sched = build_nudd_schedule(2)
    params = SystemParams(nu_h=0.3, nu_c=-0.2, j12=0.5)
    margin = math.inf
    worst_nudd = 0.0
    for name in ("singlet", "triplet"):
        initial = prepare_state(StateSpec.named(name))
        for seed in range(5):
            backend = SpinBathBackend(SpinBathConfig(1, 0.5, 1.0, 0.2, seed=seed), params)
            tr = run_nudd(initial, RunPlan(sched, 0.2, 25), backend, keep_states=True)
            lu = np.array([leakage(s) for s in tr.states_unprotected[1:]])
            ln = np.array([leakage(s) for s in tr.states_nudd[1:]])
            margin = min(margin, float(np.min(lu - ln)))
            worst_nudd = max(worst_nudd, float(ln.max()))
    dt = time.perf_counter() - t0
    assert record("C5", "no leakage", margin > 0, dt, 60.0,
                  f"singlet+triplet x 5 baths, min(leak_unprot - leak_nudd) = {margin:.3e}, "
                  f"max nudd leakage {worst_nudd:.2e}")


def test_c6_compiler():
    t0 = time.perf_counter()
    progs = compile_all()
    devs = {cid: phase_deviation(p.unitary(), build_control(cid).matrix) for cid, p in progs.items()}
    g0, g1 = progs[ControlId.X0].gates, progs[ControlId.X1].gates
    negated = len(g0) == len(g1) and all(
        (a.kind, a.qubit, a.angle, a.width) == (b.kind, b.qubit, b.angle, b.width)
        and (math.isclose(a.phase, b.phase) or math.isclose(abs(a.phase - b.phase), math.pi))
        for a, b in zip(g0, g1))
    flipped = sum(not math.isclose(a.phase, b.phase) for a, b in zip(g0, g1))
    dt = time.perf_counter() - t0
    ok = max(devs.values()) <= 1e-10 and negated and flipped == 2
    assert record("C6", "compiler verification", ok, dt, 1.0,
                  ", ".join(f"{c} {d:.1e}" for c, d in devs.items()) + f"; X1 = X0 with {flipped} phases negated")


def test_c7_tomography():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    clean, noisy, physical = [], [], True
    for k in range(100):
        psi = random_pure_state(4, rng)
        rho = np.outer(psi, psi.conj())
        for sigma, bucket in ((0.0, clean), (0.05, noisy)):
            res = mle_reconstruct(simulate_measurements(rho, sigma, seed=k))
            try:
                check_density_matrix(res.rho)
            except ValueError:
                physical = False
            bucket.append(fidelity(res.rho, rho))
    dt = time.perf_counter() - t0
    ok = min(clean) >= 0.999 and np.mean(noisy) >= 0.97 and physical
    assert record("C7", "tomography round-trip", ok, dt, 60.0,
                  f"noiseless min F {min(clean):.6f}, sigma=0.05 mean F {np.mean(noisy):.4f}, "
                  f"all physical {physical}")


def test_c8_fixtures(tmp_path):
    t0 = time.perf_counter()
    norms_ok = all(abs(f.norm2 - 1) <= FIXTURE_NORM_TOL for f in FIXTURES.values())
    valid = True
    for label in FIXTURES:
        try:
            check_density_matrix(prepare_state(StateSpec.fixture(label)))
        except ValueError:
            valid = False
    res = batch_random_states(8, None, ExperimentConfig(), tmp_path, fixtures=True)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    header_ok = lines[0] == "state,label,theta_phi_deg,decay_time_s,protected_time_s"
    labels = [row[1] for row in res.summary]
    emitted = header_ok and labels == list(FIXTURES) and len(lines) == 9
    dt = time.perf_counter() - t0
    worst = max(abs(f.norm2 - 1) for f in FIXTURES.values())
    assert record("C8", "fixture integrity", norms_ok and valid and emitted, dt, 60.0,
                  f"max |norm^2 - 1| = {worst:.1e}, valid states {valid}, summary rows {len(lines) - 1}")


def test_c9_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"state": {"random": 11}, "noise": {"backend": "spin_bath", "coupling_scale": 0.5,'
                   ' "seed": 3}, "t_free": null, "t_run": 0.3, "repetitions": 10}')
    for d in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--seed", "5", "--output", str(tmp_path / d)]) == 0
        assert cli.main(["batch", "--count", "4", "--seed", "5", "--output", str(tmp_path / d / "batch")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    dt = time.perf_counter() - t0
    assert record("C9", "determinism", same and len(files) == 7, dt, 60.0,
                  f"{len(files)} CSV files compared byte-for-byte across two invocations")
