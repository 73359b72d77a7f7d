import json
import math

import numpy as np
import pytest

from nuddlab import harness
from nuddlab.engine import FidelityTrace
from nuddlab.harness import (
    ConfigError,
    ExperimentConfig,
    apply_env_overrides,
    average_trace,
    batch_random_states,
    decay_time,
    first_crossing,
    load_config,
    protected_time,
    run_paper_protocol,
    summary_row,
    verify_suite,
)
from nuddlab.noise_models import LindbladConfig, SpinBathConfig, SystemParams
from nuddlab.opalgebra import YBasis, build_y_basis, ketbra
from nuddlab.states import StateSpec


@pytest.fixture
def small_cfg(tmp_path):
    return ExperimentConfig(repetitions=12, output_path=str(tmp_path / "trace.csv"))


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.t_run == 0.12756 and cfg.t_free == 0.05 and cfg.repetitions == 40

    def test_dict_round_trip(self):
        cfg = ExperimentConfig(state=StateSpec.angles(20, 30),
                               noise=SpinBathConfig(1, 0.2, 1.0, 0.1, seed=3), pulse_mode="compiled_finite")
        assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_infinite_times_survive_json(self):
        cfg = ExperimentConfig(noise=LindbladConfig(math.inf, math.inf, 1.0, 1.0))
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back.noise.t1_q1 == math.inf

    @pytest.mark.parametrize("bad", [
        {"t_runn": 1.0},
        {"noise": {"backend": "lindblad", "t1_q1": 1, "t1_q2": 1, "t2_q1": 1, "t2_q2": 1, "t3": 1}},
        {"noise": {"backend": "thermal"}},
        {"system": {"nu_h": 0, "nu_x": 1}},
        {"pulse_mode": "gaussian"},
        {"repetitions": 0},
        {"t_run": -1.0},
        {"order_n": 3},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_none_backend(self):
        assert ExperimentConfig.from_dict({"noise": {"backend": "none"}}).noise is None

    def test_env_overrides(self):
        env = {"NUDDLAB_T_RUN": "0.2", "NUDDLAB_NOISE__T2_Q1": "0.9",
               "NUDDLAB_STATE": '{"named": "singlet"}', "NUDDLAB_OUTPUT_PATH": "x.csv", "HOME": "/"}
        d = apply_env_overrides(ExperimentConfig().to_dict(), env)
        cfg = ExperimentConfig.from_dict(d)
        assert cfg.t_run == 0.2
        assert cfg.noise.t2_q1 == 0.9
        assert cfg.state == StateSpec.named("singlet")
        assert cfg.output_path == "x.csv"

    def test_env_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            load_config(environ={"NUDDLAB_TRUN": "1"})

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1, "repetitions": 5}))
        cfg = load_config(path, environ={"NUDDLAB_SEED": "2"}, overrides={"repetitions": 7})
        assert cfg.seed == 2 and cfg.repetitions == 7

    def test_file_unknown_field(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"colour": "red"}))
        with pytest.raises(ConfigError):
            load_config(path, environ={})


class TestProtocol:
    def test_zero_noise(self, small_cfg):
        cfg = harness.replace(small_cfg, noise=None)
        tr = run_paper_protocol(cfg).trace
        assert np.allclose(tr.unprotected, 1.0, atol=1e-9)
        assert np.allclose(tr.nudd, 1.0, atol=1e-9)

    def test_dephasing_dominant_01(self, tmp_path):
        cfg = ExperimentConfig(noise=LindbladConfig(5.0, 5.0, 0.6, 0.4), repetitions=40,
                               output_path=str(tmp_path / "t.csv"))
        tr = run_paper_protocol(cfg).trace
        assert np.all(tr.nudd >= tr.unprotected - 1e-9)

    @pytest.mark.parametrize("name", ["singlet", "triplet"])
    def test_bell_states_protected(self, tmp_path, name):
        cfg = ExperimentConfig(state=StateSpec.named(name), repetitions=20, output_path=str(tmp_path / "t.csv"))
        tr = run_paper_protocol(cfg).trace
        assert tr.nudd[-1] > tr.unprotected[-1]

    def test_csv_written_and_deterministic(self, small_cfg, tmp_path):
        a = run_paper_protocol(small_cfg)
        first = a.csv_path.read_bytes()
        b = run_paper_protocol(small_cfg)
        assert b.csv_path.read_bytes() == first
        lines = first.decode().splitlines()
        assert lines[0] == "time_s,fidelity_unprotected,fidelity_nudd"
        assert lines[1] == "0,1,1"
        assert len(lines) == 1 + 13

    def test_output_override(self, small_cfg, tmp_path):
        res = run_paper_protocol(small_cfg, tmp_path / "sub" / "o.csv")
        assert res.csv_path.exists()

    def test_tomography_file(self, small_cfg):
        cfg = harness.replace(small_cfg, with_tomography=True, tomography_noise_sigma=0.01, seed=4)
        res = run_paper_protocol(cfg)
        assert res.tomography_path.name == "trace_tomography.csv"
        rows = res.tomography_path.read_text().splitlines()
        assert rows[0].startswith("arm,time_s")
        assert [r.split(",")[0] for r in rows[1:]] == ["unprotected", "nudd"]
        for arm, _, f_true, f_rec, f_tomo, _, ok in res.tomography_rows:
            assert f_tomo > 0.95
            assert abs(f_true - f_rec) < 0.05

    def test_compiled_finite_runs(self, small_cfg):
        cfg = harness.replace(small_cfg, pulse_mode="compiled_finite", state=StateSpec.named("triplet"))
        tr = run_paper_protocol(cfg, write=False).trace
        inst = run_paper_protocol(harness.replace(cfg, pulse_mode="instantaneous"), write=False).trace
        assert np.all(np.abs(tr.nudd - inst.nudd) < 0.05)
        assert not np.array_equal(tr.nudd, inst.nudd)

    def test_compiled_finite_too_tight(self, small_cfg):
        cfg = harness.replace(small_cfg, pulse_mode="compiled_finite", t_free=None, t_run=0.05)
        with pytest.raises(ValueError):
            run_paper_protocol(cfg, write=False)

    def test_pseudopure_row_zero(self, small_cfg):
        # fidelities are taken against the prepared (pseudopure) state itself
        cfg = harness.replace(small_cfg, pseudopure_epsilon=0.5, state=StateSpec.named("triplet"))
        tr = run_paper_protocol(cfg, write=False).trace
        pure = run_paper_protocol(harness.replace(cfg, pseudopure_epsilon=0.0), write=False).trace
        assert tr.rows[0][1:] == pytest.approx((1.0, 1.0), abs=1e-9)
        assert not np.allclose(tr.unprotected, pure.unprotected)

    def test_spin_bath_backend(self, small_cfg):
        cfg = harness.replace(small_cfg, noise=SpinBathConfig(1, 0.5, 1.0, 0.0, seed=2),
                              system=SystemParams(0.0, 0.0, 0.0), t_free=None, t_run=0.3)
        tr = run_paper_protocol(cfg, write=False).trace
        assert tr.nudd[-1] > tr.unprotected[-1]


class TestSummary:
    def test_interpolation(self):
        assert first_crossing([0, 1, 2], [1.0, 0.6, 0.4], 0.5) == pytest.approx(1.5)

    def test_never_crosses(self):
        assert first_crossing([0, 1], [1.0, 0.9], 0.5) is None

    def test_starts_below(self):
        assert first_crossing([0, 1], [0.4, 0.3], 0.5) == 0

    def test_metrics(self):
        tr = FidelityTrace([(0.0, 1.0, 1.0), (1.0, 0.7, 0.9), (2.0, 0.3, 0.7)])
        assert decay_time(tr) == pytest.approx(1.5)
        assert protected_time(tr) == pytest.approx(1.5)
        assert decay_time(tr, threshold=0.8) == pytest.approx(2 / 3)

    def test_row_censored(self):
        tr = FidelityTrace([(0.0, 1.0, 1.0), (1.0, 0.9, 0.95)])
        row = summary_row(StateSpec.fixture("RS-1"), tr)
        assert row[0] == "0.2869|01> + (0.9403+0.1828i)|10>"
        assert row[1:] == ("RS-1", "(147,57)", ">1", ">1")


class TestBatch:
    def test_average_and_files(self, small_cfg, tmp_path):
        out = tmp_path / "batch"
        res = batch_random_states(4, None, small_cfg, out, workers=2)
        assert len(res.paths) == 4 and all(p.exists() for p in res.paths)
        mean_u = np.mean([t.unprotected for t in res.traces], axis=0)
        assert np.max(np.abs(res.average.unprotected - mean_u)) < 1e-12
        lines = (out / "average.csv").read_text().splitlines()
        assert lines[0] == "time_s,mean_fidelity_unprotected,mean_fidelity_nudd"
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "state,label,theta_phi_deg,decay_time_s,protected_time_s"
        assert len(summary) == 5

    def test_identical_seeds(self, small_cfg, tmp_path):
        res = batch_random_states(3, [7, 7, 7], small_cfg, tmp_path / "b", workers=3)
        texts = {p.read_text() for p in res.paths}
        assert len(texts) == 1

    def test_fixtures(self, small_cfg, tmp_path):
        res = batch_random_states(8, None, small_cfg, tmp_path / "f", fixtures=True)
        assert [s.name for s in res.specs] == [f"RS-{i}" for i in range(1, 9)]

    def test_seed_count_mismatch(self, small_cfg, tmp_path):
        with pytest.raises(ValueError):
            batch_random_states(3, [1, 2], small_cfg, tmp_path)

    def test_average_needs_shared_grid(self):
        a = FidelityTrace([(0.0, 1.0, 1.0), (1.0, 0.5, 0.5)])
        b = FidelityTrace([(0.0, 1.0, 1.0), (2.0, 0.5, 0.5)])
        with pytest.raises(ValueError):
            average_trace([a, b])

    def test_concurrency_matches_serial(self, small_cfg, tmp_path):
        a = batch_random_states(4, None, small_cfg, tmp_path / "a", workers=1)
        b = batch_random_states(4, None, small_cfg, tmp_path / "b", workers=4)
        assert (tmp_path / "a" / "average.csv").read_bytes() == (tmp_path / "b" / "average.csv").read_bytes()
        assert [t.rows for t in a.traces] == [t.rows for t in b.traces]


class TestVerify:
    def test_all_pass(self):
        lines = []
        results = verify_suite(emit=lines.append)
        assert all(r.passed for r in results), lines
        assert {r.name for r in results} >= {"delta-sum", "pulse-counts", "commutation-table", "control-involutions",
                                              "compiled-programs", "cptp", "tomography-round-trip", "decoupling-order"}
        assert any("18 X0, 6 X1, 2 Xphi" in line for line in lines)
        assert len(lines) == len(results)

    def test_corrupted_y6_fails_table_only(self):
        ops = list(build_y_basis().operators)
        ops[5] = ketbra("01", "01") + ketbra("10", "10")
        results = {r.name: r for r in verify_suite(basis=YBasis(tuple(ops)), include_probe=False)}
        assert not results["commutation-table"].passed
        assert all(r.passed for n, r in results.items() if n != "commutation-table")
