import math
import os

import numpy as np
import pytest

from banditlab.diag import constant_policy, policy_regret
from banditlab.env import EnvSpec
from banditlab.harness import (EPOCHS_HEADER, TRACE_HEADER, ConfigError,
                               ConfigMismatchError, RunConfig, checkpoints,
                               compare, load_config, parse_config,
                               read_weights_csv, run_one, run_suite, save_config,
                               serialize_config, write_run_dir, write_trace_csv)

STEP = EnvSpec(kind="step_function")


def small_config(**kw):
    defaults = dict(env=STEP, agent="epsilon_falcon", horizon=64,
                    mc_samples=2_000, replications=1, base_seed=7)
    defaults.update(kw)
    return RunConfig(**defaults)


class TestConfigValidation:
    def test_bad_epsilon_named(self):
        cfg = small_config(epsilon=0.7)
        errs = cfg.validation_errors()
        assert any("agent.epsilon" in e for e in errs)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bad_horizon_named(self):
        errs = small_config(horizon=0).validation_errors()
        assert any("run.horizon" in e for e in errs)

    def test_unknown_agent(self):
        errs = small_config(agent="bayes_magic").validation_errors()
        assert any("agent.name" in e for e in errs)

    def test_valid_config_passes(self):
        small_config().validate()


class TestConfigRoundTrip:
    def test_round_trip_identity(self):
        cfg = RunConfig(env=EnvSpec(kind="sensitivity_family", theta=0.02,
                                    noise_sd=0.05, seed=9),
                        agent="lin_ucb", alpha_ucb=1.5, ridge=2.0, batch_size=25,
                        horizon=500, replications=3, base_seed=42,
                        mc_samples=5_000, out_dir="runs/demo")
        assert parse_config(serialize_config(cfg)) == cfg

    def test_round_trip_defaults(self):
        cfg = RunConfig(env=STEP)
        assert parse_config(serialize_config(cfg)) == cfg

    def test_comp_auto(self):
        cfg = RunConfig(env=STEP, comp=None)
        text = serialize_config(cfg)
        assert "agent.comp = auto" in text
        assert parse_config(text).comp is None

    def test_file_round_trip(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "config.txt"
        save_config(cfg, str(path))
        assert load_config(str(path)) == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = small_config()
        text = "# a comment\n\n" + serialize_config(cfg) + "\n# trailing\n"
        assert parse_config(text) == cfg

    def test_unknown_key_rejected(self):
        text = serialize_config(small_config()) + "agent.warp_factor = 9\n"
        with pytest.raises(ConfigError, match="warp_factor"):
            parse_config(text)

    def test_unparsable_value_rejected(self):
        text = serialize_config(small_config()).replace(
            "run.horizon = 64", "run.horizon = om")
        with pytest.raises(ConfigError, match="run.horizon"):
            parse_config(text)


class TestRunOne:
    def test_one_epoch_at_horizon_four(self):
        res = run_one(small_config(horizon=4), seed=0, with_lemmas=False)
        assert len(res.events) == 1
        assert res.events[0].m == 1
        assert res.events[0].tau_end == 4
        # the next epoch's model was fit at t = 4
        assert len(res.artifacts.models) == 1  # only epoch 1 actually ran

    def test_trace_shape_and_epochs(self):
        res = run_one(small_config(horizon=20), seed=1, with_lemmas=False)
        tr = res.trace
        assert len(tr) == 20
        assert tr.t[0] == 1 and tr.t[-1] == 20
        np.testing.assert_array_equal(np.unique(tr.epoch), [1, 2, 3, 4])
        assert set(np.unique(tr.phase)) <= {"active", "passive"}

    def test_expected_regret_nonnegative(self):
        res = run_one(small_config(horizon=256), seed=2, with_lemmas=False)
        assert res.trace.e_regret.min() >= 0.0
        diffs = np.diff(res.trace.cum_e_regret)
        assert diffs.min() >= -1e-15

    def test_deterministic_trace_files(self, tmp_path):
        cfg = small_config(horizon=128)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace_csv(run_one(cfg, seed=5, with_lemmas=False).trace, str(p1))
        write_trace_csv(run_one(cfg, seed=5, with_lemmas=False).trace, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seeds_differ(self):
        a = run_one(small_config(horizon=64), seed=1, with_lemmas=False)
        b = run_one(small_config(horizon=64), seed=2, with_lemmas=False)
        assert not np.array_equal(a.trace.action, b.trace.action)

    def test_uniform_agent_matches_diag_estimate(self):
        cfg = small_config(agent="uniform", horizon=10_000)
        res = run_one(cfg, seed=3, with_lemmas=False)
        per_round = res.trace.e_regret.mean()
        # uniform randomized policy regret = mean of the constant policies'
        reg1 = policy_regret(STEP, constant_policy(1, 2), STEP, 50_000, rng=0)
        reg2 = policy_regret(STEP, constant_policy(2, 2), STEP, 50_000, rng=1)
        expected = 0.5 * (reg1.value + reg2.value)
        se = res.trace.e_regret.std(ddof=1) / math.sqrt(len(res.trace))
        assert abs(per_round - expected) <= 3 * math.hypot(se, reg1.se, reg2.se)

    def test_lemma_report_on_request(self):
        res = run_one(small_config(horizon=32), seed=4, with_lemmas=True)
        assert res.lemma_report is not None
        assert all(c.passed for c in res.lemma_report)

    def test_falcon_agent_epoch_events_filled(self):
        res = run_one(small_config(horizon=64), seed=6, with_lemmas=False)
        assert len(res.events) == 5  # epochs ending at 4, 8, 16, 32, 64
        for ev in res.events:
            assert math.isfinite(ev.mse_to_best_fit)
            assert ev.gamma > 0


class TestRunSuite:
    def test_single_replication_equals_run_one(self):
        cfg = small_config(horizon=64, replications=1)
        summary = run_suite(cfg)
        res = run_one(cfg, seed=cfg.base_seed, with_lemmas=False)
        np.testing.assert_allclose(summary.mean_e_regret, res.trace.e_regret)
        np.testing.assert_array_equal(summary.se_e_regret, np.zeros(64))

    def test_execution_order_does_not_matter(self, tmp_path):
        from banditlab.harness import write_summary_csv
        cfg = small_config(horizon=32, replications=5)
        s1 = run_suite(cfg)
        s2 = run_suite(cfg, order=[4, 2, 0, 3, 1])
        p1, p2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        write_summary_csv(s1, str(p1))
        write_summary_csv(s2, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_replication_streams_stable_under_R(self):
        cfg3 = small_config(horizon=32, replications=3)
        cfg5 = small_config(horizon=32, replications=5)
        r3 = [run_one(cfg3, cfg3.base_seed + r, with_lemmas=False).trace.action
              for r in range(3)]
        r5 = [run_one(cfg5, cfg5.base_seed + r, with_lemmas=False).trace.action
              for r in range(3)]
        for a, b in zip(r3, r5):
            np.testing.assert_array_equal(a, b)


class TestCompare:
    def test_self_comparison_identical_columns(self):
        cfg = small_config(horizon=64, replications=2)
        table = compare([cfg, cfg])
        assert table.column(0) == table.column(1)

    def test_checkpoints(self):
        assert checkpoints(10_000) == [1250, 2500, 5000, 10_000]
        assert checkpoints(8) == [1, 2, 4, 8]

    def test_uniform_dominated_by_falcon(self):
        uni = small_config(agent="uniform", horizon=4096, replications=2)
        fal = small_config(agent="epsilon_falcon", horizon=4096, replications=2)
        table = compare([uni, fal])
        for cu, cf in zip(table.column(0), table.column(1)):
            assert cf < cu

    def test_env_mismatch_rejected(self):
        a = small_config()
        b = small_config(env=EnvSpec(kind="sensitivity_family", theta=0.05))
        with pytest.raises(ConfigMismatchError):
            compare([a, b])

    def test_horizon_mismatch_rejected(self):
        with pytest.raises(ConfigMismatchError):
            compare([small_config(horizon=64), small_config(horizon=128)])

    def test_needs_two_configs(self):
        with pytest.raises(ConfigMismatchError):
            compare([small_config()])


class TestArtifacts:
    def test_headers_exact(self):
        assert TRACE_HEADER == "t,epoch,phase,x,action,reward,e_regret,cum_e_regret"
        assert EPOCHS_HEADER == ("m,tau_start,tau_end,gamma,alpha,slack,"
                                 "lambda_star,duality_gap,mse_to_fhatstar")

    def test_run_dir_contents(self, tmp_path):
        cfg = small_config(horizon=64)
        res = run_one(cfg, seed=9)
        out = tmp_path / "run"
        write_run_dir(res, str(out))
        names = sorted(os.listdir(out))
        assert names == ["config.txt", "epochs.csv", "lemmas.csv",
                         "trace.csv", "weights.csv"]
        first = (out / "trace.csv").read_text().splitlines()
        assert first[0] == TRACE_HEADER
        assert len(first) == 65
        assert (out / "epochs.csv").read_text().splitlines()[0] == EPOCHS_HEADER

    def test_weights_round_trip(self, tmp_path):
        cfg = small_config(horizon=64)
        res = run_one(cfg, seed=10, with_lemmas=False)
        path = tmp_path / "weights.csv"
        from banditlab.harness import write_weights_csv
        write_weights_csv(res.artifacts.models, str(path))
        mats = read_weights_csv(str(path))
        assert len(mats) == len(res.artifacts.models)
        for got, model in zip(mats, res.artifacts.models):
            np.testing.assert_array_equal(got, model.weights)

    def test_weights_row_shape_matches_schema(self, tmp_path):
        cfg = small_config(horizon=8)
        res = run_one(cfg, seed=11, with_lemmas=False)
        path = tmp_path / "w.csv"
        from banditlab.harness import write_weights_csv
        write_weights_csv(res.artifacts.models, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "m,arm,w0,w1"
        assert lines[1].startswith("1,1,")
