"""Configuration loading: defaults, precedence, coercion, validation,
and analytic resolution of the return-normalization bounds."""

import numpy as np
import pytest
import yaml

from lanegate.config import DEFAULTS, ConfigError, RunConfig, load_config


def cfg(*pairs, seed=1, path=None):
    return load_config(path=path, overrides=list(pairs), seed=seed)


class TestDefaults:
    def test_core_hyperparameters(self):
        c = cfg()
        rl = c["rl"]
        assert rl["gamma"] == 0.995
        assert rl["epsilon_clip"] == 0.2
        assert rl["entropy_coef"] == 0.01
        assert rl["epochs"] == 10
        assert rl["batch_size"] == 64
        assert rl["lr_actor"] == 3e-4
        assert rl["lr_critic"] == 3e-4
        assert rl["sigma_init"] == 0.5
        assert c["gate"]["delta"] == 0.90
        assert c["gate"]["bootstrap_samples"] == 2000
        assert c["trainer"]["M"] == 400000
        assert c["trainer"]["beta"] == 39

    def test_reward_weights(self):
        env = cfg()["env"]
        assert [env[f"omega{i}"] for i in range(1, 7)] == [1.5, -0.05, -2.0, -0.5, -0.5, -20.0]
        assert env["speed_limit"] == pytest.approx(120.0 / 3.6)

    def test_seed_is_mandatory(self):
        with pytest.raises(ConfigError, match="seed"):
            load_config()

    def test_defaults_dict_not_mutated(self):
        before = DEFAULTS["trainer"]["seed"]
        cfg(("rl.gamma", "0.9"), seed=12)
        assert DEFAULTS["trainer"]["seed"] == before
        assert DEFAULTS["rl"]["gamma"] == 0.995


class TestPrecedence:
    def test_file_overrides_defaults(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text(yaml.safe_dump({"rl": {"gamma": 0.99}, "trainer": {"seed": 4}}))
        c = load_config(path=str(p))
        assert c["rl"]["gamma"] == 0.99
        assert c.seed == 4

    def test_override_beats_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text(yaml.safe_dump({"rl": {"gamma": 0.99}}))
        c = load_config(path=str(p), overrides=[("rl.gamma", "0.97")], seed=2)
        assert c["rl"]["gamma"] == 0.97

    def test_seed_argument_beats_override(self):
        c = load_config(overrides=[("trainer.seed", "5")], seed=7)
        assert c.seed == 7

    def test_later_override_wins(self):
        c = cfg(("rl.gamma", "0.9"), ("rl.gamma", "0.8"))
        assert c["rl"]["gamma"] == 0.8

    def test_empty_file_is_fine(self, tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("")
        assert load_config(path=str(p), seed=1).seed == 1


class TestRejection:
    def test_unknown_section(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump({"nonsense": {"x": 1}}))
        with pytest.raises(ConfigError, match="unknown configuration section"):
            load_config(path=str(p), seed=1)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump({"rl": {"momentum": 0.9}}))
        with pytest.raises(ConfigError, match="unknown configuration key"):
            load_config(path=str(p), seed=1)

    def test_unknown_override_key(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            cfg(("rl.momentum", "0.9"))

    def test_override_without_dot(self):
        with pytest.raises(ConfigError, match="section.key"):
            cfg(("gamma", "0.9"))

    def test_scalar_section_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump({"rl": 3}))
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path=str(p), seed=1)


class TestCoercion:
    def test_int_from_text(self):
        assert cfg(("rl.epochs", "7"))["rl"]["epochs"] == 7

    def test_float_from_int_in_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"rl": {"gamma": 1}}))
        with pytest.raises(ConfigError):
            load_config(path=str(p), seed=1)  # valid type, invalid range

    def test_fractional_epochs_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"rl": {"epochs": 7.5}}))
        with pytest.raises(ConfigError, match="expected an integer"):
            load_config(path=str(p), seed=1)

    def test_bad_numeric_text(self):
        with pytest.raises(ConfigError, match="bad value"):
            cfg(("rl.gamma", "fast"))

    def test_list_override(self):
        c = cfg(("env.desired_speed_band", "20,30"))
        assert c["env"]["desired_speed_band"] == [20.0, 30.0]

    def test_list_wrong_length(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"env": {"desired_speed_band": [1.0, 2.0, 3.0]}}))
        with pytest.raises(ConfigError, match="list of 2"):
            load_config(path=str(p), seed=1)


class TestNullHandling:
    def test_nullable_override_text(self):
        assert cfg(("rl.target_kl", "null"))["rl"]["target_kl"] is None
        assert cfg(("trainer.max_wall_time", "none"))["trainer"]["max_wall_time"] is None

    def test_null_rejected_for_required_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"rl": {"gamma": None}}))
        with pytest.raises(ConfigError, match="may not be null"):
            load_config(path=str(p), seed=1)

    def test_null_text_rejected_for_required_key(self):
        with pytest.raises(ConfigError):
            cfg(("rl.gamma", "null"))

    def test_nullable_in_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"rl": {"target_kl": None}}))
        assert load_config(path=str(p), seed=1)["rl"]["target_kl"] is None


class TestValidation:
    @pytest.mark.parametrize("key,value", [
        ("rl.gamma", "1.0"), ("rl.gamma", "0.0"),
        ("rl.epsilon_clip", "0.0"), ("rl.epsilon_clip", "1.0"),
        ("rl.epochs", "0"), ("rl.batch_size", "0"), ("rl.lookahead_T", "0"),
        ("rl.sigma_init", "0.0"), ("rl.sigma_init", "-1.0"),
        ("rl.lr_actor", "-1e-4"), ("rl.lr_critic", "-1.0"),
        ("rl.target_kl", "0.0"), ("rl.target_kl", "-0.1"),
        ("gate.mode", "sometimes"), ("gate.delta", "0.5"), ("gate.delta", "1.0"),
        ("gate.delta", "0.3"), ("gate.bootstrap_samples", "50"),
        ("gate.log_weight_clamp", "0"),
        ("trainer.M", "0"), ("trainer.beta", "40"), ("trainer.beta", "0"),
        ("trainer.eval_episodes", "0"), ("trainer.checkpoint_every", "0"),
        ("trainer.max_wall_time", "0"), ("trainer.max_wall_time", "-5"),
        ("env.scenario", "downtown"), ("env.dt", "0"), ("env.lanes", "0"),
        ("env.episode_steps", "0"),
    ])
    def test_rejects(self, key, value):
        with pytest.raises(ConfigError):
            cfg((key, value))

    def test_zero_learning_rates_allowed(self):
        c = cfg(("rl.lr_actor", "0"), ("rl.lr_critic", "0.0"))
        assert c["rl"]["lr_actor"] == 0.0

    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError, match="non-negative"):
            cfg(seed=-1)

    def test_beta_multiples_of_three_allowed(self):
        for beta in (3, 39, 99):
            assert cfg(("trainer.beta", str(beta)))["trainer"]["beta"] == beta


class TestResolution:
    def test_episode_steps_scenario_default(self):
        assert cfg()["env"]["episode_steps"] == 300
        c = cfg(("env.scenario", "daily_cruise"))
        assert c["env"]["episode_steps"] == 600

    def test_episode_steps_explicit(self):
        c = cfg(("env.episode_steps", "50"))
        assert c["env"]["episode_steps"] == 50
        assert c.scenario_spec().episode_steps == 50

    def test_scenario_switch_falls_back_to_catalog(self):
        c = cfg(("env.episode_steps", "50"))
        assert c.scenario_spec("cut_in").episode_steps == 300

    def test_bounds_match_series_oracle(self):
        c = cfg()
        series = float(np.sum(0.995 ** np.arange(300)))
        assert c["gate"]["r_upper"] == pytest.approx(1.5 * series, abs=1e-9)
        floor = -0.05 * 35.0 - 2.0 * 0.7 - 0.5 - 0.5
        assert c["gate"]["r_lower"] == pytest.approx(series * floor - 20.0, abs=1e-9)
        b = c.bounds()
        assert b.upper == c["gate"]["r_upper"]
        assert b.lower == c["gate"]["r_lower"]

    def test_explicit_bounds_respected(self):
        c = cfg(("gate.r_upper", "100"), ("gate.r_lower", "-100"))
        assert c.bounds().upper == 100.0 and c.bounds().lower == -100.0

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ConfigError, match="r_upper"):
            cfg(("gate.r_upper", "-1"), ("gate.r_lower", "1"))


class TestViews:
    def test_rl_config_view(self):
        rl = cfg(("rl.target_kl", "0.05")).rl_config()
        assert rl.gamma == 0.995 and rl.target_kl == 0.05
        assert rl.epochs == 10 and rl.batch_size == 64

    def test_road_and_reward_views(self):
        c = cfg()
        road = c.road_config()
        assert road.lanes == 3 and road.speed_limit == pytest.approx(120.0 / 3.6)
        rew = c.reward_params()
        assert rew.w_efficiency == 1.5 and rew.w_collision == -20.0

    def test_scenario_spec_view(self):
        spec = cfg(("env.brake_gap", "12.5")).scenario_spec()
        assert spec.kind == "emergency_brake"
        assert spec.brake_gap == 12.5


class TestSerialization:
    def test_yaml_round_trip(self):
        c = cfg(("rl.gamma", "0.97"), seed=9)
        assert yaml.safe_load(c.as_yaml()) == c.data

    def test_digest_stable_and_seed_sensitive(self):
        a, b = cfg(seed=3), cfg(seed=3)
        assert a.digest() == b.digest()
        assert cfg(seed=4).digest() != a.digest()
        assert isinstance(RunConfig(a.data).digest(), str)
