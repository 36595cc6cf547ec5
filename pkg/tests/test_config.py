import json

import pytest

from timemagnet.config import MODALITIES, ConfigError, RunConfig, echo_config, load_config, resolve


class TestResolve:
    def test_empty_overrides_give_desk_defaults(self):
        assert resolve("desk", {}) == RunConfig()
        assert resolve("desk").lambda_moe == 0.01

    def test_lambda_override(self):
        assert resolve("desk", {"lambda_moe": 0.05}).lambda_moe == 0.05

    def test_typo_suggests_key(self):
        with pytest.raises(ConfigError, match="lambda_moe"):
            resolve("desk", {"lamda": 0.1})

    def test_unknown_key_without_close_match(self):
        with pytest.raises(ConfigError, match="zzzzzz: unknown"):
            resolve("desk", {"zzzzzz": 1})

    @pytest.mark.parametrize("key,value", [("sample_ratio", 0.0), ("sample_ratio", 1.5), ("lambda_moe", -0.1),
                                           ("moe_top_k", 5), ("modalities", ["act", "xyz"]), ("modalities", [])])
    def test_constraints_name_the_key(self, key, value):
        with pytest.raises(ConfigError, match=key):
            resolve("desk", {key: value})

    @pytest.mark.parametrize("key,value", [("epochs", "ten"), ("use_lora", 1), ("lr", True), ("rounds", 2.5)])
    def test_type_mismatch(self, key, value):
        with pytest.raises(ConfigError, match=key):
            resolve("desk", {key: value})

    def test_int_accepted_for_float(self):
        assert resolve("desk", {"lr": 1}).lr == 1.0

    def test_sample_ratio_one_allowed(self):
        assert resolve("desk", {"sample_ratio": 1.0}).sample_ratio == 1.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            resolve("laptop")

    def test_full_size_preset(self):
        cfg = resolve("paper")
        assert (cfg.ts_dim, cfg.ts_layers, cfg.ts_heads, cfg.ts_head_dim, cfg.ts_ff_dim) == (512, 8, 8, 64, 2048)
        assert (cfg.lora_rank, cfg.lora_alpha, cfg.dart_emb, cfg.fusion_dim) == (16, 32.0, 512, 512)
        assert cfg.accel_frames == 500 and cfg.image_frames == 75

    def test_desk_sizes(self):
        cfg = resolve("desk")
        assert cfg.accel_frames == 50 and cfg.image_frames == 8
        assert cfg.modalities == list(MODALITIES)

    def test_replace_keeps_other_overrides(self):
        cfg = resolve("desk", {"epochs": 3}).replace(lr=0.01)
        assert cfg.epochs == 3 and cfg.lr == 0.01

    def test_hash_tracks_content(self):
        assert resolve("desk").hash() == resolve("desk").hash()
        assert resolve("desk").hash() != resolve("desk", {"seed": 1}).hash()


class TestLoadConfig:
    def test_file_then_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"epochs": 2, "lr": 0.5}))
        cfg = load_config(p, None, {"lr": 0.25})
        assert cfg.epochs == 2 and cfg.lr == 0.25

    def test_preset_in_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"preset": "paper"}))
        assert load_config(p).ts_dim == 512
        assert load_config(p, "desk").ts_dim == 32

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{epochs: 2")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_config(p)

    def test_non_object(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config(p)

    def test_echo_round_trip(self, tmp_path):
        cfg = resolve("desk", {"epochs": 4, "modalities": ["act", "pm"]})
        path = echo_config(cfg, tmp_path / "run")
        again = load_config(path)
        assert again == cfg and again.hash() == cfg.hash()
