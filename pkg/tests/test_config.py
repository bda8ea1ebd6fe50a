import json

import pytest

from restir_ir.config import ConfigError, DenoiseConfig, OptimConfig, RenderConfig, SceneConfig, from_dict, load_config, to_dict


def test_defaults_match_documented_values():
    r, o, d = RenderConfig(), OptimConfig(), DenoiseConfig()
    assert (r.spp, r.bounces, r.ris_candidates, r.spatial_neighbors, r.spatial_radius_px, r.temporal_cap) == (
        32, 3, 32, 4, 8, 20.0)
    assert (o.lr_env, o.lr_material, o.beta1, o.beta2) == (1e-2, 5e-3, 0.9, 0.999)
    assert (o.lambda_albedo, o.lambda_roughness, o.lambda_light) == (0.03, 0.01, 0.005)
    assert (d.sigma_rt, d.sigma_n, d.iterations) == (0.5, 0.3, 3)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict(SceneConfig, {"mesh": "a.obj", "rendr": {}})
    with pytest.raises(ConfigError, match="render"):
        from_dict(SceneConfig, {"render": {"sp": 3}})


def test_type_errors():
    with pytest.raises(ConfigError):
        from_dict(RenderConfig, {"spp": "32"})
    with pytest.raises(ConfigError):
        from_dict(RenderConfig, {"spp": True})
    with pytest.raises(ConfigError):
        from_dict(RenderConfig, {"bounces": 5})
    with pytest.raises(ConfigError):
        from_dict(SceneConfig, {"env_up": "x"})


def test_roundtrip_and_relative_paths(tmp_path):
    cfg = SceneConfig(mesh="m.obj", env="e.hdr", dataset="ds", render=RenderConfig(spp=4))
    p = tmp_path / "s.json"
    p.write_text(json.dumps(to_dict(cfg)))
    back = load_config(p)
    assert back.render.spp == 4
    assert back.mesh == str(tmp_path / "m.obj") and back.env == str(tmp_path / "e.hdr")
    assert back.dataset == str(tmp_path / "ds")


def test_constant_env_kept(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"mesh": "m.obj", "env": [0.1, 0.2, 0.3]}))
    assert load_config(p).env == [0.1, 0.2, 0.3]


def test_bad_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
