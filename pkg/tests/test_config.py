import json

import pytest

from fedpipe_sim.config import CampaignConfig, ProfileSampler, from_dict, parse_config
from fedpipe_sim.errors import ConfigError


def test_minimal_config_fills_defaults():
    cfg = parse_config('{"seed": 1, "n_clients": 3}')
    assert cfg == CampaignConfig(seed=1, n_clients=3).replace()
    assert cfg.rounds == 100 and cfg.d == 16 and cfg.s == 8 and cfg.n_layers == 2
    assert cfg.planner == "fedpipe" and cfg.aggregation_weighting == "inverse_batch"
    assert isinstance(cfg.profiles, ProfileSampler)


def test_b_min_above_b_max_names_both_keys():
    with pytest.raises(ConfigError) as err:
        parse_config('{"seed": 1, "n_clients": 1, "b_min": 9, "b_max": 4}')
    assert "b_min" in str(err.value) and "b_max" in str(err.value)


def test_round_trip():
    text = json.dumps({
        "seed": 4, "n_clients": 2, "rank_menu": {"q": [4, 2], "k": [4], "v": [8, 1], "o": [2, 1]},
        "profiles": [{"c_max": 1e6, "m_max": 5e4, "dataset_size": 40}, {"c_max": 2e6, "m_max": 5e4}],
        "planner": "fixed_rank:2", "deadline": 3.5,
    })
    cfg = parse_config(text)
    assert parse_config(cfg.dumps()) == cfg
    assert parse_config(parse_config(cfg.dumps()).dumps()) == cfg


def test_sampler_round_trip():
    cfg = parse_config('{"seed": 0, "n_clients": 4, "profiles": {"c_max": [1, 2], "m_max": [3, 4], "dataset_size": [10, 20]}}')
    assert parse_config(cfg.dumps()) == cfg


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"seed": 1, "n_clients": 1, "bogus": 3}, "bogus"),
        ({"n_clients": 1}, "seed"),
        ({"seed": 1}, "n_clients"),
        ({"seed": 1, "n_clients": 0}, "n_clients"),
        ({"seed": 1, "n_clients": 1, "lambda1": 1.0}, "lambda1"),
        ({"seed": 1, "n_clients": 1, "rank_menu": [2, 4]}, "rank_menu.q"),
        ({"seed": 1, "n_clients": 1, "rank_menu": [32, 1]}, "rank_menu"),
        ({"seed": 1, "n_clients": 1, "planner": "random"}, "planner"),
        ({"seed": 1, "n_clients": 1, "aggregation_weighting": "equal"}, "aggregation_weighting"),
        ({"seed": 1, "n_clients": 2, "profiles": [{"c_max": 1, "m_max": 1}]}, "profiles"),
        ({"seed": 1, "n_clients": 1, "profiles": [{"c_max": -1, "m_max": 1}]}, "profiles[0].c_max"),
        ({"seed": 1, "n_clients": 1, "profiles": [{"c_max": 1, "m_max": 1, "x": 0}]}, "profiles[0]"),
        ({"seed": 1, "n_clients": 1, "samples_per_client": 4}, "samples_per_client"),
        ({"seed": 1, "n_clients": 1, "d": 2.5}, "d"),
        ({"seed": 1, "n_clients": 1, "deadline": 0}, "deadline"),
    ],
)
def test_field_level_errors(doc, field):
    with pytest.raises(ConfigError) as err:
        from_dict(doc)
    assert err.value.field == field


def test_malformed_json():
    with pytest.raises(ConfigError):
        parse_config("{seed: 1")


def test_planner_modes():
    assert CampaignConfig(seed=0, n_clients=1).replace().fixed_rank is None
    assert CampaignConfig(seed=0, n_clients=1, planner="fixed_rank:max").replace().fixed_rank == "max"
    assert CampaignConfig(seed=0, n_clients=1, planner="fixed_rank:4").replace().fixed_rank == 4
