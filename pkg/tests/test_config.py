import yaml
import pytest

from diffuq.config import config_from_dict, config_to_dict, load_config
from diffuq.solvers import SOLVER_NAMES

MINIMAL = {
    "experiment": "exp1_identity",
    "master_seed": 7,
    "sigma_y": 1.0,
    "solvers": ["reference_exact"],
}


def write(tmp_path, data):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_minimal_round_trip(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)
    assert cfg.n_cases == 20 and cfg.k_samples == 100
    assert cfg.operator["kind"] == "identity"
    assert cfg.schedule["steps"] == 100


def test_solver_hyperparameters_resolved(tmp_path):
    data = dict(MINIMAL, solvers=[{"name": "pnpdm",
                                   "hyperparameters": {"gibbs_iters": 5}}])
    cfg = load_config(write(tmp_path, data))
    hp = cfg.solvers[0].hyperparameters
    assert hp["gibbs_iters"] == 5
    assert "rho_coupling" in hp and "x_step" in hp


def test_missing_sigma_y_named(tmp_path):
    data = {k: v for k, v in MINIMAL.items() if k != "sigma_y"}
    with pytest.raises(ValueError, match="sigma_y"):
        load_config(write(tmp_path, data))


def test_unknown_solver_lists_all_names(tmp_path):
    data = dict(MINIMAL, solvers=["dsp"])
    with pytest.raises(ValueError) as err:
        load_config(write(tmp_path, data))
    for name in SOLVER_NAMES:
        assert name in str(err.value)


def test_unknown_top_level_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        config_from_dict(dict(MINIMAL, verbose=True))


def test_unknown_prior_key_rejected():
    with pytest.raises(ValueError, match="prior"):
        config_from_dict(dict(MINIMAL, prior={"dims": 16}))


def test_sample_count_aliases():
    cfg = config_from_dict(dict(MINIMAL, k_measurements=5, n_samples=10))
    assert cfg.n_cases == 5
    assert cfg.k_samples == 10


def test_exp1_forces_identity():
    with pytest.raises(ValueError, match="identity"):
        config_from_dict(dict(MINIMAL, operator={"kind": "binary_svd",
                                                 "obs_count": 8}))


def test_exp2_operator_defaults():
    cfg = config_from_dict(dict(MINIMAL, experiment="exp2_binary"))
    assert cfg.operator["kind"] == "binary_svd"
    assert cfg.operator["obs_count"] == 8
    assert cfg.operator["basis_mode"] == "random_orthogonal"


def test_count_bounds():
    with pytest.raises(ValueError, match="n_cases"):
        config_from_dict(dict(MINIMAL, n_cases=0))
    with pytest.raises(ValueError, match="k_samples"):
        config_from_dict(dict(MINIMAL, k_samples=1))


def test_sweep_axis_validation():
    good = dict(MINIMAL, sweep_axis={"solver": "mcg_diff", "name": "particles",
                                     "values": [8, 16]})
    cfg = config_from_dict(good)
    assert cfg.sweep_axis["values"] == [8, 16]
    with pytest.raises(ValueError, match="sweep_axis"):
        config_from_dict(dict(MINIMAL, sweep_axis={"solver": "mcg_diff"}))
    with pytest.raises(ValueError, match="hyperparameter"):
        config_from_dict(dict(MINIMAL,
                              sweep_axis={"solver": "mcg_diff",
                                          "name": "gibbs_iters",
                                          "values": [1]}))


def test_bad_experiment_name():
    with pytest.raises(ValueError, match="experiment"):
        config_from_dict(dict(MINIMAL, experiment="exp3"))
