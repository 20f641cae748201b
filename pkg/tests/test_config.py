"""Config parsing: defaults, validation messages, round-trip equality."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abpinn.config import (
    AdditionSpec,
    ConfigError,
    ExperimentConfig,
    ModelSpec,
    TrainSpec,
    dumps,
    loads,
)

MINIMAL_CHIRP = """
[problem]
name = chirp

[model]
mode = abpinn
subdomains = 6

[train]
iterations = 100
freeze = 50
collocation = 32
"""


def test_minimal_chirp_defaults():
    cfg = loads(MINIMAL_CHIRP)
    assert cfg.problem == "chirp"
    assert cfg.problem_params == {}  # library fills omega=10, power=10
    from abpinn.experiment import build_problem

    problem = build_problem(cfg)
    assert problem.params["omega"] == 10.0
    assert problem.params["power"] == 10
    assert cfg.train.lr_net == 1e-3
    assert cfg.seeds == (0,)


def test_fbpinn_with_addition_rejected_by_name():
    text = MINIMAL_CHIRP.replace("mode = abpinn", "mode = fbpinn") + """
[addition]
start = 10
period = 10
max_subdomains = 2
"""
    with pytest.raises(ConfigError, match="addition"):
        loads(text)


def test_abpinn_plus_requires_addition():
    text = MINIMAL_CHIRP.replace("mode = abpinn", "mode = abpinn_plus").replace(
        "subdomains = 6", "subdomains = 0"
    )
    with pytest.raises(ConfigError, match="addition"):
        loads(text)


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError, match="wibble"):
        loads(MINIMAL_CHIRP + "wibble = 3\n")


def test_unknown_problem_param_rejected():
    text = MINIMAL_CHIRP.replace("name = chirp", "name = chirp\nc = 3")
    with pytest.raises(ConfigError, match="c"):
        loads(text)


def test_type_mismatch_names_key():
    text = MINIMAL_CHIRP.replace("iterations = 100", "iterations = ten")
    with pytest.raises(ConfigError, match=r"\[train\]"):
        loads(text)


def test_freeze_beyond_iterations_rejected():
    text = MINIMAL_CHIRP.replace("freeze = 50", "freeze = 500")
    with pytest.raises(ConfigError, match="freeze"):
        loads(text)


def test_mode_validation():
    with pytest.raises(ConfigError, match="mode"):
        loads(MINIMAL_CHIRP.replace("mode = abpinn", "mode = banana"))


def test_round_trip_identity_pinned_example():
    cfg = ExperimentConfig(
        problem="poisson",
        problem_params={"sigma": 0.05, "centers": ((-0.5, 0.0), (0.5, 0.0))},
        domain=None,
        model=ModelSpec(
            mode="abpinn_plus",
            window="quartic",
            init_l=(5.0, 5.0),
            global_hidden_layers=2,
            global_width=20,
            sub_hidden_layers=2,
            sub_width=20,
        ),
        train=TrainSpec(
            iterations=1000, freeze=700, collocation=64, lr_l=5e-3,
            eval_points=(64, 64),
        ),
        addition=AdditionSpec(start=100, period=100, max_subdomains=2),
        out_dir="runs/demo",
        seeds=(0, 1, 2),
        reference_csv=None,
    )
    assert loads(dumps(cfg)) == cfg


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(["chirp", "sine", "advection", "helmholtz", "kdv"]),
    st.sampled_from(["pinn", "abpinn"]),
    st.integers(1, 8),
    st.integers(10, 500),
    st.floats(1e-5, 1e-1),
    st.sampled_from(["gauss", "quartic", "sigmoid_product", "sigmoid_radial"]),
)
def test_round_trip_property(problem, mode, k, iters, lr, window):
    cfg = ExperimentConfig(
        problem=problem,
        model=ModelSpec(
            mode=mode,
            window=window,
            subdomains=0 if mode == "pinn" else k,
            layout="linspace" if problem in ("chirp", "sine") else "grid",
            grid_shape=None if problem in ("chirp", "sine") else (k, 1),
            init_l=3.0,
        ),
        train=TrainSpec(iterations=iters, freeze=iters // 2, collocation=16,
                        lr_net=lr),
        seeds=(0, 3),
    )
    assert loads(dumps(cfg)) == cfg


def test_domain_override_round_trip():
    text = MINIMAL_CHIRP.replace("name = chirp", "name = chirp\ndomain = -1,1")
    cfg = loads(text)
    assert cfg.domain == ((-1.0, 1.0),)
    assert loads(dumps(cfg)) == cfg


def test_malformed_domain_rejected():
    text = MINIMAL_CHIRP.replace("name = chirp", "name = chirp\ndomain = 1,-1")
    with pytest.raises(ConfigError, match="domain"):
        loads(text)
