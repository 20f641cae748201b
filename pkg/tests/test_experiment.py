"""Model/schedule builders: layouts, embedded centers, mode wiring."""

import numpy as np
import pytest

from abpinn.config import AdditionSpec, ExperimentConfig, ModelSpec, TrainSpec, loads
from abpinn.experiment import (
    build_model,
    build_problem,
    build_schedule,
    initial_centers,
    window_domain_constraint,
)
from abpinn.ansatz import EmbeddingSpec
from abpinn.tape import ContractError


def cfg_text(mode="abpinn", layout="linspace", extra_model="", problem="chirp",
             problem_extra="", addition="", init_l="6"):
    return f"""
[problem]
name = {problem}
{problem_extra}

[model]
mode = {mode}
subdomains = 6
layout = {layout}
init_l = {init_l}
{extra_model}

[train]
iterations = 100
freeze = 50
collocation = 16
{addition}
"""


def test_linspace_layout_includes_endpoints():
    cfg = loads(cfg_text())
    problem = build_problem(cfg)
    centers = initial_centers(cfg, problem)
    np.testing.assert_allclose(
        np.concatenate(centers), np.linspace(0, 1, 6)
    )


def test_grid_layout_uses_cell_centers():
    cfg = loads(cfg_text(layout="grid", extra_model="grid_shape = 3,2",
                         problem="helmholtz"))
    problem = build_problem(cfg)
    centers = np.stack(initial_centers(cfg, problem))
    xs = np.unique(centers[:, 0])
    ys = np.unique(centers[:, 1])
    np.testing.assert_allclose(xs, [-2 / 3, 0.0, 2 / 3])
    np.testing.assert_allclose(ys, [-0.5, 0.5])


def test_grid_layout_count_mismatch_rejected():
    cfg = loads(cfg_text(layout="grid", extra_model="grid_shape = 2,2",
                         problem="helmholtz"))
    problem = build_problem(cfg)
    with pytest.raises(ContractError):
        initial_centers(cfg, problem)


def test_explicit_layout_passthrough():
    cfg = loads(cfg_text(layout="explicit",
                         extra_model="centers = 0.1; 0.2; 0.3; 0.4; 0.5; 0.6"))
    problem = build_problem(cfg)
    centers = initial_centers(cfg, problem)
    assert [c[0] for c in centers] == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]


def test_embedded_window_centers_on_circle():
    cfg = loads(cfg_text(layout="grid", extra_model="grid_shape = 2,3",
                         init_l="1.5,0.75,0.75", problem="advection"))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, 0)
    assert model.embedding.embedded_dim == 3
    for s in model.subdomains:
        mu = s.window.mu.values
        assert mu[1] ** 2 + mu[2] ** 2 == pytest.approx(1.0)
        assert 0.0 < mu[0] < 1.0


def test_window_constraint_structure():
    problem = build_problem(loads(cfg_text(problem="advection", layout="grid",
                                           extra_model="grid_shape = 2,3")))
    emb = EmbeddingSpec(2, (1,))
    c = window_domain_constraint(problem, emb)
    assert c.intervals == ((0, 0.0, 1.0),)
    assert c.circles == ((1, 2),)


def test_pinn_mode_has_no_subdomains_and_zero_window_lr():
    cfg = loads(cfg_text(mode="pinn").replace("subdomains = 6", "subdomains = 0"))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, 0)
    sched = build_schedule(cfg, problem, 0)
    assert model.subdomain_count == 0 and model.global_net is not None
    assert sched.lr_mu == 0.0 and sched.lr_L == 0.0


def test_fbpinn_mode_has_no_global_net():
    cfg = loads(cfg_text(mode="fbpinn"))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, 0)
    sched = build_schedule(cfg, problem, 0)
    assert model.global_net is None and model.subdomain_count == 6
    assert sched.lr_mu == 0.0 and sched.lr_L == 0.0 and sched.freeze_iter == 0


def test_abpinn_plus_builds_with_empty_subdomains():
    text = cfg_text(mode="abpinn_plus",
                    addition="[addition]\nstart = 10\nperiod = 10\nmax_subdomains = 3\n")
    cfg = loads(text.replace("subdomains = 6", "subdomains = 0"))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, 0)
    sched = build_schedule(cfg, problem, 0)
    assert model.subdomain_count == 0
    assert sched.addition is not None
    assert sched.addition.max_subdomains == 3
    assert sched.addition.subnet_config.input_dim == 1


def test_subnet_seed_streams_mode_independent():
    ab = loads(cfg_text(mode="abpinn"))
    fb = loads(cfg_text(mode="fbpinn"))
    problem = build_problem(ab)
    m_ab = build_model(ab, problem, 5)
    m_fb = build_model(fb, problem, 5)
    for a, b in zip(m_ab.subdomains, m_fb.subdomains):
        for (wa, ba), (wb, bb) in zip(a.net.layers, b.net.layers):
            np.testing.assert_array_equal(wa.values, wb.values)
        np.testing.assert_array_equal(a.window.mu.values, b.window.mu.values)


def test_init_l_diagonal_dim_checked():
    cfg = loads(cfg_text(init_l="2,3"))
    problem = build_problem(cfg)
    with pytest.raises(ContractError):
        build_model(cfg, problem, 0)
