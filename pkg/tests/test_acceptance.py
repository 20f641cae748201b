"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line with the measured quantity.

Criteria 5, 6 and 8 train or integrate at desk scale and are marked slow
(minutes to an hour together).  Criterion 7 is the paper-scale ordering
reproduction; it runs for hours and is opt-in via ABPINN_PAPER_SUITE=1.
"""

import math
import os

import numpy as np
import pytest

from abpinn import tape as ops
from abpinn.ansatz import AbPinnModel, Constraint, EmbeddingSpec, Subdomain
from abpinn.config import loads
from abpinn.experiment import (
    build_model,
    build_problem,
    build_schedule,
    ensure_reference,
)
from abpinn.nets import MlpConfig, glorot_init
from abpinn.problems import (
    ProblemName,
    analytic_field_fn,
    make_problem,
    reference_solution,
    residual,
)
from abpinn.spectral import SpectralConfig, kdv_mass, solve
from abpinn.tape import Tape
from abpinn.trainer import (
    STREAM_GLOBAL_NET,
    STREAM_SUBNET_BASE,
    component_rng,
    default_eval_grid,
    final_grid_residual,
    loss_node,
    relative_l2,
    run,
    sample_collocation,
    weighted_pool_choice,
)
from abpinn.windows import ReferenceWindow, WindowParams


def report(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def random_model(problem, K, width, seed):
    emb = EmbeddingSpec(problem.domain.dim, problem.periodic_dims)
    d = emb.embedded_dim
    model = AbPinnModel(
        embedding=emb,
        constraint=problem.constraint,
        reference_window=ReferenceWindow.GAUSS,
        global_net=glorot_init(MlpConfig(d, 2, width),
                               component_rng(seed, STREAM_GLOBAL_NET)),
    )
    rng = component_rng(seed, 12345)
    for i in range(K):
        model.subdomains.append(
            Subdomain(
                WindowParams.create(rng.uniform(-0.5, 0.5, d), 2.0, name=f"w{i}"),
                glorot_init(MlpConfig(d, 2, width),
                            component_rng(seed, STREAM_SUBNET_BASE + i), f"s{i}"),
            )
        )
    return model


# -- criterion 1: differentiation correctness --------------------------------


def test_criterion_1_differentiation():
    problems = ["chirp", "helmholtz", "kdv", "allen_cahn", "advection"]
    ks = [0, 1, 3]
    h = 1e-4
    worst_grad = 0.0
    worst_slot = 0.0
    rng = np.random.default_rng(0)
    for i in range(50):
        problem = make_problem(problems[i % len(problems)])
        model = random_model(problem, ks[i % 3], int(rng.integers(3, 7)), seed=i)
        pts = sample_collocation(problem.domain, 8, rng)

        def compute():
            t = Tape()
            return t, loss_node(model, problem, pts, t)

        t, ln = compute()
        t.backward(ln)
        groups = [g for _, g in model.param_groups()]
        analytic = {g.name: g.grads.copy() for g in groups}
        gmax = max(np.abs(v).max() for v in analytic.values())
        for g in groups:
            for j in range(len(g)):
                v0 = g.values[j]
                g.values[j] = v0 + h
                lp = float(ops.value_of(compute()[1]))
                g.values[j] = v0 - h
                lm = float(ops.value_of(compute()[1]))
                g.values[j] = v0
                fd = (lp - lm) / (2 * h)
                a = analytic[g.name][j]
                worst_grad = max(
                    worst_grad, abs(a - fd) / max(abs(a), abs(fd), 1e-3 * gmax)
                )
        # input derivatives up to order 3 against finite differences of the value
        if i % 10 == 0:
            point = sample_collocation(problem.domain, 1, rng)
            x_dir = problem.domain.dim - 1
            jet = model.field_jets(point, ((x_dir, 3),))
            hh = 1e-3

            def value_at(delta):
                q = point.copy()
                q[0, x_dir] += delta
                return float(model.field_values(q)[0])

            us = {k: value_at(k * hh) for k in (-2, -1, 0, 1, 2)}
            fd1 = (us[1] - us[-1]) / (2 * hh)
            fd2 = (us[1] - 2 * us[0] + us[-1]) / hh**2
            fd3 = (us[2] - 2 * us[1] + 2 * us[-1] - us[-2]) / (2 * hh**3)
            for k, fd in ((1, fd1), (2, fd2), (3, fd3)):
                an = float(np.asarray(jet.deriv(x_dir, k)))
                scale = max(abs(an), abs(fd), 1.0)
                worst_slot = max(worst_slot, abs(an - fd) / scale)
    ok = worst_grad < 1e-4 and worst_slot < 1e-2  # slot FD is O(h^2) at h=1e-3
    report(1, ok, f"worst gradient rel err {worst_grad:.2e} (tol 1e-4), "
                  f"worst input-derivative rel err {worst_slot:.2e}")


# -- criterion 2: analytic-residual oracles -----------------------------------


def test_criterion_2_analytic_residuals():
    worst = {}
    for name in ("chirp", "advection", "helmholtz", "poisson"):
        problem = make_problem(name)
        rng = np.random.default_rng(42)
        lo = np.asarray(problem.domain.lows) + 1e-6
        hi = np.asarray(problem.domain.highs) - 1e-6
        pts = rng.uniform(lo, hi, (100, problem.domain.dim))
        res = residual(problem, analytic_field_fn(problem), pts)
        worst[name] = float(np.abs(np.asarray(res)).max())
    ok = all(v < 1e-8 for v in worst.values())
    report(2, ok, "max |residual| per problem: "
           + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (tol 1e-8)")


# -- criterion 3: hard constraints ---------------------------------------------


def test_criterion_3_hard_constraints():
    rng = np.random.default_rng(7)
    xs = rng.uniform(-1, 1, 1000)
    ts = rng.uniform(0, 1, 1000)
    worst = 0.0

    model = random_model(make_problem("chirp"), 2, 6, seed=1)
    worst = max(worst, np.abs(model.field_values(np.full((1000, 1), 1.0))).max())

    model = random_model(make_problem("advection"), 2, 6, seed=2)
    pts = np.stack([np.zeros(1000), xs], axis=1)
    worst = max(worst, np.abs(model.field_values(pts) - np.sin(np.pi * xs)).max())

    for name in ("helmholtz", "poisson"):
        model = random_model(make_problem(name), 2, 6, seed=3)
        edges = np.concatenate([
            np.stack([np.ones(250), rng.uniform(-1, 1, 250)], axis=1),
            np.stack([-np.ones(250), rng.uniform(-1, 1, 250)], axis=1),
            np.stack([rng.uniform(-1, 1, 250), np.ones(250)], axis=1),
            np.stack([rng.uniform(-1, 1, 250), -np.ones(250)], axis=1),
        ])
        worst = max(worst, np.abs(model.field_values(edges)).max())

    model = random_model(make_problem("allen_cahn"), 2, 6, seed=4)
    pts = np.stack([np.zeros(1000), xs], axis=1)
    target = xs**2 * np.cos(np.pi * xs)
    worst = max(worst, np.abs(model.field_values(pts) - target).max())

    model = random_model(make_problem("kdv"), 2, 6, seed=5)
    worst = max(worst, np.abs(model.field_values(pts) - np.cos(np.pi * xs)).max())

    # periodicity of value and first spatial derivative.  The Allen-Cahn
    # wrapper's additive term x^2 cos(pi x) is value-periodic but has
    # derivative -/+2 at the wrap (the benchmark's initial condition itself
    # breaks derivative periodicity at t=0), so its derivative check runs on
    # the raw embedded field, which is smooth on the circle.
    worst_p = 0.0
    left = np.stack([ts, -np.ones(1000)], axis=1)
    right = np.stack([ts, np.ones(1000)], axis=1)
    for name, seed in (("advection", 6), ("allen_cahn", 7), ("kdv", 8)):
        model = random_model(make_problem(name), 2, 6, seed=seed)
        worst_p = max(
            worst_p, np.abs(model.field_values(left) - model.field_values(right)).max()
        )
        if name == "allen_cahn":
            model = AbPinnModel(
                embedding=model.embedding,
                constraint=Constraint.IDENTITY,
                reference_window=model.reference_window,
                global_net=model.global_net,
                subdomains=model.subdomains,
            )
        jl = model.field_jets(left[:100], ((1, 1),))
        jr = model.field_jets(right[:100], ((1, 1),))
        worst_p = max(
            worst_p,
            np.abs(np.asarray(jl.deriv(1, 1)) - np.asarray(jr.deriv(1, 1))).max(),
        )
    ok = worst < 1e-12 and worst_p < 1e-12
    report(3, ok, f"max boundary violation {worst:.2e}, "
                  f"max periodicity violation {worst_p:.2e} (tol 1e-12)")


# -- criterion 4: sampler correctness --------------------------------------------


def test_criterion_4_sampler():
    rng = np.random.default_rng(11)
    pool = np.arange(4.0).reshape(4, 1)
    weights = np.array([1.0, 3.0, 0.0, 4.0])
    counts = np.zeros(4)
    n = 10_000
    for _ in range(n):
        _, idx = weighted_pool_choice(pool, weights, rng)
        counts[idx] += 1
    freq = counts / n
    expected = np.array([0.125, 0.375, 0.0, 0.5])
    worst = float(np.abs(freq - expected).max())
    ok = worst <= 0.02
    report(4, ok, f"freq {np.round(freq, 4).tolist()} vs {expected.tolist()}, "
                  f"max dev {worst:.4f} (tol 0.02)")


# -- criterion 5: spectral self-convergence --------------------------------------


@pytest.mark.slow
def test_criterion_5_kdv():
    a = solve(SpectralConfig(ProblemName.KDV, n_modes=512, dt=1e-5))
    b = solve(SpectralConfig(ProblemName.KDV, n_modes=1024, dt=5e-6))
    diff = np.linalg.norm(a.values - b.values[:, ::2]) / np.linalg.norm(
        b.values[:, ::2]
    )
    masses = [kdv_mass(a, i) for i in range(a.times.size)]
    drift = max(abs(m - masses[0]) for m in masses) / np.abs(a.values).max()
    ok = diff < 1e-6 and drift < 1e-8
    report("5 (KdV)", ok, f"self-convergence relL2 {diff:.2e} (tol 1e-6), "
                          f"mean drift {drift:.2e} (tol 1e-8)")


@pytest.mark.slow
def test_criterion_5_allen_cahn():
    a = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=512, dt=1e-4))
    b = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=1024, dt=5e-5))
    diff = np.linalg.norm(a.values - b.values[:, ::2]) / np.linalg.norm(
        b.values[:, ::2]
    )
    # Known-red: the initial condition's derivative kink at the periodic wrap
    # and the ~0.0063-wide late interfaces leave ~8e-6 of genuine spatial
    # truncation at 512 modes (time refinement alone agrees to 1.6e-12).
    ok = diff < 1e-6
    report("5 (Allen-Cahn)", ok, f"self-convergence relL2 {diff:.2e} (tol 1e-6)")


# -- criterion 6: desk-scale chirp -------------------------------------------------

DESK_CHIRP = """
[problem]
name = chirp
omega = 5
power = 9
domain = -1,1

[model]
mode = {mode}
subdomains = 6
layout = linspace
init_l = 6
global_width = 12
sub_width = 10

[train]
iterations = 20000
freeze = 14000
collocation = 768
lr_net = 1e-2
lr_mu = 3e-3
lr_l = 3e-2
decay_floor = 0.1
record_every = 4000
eval_points = 2000

[output]
directory = unused
seeds = 0
"""


def desk_chirp_run(mode, seed):
    cfg = loads(DESK_CHIRP.format(mode=mode))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, seed)
    schedule = build_schedule(cfg, problem, seed)
    run(model, problem, schedule)
    res = final_grid_residual(model, problem, schedule)
    pts, _ = default_eval_grid(problem, schedule)
    l2 = relative_l2(model.field_values(pts), reference_solution(problem, pts))[0]
    return res, l2


@pytest.mark.slow
def test_criterion_6_desk_chirp():
    results = {}
    for seed in (0, 1, 2):
        for mode in ("abpinn", "fbpinn"):
            results[(mode, seed)] = desk_chirp_run(mode, seed)
    best = min((0, 1, 2), key=lambda s: results[("abpinn", s)][0])
    ab_res, ab_l2 = results[("abpinn", best)]
    fb_res, fb_l2 = results[("fbpinn", best)]
    ok = ab_l2 < 5e-2 and ab_res < fb_res
    report(6, ok, f"best AB seed {best}: relL2 {ab_l2:.4f} (tol 5e-2); "
                  f"residual AB {ab_res:.4g} vs FB twin {fb_res:.4g}")


# -- criterion 7: paper-scale ordering (opt-in long suite) --------------------------


@pytest.mark.paper
@pytest.mark.skipif(
    os.environ.get("ABPINN_PAPER_SUITE") != "1",
    reason="paper-scale sweep (hours); set ABPINN_PAPER_SUITE=1 to run",
)
def test_criterion_7_paper_chirp_ordering():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    with open(os.path.join(here, "configs", "chirp.cfg")) as fh:
        base = fh.read()
    results = {}
    for mode, widths in (
        ("abpinn", None),
        ("fbpinn", ("sub_width = 10", "sub_width = 12")),
        ("pinn", None),
    ):
        text = base.replace("mode = abpinn", f"mode = {mode}")
        if mode == "pinn":
            text = text.replace("subdomains = 6", "subdomains = 0")
            text = text.replace("global_width = 12", "global_width = 32")
        if widths:
            text = text.replace(*widths)
        cfg = loads(text)
        problem = build_problem(cfg)
        per_seed = []
        for seed in range(5):
            model = build_model(cfg, problem, seed)
            schedule = build_schedule(cfg, problem, seed)
            run(model, problem, schedule)
            res = final_grid_residual(model, problem, schedule)
            pts, _ = default_eval_grid(problem, schedule)
            l2 = relative_l2(
                model.field_values(pts), reference_solution(problem, pts)
            )[0]
            per_seed.append((res, l2))
        res, l2 = min(per_seed)
        results[mode] = l2
        print(f"  paper chirp {mode}: best-of-5 relL2 {l2:.4g}")
    ok = (
        results["abpinn"] < results["fbpinn"]
        and results["abpinn"] < results["pinn"]
        and results["abpinn"] < 5.5e-2
    )
    report(7, ok, f"relL2 abpinn {results['abpinn']:.4g} < fbpinn "
                  f"{results['fbpinn']:.4g} and < pinn {results['pinn']:.4g}, "
                  f"and < 5.5e-2")


# -- criterion 8: subdomain-addition dynamics ---------------------------------------

AC_FIFTH = """
[problem]
name = allen_cahn

[model]
mode = abpinn_plus
init_l = 1.5,0.75,0.75
global_hidden_layers = 4
global_width = 10
sub_hidden_layers = 4
sub_width = 10

[train]
iterations = 160000
freeze = 130000
collocation = 500
lr_net = 1e-3
lr_mu = 1e-3
lr_l = 1e-2
record_every = 1000
eval_points = 128,128

[addition]
start = 100000
period = 4000
max_subdomains = 5

[output]
directory = unused
seeds = 0
"""


@pytest.mark.slow
def test_criterion_8_allen_cahn_addition_dynamics(tmp_path):
    cfg = loads(AC_FIFTH)
    problem = build_problem(cfg)
    ensure_reference(problem, str(tmp_path / "ac_ref.csv"))
    model = build_model(cfg, problem, 0)
    schedule = build_schedule(cfg, problem, 0)
    _, records = run(model, problem, schedule)
    by_iter = {r.iter: r for r in records}
    additions = [r.iter for r in records if r.event == "added_subdomain"]
    assert len(additions) == 5
    spikes = sum(
        by_iter[a + 1].residual_loss > by_iter[a - 1].residual_loss
        for a in additions
    )
    pre = by_iter[additions[0] - 1].residual_loss
    final = records[-1].residual_loss
    ok = spikes >= 4 and final < pre
    report(8, ok, f"{spikes}/5 additions spiked; final loss {final:.4g} vs "
                  f"pre-addition {pre:.4g}")


# -- criterion 9: degeneracy equivalences --------------------------------------------

TINY_EQ = """
[problem]
name = chirp
omega = 2
power = 3

[model]
mode = {mode}
subdomains = {subdomains}
layout = linspace
init_l = 4
global_width = 8
sub_width = 6

[train]
iterations = 200
freeze = 100
collocation = 32
record_every = 25
eval_points = 200
pool_size = 64

[output]
directory = unused
seeds = 0
"""


def test_criterion_9_degeneracies():
    # (a) abpinn with K=0 is bit-identical to pinn mode
    traces = {}
    for mode in ("pinn", "abpinn"):
        text = TINY_EQ.format(mode=mode, subdomains=0)
        if mode == "abpinn":
            text = text.replace("subdomains = 0", "subdomains = 1")
            # K=0 abpinn is invalid config-wise; build the degenerate model
            # directly below instead
        cfg = loads(TINY_EQ.format(mode="pinn", subdomains=0))
        problem = build_problem(cfg)
        model = build_model(cfg, problem, 3)
        if mode == "abpinn":
            model = AbPinnModel(
                embedding=model.embedding,
                constraint=model.constraint,
                reference_window=model.reference_window,
                global_net=glorot_init(
                    MlpConfig(model.embedding.embedded_dim, 2, 8),
                    component_rng(3, STREAM_GLOBAL_NET),
                    name="global",
                ),
                subdomains=[],
                window_constraint=model.window_constraint,
            )
        schedule = build_schedule(cfg, problem, 3)
        _, records = run(model, problem, schedule)
        traces[mode] = [
            (r.iter, r.residual_loss, r.l2_error, r.subdomain_count, r.event)
            for r in records
        ]
    identical = traces["pinn"] == traces["abpinn"]

    # (b) fbpinn mode never mutates window parameters
    cfg = loads(TINY_EQ.format(mode="fbpinn", subdomains=3))
    problem = build_problem(cfg)
    model = build_model(cfg, problem, 4)
    snaps = [s.window.copy_values() for s in model.subdomains]
    run(model, problem, build_schedule(cfg, problem, 4))
    static = all(
        np.array_equal(mu, s.window.mu.values)
        and np.array_equal(lf, s.window.L.values)
        for (mu, lf), s in zip(snaps, model.subdomains)
    )
    ok = identical and static
    report(9, ok, f"pinn/abpinn-K0 records bit-identical: {identical}; "
                  f"fbpinn windows static: {static}")
