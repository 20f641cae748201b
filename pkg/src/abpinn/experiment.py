"""Build models from configs, run training, and emit plot-ready CSV files.

Per seed, a run writes into ``<out>/seed_<s>/``:

    loss_history.csv   iter,residual_loss,l2_error,subdomain_count,event
    solution.csv       grid coordinates + the trained field u
    error.csv          grid coordinates + |u - u_ref|
    residual.csv       grid coordinates + the pointwise squared residual
    windows.csv        window snapshots (iter, index, kind, mu.., L..)
    envelope.csv       grid coordinates + max-over-windows envelope

plus ``summary.csv`` at the output root marking the seed with the lowest
final PDE residual (the selection rule used for multi-seed comparisons).

All CSVs are RFC-4180-style with '.' decimals, LF line endings, and floats
printed with 17 significant digits so outputs are byte-reproducible.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .ansatz import AbPinnModel, EmbeddingSpec, Subdomain
from .config import ExperimentConfig
from .nets import MlpConfig, glorot_init
from .problems import ProblemName, ProblemSpec, make_problem, reference_solution
from .spectral import default_config, load_grid, save_grid, solve
from .tape import ContractError
from .trainer import (
    STREAM_GLOBAL_NET,
    STREAM_SUBNET_BASE,
    AdditionPlan,
    TrainSchedule,
    TrainingDiverged,
    component_rng,
    default_eval_grid,
    embed_point,
    final_grid_residual,
    relative_l2,
    run,
    squared_residuals,
)
from .windows import DomainConstraint, ReferenceWindow, WindowParams, WindowSet, envelope

DEFAULT_REFERENCE_DIR = "references"


def reference_path(cfg_or_problem, reference_csv=None):
    name = (
        cfg_or_problem
        if isinstance(cfg_or_problem, str)
        else cfg_or_problem.problem
    )
    if reference_csv:
        return reference_csv
    return os.path.join(DEFAULT_REFERENCE_DIR, f"{name}.csv")


def ensure_reference(problem: ProblemSpec, path, force=False):
    """Attach a spectral reference grid, generating the CSV if absent."""
    if not problem.is_spectral:
        return problem
    if force or not os.path.exists(path):
        grid = solve(default_config(problem.name))
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        save_grid(grid, path)
    problem.reference_grid = load_grid(path)
    return problem


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    domain = None
    if cfg.domain is not None:
        from .problems import Box

        names = ("x",) if len(cfg.domain) == 1 else ("t", "x")
        if cfg.problem in ("helmholtz", "poisson"):
            names = ("x", "y")
        domain = Box(
            tuple(lo for lo, _ in cfg.domain),
            tuple(hi for _, hi in cfg.domain),
            names,
        )
    params = dict(cfg.problem_params)
    if cfg.problem in ("chirp", "sine") and "power" in params:
        params["power"] = int(params["power"])
    return make_problem(cfg.problem, domain=domain, **params)


def window_domain_constraint(problem: ProblemSpec, embedding: EmbeddingSpec):
    """Projection spec for window centers in the embedded space."""
    intervals, circles = [], []
    col = 0
    for i in range(embedding.input_dim):
        if i in embedding.periodic:
            circles.append((col, col + 1))
            col += 2
        else:
            intervals.append((col, problem.domain.lows[i], problem.domain.highs[i]))
            col += 1
    return DomainConstraint(intervals, circles)


def initial_centers(cfg: ExperimentConfig, problem: ProblemSpec):
    """Raw-coordinate window centers for the configured layout."""
    m = cfg.model
    k = m.subdomains
    box = problem.domain
    if m.layout == "explicit":
        centers = [np.asarray(c, dtype=float) for c in m.centers]
        if len(centers) != k:
            raise ContractError(
                f"explicit layout lists {len(centers)} centers for {k} subdomains"
            )
        return centers
    if m.layout == "linspace":
        if box.dim != 1:
            raise ContractError("linspace layout is for 1-D problems")
        return [np.array([x]) for x in np.linspace(box.lows[0], box.highs[0], k)]
    shape = m.grid_shape
    if int(np.prod(shape)) != k:
        raise ContractError(f"grid_shape {shape} does not produce {k} subdomains")
    axes = [
        lo + (np.arange(s) + 0.5) * (hi - lo) / s
        for lo, hi, s in zip(box.lows, box.highs, shape)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return list(np.stack([g.ravel() for g in mesh], axis=1))


def build_model(cfg: ExperimentConfig, problem: ProblemSpec, seed: int) -> AbPinnModel:
    m = cfg.model
    embedding = EmbeddingSpec(problem.domain.dim, problem.periodic_dims)
    d = embedding.embedded_dim
    kind = ReferenceWindow(m.window)
    model = AbPinnModel(
        embedding=embedding,
        constraint=problem.constraint,
        reference_window=kind,
        global_net=None,
        subdomains=[],
        window_constraint=window_domain_constraint(problem, embedding),
    )
    if m.mode != "fbpinn":
        model.global_net = glorot_init(
            MlpConfig(d, m.global_hidden_layers, m.global_width),
            component_rng(seed, STREAM_GLOBAL_NET),
            name="global",
        )
    if m.mode in ("fbpinn", "abpinn"):
        sub_cfg = MlpConfig(d, m.sub_hidden_layers, m.sub_width)
        for i, center in enumerate(initial_centers(cfg, problem)):
            mu = embed_point(embedding, center)
            window = WindowParams.create(mu, _init_l_matrix(m.init_l, d), name=f"win{i}")
            net = glorot_init(
                sub_cfg, component_rng(seed, STREAM_SUBNET_BASE + i), name=f"sub{i}"
            )
            model.subdomains.append(Subdomain(window, net))
    return model


def _init_l_matrix(init_l, dim):
    if isinstance(init_l, tuple):
        if len(init_l) != dim:
            raise ContractError(
                f"init_l diagonal has {len(init_l)} entries for embedded dim {dim}"
            )
        return np.asarray(init_l)
    return float(init_l)


def build_schedule(cfg: ExperimentConfig, problem: ProblemSpec, seed: int) -> TrainSchedule:
    m, t = cfg.model, cfg.train
    addition = None
    if cfg.addition is not None:
        d = EmbeddingSpec(problem.domain.dim, problem.periodic_dims).embedded_dim
        addition = AdditionPlan(
            start_iter=cfg.addition.start,
            period_iters=cfg.addition.period,
            max_subdomains=cfg.addition.max_subdomains,
            init_L=_init_l_matrix(m.init_l, d),
            subnet_config=MlpConfig(d, m.sub_hidden_layers, m.sub_width),
        )
    zero_windows = m.mode in ("pinn", "fbpinn")
    return TrainSchedule(
        total_iters=t.iterations,
        freeze_iter=0 if zero_windows else t.freeze,
        collocation_batch=t.collocation,
        lr_net=t.lr_net,
        lr_mu=0.0 if zero_windows else t.lr_mu,
        lr_L=0.0 if zero_windows else t.lr_l,
        decay_floor=t.decay_floor,
        addition=addition,
        pool_size=t.pool_size,
        eval_grid=t.eval_points,
        seed=seed,
        record_every=t.record_every,
    )


# -- CSV helpers ----------------------------------------------------------


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _f(x):
    return f"{float(x):.17g}"


def write_loss_history(path, records):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["iter", "residual_loss", "l2_error", "subdomain_count", "event"])
        for r in records:
            w.writerow(
                [r.iter, _f(r.residual_loss), _f(r.l2_error), r.subdomain_count,
                 r.event or ""]
            )


def write_field_csv(path, names, points, column, values):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(list(names) + [column])
        for row, v in zip(points, values):
            w.writerow([_f(c) for c in row] + [_f(v)])


class WindowLog:
    """Collects window snapshots (kind, mu, packed L) across training."""

    def __init__(self, model: AbPinnModel):
        self.model = model
        self.rows = []

    def snapshot(self, iteration, event=None):
        kind = self.model.reference_window.value
        for idx, sub in enumerate(self.model.subdomains):
            mu = sub.window.mu.values
            lf = sub.window.L.values
            self.rows.append((iteration, idx, kind, tuple(mu), tuple(lf)))

    def write(self, path):
        dims = max((len(r[3]) for r in self.rows), default=0)
        tri = max((len(r[4]) for r in self.rows), default=0)
        header = (
            ["iter", "window", "kind"]
            + [f"mu{i}" for i in range(dims)]
            + [f"l{i}" for i in range(tri)]
        )
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(header)
            for it, idx, kind, mu, lf in self.rows:
                w.writerow([it, idx, kind] + [_f(x) for x in mu] + [_f(x) for x in lf])


def run_seed(cfg: ExperimentConfig, problem: ProblemSpec, seed: int, seed_dir: str):
    """Train one seed and write its output files; returns the summary row."""
    os.makedirs(seed_dir, exist_ok=True)
    model = build_model(cfg, problem, seed)
    schedule = build_schedule(cfg, problem, seed)
    log = WindowLog(model)
    log.snapshot(0)

    def on_event(iteration, event):
        log.snapshot(iteration, event)

    diverged = ""
    records = []
    try:
        _, records = run(model, problem, schedule, on_event=on_event)
    except TrainingDiverged as exc:
        diverged = str(exc)
    log.snapshot(schedule.total_iters)

    write_loss_history(os.path.join(seed_dir, "loss_history.csv"), records)
    log.write(os.path.join(seed_dir, "windows.csv"))

    pts, _ = default_eval_grid(problem, schedule)
    names = problem.domain.names
    u = model.field_values(pts)
    u_ref = reference_solution(problem, pts)
    write_field_csv(os.path.join(seed_dir, "solution.csv"), names, pts, "u", u)
    write_field_csv(
        os.path.join(seed_dir, "error.csv"), names, pts, "abs_error", np.abs(u - u_ref)
    )
    write_field_csv(
        os.path.join(seed_dir, "residual.csv"),
        names,
        pts,
        "squared_residual",
        squared_residuals(model, problem, pts),
    )
    from .trainer import embed_points_batch

    env = envelope(model.window_set(), embed_points_batch(model.embedding, pts))
    write_field_csv(os.path.join(seed_dir, "envelope.csv"), names, pts, "envelope", env)

    final_res = float("nan") if diverged else final_grid_residual(model, problem, schedule)
    final_l2 = (
        float("nan") if diverged else relative_l2(u, u_ref)[0]
    )
    return {
        "seed": seed,
        "final_residual": final_res,
        "final_l2": final_l2,
        "subdomains": model.subdomain_count,
        "diverged": diverged,
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds=None):
    """Run all configured seeds; failures are recorded, not fatal."""
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    problem = build_problem(cfg)
    ensure_reference(problem, reference_path(cfg, cfg.reference_csv))
    rows = []
    for seed in seeds if seeds is not None else cfg.seeds:
        rows.append(run_seed(cfg, problem, seed, os.path.join(out, f"seed_{seed}")))
    finite = [r for r in rows if not r["diverged"] and np.isfinite(r["final_residual"])]
    best = min(finite, key=lambda r: r["final_residual"])["seed"] if finite else None
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["seed", "final_residual", "final_l2", "subdomain_count",
                    "diverged", "best"])
        for r in rows:
            w.writerow(
                [r["seed"], _f(r["final_residual"]), _f(r["final_l2"]),
                 r["subdomains"], r["diverged"], int(r["seed"] == best)]
            )
    return rows
