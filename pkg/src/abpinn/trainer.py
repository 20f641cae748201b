"""Training loop: residual loss, per-group Adam with exponential decay,
two-phase window freeze, and residual-proportional subdomain addition.

Every parameter group (each network layer, each window center mu, each
window factor L) carries its own Adam state, initial learning rate, and
decay clock starting at the iteration the group was created, so subdomains
added mid-run decay to the same 1% floor by the end of training.  Window
groups stop updating permanently once the freeze iteration has passed;
the networks keep fine-tuning.

Collocation points are resampled uniformly every iteration.  All randomness
flows through per-component generators derived from the run seed, so runs
are reproducible and, e.g., subnetwork i receives identical initial weights
whether or not a global network exists.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tape as ops
from .ansatz import AbPinnModel, Subdomain
from .fastpath import SlotSpec, field_stack, to_jet
from .nets import MlpConfig, glorot_init
from .problems import ProblemSpec, reference_solution, residual_of_jet
from .tape import ContractError, Tape
from .windows import WindowParams, project_constraints

# fixed rng stream ids per component
STREAM_COLLOCATION = 0
STREAM_POOL = 1
STREAM_GLOBAL_NET = 10
STREAM_SUBNET_BASE = 100


class TrainingDiverged(RuntimeError):
    """The loss became non-finite; message carries iteration and group norms."""


def component_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), int(stream)]))


@dataclass(frozen=True)
class AdditionPlan:
    """On-the-fly subdomain insertion timetable."""

    start_iter: int
    period_iters: int
    max_subdomains: int
    init_L: object
    subnet_config: MlpConfig

    def iterations(self, existing: int):
        """1-based iterations at which additions happen."""
        count = max(0, self.max_subdomains - existing)
        return [self.start_iter + j * self.period_iters for j in range(count)]


@dataclass
class TrainSchedule:
    total_iters: int
    freeze_iter: int
    collocation_batch: int
    lr_net: float = 1e-3
    lr_mu: float = 1e-3
    lr_L: float = 1e-3
    decay_floor: float = 0.01
    addition: AdditionPlan | None = None
    pool_size: int = 10_000
    eval_grid: tuple | None = None
    seed: int = 0
    record_every: int = 100

    def __post_init__(self):
        if self.freeze_iter > self.total_iters:
            raise ContractError("freeze_iter must not exceed total_iters")
        if min(self.lr_net, self.lr_mu, self.lr_L) < 0:
            raise ContractError("learning rates must be >= 0")
        if not 0 < self.decay_floor <= 1:
            raise ContractError("decay_floor must lie in (0, 1]")


@dataclass
class TrainRecord:
    iter: int
    residual_loss: float
    l2_error: float
    subdomain_count: int
    event: str | None = None


def lr_at(lr0: float, t: int, horizon: int, floor: float) -> float:
    """Exponential decay from lr0 to floor*lr0 across ``horizon`` steps."""
    if horizon <= 0:
        return lr0 * floor
    return lr0 * floor ** (min(t, horizon) / horizon)


@dataclass
class _GroupState:
    kind: str
    group: object
    lr0: float
    start_iter: int
    m: np.ndarray = None
    v: np.ndarray = None
    steps: int = 0

    def __post_init__(self):
        self.m = np.zeros(len(self.group))
        self.v = np.zeros(len(self.group))


class Optimizer:
    """Per-group Adam (beta1=0.9, beta2=0.999, eps=1e-8) with group decay clocks."""

    BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

    def __init__(self, schedule: TrainSchedule):
        self.schedule = schedule
        self.states = {}

    def lr_for(self, kind):
        s = self.schedule
        return {"net": s.lr_net, "mu": s.lr_mu, "L": s.lr_L}[kind]

    def register(self, kind, group, start_iter=0):
        if id(group) not in self.states:
            self.states[id(group)] = _GroupState(kind, group, self.lr_for(kind), start_iter)

    def register_model(self, model: AbPinnModel, start_iter=0):
        for kind, group in model.param_groups():
            self.register(kind, group, start_iter)

    def step(self, model: AbPinnModel, iteration: int):
        """Apply one Adam update at 0-based ``iteration``; project window centers."""
        sched = self.schedule
        frozen = iteration >= sched.freeze_iter
        for kind, group in model.param_groups():
            st = self.states[id(group)]
            if st.lr0 == 0.0 or (frozen and kind in ("mu", "L")):
                continue
            horizon = max(1, sched.total_iters - 1 - st.start_iter)
            lr = lr_at(st.lr0, iteration - st.start_iter, horizon, sched.decay_floor)
            st.steps += 1
            g = group.grads
            st.m *= self.BETA1
            st.m += (1.0 - self.BETA1) * g
            st.v *= self.BETA2
            st.v += (1.0 - self.BETA2) * (g * g)
            denom = np.sqrt(st.v / (1.0 - self.BETA2**st.steps))
            denom += self.EPS
            group.values -= (lr / (1.0 - self.BETA1**st.steps)) * st.m / denom
        if not frozen and model.window_constraint is not None:
            for s in model.subdomains:
                project_constraints(s.window, model.window_constraint)


def sample_collocation(domain, n, rng):
    """n i.i.d. uniform points strictly inside the open domain box."""
    if n < 1:
        raise ContractError("need at least one collocation point")
    lo = np.asarray(domain.lows)
    hi = np.asarray(domain.highs)
    pts = rng.uniform(lo, hi, (n, domain.dim))
    on_edge = np.any((pts <= lo) | (pts >= hi), axis=1)
    while np.any(on_edge):  # measure-zero event; redrawn for the open-box contract
        pts[on_edge] = rng.uniform(lo, hi, (int(on_edge.sum()), domain.dim))
        on_edge = np.any((pts <= lo) | (pts >= hi), axis=1)
    return pts


def loss_node(model: AbPinnModel, problem: ProblemSpec, points, tape: Tape,
              track_windows=True):
    """Mean squared residual over the batch, recorded on ``tape``.

    ``track_windows=False`` skips gradient tracking of window parameters
    (used once the windows are frozen).
    """
    if len(points) == 0:
        raise ContractError("empty collocation batch")
    spec = SlotSpec(problem.derivative_request)
    stack = field_stack(model, points, spec, tape=tape, track_windows=track_windows)
    jet = to_jet(stack, spec)
    res = residual_of_jet(problem, jet, points)
    res_value = ops.value_of(res)
    if not np.all(np.isfinite(res_value)):
        bad = int(np.flatnonzero(~np.isfinite(res_value))[0])
        raise TrainingDiverged(
            f"non-finite residual at point {points[bad]} (index {bad})"
        )
    return ops.mean_all(ops.mul(res, res))


def squared_residuals(model: AbPinnModel, problem: ProblemSpec, points):
    """Pointwise squared residual, no gradient tracking."""
    spec = SlotSpec(problem.derivative_request)
    stack = field_stack(model, points, spec)
    jet = to_jet(stack, spec)
    r = np.asarray(residual_of_jet(problem, jet, points))
    return r * r


def weighted_pool_choice(points, weights, rng):
    """Sample one pool index with probability weight_k / sum(weights).

    All-zero weights fall back to a uniform choice.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ContractError("sampling weights must be non-negative")
    total = weights.sum()
    if total <= 0.0:
        idx = int(rng.integers(len(weights)))
    else:
        idx = int(rng.choice(len(weights), p=weights / total))
    return points[idx], idx


def residual_proportional_sample(model, problem, pool_size, rng):
    """Draw a point distributed like the current squared PDE residual.

    A uniform candidate pool discretizes the residual density; one candidate
    is then selected with probability proportional to its squared residual.
    """
    if pool_size < 1:
        raise ContractError("pool_size must be >= 1")
    pool = sample_collocation(problem.domain, pool_size, rng)
    weights = squared_residuals(model, problem, pool)
    point, _ = weighted_pool_choice(pool, weights, rng)
    return point


def add_subdomain(model: AbPinnModel, plan: AdditionPlan, point, seed, birth_iter=0):
    """Insert a window centered at the embedded ``point`` plus a fresh subnet.

    Prior parameters are untouched.  Returns the new Subdomain, or None when
    the subdomain budget is already exhausted (with a warning).
    """
    k = model.subdomain_count
    if k >= plan.max_subdomains:
        warnings.warn("subdomain budget exhausted; addition skipped", RuntimeWarning)
        return None
    mu = embed_point(model.embedding, point)
    window = WindowParams.create(mu, plan.init_L, name=f"win{k}")
    if model.window_constraint is not None:
        project_constraints(window, model.window_constraint)
    net = glorot_init(
        plan.subnet_config, component_rng(seed, STREAM_SUBNET_BASE + k), name=f"sub{k}"
    )
    sub = Subdomain(window, net, birth_iter)
    model.subdomains.append(sub)
    return sub


def embed_point(embedding, point):
    """Numeric embedding of one raw coordinate vector."""
    point = np.asarray(point, dtype=float).ravel()
    out = []
    for i, x in enumerate(point):
        if i in embedding.periodic:
            out.append(np.cos(embedding.scale * x))
            out.append(np.sin(embedding.scale * x))
        else:
            out.append(x)
    return np.asarray(out)


def embed_points_batch(embedding, points):
    """Numeric embedding of an (n, d) batch of raw coordinates."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cols = []
    for i in range(points.shape[1]):
        if i in embedding.periodic:
            cols.append(np.cos(embedding.scale * points[:, i]))
            cols.append(np.sin(embedding.scale * points[:, i]))
        else:
            cols.append(points[:, i])
    return np.stack(cols, axis=1)


def relative_l2(predicted, reference):
    """(||pred - ref||_2 / ||ref||_2, fell_back_to_absolute)."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    err = np.linalg.norm(predicted - reference)
    denom = np.linalg.norm(reference)
    if denom == 0.0:
        return float(err), True
    return float(err / denom), False


def default_eval_grid(problem: ProblemSpec, schedule: TrainSchedule):
    counts = schedule.eval_grid
    if counts is None:
        counts = (2000,) if problem.domain.dim == 1 else (256,) * problem.domain.dim
    pts, axes = problem.domain.grid(counts)
    return pts, axes


def run(model: AbPinnModel, problem: ProblemSpec, schedule: TrainSchedule,
        on_event=None):
    """Train ``model`` on ``problem`` for ``schedule.total_iters`` iterations.

    Returns the (mutated) model and the list of TrainRecords.  Records are
    written every ``record_every`` iterations, at the final iteration, and
    around every subdomain-addition / freeze event so loss spikes are
    visible in the history.  ``on_event(iteration, name)`` fires after each
    tagged event (snapshot hook for the CLI).
    """
    rng_colloc = component_rng(schedule.seed, STREAM_COLLOCATION)
    rng_pool = component_rng(schedule.seed, STREAM_POOL)

    eval_pts, _ = default_eval_grid(problem, schedule)
    ref_vals = reference_solution(problem, eval_pts)

    optimizer = Optimizer(schedule)
    optimizer.register_model(model, start_iter=0)

    addition_iters = []
    if schedule.addition is not None:
        addition_iters = [
            a
            for a in schedule.addition.iterations(model.subdomain_count)
            if a <= schedule.total_iters
        ]
    forced_records = {schedule.total_iters}
    if 0 < schedule.freeze_iter:
        forced_records.add(schedule.freeze_iter)
    for a in addition_iters:
        forced_records.update((a - 1, a, a + 1))

    def l2_now():
        return relative_l2(model.field_values(eval_pts), ref_vals)[0]

    records = []
    pending_additions = list(addition_iters)
    for i in range(schedule.total_iters):
        it = i + 1
        event = None
        if pending_additions and it == pending_additions[0]:
            pending_additions.pop(0)
            point = residual_proportional_sample(
                model, problem, schedule.pool_size, rng_pool
            )
            added = add_subdomain(
                model, schedule.addition, point, schedule.seed, birth_iter=i
            )
            if added is not None:
                optimizer.register_model(model, start_iter=i)
                event = "added_subdomain"
        points = sample_collocation(
            problem.domain, schedule.collocation_batch, rng_colloc
        )
        track_windows = i < schedule.freeze_iter and (
            schedule.lr_mu > 0 or schedule.lr_L > 0
        )
        t = Tape()
        loss = loss_node(model, problem, points, t, track_windows=track_windows)
        loss_val = float(ops.value_of(loss))
        if not np.isfinite(loss_val):
            norms = ", ".join(
                f"{g.name}:{np.abs(g.values).max():.3g}"
                for _, g in model.param_groups()
            )
            raise TrainingDiverged(f"non-finite loss at iteration {it} ({norms})")
        t.backward(loss)
        optimizer.step(model, i)
        if event is None and it == schedule.freeze_iter:
            event = "froze_windows"
        if it % schedule.record_every == 0 or it in forced_records or event:
            records.append(
                TrainRecord(it, loss_val, l2_now(), model.subdomain_count, event)
            )
        if event and on_event is not None:
            on_event(it, event)
    return model, records


def final_grid_residual(model: AbPinnModel, problem: ProblemSpec, schedule: TrainSchedule):
    """Mean squared residual on a deterministic interior grid (for model
    selection across seeds, independent of the sampled training batches)."""
    pts, _ = default_eval_grid(problem, schedule)
    inside = problem.domain.contains_interior(pts)
    return float(np.mean(squared_residuals(model, problem, pts[inside])))
