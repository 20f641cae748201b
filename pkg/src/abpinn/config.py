"""Experiment configuration: strict key-value files with sections.

The format is INI-style with five sections ([problem], [model], [train],
[addition], [output]).  Parsing is strict: unknown keys or sections are
rejected by name, mode-specific requirements are validated (an addition
block is required for abpinn_plus and forbidden otherwise), and
``loads(dumps(cfg)) == cfg`` round-trips exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .tape import ContractError

MODES = ("pinn", "fbpinn", "abpinn", "abpinn_plus")
WINDOWS = ("gauss", "quartic", "sigmoid_product", "sigmoid_radial")
LAYOUTS = ("linspace", "grid", "explicit")

PROBLEM_PARAM_KEYS = {
    "chirp": ("omega", "power"),
    "sine": ("omega", "power"),
    "advection": ("c",),
    "helmholtz": ("k", "a", "b"),
    "poisson": ("sigma", "centers"),
    "allen_cahn": ("diffusion", "reaction"),
    "kdv": ("eta", "mu_disp"),
}


class ConfigError(ContractError):
    """A config file failed validation; the message names the key."""


@dataclass
class ModelSpec:
    mode: str
    window: str = "gauss"
    subdomains: int = 0
    layout: str = "linspace"
    grid_shape: tuple | None = None
    centers: tuple | None = None
    init_l: object = 1.0  # scalar or per-dim diagonal tuple
    global_hidden_layers: int = 2
    global_width: int = 16
    sub_hidden_layers: int = 2
    sub_width: int = 16


@dataclass
class TrainSpec:
    iterations: int
    freeze: int
    collocation: int
    lr_net: float = 1e-3
    lr_mu: float = 1e-3
    lr_l: float = 1e-3
    decay_floor: float = 0.01
    record_every: int = 100
    pool_size: int = 10_000
    eval_points: tuple | None = None


@dataclass
class AdditionSpec:
    start: int
    period: int
    max_subdomains: int


@dataclass
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    domain: tuple | None = None
    model: ModelSpec = None
    train: TrainSpec = None
    addition: AdditionSpec | None = None
    out_dir: str = "runs/out"
    seeds: tuple = (0,)
    reference_csv: str | None = None


_PROBLEM_KEYS = ("name", "domain", "reference_csv")
_MODEL_KEYS = (
    "mode",
    "window",
    "subdomains",
    "layout",
    "grid_shape",
    "centers",
    "init_l",
    "global_hidden_layers",
    "global_width",
    "sub_hidden_layers",
    "sub_width",
)
_TRAIN_KEYS = (
    "iterations",
    "freeze",
    "collocation",
    "lr_net",
    "lr_mu",
    "lr_l",
    "decay_floor",
    "record_every",
    "pool_size",
    "eval_points",
)
_ADDITION_KEYS = ("start", "period", "max_subdomains")
_OUTPUT_KEYS = ("directory", "seeds")


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _pairs(text):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(_floats(chunk))
    return tuple(out)


def _require(section, key, present):
    if key not in present:
        raise ConfigError(f"[{section}] is missing required key '{key}'")


def _check_keys(section, present, allowed):
    unknown = set(present) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] has unknown key(s): {sorted(unknown)}")


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known_sections = {"problem", "model", "train", "addition", "output"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    for needed in ("problem", "model", "train"):
        if needed not in parser:
            raise ConfigError(f"missing required section [{needed}]")

    prob = dict(parser["problem"])
    name = prob.pop("name", None)
    if name is None:
        raise ConfigError("[problem] is missing required key 'name'")
    if name not in PROBLEM_PARAM_KEYS:
        raise ConfigError(f"unknown problem name '{name}'")
    domain = None
    if "domain" in prob:
        domain = _pairs(prob.pop("domain"))
        for lo_hi in domain:
            if len(lo_hi) != 2 or lo_hi[0] >= lo_hi[1]:
                raise ConfigError("[problem] domain entries must be 'lo,hi' pairs")
    reference_csv = prob.pop("reference_csv", None)
    _check_keys("problem", prob, PROBLEM_PARAM_KEYS[name])
    params = {}
    for key, raw in prob.items():
        try:
            params[key] = _pairs(raw) if key == "centers" else float(raw)
        except ValueError as exc:
            raise ConfigError(f"[problem] {key}: {exc}") from exc

    msec = dict(parser["model"])
    _check_keys("model", msec, _MODEL_KEYS)
    _require("model", "mode", msec)
    mode = msec["mode"]
    if mode not in MODES:
        raise ConfigError(f"[model] mode must be one of {MODES}, got '{mode}'")
    window = msec.get("window", "gauss")
    if window not in WINDOWS:
        raise ConfigError(f"[model] window must be one of {WINDOWS}, got '{window}'")
    layout = msec.get("layout", "linspace")
    if layout not in LAYOUTS:
        raise ConfigError(f"[model] layout must be one of {LAYOUTS}")
    try:
        model = ModelSpec(
            mode=mode,
            window=window,
            subdomains=int(msec.get("subdomains", 0)),
            layout=layout,
            grid_shape=tuple(int(x) for x in msec["grid_shape"].split(","))
            if "grid_shape" in msec
            else None,
            centers=_pairs(msec["centers"]) if "centers" in msec else None,
            init_l=_floats(msec["init_l"]) if "," in msec.get("init_l", "")
            else float(msec.get("init_l", 1.0)),
            global_hidden_layers=int(msec.get("global_hidden_layers", 2)),
            global_width=int(msec.get("global_width", 16)),
            sub_hidden_layers=int(msec.get("sub_hidden_layers", 2)),
            sub_width=int(msec.get("sub_width", 16)),
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from exc

    tsec = dict(parser["train"])
    _check_keys("train", tsec, _TRAIN_KEYS)
    for key in ("iterations", "freeze", "collocation"):
        _require("train", key, tsec)
    try:
        train = TrainSpec(
            iterations=int(tsec["iterations"]),
            freeze=int(tsec["freeze"]),
            collocation=int(tsec["collocation"]),
            lr_net=float(tsec.get("lr_net", 1e-3)),
            lr_mu=float(tsec.get("lr_mu", 1e-3)),
            lr_l=float(tsec.get("lr_l", 1e-3)),
            decay_floor=float(tsec.get("decay_floor", 0.01)),
            record_every=int(tsec.get("record_every", 100)),
            pool_size=int(tsec.get("pool_size", 10_000)),
            eval_points=tuple(int(x) for x in tsec["eval_points"].split(","))
            if "eval_points" in tsec
            else None,
        )
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from exc

    addition = None
    if "addition" in parser:
        if mode != "abpinn_plus":
            raise ConfigError(
                f"section [addition] is only valid for mode abpinn_plus (mode is '{mode}')"
            )
        asec = dict(parser["addition"])
        _check_keys("addition", asec, _ADDITION_KEYS)
        for key in _ADDITION_KEYS:
            _require("addition", key, asec)
        try:
            addition = AdditionSpec(
                start=int(asec["start"]),
                period=int(asec["period"]),
                max_subdomains=int(asec["max_subdomains"]),
            )
        except ValueError as exc:
            raise ConfigError(f"[addition] {exc}") from exc
    elif mode == "abpinn_plus":
        raise ConfigError("mode abpinn_plus requires an [addition] section")

    out_dir, seeds = "runs/out", (0,)
    if "output" in parser:
        osec = dict(parser["output"])
        _check_keys("output", osec, _OUTPUT_KEYS)
        out_dir = osec.get("directory", out_dir)
        if "seeds" in osec:
            try:
                seeds = tuple(int(x) for x in osec["seeds"].split(","))
            except ValueError as exc:
                raise ConfigError(f"[output] seeds: {exc}") from exc

    cfg = ExperimentConfig(
        problem=name,
        problem_params=params,
        domain=domain,
        model=model,
        train=train,
        addition=addition,
        out_dir=out_dir,
        seeds=seeds,
        reference_csv=reference_csv,
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    m = cfg.model
    if cfg.model is None or cfg.train is None:
        raise ConfigError("config needs model and train specs")
    if m.mode == "pinn":
        if m.subdomains:
            raise ConfigError("[model] subdomains must be 0 in pinn mode")
    if m.mode in ("fbpinn", "abpinn") and m.subdomains < 1:
        raise ConfigError(f"[model] subdomains must be >= 1 in {m.mode} mode")
    if m.mode == "abpinn_plus" and m.subdomains:
        raise ConfigError(
            "[model] subdomains must be 0 in abpinn_plus mode (they are added)"
        )
    if m.mode == "abpinn_plus" and cfg.addition is None:
        raise ConfigError("mode abpinn_plus requires an [addition] section")
    if m.layout == "grid" and m.grid_shape is None and m.mode in ("fbpinn", "abpinn"):
        raise ConfigError("[model] layout grid requires grid_shape")
    if m.layout == "explicit" and m.centers is None and m.mode in ("fbpinn", "abpinn"):
        raise ConfigError("[model] layout explicit requires centers")
    if cfg.train.freeze > cfg.train.iterations:
        raise ConfigError("[train] freeze must not exceed iterations")
    if cfg.domain is not None:
        expected = {"chirp": 1, "sine": 1}.get(cfg.problem, 2)
        if len(cfg.domain) != expected:
            raise ConfigError(
                f"[problem] domain must have {expected} dimension(s) for {cfg.problem}"
            )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def dumps(cfg: ExperimentConfig) -> str:
    out = io.StringIO()
    out.write("[problem]\n")
    out.write(f"name = {cfg.problem}\n")
    if cfg.domain is not None:
        out.write("domain = " + "; ".join(f"{lo:.17g},{hi:.17g}" for lo, hi in cfg.domain) + "\n")
    if cfg.reference_csv is not None:
        out.write(f"reference_csv = {cfg.reference_csv}\n")
    for key in PROBLEM_PARAM_KEYS[cfg.problem]:
        if key in cfg.problem_params:
            v = cfg.problem_params[key]
            if key == "centers":
                out.write("centers = " + "; ".join(f"{a:.17g},{b:.17g}" for a, b in v) + "\n")
            else:
                out.write(f"{key} = {_fmt(v)}\n")
    m = cfg.model
    out.write("\n[model]\n")
    out.write(f"mode = {m.mode}\nwindow = {m.window}\n")
    out.write(f"subdomains = {m.subdomains}\nlayout = {m.layout}\n")
    if m.grid_shape is not None:
        out.write("grid_shape = " + ",".join(str(x) for x in m.grid_shape) + "\n")
    if m.centers is not None:
        out.write("centers = " + "; ".join(",".join(f"{x:.17g}" for x in c) for c in m.centers) + "\n")
    if isinstance(m.init_l, tuple):
        out.write("init_l = " + ",".join(f"{x:.17g}" for x in m.init_l) + "\n")
    else:
        out.write(f"init_l = {m.init_l:.17g}\n")
    out.write(f"global_hidden_layers = {m.global_hidden_layers}\n")
    out.write(f"global_width = {m.global_width}\n")
    out.write(f"sub_hidden_layers = {m.sub_hidden_layers}\n")
    out.write(f"sub_width = {m.sub_width}\n")
    t = cfg.train
    out.write("\n[train]\n")
    out.write(f"iterations = {t.iterations}\nfreeze = {t.freeze}\n")
    out.write(f"collocation = {t.collocation}\n")
    out.write(f"lr_net = {t.lr_net:.17g}\nlr_mu = {t.lr_mu:.17g}\nlr_l = {t.lr_l:.17g}\n")
    out.write(f"decay_floor = {t.decay_floor:.17g}\n")
    out.write(f"record_every = {t.record_every}\npool_size = {t.pool_size}\n")
    if t.eval_points is not None:
        out.write("eval_points = " + ",".join(str(x) for x in t.eval_points) + "\n")
    if cfg.addition is not None:
        a = cfg.addition
        out.write("\n[addition]\n")
        out.write(f"start = {a.start}\nperiod = {a.period}\n")
        out.write(f"max_subdomains = {a.max_subdomains}\n")
    out.write("\n[output]\n")
    out.write(f"directory = {cfg.out_dir}\n")
    out.write("seeds = " + ",".join(str(s) for s in cfg.seeds) + "\n")
    return out.getvalue()
