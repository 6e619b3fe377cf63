"""Command-line front end.

    qconsensus run     single QC/QCF trajectory        -> CSV
    qconsensus mc      Monte Carlo ensemble + bounds   -> JSON
    qconsensus bounds  every analytic bound            -> JSON
    qconsensus design  optimal step over a p sweep     -> CSV

A JSON config (``--config``) describes the experiment; individual flags
override its fields. The CLI only parses, dispatches to the library and
formats; every number it prints comes from a library call.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .bounds import (
    BoundInputs,
    BoundReport,
    DivergentSeriesError,
    eps_consensus_lb,
    g_constant,
    i_epsilon,
    mean_contraction_bound,
    mean_step_limit,
    mse_bound,
    mss_bound,
    optimize_delta,
    prod_one_plus_g,
    ratio_approx,
    state_sup_bound,
    theta_deviation_bound,
    zero_rate_lb,
)
from .consensus import ConsensusConfig, check_initial_bound, monte_carlo, run_qc, run_qcf
from .graph import GENERATORS, GOSSIP, LinkFailureModel, build_model, read_edge_list
from .quantize import QuantizerSpec
from .weights import WeightSequence, alpha

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

TRAJECTORY_COLUMNS = ("iteration", "x_avg", "residual_norm", "spread", "saturated_flag")
DESIGN_COLUMNS = ("p", "bit_rate", "delta_star", "T_star_clamped", "T_zero_rate")

DEFAULTS = {"max_iter": 1000, "trials": 100, "seed": 0}
# entropy tag separating the random-x0 stream from the per-trial streams
X0_STREAM = 0x7830


class ConfigError(Exception):
    pass


class PreconditionError(Exception):
    pass


def load_schema(name: str = "config.schema.json") -> dict:
    return json.loads(resources.files("qconsensus").joinpath(name).read_text())


def fmt(v) -> str:
    """CSV cell: integers verbatim, floats to 9 significant digits."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".9g")


def json_number(v):
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        return None
    return float(format(v, ".9g"))


# ---------------------------------------------------------------------------
# configuration

@dataclass
class Experiment:
    config: dict
    model: LinkFailureModel
    weights: WeightSequence
    quantizer: QuantizerSpec
    x0: np.ndarray
    b: Optional[float]
    max_iter: int
    trials: int
    seed: int
    epsilon: Optional[float]
    record_every: Optional[int]
    excursion_level: Optional[float]
    varepsilon: Optional[float]
    p_sweep: Optional[list]

    def consensus_config(self) -> ConsensusConfig:
        return ConsensusConfig(
            x0=self.x0,
            model=self.model,
            weights=self.weights,
            quantizer=self.quantizer,
            max_iter=self.max_iter,
            record_every=self.record_every,
            b=self.b,
        )

    def bound_inputs(self, delta: Optional[float] = None, p: Optional[int] = None) -> BoundInputs:
        return BoundInputs.from_model(
            self.model,
            self.quantizer.step if delta is None else delta,
            self.weights,
            b=self.b,
            p=self.quantizer.levels if p is None else p,
            epsilon=self.epsilon,
            x0=self.x0,
        )


def parse_graph_flag(text: str) -> dict:
    """``name:n[:k]`` for a generator, anything else is an edge-list path."""
    name, _, rest = text.partition(":")
    if name in GENERATORS and rest:
        parts = rest.split(":")
        try:
            nums = [int(s) for s in parts]
        except ValueError:
            raise ConfigError(f"bad graph spec {text!r}; expected name:n or circulant:n:k") from None
        spec = {"generator": name, "n": nums[0]}
        if len(nums) > 1:
            spec["k"] = nums[1]
        return spec
    return {"edge_list": text}


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))   # deep copy

    def section(name):
        return cfg.setdefault(name, {})

    if args.graph is not None:
        cfg["graph"] = parse_graph_flag(args.graph)
    if args.model is not None:
        section("model")["type"] = args.model
    if args.pfail is not None:
        section("model")["p_fail"] = args.pfail
    if args.delta is not None:
        section("quantizer")["delta"] = args.delta
    if args.levels is not None:
        section("quantizer")["levels"] = None if args.levels.lower() == "none" else _int(args.levels, "--levels")
    for flag, key in (("a", "a"), ("tau", "tau"), ("scale", "scale")):
        if getattr(args, flag) is not None:
            section("weights")[key] = getattr(args, flag)
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("iters", "max_iter"),
                      ("epsilon", "epsilon"), ("b", "b")):
        if getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    if getattr(args, "p_sweep", None) is not None:
        cfg["p_sweep"] = [_int(s, "--p-sweep") for s in args.p_sweep.split(",") if s.strip()]
    return cfg


def _int(text: str, flag: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{flag} expects an integer, got {text!r}") from None


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def build_topology(graph: dict, base_dir: Path):
    if "edge_list" in graph:
        path = Path(graph["edge_list"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"edge list not found: {path}")
        return read_edge_list(path)
    name = graph["generator"]
    if name == "circulant":
        if "k" not in graph:
            raise ConfigError("circulant graphs need the degree k")
        return GENERATORS[name](graph["n"], graph["k"])
    return GENERATORS[name](graph["n"])


def initial_state(cfg: dict, n: int) -> np.ndarray:
    if "x0" in cfg:
        x0 = np.asarray(cfg["x0"], dtype=float)
        if x0.size != n:
            raise ConfigError(f"x0 has {x0.size} entries for {n} nodes")
        return x0
    if "b" not in cfg:
        raise ConfigError("give either x0 or the bound b (x0 is then uniform in [-b, b])")
    rng = np.random.default_rng([cfg.get("seed", DEFAULTS["seed"]), X0_STREAM])
    return rng.uniform(-cfg["b"], cfg["b"], size=n)


def build_experiment(cfg: dict, base_dir: Path = Path(".")) -> Experiment:
    validate_config(cfg)
    try:
        topo = build_topology(cfg["graph"], base_dir)
        m = cfg.get("model", {})
        model = build_model(topo, m.get("type", "fixed"), m.get("p_fail", 0.0))
        w = cfg["weights"]
        weights = WeightSequence(
            a=w["a"], tau=w.get("tau", 1.0), scale=w.get("scale", 1.0),
            tau_d=w.get("tau_d"), d0=w.get("d0", 1.0),
        )
        q = cfg["quantizer"]
        quantizer = QuantizerSpec(q["delta"], q.get("levels"))
        x0 = initial_state(cfg, topo.n_nodes)
        b = cfg.get("b")
        if quantizer.levels is not None:
            check_initial_bound(x0, b)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    resolved = dict(cfg, x0=[float(v) for v in x0])
    for key, value in DEFAULTS.items():
        resolved.setdefault(key, value)
    return Experiment(
        config=resolved,
        model=model,
        weights=weights,
        quantizer=quantizer,
        x0=x0,
        b=b,
        max_iter=resolved["max_iter"],
        trials=resolved["trials"],
        seed=resolved["seed"],
        epsilon=cfg.get("epsilon"),
        record_every=cfg.get("record_every"),
        excursion_level=cfg.get("excursion_level"),
        varepsilon=cfg.get("varepsilon"),
        p_sweep=cfg.get("p_sweep"),
    )


def load_experiment(args: argparse.Namespace) -> Experiment:
    cfg, base_dir = {}, Path(".")
    if args.config is not None:
        path = Path(args.config)
        try:
            cfg = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        base_dir = path.parent
    return build_experiment(apply_overrides(cfg, args), base_dir)


# ---------------------------------------------------------------------------
# commands

def cmd_run(exp: Experiment) -> str:
    config = exp.consensus_config()
    if exp.quantizer.levels is None:
        out = run_qc(config, seed=exp.seed)
    else:
        out = run_qcf(config, seed=exp.seed)
    traj = out.trajectory
    flags = np.zeros(traj.iterations.size, dtype=int)
    if out.saturated:
        flags[-1] = 1
    buf = io.StringIO()
    buf.write(",".join(TRAJECTORY_COLUMNS) + "\n")
    rows = zip(traj.iterations, traj.averages, traj.residual_norms, traj.spreads, flags)
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def report_dict(report: BoundReport) -> dict:
    out = {"value": json_number(report.value), "probability": report.probability}
    if report.probability:
        out["clamped"] = json_number(report.clamped)
    if report.terms:
        out["terms"] = [json_number(t) for t in report.terms]
    return out


def scalar_dict(value) -> dict:
    return {"value": json_number(value), "probability": False}


def require_connected(inputs: BoundInputs) -> None:
    if not inputs.lambda2 > 1e-9:
        raise PreconditionError(
            f"lambda2 of the mean Laplacian is {inputs.lambda2:.3g}: the network is not "
            "connected on average and the bounds are undefined"
        )


def default_varepsilon(inputs: BoundInputs) -> float:
    """Midpoint of the admissible range (0, 2 lambda2^2 / lambdaN)."""
    return inputs.lambda2**2 / inputs.lambdaN


def default_excursion_level(exp: Experiment) -> float:
    if exp.quantizer.levels is not None:
        return exp.quantizer.levels * exp.quantizer.step
    return 10.0 * float(np.max(np.abs(exp.x0), initial=1.0))


def collect_bounds(exp: Experiment, inputs: BoundInputs, residual_at_i_eps: Optional[float] = None):
    """Evaluate every bound the config supports. Returns (bounds, skipped)."""
    bounds, skipped = {}, {}

    def attempt(name, fn):
        try:
            bounds[name] = fn()
        except (DivergentSeriesError, ValueError) as exc:
            skipped[name] = str(exc)

    attempt("g_constant", lambda: scalar_dict(g_constant(inputs)))
    attempt("prod_one_plus_g", lambda: scalar_dict(prod_one_plus_g(inputs)))
    attempt("mse_bound[general]", lambda: report_dict(mse_bound(inputs, "general")))
    if exp.model.variant == GOSSIP:
        attempt("mse_bound[gossip]", lambda: report_dict(mse_bound(inputs, "gossip")))
    if inputs.expected_active_sq is not None:
        attempt("mse_bound[refined]", lambda: report_dict(mse_bound(inputs, "refined")))
    if exp.weights.tau_d is not None:
        attempt("mse_bound[time_varying]", lambda: report_dict(mse_bound(inputs, "time_varying")))

    level = exp.excursion_level or default_excursion_level(exp)
    attempt("state_sup_bound[concrete]", lambda: report_dict(state_sup_bound(level, inputs, "concrete")))
    if inputs.b is not None:
        attempt("state_sup_bound[b_ball]", lambda: report_dict(state_sup_bound(level, inputs, "b_ball")))
    bounds["excursion_level"] = scalar_dict(level)

    if inputs.b is not None and inputs.p is not None:
        if inputs.epsilon is not None:
            attempt("eps_consensus_lb", lambda: report_dict(eps_consensus_lb(inputs)))
            attempt("theta_deviation_bound", lambda: report_dict(theta_deviation_bound(inputs)))
        attempt("zero_rate_lb", lambda: report_dict(zero_rate_lb(inputs)))
        attempt("ratio_approx", lambda: scalar_dict(ratio_approx(inputs)))
    else:
        skipped["eps_consensus_lb"] = "needs b, quantizer levels and epsilon"

    if alpha(exp.weights, 0) <= mean_step_limit(inputs.lambda2, inputs.lambdaN):
        attempt(
            "mean_contraction_bound",
            lambda: scalar_dict(mean_contraction_bound(inputs.lambda2, exp.weights, exp.x0, exp.max_iter)),
        )
    else:
        skipped["mean_contraction_bound"] = "alpha(0) exceeds 2 / (lambda2 + lambdaN)"

    varepsilon = exp.varepsilon or default_varepsilon(inputs)
    try:
        ie = i_epsilon(inputs, varepsilon)
    except ValueError as exc:
        skipped["i_epsilon"] = str(exc)
        ie = None
    if ie is not None:
        bounds["varepsilon"] = scalar_dict(varepsilon)
        bounds["i_epsilon"] = {"value": ie, "probability": False}
        if residual_at_i_eps is None and inputs.b is not None:
            # pessimistic cap: every |x_n - avg| <= 2 b
            residual_at_i_eps = inputs.n_nodes * (2.0 * inputs.b) ** 2
        if residual_at_i_eps is None:
            skipped["mss_bound"] = "needs b or an ensemble residual at i_epsilon"
        else:
            horizon = max(exp.max_iter, ie)
            attempt("mss_bound", lambda: dict(report_dict(mss_bound(inputs, horizon, varepsilon, residual_at_i_eps)),
                                              iteration=horizon))
    return bounds, skipped


def spectral_dict(inputs: BoundInputs) -> dict:
    return {"lambda2": json_number(inputs.lambda2), "lambdaN": json_number(inputs.lambdaN)}


def cmd_bounds(exp: Experiment) -> dict:
    inputs = exp.bound_inputs()
    require_connected(inputs)
    bounds, skipped = collect_bounds(exp, inputs)
    if inputs.b is not None and inputs.p is not None and inputs.epsilon is not None:
        design = optimize_delta(inputs)
        bounds["delta_star"] = scalar_dict(design.delta_star)
        bounds["T_star"] = {"value": json_number(1.0 - design.objective_at_star), "probability": True,
                            "clamped": json_number(design.t_star)}
    return {"command": "bounds", "config": exp.config, "spectral": spectral_dict(inputs),
            "bounds": bounds, "skipped": skipped}


def cmd_mc(exp: Experiment) -> dict:
    inputs = exp.bound_inputs()
    connected = inputs.lambda2 > 1e-9
    ie = None
    if connected:
        try:
            ie = i_epsilon(inputs, exp.varepsilon or default_varepsilon(inputs))
        except ValueError:
            ie = None
    checkpoints = [ie] if ie is not None and ie <= exp.max_iter else []
    stats = monte_carlo(exp.consensus_config(), exp.trials, master_seed=exp.seed,
                        epsilon=exp.epsilon, checkpoints=checkpoints)
    out = {
        "command": "mc",
        "config": exp.config,
        "trials": stats.trials,
        "r": json_number(stats.r),
        "mean_theta": json_number(stats.mean_theta),
        "theta_se": json_number(stats.theta_se),
        "empirical_mse": json_number(stats.empirical_mse),
        "saturation_frequency": json_number(stats.saturation_frequency),
        "eps_consensus_frequency": (
            json_number(stats.eps_consensus_frequency()) if exp.epsilon is not None else None
        ),
    }
    if connected:
        residual = float(stats.mean_sq_residual()[0]) if checkpoints else None
        out["spectral"] = spectral_dict(inputs)
        out["bounds"], out["skipped"] = collect_bounds(exp, inputs, residual)
    else:
        out["bounds"] = {}
        out["skipped"] = {"all": "network not connected on average (lambda2 <= 1e-9)"}
    return out


def design_rows(exp: Experiment) -> list:
    """(p, bit_rate, delta_star, T_star_clamped, T_zero_rate) for each p, sorted by p."""
    if exp.b is None or exp.epsilon is None:
        raise ConfigError("design needs b and epsilon")
    sweep = exp.p_sweep or ([exp.quantizer.levels] if exp.quantizer.levels else None)
    if not sweep:
        raise ConfigError("design needs p_sweep (or --p-sweep)")
    rows = []
    for p in sorted(set(sweep)):
        inputs = exp.bound_inputs(p=p)
        require_connected(inputs)
        design = optimize_delta(inputs)
        zero = zero_rate_lb(inputs.replace(delta=design.delta_star))
        rows.append((p, math.log2(2 * p + 1), design.delta_star, design.t_star, zero.clamped))
    return rows


def cmd_design(exp: Experiment) -> str:
    buf = io.StringIO()
    buf.write(",".join(DESIGN_COLUMNS) + "\n")
    for row in design_rows(exp):
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="Monte Carlo trials")
    common.add_argument("--iters", type=int, help="horizon max_iter")
    common.add_argument("--delta", type=float, help="quantizer step")
    common.add_argument("--levels", help="positive quantizer levels p (QCF), or 'none' for QC")
    common.add_argument("--a", type=float, help="gain numerator a")
    common.add_argument("--tau", type=float, help="gain decay exponent")
    common.add_argument("--scale", type=float, help="gain scaling s")
    common.add_argument("--pfail", type=float, help="erasure link failure probability")
    common.add_argument("--graph", help="complete:N, path:N, ring:N, circulant:N:K, or an edge-list file")
    common.add_argument("--model", choices=("fixed", "erasure", "gossip"), help="link failure model")
    common.add_argument("--epsilon", type=float, help="consensus tolerance")
    common.add_argument("--b", type=float, help="bound on |x0_n|")
    common.add_argument("--out", help="output file (default stdout)")

    parser = argparse.ArgumentParser(
        prog="qconsensus",
        description="Dithered quantized consensus: simulation, Monte Carlo and analytic bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single run, trajectory CSV")
    sub.add_parser("mc", parents=[common], help="Monte Carlo ensemble with inlined bounds, JSON")
    sub.add_parser("bounds", parents=[common], help="every analytic bound, JSON")
    design = sub.add_parser("design", parents=[common], help="optimal step over a p sweep, CSV")
    design.add_argument("--p-sweep", dest="p_sweep", help="comma separated levels, e.g. 1,2,4,8")
    return parser


def emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = load_experiment(args)
        if args.command == "run":
            text = cmd_run(exp)
        elif args.command == "design":
            text = cmd_design(exp)
        else:
            report = cmd_mc(exp) if args.command == "mc" else cmd_bounds(exp)
            text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    except ConfigError as exc:
        print(f"qconsensus: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, ValueError) as exc:
        print(f"qconsensus: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    emit(text, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
