"""Command-line front end: config-driven runs with JSON/CSV artifacts.

The QESTIM_THREADS environment variable caps BLAS/OpenMP parallelism; it is
applied before numpy is imported, so this module keeps all numeric imports
inside functions.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap():
    cap = os.environ.get("QESTIM_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ[var] = cap


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="qestim",
        description="Quantum parameter-estimation schemes: evaluate bounds, "
        "optimize variables, budget errors, run adaptive loops.",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for name, blurb in (
        ("evaluate", "compute an estimation bound for a configured scheme"),
        ("optimize", "optimize scheme variables against an objective"),
        ("error", "propagate input precision to the objective (or invert)"),
        ("adapt", "run the Bayesian adaptive measurement loop"),
        ("nv", "NV-magnetometer preset (all NVParams as config keys)"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", help="YAML config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable, dotted paths)",
        )
        p.add_argument("--out", help="output directory (default: config or cwd)")
        p.add_argument("--seed", type=int, help="seed for stochastic components")
        p.add_argument("--quiet", action="store_true", help="suppress the summary")
    return parser


# ---------------------------------------------------------------------------
# task handlers (numpy-importing code lives below main's env setup)


def _fisher_csv_rows(times, values):
    import numpy as np

    values = np.asarray(values)
    if values.ndim == 1:
        header = ("time", "value")
        rows = [(t, v) for t, v in zip(times, values)]
    else:
        n = values.shape[1]
        header = ("time",) + tuple(
            f"F_{a}_{b}" for a in range(n) for b in range(n)
        )
        rows = [
            (t,) + tuple(values[k].ravel()) for k, t in enumerate(times)
        ]
    return header, rows


def _final_scheme_state(scheme):
    from .dynamics import evolve

    traj = evolve(scheme.param, scheme.probe)
    return traj.at(-1)


def _evaluate_quantity(scheme, section, out_dir, quiet):
    import numpy as np

    from .config import ConfigError, parse_matrix
    from .io import to_jsonable, write_csv
    from .metrology import cfim, hcrb, nhb, qfim, qvtb, vtb

    quantity = section.get("quantity", "qfim")
    results = {"quantity": quantity}
    if quantity in ("qfim", "cfim"):
        if quantity == "qfim":
            ld_type = section.get("ld_type", "SLD")
            res = qfim(scheme, ld_type=ld_type)
            results["ld_type"] = ld_type
            if res.truncation_report is not None:
                results["truncation_delta"] = res.truncation_report
        else:
            res = cfim(scheme)
        results["times"] = to_jsonable(res.times)
        results["values"] = to_jsonable(res.values)
        header, rows = _fisher_csv_rows(res.times, res.values)
        write_csv(os.path.join(out_dir, "values.csv"), header, rows)
        final = np.asarray(res.values)[-1]
        if not quiet:
            print(f"{quantity} over {len(res.times)} times; final:")
            print(np.array2string(np.atleast_2d(final), precision=6))
    elif quantity in ("hcrb", "nhb"):
        weight = None
        if section.get("weight") is not None:
            weight = parse_matrix(section["weight"], "evaluate.weight")
        rho, drho = _final_scheme_state(scheme)
        w = (
            np.real(weight)
            if weight is not None
            else np.eye(scheme.n_params)
        )
        value = (hcrb if quantity == "hcrb" else nhb)(rho, drho, w)
        results["value"] = value
        if not quiet:
            print(f"{quantity} at final time: {value:.12g}")
    elif quantity in ("vtb", "qvtb"):
        value = (vtb if quantity == "vtb" else qvtb)(scheme)
        results["value"] = to_jsonable(value)
        if not quiet:
            print(f"{quantity} at final time: {value}")
    else:
        raise ConfigError(
            f"evaluate.quantity: unknown quantity {quantity!r} (expected "
            "qfim, cfim, hcrb, nhb, vtb or qvtb)"
        )
    return results


def _run_evaluate(cfg, args, out_dir, seed, quiet):
    from .config import build_scheme

    section = cfg.get("evaluate") or {}
    quantity = section.get("quantity", "qfim")
    scheme = build_scheme(cfg, parametric=quantity in ("vtb", "qvtb"))
    return _evaluate_quantity(scheme, section, out_dir, quiet)


def _run_optimize(cfg, args, out_dir, seed, quiet):
    from .config import ConfigError, build_scheme, parse_matrix
    from .io import to_jsonable, write_csv
    from .optimize import (
        DE,
        GRAPE,
        PSO,
        CompOpt,
        ControlOpt,
        MeasurementOpt,
        ObjectiveConfig,
        StateOpt,
        optimize,
    )

    section = cfg.get("optimize") or {}
    scen_node = section.get("scenario") or {"type": "control"}
    if isinstance(scen_node, str):
        scen_node = {"type": scen_node}
    stype = scen_node.get("type", "control")
    bound = scen_node.get("ctrl_bound")
    if bound is not None:
        bound = (float(bound[0]), float(bound[1]))
    if stype == "control":
        scenario = ControlOpt(ctrl_bound=bound)
    elif stype == "state":
        scenario = StateOpt()
    elif stype == "measurement":
        scenario = MeasurementOpt(mtype=scen_node.get("mtype", "Projection"))
    elif stype in ("SM", "SC", "CM", "SCM"):
        scenario = CompOpt(
            type=stype,
            ctrl_bound=bound,
            mtype=scen_node.get("mtype", "Projection"),
        )
    else:
        raise ConfigError(
            f"optimize.scenario.type: unknown scenario {stype!r}"
        )

    algo_node = section.get("algorithm") or {"name": "DE"}
    if isinstance(algo_node, str):
        algo_node = {"name": algo_node}
    name = str(algo_node.get("name", "DE")).upper()
    common = {
        k: algo_node[k]
        for k in ("max_episode",)
        if k in algo_node
    }
    if name == "GRAPE":
        algorithm = GRAPE(
            learning_rate=float(algo_node.get("learning_rate", 0.01)), **common
        )
    elif name == "PSO":
        algorithm = PSO(
            population=int(algo_node.get("population", 10)),
            inertia=float(algo_node.get("inertia", 1.0)),
            cognitive=float(algo_node.get("cognitive", 2.0)),
            social=float(algo_node.get("social", 2.0)),
            seed=int(algo_node.get("seed", seed)),
            **common,
        )
    elif name == "DE":
        algorithm = DE(
            population=int(algo_node.get("population", 10)),
            mutation=float(algo_node.get("mutation", 1.0)),
            crossover=float(algo_node.get("crossover", 0.5)),
            seed=int(algo_node.get("seed", seed)),
            **common,
        )
    else:
        raise ConfigError(
            f"optimize.algorithm.name: unknown algorithm {name!r}"
        )

    obj_node = section.get("objective") or {}
    weight = None
    if obj_node.get("weight") is not None:
        weight = parse_matrix(obj_node["weight"], "optimize.objective.weight")
    objective = ObjectiveConfig(
        kind=obj_node.get("kind", "QFIM"),
        weight=weight,
        direction=obj_node.get("direction"),
    )
    savefile = bool(section.get("savefile", False))

    scheme = build_scheme(cfg)
    best, record = optimize(
        scheme, scenario, algorithm, objective, savefile=savefile
    )
    write_csv(
        os.path.join(out_dir, "iterations.csv"),
        ("iteration", "objective"),
        list(enumerate(record.objectives)),
    )
    results = {
        "scenario": type(scenario).__name__,
        "algorithm": type(algorithm).__name__,
        "direction": record.direction,
        "best_objective": record.best_objective,
        "converged": record.converged,
        "reason": record.reason,
        "iterations": len(record.objectives),
        "objectives": to_jsonable(record.objectives),
        "variables": to_jsonable(record.best_variables),
    }
    if savefile and record.history is not None:
        results["history"] = [to_jsonable(h) for h in record.history]
    if not quiet:
        print(
            f"{type(scenario).__name__} via {type(algorithm).__name__}: "
            f"best objective {record.best_objective:.12g} "
            f"({record.direction}), {len(record.objectives)} iterations, "
            f"converged={record.converged}"
        )
    return results


def _run_error(cfg, args, out_dir, seed, quiet):
    from .config import ConfigError, build_scheme
    from .error_analysis import error_control, error_evaluation

    section = cfg.get("error") or {}
    mode = section.get("mode", "evaluation")
    objective = section.get("objective", "QFIM")
    sld_eps = float(section.get("sld_eps", 1e-8))
    scheme = build_scheme(cfg)
    if mode == "evaluation":
        if "input_error_scaling" not in section:
            raise ConfigError("error.input_error_scaling: missing required key")
        budget = error_evaluation(
            scheme,
            float(section["input_error_scaling"]),
            objective=objective,
            sld_eps=sld_eps,
        )
    elif mode == "control":
        if "output_error_scaling" not in section:
            raise ConfigError("error.output_error_scaling: missing required key")
        budget = error_control(
            scheme,
            float(section["output_error_scaling"]),
            objective=objective,
            sld_eps=sld_eps,
        )
    else:
        raise ConfigError(
            f"error.mode: expected evaluation or control, got {mode!r}"
        )
    if not quiet:
        print(budget.table())
    return budget.to_json()


def _run_adapt(cfg, args, out_dir, seed, quiet):
    from .adaptive import (
        AdaptiveStrategy,
        ReplayOutcomes,
        SimulatedOutcomes,
        adapt,
        write_episode_csv,
    )
    from .config import ConfigError, build_scheme, parse_real_array
    from .io import to_jsonable

    section = cfg.get("adapt") or {}
    method = section.get("method", "FOP")
    max_episode = int(section.get("max_episode", 1000))
    source_node = section.get("source")
    if not isinstance(source_node, dict):
        raise ConfigError("adapt.source: missing required key")
    if "simulate" in source_node:
        sim = source_node["simulate"] or {}
        if "x_true" not in sim:
            raise ConfigError("adapt.source.simulate.x_true: missing required key")
        source = SimulatedOutcomes(
            float(sim["x_true"]), seed=int(sim.get("seed", seed))
        )
    elif "replay" in source_node:
        path = source_node["replay"]
        if not isinstance(path, str) or not os.path.exists(path):
            raise ConfigError(f"adapt.source.replay: file not found: {path!r}")
        source = ReplayOutcomes(path)
    else:
        raise ConfigError("adapt.source: expected a simulate or replay table")

    scheme = build_scheme(cfg, parametric=True)
    strategy = None
    if section.get("offsets") is not None:
        if scheme.prior is None:
            raise ConfigError("scheme.prior: missing required key")
        offsets = parse_real_array(section["offsets"], "adapt.offsets")
        strategy = AdaptiveStrategy(
            scheme.prior.x[0], scheme.prior.p, scheme.prior.dp[0], offsets
        )
    log = adapt(
        scheme,
        strategy,
        method=method,
        max_episode=max_episode,
        result_source=source,
    )
    write_episode_csv(os.path.join(out_dir, "episodes.csv"), log)
    results = {
        "method": method,
        "episodes": [
            {
                "episode": e.episode,
                "offset": e.offset,
                "outcome": e.outcome,
                "posterior_mean": e.mean,
                "posterior_sd": e.sd,
            }
            for e in log.episodes
        ],
        "x_star": log.x_star,
        "posterior_mean": log.strategy.mean(),
        "posterior_sd": log.strategy.sd(),
        "posterior": to_jsonable(log.strategy.posterior),
    }
    if not quiet:
        print(
            f"adaptive {method}: {len(log.episodes)} episodes, posterior "
            f"mean {log.strategy.mean():.9g} sd {log.strategy.sd():.3g}"
        )
    return results


def _run_nv(cfg, args, out_dir, seed, quiet):
    from .config import ConfigError, parse_real_array, parse_tspan, parse_vector
    from .nv import NVParams, nv_scheme

    section = cfg.get("nv") or {}
    kwargs = {}
    for key in ("D", "gS", "gI", "A1", "A2", "gamma"):
        if key in section:
            kwargs[key] = float(section[key])
    if "B" in section:
        kwargs["B"] = tuple(parse_real_array(section["B"], "nv.B"))
    if "tspan" in section:
        kwargs["tspan"] = parse_tspan(section["tspan"], "nv.tspan")
    if "psi0" in section:
        kwargs["psi0"] = tuple(parse_vector(section["psi0"], "nv.psi0"))
    try:
        params = NVParams(**kwargs)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"nv: {exc}")
    scheme = nv_scheme(params)
    return _evaluate_quantity(scheme, section, out_dir, quiet)


_HANDLERS = {
    "evaluate": _run_evaluate,
    "optimize": _run_optimize,
    "error": _run_error,
    "adapt": _run_adapt,
    "nv": _run_nv,
}


def _dispatch(args) -> int:
    from platform import python_version

    from . import __version__
    from .config import ConfigError, apply_overrides, load_config
    from .io import write_json

    if args.config is not None:
        cfg = load_config(args.config)
    elif args.task == "nv":
        cfg = {}
    else:
        raise ConfigError("config: --config is required for this task")
    apply_overrides(cfg, args.set)
    if cfg.get("task") is not None and cfg["task"] != args.task:
        raise ConfigError(
            f"task: config task {cfg['task']!r} conflicts with subcommand "
            f"{args.task!r}"
        )
    out_dir = args.out or cfg.get("output") or "."
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 1234))

    results = _HANDLERS[args.task](cfg, args, out_dir, seed, args.quiet)

    import numpy as np
    import scipy

    payload = {
        "task": args.task,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": seed,
        "versions": {
            "qestim": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": python_version(),
        },
        "config": cfg,
        "results": results,
    }
    path = os.path.join(out_dir, "results.json")
    write_json(path, payload)
    if not args.quiet:
        print(f"results written to {path}")
    return 0


def main(argv=None) -> int:
    _apply_thread_cap()
    args = _build_parser().parse_args(argv)

    from ._linalg import ValidationError

    try:
        return _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numerical failures -> exit 2
        import numpy as np

        from .sdp import SdpError

        numerical = (
            np.linalg.LinAlgError,
            FloatingPointError,
            OverflowError,
            ZeroDivisionError,
            SdpError,
        )
        if isinstance(exc, numerical):
            print(
                f"numerical failure in {type(exc).__module__}: {exc}",
                file=sys.stderr,
            )
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
