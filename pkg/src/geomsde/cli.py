"""Command-line entry point: ``geomsde <command> [options]``.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
command's option names with underscores) and ``--seed``; explicit flags win
over the config file, which wins over defaults. Each output file gets a
``<file>.meta.json`` sidecar holding the fully resolved options.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
4 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, _backend
from .distributions import PowerSphericalParams
from .drift import ChebyshevDrift, drift_from_dict
from .exceptions import GeomSDEError, NumericalError
from .fitting import (
    SyntheticSpec,
    TrainConfig,
    fit,
    merge_grid,
    read_manifest,
    relative_drift_error,
    synthetic_dataset,
    write_manifest,
    write_trace,
)
from .kl import kl_total
from .sde import SolverConfig, TimeGrid, sample_posterior_paths, sample_prior_paths, strong_convergence_study

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _bool(value):
    if isinstance(value, bool):
        return value
    raise UsageError(f"expected a boolean, got {value!r}")


# (name, type, default, help); type "flag" is a boolean switch.
_GRID = [
    ("sigma", float, 1.0, "diffusion scale (> 0)"),
    ("t_end", float, 1.0, "horizon T"),
    ("steps", int, 100, "number of uniform steps"),
    ("grid_file", str, None, "file of grid times, one per line (overrides --t-end/--steps)"),
]
_COMMON = [
    ("seed", int, 0, "random seed"),
    ("out", str, None, "output file (default: standard output)"),
]
_INIT = [
    ("mu", _floats, None, "initial location, comma separated (default e_1)"),
    ("kappa", float, 0.0, "initial concentration"),
]

OPTIONS = {
    "sample-prior": [("n", int, 3, "latent dimension (n >= 2)")] + _GRID + [("paths", int, 10, "number of paths")] + _COMMON,
    "sample-posterior": [
        ("n", int, None, "latent dimension (default: from the drift file)"),
        ("drift_file", str, None, "drift JSON (required)"),
    ]
    + _INIT
    + _GRID
    + [("paths", int, 10, "number of paths")]
    + _COMMON,
    "kl": [
        ("n", int, None, "latent dimension (default: from the drift file)"),
        ("drift_file", str, None, "drift JSON (required)"),
        ("method", str, "mc", "mc (Monte Carlo) or bound (Frobenius bound)"),
    ]
    + _INIT
    + _GRID
    + [("paths", int, 1000, "Monte Carlo sample count")]
    + _COMMON,
    "convergence": [
        ("n", int, 3, "latent dimension"),
        ("sigma", float, 0.5, "diffusion scale (> 0)"),
        ("t_end", float, 1.0, "horizon T"),
        ("drift_file", str, None, "drift JSON (default: constant rotation E_12)"),
        ("dt_list", _floats, [2.0**-k for k in range(4, 10)], "coarse steps, comma separated"),
        ("ref_dt", float, 2.0**-12, "reference step"),
        ("paths", int, 2000, "number of paths"),
        ("order_out", str, None, "JSON file for the fitted order (default: standard output)"),
    ]
    + _COMMON,
    "fit": [
        ("data", str, None, "dataset manifest JSON (required)"),
        ("n", int, 3, "latent dimension"),
        ("sigma", float, 0.05, "diffusion scale (> 0)"),
        ("steps", int, None, "uniform solver steps (default: merged observation grid)"),
        ("t_end", float, None, "horizon (default: last observation time)"),
        ("learning_rate", float, 0.05, "Adam step size"),
        ("lr_decay", float, 1.0, "per-epoch step size factor"),
        ("epochs", int, 200, "training epochs"),
        ("kl_weight", float, 1e-5, "weight of the KL term"),
        ("loglik_weight", float, 1.0, "weight of the log-likelihood"),
        ("task_weight", float, 1.0, "weight of the supervised squared error"),
        ("mc_samples", int, 4, "Monte Carlo samples per series"),
        ("fd_epsilon", float, 1e-4, "central-difference step"),
        ("init_kappa", float, 10.0, "starting concentration"),
        ("n_polys", int, 1, "Chebyshev terms (with --no-constant)"),
        ("constant", _bool, True, "constant drift"),
        ("train_decoder", "flag", False, "also fit the linear decoder"),
        ("trace", str, None, "ELBO trace CSV"),
    ]
    + _COMMON,
    "gen-synthetic": [
        ("out_dir", str, None, "directory for the series CSVs and manifest (required)"),
        ("series", int, 64, "number of series"),
        ("n", int, 3, "latent dimension"),
        ("sigma", float, 0.05, "diffusion scale"),
        ("kappa", float, 200.0, "initial concentration around e_1"),
        ("omega", float, float(np.pi), "rotation rate of the drift in the (1,2) plane"),
        ("t_end", float, 1.0, "horizon"),
        ("steps", int, 50, "grid steps (observed at every grid point)"),
        ("obs_std", float, 0.01, "observation noise"),
        ("seed", int, 0, "random seed"),
    ],
}

_REQUIRED = {"sample-posterior": ["drift_file"], "kl": ["drift_file"], "fit": ["data"], "gen-synthetic": ["out_dir"]}


def build_parser():
    parser = argparse.ArgumentParser(prog="geomsde", description="SDEs on spheres: sampling, KL, convergence, fitting.")
    parser.add_argument("--version", action="version", version=f"geomsde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON file of options")
        p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto (env GEOMSDE_THREADS)")
        for key, typ, _default, help_ in opts:
            flag = "--" + key.replace("_", "-")
            if typ == "flag":
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_)
            elif typ is _bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_)
                p.add_argument("--no-" + key.replace("_", "-"), dest=key, action="store_const", const=False)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None, help=help_)
    return parser


def resolve(command, args):
    """Merge defaults, the ``--config`` document and explicit flags."""
    opts = OPTIONS[command]
    resolved = {key: default for key, _t, default, _h in opts}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(resolved))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        types = {key: typ for key, typ, _d, _h in opts}
        for key, value in doc.items():
            typ = types[key]
            try:
                if value is None:
                    resolved[key] = None
                elif typ == "flag" or typ is _bool:
                    resolved[key] = _bool(value)
                elif typ is int and (isinstance(value, bool) or float(value) != int(value)):
                    raise ValueError(f"expected an integer, got {value!r}")
                else:
                    resolved[key] = typ(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
    for key in resolved:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    for key in _REQUIRED.get(command, []):
        if resolved.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    return resolved


# -- helpers ------------------------------------------------------------------


def _grid(opts):
    if opts.get("grid_file"):
        times = np.loadtxt(opts["grid_file"], delimiter=",", ndmin=1)
        return TimeGrid(times)
    return TimeGrid.uniform(opts["t_end"], opts["steps"])


def _check_counts(opts, key="paths"):
    if opts[key] < 1:
        raise UsageError(f"--{key} must be >= 1")


def _load_drift(path, sigma=None):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"drift file {path} is not valid JSON: {exc}") from None
    drift = drift_from_dict(doc, extra_keys=("sigma",))
    if sigma is not None and "sigma" in doc and not np.isclose(float(doc["sigma"]), sigma, rtol=1e-12, atol=0):
        raise UsageError(
            f"drift file declares sigma={doc['sigma']} but the run uses sigma={sigma}; "
            "prior and posterior must share the diffusion scale for a finite KL"
        )
    return drift


def _resolve_n(opts, drift):
    if opts["n"] is not None and opts["n"] != drift.n:
        raise UsageError(f"--n {opts['n']} does not match drift dimension {drift.n}")
    opts["n"] = drift.n
    return drift.n


def _init_law(opts, n):
    mu = np.eye(n)[0] if opts["mu"] is None else np.asarray(opts["mu"], dtype=float)
    if mu.size != n:
        raise UsageError(f"--mu has {mu.size} entries, expected {n}")
    return PowerSphericalParams.from_unnormalized(mu, opts["kappa"])


def _meta(command, opts, extra=None):
    doc = {"command": command, "version": __version__, "backend": _backend.backend(), "options": opts}
    if extra:
        doc.update(extra)
    return doc


def _write_text(dest, text, meta):
    if dest is None:
        sys.stdout.write(text)
        return
    with open(dest, "w", newline="") as fh:
        fh.write(text)
    with open(dest + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _paths_csv(sample):
    import io

    buf = io.StringIO()
    sample.to_csv(buf)
    return buf.getvalue()


# -- commands -------------------------------------------------------------------


def cmd_sample_prior(opts):
    _check_counts(opts)
    config = SolverConfig(opts["n"], opts["sigma"], _grid(opts), opts["seed"])
    paths = sample_prior_paths(config, opts["paths"], rng=opts["seed"])
    _write_text(opts["out"], _paths_csv(paths), _meta("sample-prior", opts))
    print(f"paths={paths.count} steps={config.grid.steps} max_norm_deviation={paths.max_norm_deviation():.3e}", file=sys.stderr)


def cmd_sample_posterior(opts):
    _check_counts(opts)
    drift = _load_drift(opts["drift_file"], opts["sigma"])
    n = _resolve_n(opts, drift)
    config = SolverConfig(n, opts["sigma"], _grid(opts), opts["seed"])
    paths = sample_posterior_paths(_init_law(opts, n), drift, config, opts["paths"], rng=opts["seed"])
    meta = _meta("sample-posterior", opts, {"drift": drift.to_dict(), "solver": config.to_dict()})
    _write_text(opts["out"], _paths_csv(paths), meta)
    print(f"paths={paths.count} steps={config.grid.steps} max_norm_deviation={paths.max_norm_deviation():.3e}", file=sys.stderr)


def cmd_kl(opts):
    methods = {"mc": "monte_carlo", "bound": "frobenius_bound"}
    if opts["method"] not in methods:
        raise UsageError(f"--method must be mc or bound, got {opts['method']!r}")
    _check_counts(opts)
    if opts["paths"] < 2:
        raise UsageError("--paths must be >= 2 for a Monte Carlo estimate")
    drift = _load_drift(opts["drift_file"], opts["sigma"])
    n = _resolve_n(opts, drift)
    config = SolverConfig(n, opts["sigma"], _grid(opts), opts["seed"])
    est = kl_total(_init_law(opts, n), drift, config, opts["paths"], rng=opts["seed"], method=methods[opts["method"]])
    _write_text(opts["out"], json.dumps(est.to_dict(), indent=2) + "\n", _meta("kl", opts, {"drift": drift.to_dict()}))


def cmd_convergence(opts):
    if len(opts["dt_list"]) < 3:
        raise UsageError("--dt-list needs at least 3 step sizes to fit an order")
    _check_counts(opts)
    if opts["paths"] < 2:
        raise UsageError("--paths must be >= 2")
    if opts["drift_file"]:
        drift = _load_drift(opts["drift_file"], opts["sigma"])
        _resolve_n(opts, drift)
    else:
        K = np.zeros((opts["n"], opts["n"]))
        K[0, 1], K[1, 0] = 1.0, -1.0
        drift = ChebyshevDrift.constant_drift(K, (0.0, opts["t_end"]))
    config = SolverConfig(opts["n"], opts["sigma"], TimeGrid.uniform(opts["t_end"], 1), opts["seed"])
    result = strong_convergence_study(drift, config, opts["dt_list"], opts["ref_dt"], opts["paths"], rng=opts["seed"])
    lines = ["dt,error,se"] + [f"{d!r},{e!r},{s!r}" for d, e, s in result.to_rows()]
    meta = _meta("convergence", opts, {"drift": drift.to_dict()})
    _write_text(opts["out"], "\n".join(lines) + "\n", meta)
    order = json.dumps({"order": result.order, "ref_dt": result.ref_dt, "paths": opts["paths"]}, indent=2) + "\n"
    _write_text(opts["order_out"], order, meta)


def _diagnostic_path(opts):
    base = opts["out"] or opts["trace"] or os.path.join(os.path.dirname(os.path.abspath(opts["data"])), "fit")
    return base + ".diagnostic.json"


def cmd_fit(opts):
    dataset, manifest = read_manifest(opts["data"])
    times = merge_grid(dataset, opts["t_end"])
    if opts["steps"] is not None:
        t_end = opts["t_end"] if opts["t_end"] is not None else float(times[-1])
        grid = TimeGrid.uniform(t_end, opts["steps"])
    else:
        grid = TimeGrid(times)
    config = SolverConfig(opts["n"], opts["sigma"], grid, opts["seed"])
    train_keys = set(TrainConfig.__dataclass_fields__)
    try:
        train = TrainConfig(**{k: v for k, v in opts.items() if k in train_keys})
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    try:
        result = fit(dataset, train, config)
    except NumericalError as exc:
        path = _diagnostic_path(opts)
        with open(path, "w") as fh:
            json.dump({"error": str(exc), "options": opts}, fh, indent=2)
        raise NumericalError(f"{exc} (diagnostic written to {path})") from None
    meta = _meta("fit", opts, {"train": train.to_dict(), "solver": config.to_dict()})
    doc = result.params.to_dict()
    doc["initial_elbo"] = result.initial_elbo
    doc["final_elbo"] = result.final_elbo
    _write_text(opts["out"], json.dumps(doc, indent=2) + "\n", meta)
    if opts["trace"]:
        write_trace(result.trace, opts["trace"])
        with open(opts["trace"] + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    summary = f"initial_elbo={result.initial_elbo:.10g} final_elbo={result.final_elbo:.10g}"
    if "truth" in manifest:
        truth = drift_from_dict(manifest["truth"])
        summary += f" drift_rel_error={relative_drift_error(result.params.mean_drift(), truth):.4f}"
    print(summary, file=sys.stderr)


def cmd_gen_synthetic(opts):
    if opts["series"] < 1:
        raise UsageError("--series must be >= 1")
    spec = SyntheticSpec(
        num_series=opts["series"],
        n=opts["n"],
        sigma=opts["sigma"],
        kappa=opts["kappa"],
        omega=opts["omega"],
        t_end=opts["t_end"],
        steps=opts["steps"],
        obs_std=opts["obs_std"],
        seed=opts["seed"],
    )
    dataset = synthetic_dataset(spec)
    path = write_manifest(dataset, opts["out_dir"], extra={"truth": spec.truth().to_dict(), "generator": spec.to_dict()})
    with open(path + ".meta.json", "w") as fh:
        json.dump(_meta("gen-synthetic", opts), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"series={len(dataset)} manifest={path}", file=sys.stderr)


COMMANDS = {
    "sample-prior": cmd_sample_prior,
    "sample-posterior": cmd_sample_posterior,
    "kl": cmd_kl,
    "convergence": cmd_convergence,
    "fit": cmd_fit,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        _backend.set_threads(args.threads)
        opts = resolve(args.command, args)
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"geomsde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"geomsde {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GeomSDEError, ValueError) as exc:
        print(f"geomsde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"geomsde {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
