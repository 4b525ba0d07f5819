"""Batch front-end: validated JSON configs in, CSV bundles out.

Subcommands mirror the pipeline functions one-to-one; plotting is limited to
optional gnuplot script emission.
"""

import argparse
import json
import sys
from pathlib import Path

import jsonschema

from . import recipes

_BASE_PROPERTIES = {
    "schema": {"type": "integer", "minimum": 1, "maximum": recipes.SCHEMA_VERSION},
    "model": {"enum": ["dimer", "trimer"]},
    "N": {"type": "integer", "minimum": 2},
    "alpha_pre": {"type": "number"},
    "alpha_post": {"type": "number"},
    "u_post": {"type": "number"},
    "observable": {"type": "string"},
    "observable_b": {"type": "string"},
    "l": {"type": "integer", "minimum": 0},
    "k_list": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    "k_sum_max": {"type": "integer", "minimum": 1},
    "kT_over_delta": {"type": "number", "minimum": 0},
    "prequench_states": {"type": "integer", "minimum": 1},
    "grid_points": {"type": "integer", "minimum": 5},
    "t_max_over_te": {"type": "number", "exclusiveMinimum": 0},
    "t_min": {"type": "number", "exclusiveMinimum": 0},
    "fit_window": {"type": "array", "items": {"type": "number"},
                   "minItems": 2, "maxItems": 2},
    "series_max_m": {"type": "integer", "minimum": 0},
    "n_max": {"type": "integer", "minimum": 2, "maximum": 12},
    "prediction_kmax": {"type": "integer", "minimum": 2},
    "step_tolerance": {"type": "number", "exclusiveMinimum": 0},
    "threads": {"type": "integer", "minimum": 1},
    "L": {"type": "integer", "minimum": 2},
    "u": {"type": "number"},
    "alpha": {"type": "number"},
}

_SCHEMAS = {
    "dimer-matrix-elements": {"required": ["N", "alpha_post"]},
    "dimer-otoc": {"required": ["N", "alpha_post"]},
    "dimer-cumulants": {"required": ["N", "alpha_post"]},
    "trimer-collapse": {"required": ["N", "u_post"]},
    "meanfield-stability": {"required": ["L"], "anyOf": [
        {"required": ["u"]}, {"required": ["alpha"]}]},
    "predict": {"required": ["N", "alpha_post"]},
}

_RUNNERS = {
    "dimer-matrix-elements": recipes.run_matrix_elements,
    "dimer-otoc": recipes.run_otoc,
    "dimer-cumulants": recipes.run_cumulants,
    "trimer-collapse": recipes.run_trimer_collapse,
    "meanfield-stability": recipes.run_stability,
    "predict": recipes.run_predict,
}

_GNUPLOT_HINTS = {
    "dimer-matrix-elements": ("matrix_element_k*.csv", "set logscale y"),
    "dimer-otoc": ("otoc_*.csv", "set logscale y"),
    "dimer-cumulants": ("cumulant_n*.csv", "set logscale y"),
    "trimer-collapse": ("collapse_*.csv", "set logscale y"),
    "meanfield-stability": ("stability.csv", ""),
    "predict": ("expectation_series.csv", ""),
}


def validate_config(subcommand, cfg):
    schema = {
        "type": "object",
        "properties": _BASE_PROPERTIES,
        "additionalProperties": False,
        **_SCHEMAS[subcommand],
    }
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = []
        for err in errors:
            field = ".".join(str(p) for p in err.path) or "<root>"
            lines.append(f"  {field}: {err.message}")
        raise SystemExit("invalid configuration:\n" + "\n".join(lines))
    return cfg


def emit_gnuplot(subcommand, outdir):
    pattern, extra = _GNUPLOT_HINTS[subcommand]
    script = Path(outdir) / "plot.gp"
    with open(script, "w") as fh:
        fh.write("set datafile separator ','\n")
        fh.write("set key outside\n")
        if extra:
            fh.write(extra + "\n")
        fh.write(f"plot for [f in system('ls {pattern}')] f using 1:2 "
                 f"with lines title f\n")
        fh.write("pause -1\n")
    return script


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bhquench",
        description="Quench dynamics across mean-field instabilities in "
                    "Bose-Hubbard rings: simulations and analytic predictions")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="cap worker threads")
        p.add_argument("--emit-gnuplot", action="store_true",
                       help="write a plot.gp alongside the CSVs")
        p.add_argument("--dump-basis", action="store_true",
                       help="write the occupation basis as CSV (diagnostic)")
    return parser


def _dump_basis(cfg, outdir):
    from . import fockspace as fs

    sites = 3 if "u_post" in cfg else 2
    basis = fs.build_basis(sites, cfg["N"])
    path = Path(outdir) / "basis.csv"
    with open(path, "w") as fh:
        fh.write("index, " + ", ".join(f"n{j+1}" for j in range(sites)) + "\n")
        for i, st in enumerate(basis.states):
            fh.write(f"{i}, " + ", ".join(str(int(v)) for v in st) + "\n")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config {args.config}: {exc}")
    cfg = validate_config(args.subcommand, cfg)
    if args.threads is not None:
        cfg["threads"] = args.threads
        _cap_threads(args.threads)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.dump_basis and "N" in cfg:
        _dump_basis(cfg, outdir)
    runner = _RUNNERS[args.subcommand]
    runner(cfg, outdir)
    if args.emit_gnuplot:
        emit_gnuplot(args.subcommand, outdir)
    return 0


def _cap_threads(n):
    try:
        import numba

        numba.set_num_threads(max(1, n))
    except (ImportError, ValueError):
        pass
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        pass


if __name__ == "__main__":
    sys.exit(main())
