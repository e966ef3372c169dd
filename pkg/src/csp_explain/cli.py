"""Command line front end: ``csp <verb> [flags]``.

Exit codes: 0 success, 2 configuration, 3 I/O, 4 forecasting backend,
5 numeric failure. ``CSP_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import CSPError, ConfigInvalid, IOFailure
from .pipeline import MODELS, PipelineConfig, run_stage

log = logging.getLogger("csp_explain")

STAGE_VERBS = ("cluster", "segregate", "sensitivity", "correlation", "all")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--archive", help="sample archive directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--gamma", type=float, help="soft-DTW smoothing")
    p.add_argument("--lambda", dest="lam", type=float, help="centroid similarity threshold")
    p.add_argument("--jobs", type=int, help="parallelism degree")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--exchange-dir", help="exchange directory of the external model")
    p.add_argument("--timeout-s", type=float, help="external model timeout per request")
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csp", description="weather-segment explainability pipeline")
    sub = ap.add_subparsers(dest="verb", required=True)
    common = _common()
    for verb in STAGE_VERBS:
        sub.add_parser(verb, parents=[common], help=f"run the {verb} stage")
    p = sub.add_parser("plot", help="render SVG figures from existing artifacts")
    p.add_argument("--config")
    p.add_argument("--out")
    g = sub.add_parser("synth-gen", help="write a synthetic archive with planted regimes")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="JSON file with the planted-regime spec")
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--samples-per-regime", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    return ap


def _overrides(args) -> dict:
    return {
        "archive": args.archive, "out": args.out, "seed": args.seed, "k_min": args.k_min,
        "k_max": args.k_max, "gamma": args.gamma, "lambda": args.lam, "jobs": args.jobs,
        "model": args.model, "exchange_dir": args.exchange_dir, "timeout_s": args.timeout_s,
    }


def _synth_gen(args) -> None:
    from dataclasses import replace

    from .data import GridShape
    from .synthgen import PlantedRegimeSpec, generate_archive

    spec = PlantedRegimeSpec()
    if args.spec:
        try:
            spec = PlantedRegimeSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid("spec", str(exc)) from exc
    if args.noise_sd is not None:
        spec = replace(spec, noise_sd=args.noise_sd)
    if args.samples_per_regime is not None:
        spec = replace(spec, samples_per_regime=args.samples_per_regime)
    if args.height or args.width:
        g = spec.grid
        spec = replace(spec, grid=GridShape(g.t_in, g.t_out, args.height or g.h, args.width or g.w))
    generate_archive(spec, args.seed, args.out)


def _plot(args) -> None:
    from .plots import emit_plots

    out = args.out
    if out is None and args.config:
        out = PipelineConfig.load(args.config).out
    if out is None:
        raise ConfigInvalid("out", "no output directory given")
    for path in emit_plots(out):
        log.info("wrote %s", path)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CSP_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "synth-gen":
            _synth_gen(args)
        elif args.verb == "plot":
            _plot(args)
        else:
            run_stage(args.verb, PipelineConfig.load(args.config, _overrides(args)))
    except CSPError as exc:
        print(f"csp {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"csp {args.verb}: I/O error: {exc}", file=sys.stderr)
        return IOFailure.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
