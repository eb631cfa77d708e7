"""``perfectfk`` command line: calibrate, sample, verify, scaling.

Exit codes: 0 success, 2 configuration error, 3 population/depth cap
breach, 4 failed verification check.  Outputs go to ``--out`` as JSON,
JSON-lines and CSV; no field depends on wall-clock time or thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema

from . import verification
from .apps import GaussianSSM, LatticeWalkModel, PolymerModel, generate_environment, scaling_experiment, simulate_observations
from .errors import ConfigError, DepthCapError, PerfectFKError, PopulationCapError
from .estimator import PerfectSampler

logger = logging.getLogger("perfectfk")

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_CHECK = 0, 2, 3, 4

MODEL_DEFAULTS = {
    "polymer": {"P": 4, "seed": 3, "p": 0.5, "beta": 1.0},
    "gaussian": {"P": 5, "seed": 11, "a": 0.9, "b": 0.5, "c": 0.5},
    "walk": {"P": 4, "g0": 1.0},
}
ALGORITHM_DEFAULTS = {
    "n_roots": 1,
    "population_cap": 10**6,
    "depth_cap": 10_000,
    "qs": "auto",
    "smc_particles": 2000,
    "smc_seed": 0,
    "spine_law": "size-biased",
}
SCALING_DEFAULTS = {"p": 0.5, "beta": 1.0, "P_list": [8, 16, 32, 64], "replicates": 200, "smc_particles": 1000,
                    "depth_cap": 10_000}


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def resolve_config(raw: dict) -> dict:
    """Validate against the schema and fill defaults."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, tuple(err.absolute_path))
    kind = raw.get("model", {}).get("kind", "polymer")
    model = {"kind": kind, **MODEL_DEFAULTS[kind], **raw.get("model", {})}
    if kind == "gaussian" and "observations" in raw.get("model", {}):
        model["P"] = len(model["observations"]) + 1
    algorithm = {**ALGORITHM_DEFAULTS, **raw.get("algorithm", {})}
    if algorithm["qs"] != "auto" and len(algorithm["qs"]) != model["P"] - 1:
        raise ConfigError(f"need {model['P'] - 1} entries", ("algorithm", "qs"))
    return {
        "model": model,
        "algorithm": algorithm,
        "scaling": {**SCALING_DEFAULTS, **raw.get("scaling", {})},
        "verify": {"criteria": sorted(verification.ALL_CHECKS), "options": {}, **raw.get("verify", {})},
    }


def build_model(cfg: dict):
    kind, P = cfg["kind"], cfg["P"]
    if kind == "polymer":
        return PolymerModel(generate_environment(cfg["seed"], cfg["p"], cfg["beta"], P))
    if kind == "gaussian":
        ys = cfg.get("observations")
        if ys is None:
            ys = simulate_observations(cfg["a"], cfg["b"], cfg["c"], P, cfg["seed"])
        return GaussianSSM(cfg["a"], cfg["b"], cfg["c"], ys)
    g0 = cfg["g0"]
    return LatticeWalkModel(P, lambda k, x: g0, bounds=g0)


def build_sampler(config: dict) -> PerfectSampler:
    alg = config["algorithm"]
    sampler = PerfectSampler(
        n_roots=alg["n_roots"],
        qs=None if alg["qs"] == "auto" else alg["qs"],
        smc_particles=alg["smc_particles"],
        smc_seed=alg["smc_seed"],
        delta=alg.get("delta"),
        spine_law=alg["spine_law"],
        population_cap=alg["population_cap"],
        depth_cap=alg["depth_cap"],
    )
    return sampler.fit(build_model(config["model"]))


_WORKER: dict = {}


def _init_worker(config: dict) -> None:
    _WORKER["sampler"] = build_sampler(config)


def _sample_one(seed: int) -> dict:
    sampler = _WORKER["sampler"]
    try:
        res = sampler.sample_results(1, seed)[0]
    except (DepthCapError, PopulationCapError) as exc:
        return {"seed": seed, "error": type(exc).__name__, "message": str(exc)}
    return res.to_dict()


def run_samples(config: dict, seeds: list[int], threads: int = 1) -> list[dict]:
    if threads > 1:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(config,)) as pool:
            return list(pool.map(_sample_one, seeds, chunksize=max(1, len(seeds) // (4 * threads))))
    _init_worker(config)
    return [_sample_one(s) for s in seeds]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_calibrate(config: dict, args) -> int:
    sampler = build_sampler(config)
    law = sampler.law_
    P = sampler.model_.horizon
    report = {
        "config": config,
        "betas": [law.betas[k] for k in range(2, P + 1)],
        "qs": [law.qs[k] for k in range(2, P + 1)],
        "g_hat": list(sampler.smc_.means) if sampler.smc_ else None,
        "log_z": sampler.log_z_,
        "mean_offspring_at_g_hat": (
            [law.mean_offspring(k + 1, g) for k, g in enumerate(sampler.smc_.means, start=1)]
            if sampler.smc_ else None
        ),
    }
    _write_json(args.out / "calibration.json", report)
    print(json.dumps({k: report[k] for k in ("qs", "log_z")}))
    return EXIT_OK


def cmd_sample(config: dict, args) -> int:
    seeds = list(range(args.seed, args.seed + args.replicates))
    results = run_samples(config, seeds, args.threads)
    with open(args.out / "samples.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    Ts = [r["T"] for r in results if "T" in r]
    failures = len(results) - len(Ts)
    summary = {
        "config": config,
        "seed": args.seed,
        "replicates": args.replicates,
        "failures": failures,
        "mean_T": statistics.fmean(Ts) if Ts else None,
        "median_T": statistics.median(Ts) if Ts else None,
        "T_histogram": {str(t): c for t, c in sorted(Counter(Ts).items())},
    }
    _write_json(args.out / "sample_summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("replicates", "failures", "mean_T", "median_T")}))
    return EXIT_CAP if failures else EXIT_OK


def cmd_verify(config: dict, args) -> int:
    opts = config["verify"]["options"]
    results = []
    for c in config["verify"]["criteria"]:
        res = verification.ALL_CHECKS[c](**opts.get(str(c), {}))
        print(res.line(), flush=True)
        results.append({k: v for k, v in res.to_dict().items() if k != "seconds"})
    _write_json(args.out / "verify.json", {"config": config, "results": results})
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_CHECK


def cmd_scaling(config: dict, args) -> int:
    sc = config["scaling"]
    res = scaling_experiment(sc["p"], sc["beta"], sc["P_list"], args.replicates or sc["replicates"], args.seed,
                             n_roots=sc.get("n_roots"), smc_particles=sc["smc_particles"],
                             depth_cap=sc["depth_cap"], threads=args.threads)
    res.write_csv(args.out / "scaling.csv")
    summary = {"config": config, **res.summary()}
    _write_json(args.out / "scaling_summary.json", summary)
    print(json.dumps({"zeta": res.zeta, "zeta_se": res.zeta_se, "low_confidence": res.low_confidence}))
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "sample": cmd_sample, "verify": cmd_verify, "scaling": cmd_scaling}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfectfk", description="Perfect sampling of Feynman-Kac path laws")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--replicates", type=int, default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
        config = resolve_config(raw)
        if args.threads < 1 or (args.replicates is not None and args.replicates < 1):
            raise ConfigError("--threads and --replicates must be >= 1", ())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error at {'/'.join(map(str, exc.path)) or '<root>'}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "sample" and args.replicates is None:
        args.replicates = 1
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](config, args)
    except (DepthCapError, PopulationCapError) as exc:
        print(f"cap breach: {exc}", file=sys.stderr)
        return EXIT_CAP
    except PerfectFKError as exc:
        if isinstance(exc, ValueError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
