"""
``risloc`` command-line front end.

Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codebooks import CACHE_ENV_VAR, ScheduleCache
from .config import ConfigError, ExperimentConfig, check, grid_axis
from .montecarlo import (derive_seed, make_schedule, peb_curve, profile_peb, run_cdf,
                         run_error_vs_distance, run_heatmap, run_peb_vs_m, trial_seeds,
                         write_campaign, write_heatmap)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("risloc")


class ManifestError(ConfigError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="TOML experiment file (defaults if omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key; repeatable")
    common.add_argument("--codebook", choices=("random", "directional"), help="codebook kind")
    common.add_argument("--delta", type=float, help="directional-codebook uncertainty radius [m]")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="risloc", description="RIS-aided self-localisation experiments")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="static configuration checks")

    q = sub.add_parser("peb", parents=[common], help="position error bound at a point or along a ray")
    q.add_argument("--point", type=float, nargs=3, metavar=("X", "Y", "Z"))
    q.add_argument("--curve", action="store_true", help="PEB at every campaign distance")
    q.add_argument("--out", help="CSV path (stdout if omitted)")

    q = sub.add_parser("peb-map", parents=[common], help="PEB heatmap over [x, y, y]")
    q.add_argument("--out", required=True, help="long-format CSV path")
    q.add_argument("--grid", help="dense grid CSV path")

    for name, text in (("localize", "error-vs-distance campaign"), ("cdf", "error/PEB CDF at one distance")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--out", default=f"risloc-{name}", help="output directory")
        q.add_argument("--workers", type=int)
        q.add_argument("--cache-dir", help=f"schedule cache (default ${CACHE_ENV_VAR})")
        if name == "localize":
            q.add_argument("--manifest", help="rerun the campaign recorded in this manifest")
        else:
            q.add_argument("--distance", type=float)

    q = sub.add_parser("peb-vs-m", parents=[common], help="PEB versus RIS size")
    q.add_argument("--out", help="CSV path (stdout if omitted)")

    q = sub.add_parser("codebook-cache", parents=[common], help="populate or list the schedule cache")
    q.add_argument("--cache-dir", help=f"cache directory (default ${CACHE_ENV_VAR})")
    q.add_argument("--list", action="store_true", help="list cached schedules")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(source="<defaults>")
    for o in args.overrides:
        cfg.override(o)
    if args.codebook:
        cfg.set("codebook", "kind", args.codebook)
    if args.delta is not None:
        cfg.set("codebook", "delta", args.delta)
    return cfg


def _checked(cfg: ExperimentConfig) -> ExperimentConfig:
    errors, warnings = check(cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def _cache_dir(args):
    return getattr(args, "cache_dir", None) or os.environ.get(CACHE_ENV_VAR)


def _write_rows(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if path:
            fh.close()


# -- subcommands -----------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _load(args)
    errors, warnings = check(cfg)
    for w in warnings:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}")
    if errors:
        return EXIT_CONFIG
    print(f"{cfg.source}: ok")
    return EXIT_OK


def cmd_peb(args) -> int:
    cfg = _checked(_load(args))
    camp = cfg.campaign()
    if args.curve:
        _write_rows(args.out, ["distance_m", "peb_m"], peb_curve(camp))
        return EXIT_OK
    ue = np.asarray(args.point if args.point else cfg["campaign"]["p_u"], float)
    geo = camp.geometry
    if (ue - geo.center) @ geo.normal <= 0:
        raise ConfigError(f"point {ue.tolist()} is not in front of the RIS")
    sched = make_schedule(camp, ue, derive_seed(camp.master_seed, 0, 0))
    peb, cond = profile_peb(camp, sched, ue)
    dist = float(np.linalg.norm(ue - geo.center))
    _write_rows(args.out, ["x", "y", "z", "distance_m", "peb_m", "condition_number"],
                [[*map(float, ue), dist, peb, cond]])
    return EXIT_OK


def cmd_peb_map(args) -> int:
    cfg = _checked(_load(args))
    h = cfg["heatmap"]
    camp = cfg.campaign()
    res = run_heatmap(camp, grid_axis(h["x"]), grid_axis(h["y"]), mode=h["mode"],
                      seeds=int(h["seeds"]), reference_point=h["reference"])
    write_heatmap(res, camp.geometry.center, args.out, args.grid)
    finite = np.isfinite(res.mean_peb)
    print(f"{int(finite.sum())} of {finite.size} grid points evaluated; "
          f"median PEB {np.nanmedian(res.mean_peb):.4g} m")
    return EXIT_OK


def _manifest(cfg: ExperimentConfig, camp) -> dict:
    return {
        "config": cfg.as_dict(),
        "config_sha256": cfg.digest(),
        "master_seed": camp.master_seed,
        "statistic": "rmse",
        "seeds": [list(s) for s in trial_seeds(camp)],
    }


def _from_manifest(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from None
    if "config" not in doc:
        raise ManifestError(f"{path}: no resolved config recorded")
    cfg = ExperimentConfig.from_dict(doc["config"], source=str(path))
    recorded = [tuple(s) for s in doc.get("seeds", [])]
    values = [s[3] for s in recorded]
    if len(set(values)) != len(values):
        raise ManifestError(f"{path}: seed collision among recorded trials")
    expected = trial_seeds(cfg.campaign())
    if recorded and recorded != expected:
        raise ManifestError(f"{path}: recorded seeds do not match the master seed expansion")
    return cfg


def _print_summary(summaries):
    print(f"{'point':>5} {'d [m]':>8} {'trials':>6} {'RMSE [m]':>11} {'PEB [m]':>11} "
          f"{'ratio':>7} {'outliers':>8} {'failed':>6}")
    for s in summaries:
        print(f"{s.point:>5} {s.distance_m:>8.3f} {s.trials:>6} {s.rmse_m:>11.4g} {s.peb_rms_m:>11.4g} "
              f"{s.ratio:>7.3f} {s.outliers:>8} {s.failures:>6}")


def cmd_localize(args) -> int:
    cfg = _from_manifest(args.manifest) if args.manifest else _load(args)
    _checked(cfg)
    if args.workers:
        cfg.set("campaign", "workers", args.workers)
    camp = cfg.campaign(_cache_dir(args))
    res = run_error_vs_distance(camp)
    out = write_campaign(res, args.out, _manifest(cfg, camp))
    _print_summary(res.summaries)
    print(f"records written to {out}")
    return EXIT_OK


def cmd_cdf(args) -> int:
    cfg = _checked(_load(args))
    if args.workers:
        cfg.set("campaign", "workers", args.workers)
    camp = cfg.campaign(_cache_dir(args))
    dist = args.distance if args.distance is not None else cfg["campaign"]["cdf_distance"]
    res = run_cdf(camp, dist)
    manifest = _manifest(cfg, camp)
    manifest["cdf_distance"] = dist
    out = write_campaign(res, args.out, manifest)
    rows = [("error", x, f) for x, f in zip(*res.extra["error"])]
    rows += [("peb", x, f) for x, f in zip(*res.extra["peb"])]
    _write_rows(out / "cdf.csv", ["quantity", "value_m", "cdf"], rows)
    _print_summary(res.summaries)
    print(f"outlier fraction (error > 10 x PEB): {res.extra['outlier_fraction']:.4f}")
    return EXIT_OK


def cmd_peb_vs_m(args) -> int:
    cfg = _checked(_load(args))
    camp = cfg.campaign()
    p_u = np.asarray(cfg["campaign"]["p_u"], float) - camp.geometry.center
    camp = replace(camp, distances=(float(np.linalg.norm(p_u)),), direction=tuple(p_u))
    sw = cfg["sweep"]
    res = run_peb_vs_m(camp, [int(s) for s in sw["sides"]], tuple(sw["kinds"]))
    _write_rows(args.out, ["side", "M", "kind", "peb_m", "ill_conditioned", "realizations"],
                [[r.side, r.side**2, r.kind, r.peb_m, r.ill_conditioned, r.realizations] for r in res.records])
    for kind, slope in res.extra["slopes"].items():
        print(f"log-log slope ({kind}): {slope:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_codebook_cache(args) -> int:
    cfg = _checked(_load(args))
    directory = _cache_dir(args)
    if not directory:
        raise ConfigError(f"no cache directory: pass --cache-dir or set ${CACHE_ENV_VAR}")
    cache = ScheduleCache(directory)
    if not args.list:
        camp = cfg.campaign(directory)
        for p in range(len(camp.distances)):
            for q in range(camp.profile_count):
                make_schedule(camp, camp.ue_position(p), derive_seed(camp.master_seed, p, q), cache)
    for path in cache.entries():
        print(path.name)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "peb": cmd_peb,
    "peb-map": cmd_peb_map,
    "localize": cmd_localize,
    "cdf": cmd_cdf,
    "peb-vs-m": cmd_peb_vs_m,
    "codebook-cache": cmd_codebook_cache,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
