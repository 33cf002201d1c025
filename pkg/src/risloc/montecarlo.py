"""
Campaign orchestration: error-vs-distance curves, error/PEB CDFs,
PEB-vs-RIS-size sweeps and PEB heatmaps.

Every random quantity of a trial derives from ``master_seed`` and the
trial's (point, profile, noise) indices, so campaigns are reproducible
bit-for-bit and independent of execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .codebooks import PhaseSchedule, ScheduleCache, directional_codebook, random_codebook, sample_in_ball
from .estimator import EstimatorConfig, GridCache, localize
from .fisher import DegenerateFimError, ParameterVector, position_bound
from .geometry import RisGeometry, build_geometry
from .signal import (DomainError, GainProfile, SystemConfig, generate_multipath, geometric_paths,
                     path_loss, synthesize_frame)

log = logging.getLogger(__name__)

OUTLIER_FACTOR = 10.0


@dataclass(frozen=True)
class CodebookSpec:
    """
    ``aimed`` places the prior centre on the true position instead of
    drawing it from the uncertainty ball.
    """

    kind: str = "random"
    delta: float = 1.0
    aimed: bool = False

    def __post_init__(self):
        if self.kind not in ("random", "directional"):
            raise ValueError(f"unknown codebook kind {self.kind!r}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass(frozen=True, eq=False)
class Campaign:
    system: SystemConfig
    geometry: RisGeometry
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    codebook: CodebookSpec = field(default_factory=CodebookSpec)
    distances: tuple = (2.0, 4.0, 6.0)
    direction: tuple = (1.0, 1.0, 1.0)
    profile_count: int = 20
    noise_count: int = 5
    master_seed: int = 0
    nlos_paths: int = 2
    nlos_power_db: float = 0.0
    nlos_max_delay: float = 1e-6
    noiseless: bool = False
    workers: int = 1
    cache_dir: str | None = None

    def unit_direction(self) -> np.ndarray:
        u = np.asarray(self.direction, dtype=float)
        return u / np.linalg.norm(u)

    def ue_position(self, point: int) -> np.ndarray:
        return self.geometry.center + self.distances[point] * self.unit_direction()


@dataclass
class TrialRecord:
    point: int
    profile: int
    noise: int
    distance_m: float
    profile_seed: int
    noise_seed: int
    true_x: float
    true_y: float
    true_z: float
    tau_hat_s: float = math.nan
    coarse_x: float = math.nan
    coarse_y: float = math.nan
    coarse_z: float = math.nan
    est_x: float = math.nan
    est_y: float = math.nan
    est_z: float = math.nan
    final_cost: float = math.nan
    iterations: int = 0
    refined: bool = False
    error_m: float = math.nan
    peb_m: float = math.nan
    status: str = "ok"


RECORD_FIELDS = [f.name for f in fields(TrialRecord)]


@dataclass
class PointSummary:
    point: int
    distance_m: float
    trials: int
    rmse_m: float
    peb_rms_m: float
    ratio: float
    outliers: int
    not_refined: int
    failures: int


@dataclass
class CampaignResult:
    records: list
    summaries: list
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


# -- seeding ---------------------------------------------------------------

def derive_seed(master_seed: int, *indices: int) -> int:
    """Deterministic 63-bit seed from the master seed and trial indices."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def trial_seeds(campaign: Campaign) -> list[tuple[int, int, int, int]]:
    """(point, profile, noise, seed) for every trial, in canonical order."""
    out = []
    for p in range(len(campaign.distances)):
        for q in range(campaign.profile_count):
            for n in range(campaign.noise_count):
                out.append((p, q, n, derive_seed(campaign.master_seed, p, q, n)))
    return out


# -- per-profile work ------------------------------------------------------

def make_schedule(campaign: Campaign, ue_position, seed: int, cache: ScheduleCache | None = None,
                  half_t: int | None = None, geometry: RisGeometry | None = None) -> PhaseSchedule:
    """Codebook for one profile realisation."""
    geo = geometry or campaign.geometry
    half_t = half_t or campaign.system.transmissions // 2
    spec = campaign.codebook
    if spec.kind == "random":
        if cache is not None:
            return cache.random(geo, half_t, seed)
        return random_codebook(geo.num_elements, half_t, seed, geo.fingerprint())
    rng = np.random.default_rng(seed)
    if spec.aimed:
        prior = np.asarray(ue_position, dtype=float)
    else:
        prior = sample_in_ball(rng, ue_position, spec.delta, 1)[0]
    aim_seed = int(rng.integers(2**62))
    lam = campaign.system.wavelength
    if cache is not None:
        return cache.directional(geo, prior, spec.delta, half_t, lam, aim_seed)
    return directional_codebook(geo, prior, spec.delta, half_t, lam, aim_seed)


def profile_peb(campaign: Campaign, schedule, ue_position, geometry=None, beta=None) -> tuple[float, float]:
    """PEB and EFIM condition number for one schedule; beta defaults to the path loss."""
    geo = geometry or campaign.geometry
    cfg = campaign.system
    if beta is None:
        beta = path_loss(geo, np.asarray(ue_position) - geo.center, cfg.wavelength)
    params = ParameterVector(rho0=abs(beta), phi0=0.0, p_u=np.asarray(ue_position, float))
    try:
        rep = position_bound(cfg, geo, schedule, params)
    except DegenerateFimError:
        return math.inf, math.inf
    return rep.peb, rep.condition_number


def _run_profile(campaign: Campaign, point: int, profile: int, grid_cache: GridCache) -> list[TrialRecord]:
    cfg, geo = campaign.system, campaign.geometry
    ue = campaign.ue_position(point)
    profile_seed = derive_seed(campaign.master_seed, point, profile)
    sched_cache = ScheduleCache(campaign.cache_dir) if campaign.cache_dir else None
    schedule = make_schedule(campaign, ue, profile_seed, sched_cache)
    peb, _ = profile_peb(campaign, schedule, ue)

    records = []
    for noise in range(campaign.noise_count):
        seed = derive_seed(campaign.master_seed, point, profile, noise)
        rec = TrialRecord(point=point, profile=profile, noise=noise,
                          distance_m=float(campaign.distances[point]),
                          profile_seed=profile_seed, noise_seed=seed,
                          true_x=float(ue[0]), true_y=float(ue[1]), true_z=float(ue[2]), peb_m=peb)
        try:
            _run_trial(campaign, ue, schedule, seed, grid_cache, rec)
        except Exception as exc:  # isolate failures; the campaign continues
            rec.status = f"failed: {type(exc).__name__}: {exc}"
            log.warning("trial %s/%s/%s failed: %s", point, profile, noise, exc)
        records.append(rec)
    return records


def _run_trial(campaign, ue, schedule, seed, grid_cache, rec: TrialRecord):
    cfg, geo = campaign.system, campaign.geometry
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2 * np.pi)
    mp_seed, noise_seed = (int(s) for s in rng.integers(2**62, size=2))
    rho = path_loss(geo, ue - geo.center, cfg.wavelength)
    if campaign.nlos_paths:
        profile = GainProfile(reference_power=rho**2 * geo.num_elements,
                              relative_power_db=campaign.nlos_power_db)
        gains, delays = generate_multipath(mp_seed, campaign.nlos_paths,
                                           (0.0, campaign.nlos_max_delay), profile)
    else:
        gains, delays = None, None
    paths = geometric_paths(cfg, geo, ue, phase, gains, delays)
    frame = synthesize_frame(cfg, geo, ue, schedule, paths,
                             noise_seed=None if campaign.noiseless else noise_seed)
    est = localize(frame, schedule, geo, cfg, campaign.estimator, grid_cache)
    rec.tau_hat_s = float(est.tau_hat)
    rec.coarse_x, rec.coarse_y, rec.coarse_z = (float(v) for v in est.coarse_position)
    rec.est_x, rec.est_y, rec.est_z = (float(v) for v in est.refined_position)
    rec.final_cost = float(est.final_cost)
    rec.iterations = est.iterations
    rec.refined = est.refined
    rec.error_m = float(est.error_m)


def _profile_batch(args):
    campaign, items = args
    cache = GridCache()
    out = []
    for point, profile in items:
        out.extend(_run_profile(campaign, point, profile, cache))
    return out


def run_trials(campaign: Campaign) -> list[TrialRecord]:
    """All trials of ``campaign`` in canonical (point, profile, noise) order."""
    work = [(p, q) for p in range(len(campaign.distances)) for q in range(campaign.profile_count)]
    if campaign.workers <= 1:
        return _profile_batch((campaign, work))
    # contiguous chunks keep same-point profiles together for grid-cache reuse
    chunks = [work[i::campaign.workers] for i in range(campaign.workers)]
    with ProcessPoolExecutor(max_workers=campaign.workers) as pool:
        parts = list(pool.map(_profile_batch, [(campaign, c) for c in chunks if c]))
    records = [r for part in parts for r in part]
    records.sort(key=lambda r: (r.point, r.profile, r.noise))
    return records


# -- aggregation -----------------------------------------------------------

def summarize(records, num_points: int | None = None) -> list[PointSummary]:
    """Per-point RMSE of the 3-D error and RMS of the per-trial PEB."""
    points = sorted({r.point for r in records}) if num_points is None else range(num_points)
    out = []
    for p in points:
        rs = [r for r in records if r.point == p]
        ok = [r for r in rs if r.status == "ok"]
        err = np.array([r.error_m for r in ok])
        pebs = np.array([r.peb_m for r in ok])
        rmse = float(np.sqrt(np.mean(err**2))) if len(ok) else math.nan
        peb_rms = float(np.sqrt(np.mean(pebs**2))) if len(ok) else math.nan
        out.append(PointSummary(
            point=p,
            distance_m=rs[0].distance_m if rs else math.nan,
            trials=len(ok),
            rmse_m=rmse,
            peb_rms_m=peb_rms,
            ratio=rmse / peb_rms if peb_rms > 0 else math.nan,
            outliers=int(np.sum(err > OUTLIER_FACTOR * pebs)),
            not_refined=sum(1 for r in ok if not r.refined),
            failures=len(rs) - len(ok),
        ))
    return out


def _metadata(campaign: Campaign, started: float, kind: str) -> dict:
    import scipy

    from . import __version__

    return {
        "artifact": kind,
        "statistic": "rmse",
        "master_seed": campaign.master_seed,
        "runtime_s": time.perf_counter() - started,
        "versions": {"risloc": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }


def run_error_vs_distance(campaign: Campaign) -> CampaignResult:
    if not campaign.distances:
        raise ValueError("distance list is empty")
    t0 = time.perf_counter()
    records = run_trials(campaign)
    return CampaignResult(records=records, summaries=summarize(records, len(campaign.distances)),
                          metadata=_metadata(campaign, t0, "error_vs_distance"))


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, len(x) + 1) / len(x)


def run_cdf(campaign: Campaign, distance: float) -> CampaignResult:
    """
    Error and PEB distributions at one distance over profile realisations.
    ``extra`` holds the sorted values with their CDF levels and the outlier
    fraction (error above 10x the profile's PEB).
    """
    t0 = time.perf_counter()
    camp = replace(campaign, distances=(float(distance),))
    records = run_trials(camp)
    ok = [r for r in records if r.status == "ok"]
    err_x, err_f = empirical_cdf([r.error_m for r in ok])
    peb_by_profile = {r.profile: r.peb_m for r in ok}
    peb_x, peb_f = empirical_cdf(list(peb_by_profile.values()))
    outliers = sum(1 for r in ok if r.error_m > OUTLIER_FACTOR * r.peb_m)
    extra = {
        "error": (err_x, err_f),
        "peb": (peb_x, peb_f),
        "outlier_fraction": outliers / len(ok) if ok else math.nan,
    }
    return CampaignResult(records=records, summaries=summarize(records, 1),
                          metadata=_metadata(camp, t0, "cdf"), extra=extra)


@dataclass
class SweepRow:
    side: int
    kind: str
    peb_m: float
    ill_conditioned: int
    realizations: int


def run_peb_vs_m(campaign: Campaign, sides, kinds=("random", "directional")) -> CampaignResult:
    """
    PEB at ``campaign.distances[0]`` along ``direction`` for several RIS
    sizes, averaged (RMS) over ``profile_count`` codebook realisations.
    ``extra["slopes"]`` holds the log-log slope of PEB versus M per kind.
    """
    t0 = time.perf_counter()
    g0 = campaign.geometry
    rows = []
    for side in sides:
        geo = build_geometry(g0.center, g0.orientation, side, g0.spacing, campaign.system.wavelength)
        camp_side = replace(campaign, geometry=geo)
        ue = camp_side.ue_position(0)
        for kind in kinds:
            camp = replace(camp_side, codebook=replace(campaign.codebook, kind=kind))
            pebs = []
            for q in range(campaign.profile_count):
                sched = make_schedule(camp, ue, derive_seed(campaign.master_seed, 0, q), geometry=geo)
                pebs.append(profile_peb(camp, sched, ue, geometry=geo)[0])
            pebs = np.array(pebs)
            finite = pebs[np.isfinite(pebs)]
            rows.append(SweepRow(side=int(side), kind=kind,
                                 peb_m=float(np.sqrt(np.mean(finite**2))) if len(finite) else math.inf,
                                 ill_conditioned=int(np.sum(~np.isfinite(pebs))),
                                 realizations=len(pebs)))
    slopes = {}
    for kind in kinds:
        sel = [r for r in rows if r.kind == kind and np.isfinite(r.peb_m)]
        if len(sel) >= 2:
            m = np.log([r.side**2 for r in sel])
            slopes[kind] = float(np.polyfit(m, np.log([r.peb_m for r in sel]), 1)[0])
    return CampaignResult(records=rows, summaries=[], metadata=_metadata(campaign, t0, "peb_vs_m"),
                          extra={"slopes": slopes})


@dataclass
class HeatmapResult:
    xs: np.ndarray
    ys: np.ndarray
    peb: np.ndarray          # (seeds, len(xs), len(ys)); NaN where skipped
    condition: np.ndarray
    mode: str
    metadata: dict = field(default_factory=dict)

    @property
    def mean_peb(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.mean(self.peb, axis=0)

    def positions(self, center) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y, Y], axis=-1) + np.asarray(center)


def run_heatmap(campaign: Campaign, xs, ys, mode: str = "physical", seeds: int = 1,
                reference_point=None) -> HeatmapResult:
    """
    PEB over UE positions [x, y, y] (relative to the RIS centre) for
    ``seeds`` random-codebook realisations.

    ``mode="fixed"`` uses the path loss at ``reference_point`` (default
    [10, 10, 10]/sqrt(3)) for every position, isolating geometric effects.
    Positions on or behind the surface are skipped (NaN).
    """
    if mode not in ("physical", "fixed"):
        raise ValueError(f"unknown heatmap mode {mode!r}")
    t0 = time.perf_counter()
    geo, cfg = campaign.geometry, campaign.system
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    fixed_beta = None
    if mode == "fixed":
        ref = np.full(3, 10 / np.sqrt(3)) if reference_point is None else np.asarray(reference_point, float)
        fixed_beta = path_loss(geo, ref, cfg.wavelength)
    peb = np.full((seeds, len(xs), len(ys)), np.nan)
    cond = np.full_like(peb, np.nan)
    half_t = cfg.transmissions // 2
    for s in range(seeds):
        sched = random_codebook(geo.num_elements, half_t, derive_seed(campaign.master_seed, s),
                                geo.fingerprint())
        for i, x in enumerate(xs):
            for k, y in enumerate(ys):
                ue = geo.center + np.array([x, y, y])
                if (ue - geo.center) @ geo.normal <= 0:
                    continue
                peb[s, i, k], cond[s, i, k] = profile_peb(campaign, sched, ue, beta=fixed_beta)
    return HeatmapResult(xs=xs, ys=ys, peb=peb, condition=cond, mode=mode,
                         metadata=_metadata(campaign, t0, f"heatmap_{mode}"))


def symmetry_gap(result: HeatmapResult) -> np.ndarray:
    """
    Relative gap |P(x) - P(-x)| / mean between mirrored columns of the
    seed-averaged map; requires ``xs`` symmetric about zero.
    """
    if not np.allclose(result.xs, -result.xs[::-1]):
        raise ValueError("x grid is not symmetric about zero")
    P = result.mean_peb
    Q = P[::-1]
    with np.errstate(invalid="ignore"):
        return np.abs(P - Q) / (0.5 * (P + Q))


def peb_curve(campaign: Campaign, seed_index: int = 0) -> list[tuple[float, float]]:
    """(distance, PEB) along the campaign direction for one codebook realisation."""
    out = []
    for p, dist in enumerate(campaign.distances):
        ue = campaign.ue_position(p)
        sched = make_schedule(campaign, ue, derive_seed(campaign.master_seed, p, seed_index))
        out.append((float(dist), profile_peb(campaign, sched, ue)[0]))
    return out


# -- output ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records) -> str:
    """Per-trial records as CSV text; floats use repr so reruns are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])
    return buf.getvalue()


def read_records(path) -> list[TrialRecord]:
    types = {f.name: f.type for f in fields(TrialRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                if t == "int":
                    kw[k] = int(v)
                elif t == "bool":
                    kw[k] = bool(int(v))
                elif t == "float":
                    kw[k] = float(v)
                else:
                    kw[k] = v
            out.append(TrialRecord(**kw))
    return out


def summaries_csv(summaries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(PointSummary)]
    w.writerow(names)
    for s in summaries:
        w.writerow([_fmt(getattr(s, n)) for n in names])
    return buf.getvalue()


def write_campaign(result: CampaignResult, out_dir, manifest: dict | None = None) -> Path:
    """trials.csv, summary.csv and manifest.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.csv").write_text(records_csv(result.records))
    (out / "summary.csv").write_text(summaries_csv(result.summaries))
    doc = dict(manifest or {})
    doc["metadata"] = result.metadata
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default))
    return out


def write_heatmap(result: HeatmapResult, center, path_rows, path_grid=None):
    """Long-format (x, y, z, peb_m, condition_number) rows plus an optional dense grid."""
    P = result.mean_peb
    with np.errstate(invalid="ignore"):
        C = np.mean(result.condition, axis=0)
    with open(path_rows, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "peb_m", "condition_number"])
        for i, x in enumerate(result.xs):
            for k, y in enumerate(result.ys):
                ue = np.asarray(center) + np.array([x, y, y])
                w.writerow([repr(float(v)) for v in (*ue, P[i, k], C[i, k])])
    if path_grid is not None:
        with open(path_grid, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y\\x"] + [repr(float(x)) for x in result.xs])
            for k, y in enumerate(result.ys):
                w.writerow([repr(float(y))] + [repr(float(P[i, k])) for i in range(len(result.xs))])


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
