import dataclasses

import numpy as np
import pytest

import risloc.montecarlo as mc
from risloc.montecarlo import (Campaign, CodebookSpec, derive_seed, empirical_cdf, peb_curve,
                               read_records, records_csv, run_cdf, run_error_vs_distance,
                               run_heatmap, run_peb_vs_m, summarize, symmetry_gap, trial_seeds,
                               write_campaign, write_heatmap)


@pytest.fixture(scope="module")
def campaign(desk_cfg, desk_geo):
    return Campaign(system=desk_cfg, geometry=desk_geo, distances=(2.0, 4.0), profile_count=2,
                    noise_count=2, master_seed=5)


@pytest.fixture(scope="module")
def result(campaign):
    return run_error_vs_distance(campaign)


def test_seed_expansion(campaign):
    assert derive_seed(5, 1, 2, 3) == derive_seed(5, 1, 2, 3)
    assert derive_seed(5, 1, 2, 3) != derive_seed(6, 1, 2, 3)
    seeds = [s[3] for s in trial_seeds(dataclasses.replace(campaign, profile_count=50, noise_count=10))]
    assert len(set(seeds)) == len(seeds)


def test_records_and_aggregates(result, campaign):
    assert len(result.records) == 8
    assert [(r.point, r.profile, r.noise) for r in result.records] == [
        (p, q, n) for p in range(2) for q in range(2) for n in range(2)]
    assert all(r.status == "ok" and r.refined for r in result.records)
    for s in result.summaries:
        err = np.array([r.error_m for r in result.records if r.point == s.point])
        assert s.rmse_m == pytest.approx(np.sqrt(np.mean(err**2)), rel=1e-12)
        assert s.trials == 4 and s.failures == 0
    # PEB grows with distance
    assert result.summaries[1].peb_rms_m > result.summaries[0].peb_rms_m


def test_rerun_is_byte_identical(result, campaign):
    again = run_error_vs_distance(campaign)
    assert records_csv(again.records) == records_csv(result.records)


def test_csv_round_trip(tmp_path, result):
    out = write_campaign(result, tmp_path, {"note": "x"})
    back = read_records(out / "trials.csv")
    assert records_csv(back) == records_csv(result.records)
    recomputed = summarize(back)
    for a, b in zip(recomputed, result.summaries):
        assert abs(a.rmse_m - b.rmse_m) <= 1e-12 * b.rmse_m
    assert (out / "manifest.json").exists() and (out / "summary.csv").exists()


def test_failures_are_isolated(campaign, monkeypatch):
    real = mc.localize
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FloatingPointError("diverged")
        return real(*args, **kw)

    monkeypatch.setattr(mc, "localize", flaky)
    res = run_error_vs_distance(dataclasses.replace(campaign, distances=(2.0,)))
    bad = [r for r in res.records if r.status != "ok"]
    assert len(bad) == 1 and "diverged" in bad[0].status
    assert res.summaries[0].failures == 1 and res.summaries[0].trials == 3


def test_noiseless_campaign(campaign):
    res = run_error_vs_distance(dataclasses.replace(campaign, noiseless=True, noise_count=1))
    assert all(s.rmse_m < 1e-3 for s in res.summaries)


def test_cdf_shape(campaign):
    res = run_cdf(dataclasses.replace(campaign, profile_count=3), 3.0)
    for x, f in (res.extra["error"], res.extra["peb"]):
        assert np.all(np.diff(x) >= 0) and np.all(np.diff(f) > 0) and f[-1] == 1.0
    assert res.extra["outlier_fraction"] == 0.0
    x, f = empirical_cdf([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(x, [1, 2, 3])


def test_directional_outliers_reproducible(campaign):
    """A wide uncertainty ball lets every beam miss the UE for some profiles."""
    camp = dataclasses.replace(campaign, profile_count=20, noise_count=1, master_seed=3,
                               codebook=CodebookSpec("directional", 1.0))
    res = run_cdf(camp, 4.0)
    assert res.extra["outlier_fraction"] > 0


def test_peb_vs_m(campaign):
    camp = dataclasses.replace(campaign, distances=(4.0,), profile_count=3,
                               codebook=CodebookSpec("directional", 0.1, aimed=True))
    res = run_peb_vs_m(camp, [8, 16, 32])
    slopes = res.extra["slopes"]
    assert slopes["random"] < 0 and slopes["directional"] < slopes["random"]
    one = run_peb_vs_m(camp, [1], ["random"])
    assert one.records[0].ill_conditioned == 3


def test_peb_curve_monotone(campaign):
    curve = peb_curve(dataclasses.replace(campaign, distances=(1.0, 2.0, 4.0, 6.0, 8.0, 10.0)))
    pebs = [p for _, p in curve]
    assert all(b >= a for a, b in zip(pebs, pebs[1:]))


def test_heatmap(tmp_path, campaign):
    xs, ys = np.linspace(-2, 2, 5), np.linspace(0, 2, 3)
    res = run_heatmap(campaign, xs, ys, seeds=2)
    assert res.peb.shape == (2, 5, 3)
    assert np.all(np.isnan(res.peb[:, :, 0]))       # y = 0 lies on the surface
    assert np.all(np.isfinite(res.peb[:, :, 1:]))
    gap = symmetry_gap(res)
    assert np.nanmax(gap) < 0.5
    write_heatmap(res, campaign.geometry.center, tmp_path / "rows.csv", tmp_path / "grid.csv")
    assert len((tmp_path / "rows.csv").read_text().splitlines()) == 16
    assert len((tmp_path / "grid.csv").read_text().splitlines()) == 4
    fixed = run_heatmap(campaign, xs, ys, mode="fixed", reference_point=[1.0, 1.0, 1.0])
    assert np.all(np.isfinite(fixed.peb[:, :, 1:]))
    with pytest.raises(ValueError):
        run_heatmap(campaign, xs, ys, mode="bogus")


def test_worker_count_does_not_change_records(campaign):
    camp = dataclasses.replace(campaign, distances=(3.0,), profile_count=2, noise_count=1)
    serial = run_error_vs_distance(camp)
    parallel = run_error_vs_distance(dataclasses.replace(camp, workers=2))
    assert records_csv(serial.records) == records_csv(parallel.records)


def test_empty_distances(campaign):
    with pytest.raises(ValueError):
        run_error_vs_distance(dataclasses.replace(campaign, distances=()))
