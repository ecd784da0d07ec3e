"""Unit tests for counterfactual perturbations, validation tables, and the
ice/whale dominance grid."""

import numpy as np
import pandas as pd
import pytest

from navrisk import risk
from navrisk.estimator import arrays_for_fit
from navrisk.scenarios import (
    PerturbationSpec,
    RatioGridConfig,
    perturb_weights,
    ratio_grid,
    sensitivity_report,
    validation_report,
)
from navrisk.validation import ConfigError, DataError


def _weights(tw, m=2):
    tw = np.asarray(tw, dtype=float)
    return risk.RiskWeights(theta_w=tw, theta_i=1.0 - tw, m=m)


def test_perturb_weights_hand_values():
    doubled = perturb_weights(_weights([0.5]), PerturbationSpec("whale", 2.0))
    assert doubled.theta_w[0] == 2.0 / 3.0
    assert doubled.theta_i[0] == 1.0 - 2.0 / 3.0

    cargo = perturb_weights(_weights([0.2334]), PerturbationSpec("ice", 2.0))
    assert cargo.theta_w[0] == pytest.approx(0.1321, abs=1e-4)
    assert cargo.theta_i[0] == pytest.approx(0.8679, abs=1e-4)


def test_perturb_weights_identity_and_simplex():
    rng = np.random.default_rng(6)
    w = _weights(rng.uniform(0.01, 0.99, 16))
    same = perturb_weights(w, PerturbationSpec("whale", 1.0))
    assert np.array_equal(same.theta_w, w.theta_w)
    assert np.array_equal(same.theta_i, w.theta_i)
    for factor in (0.25, 3.7):
        for target in ("whale", "ice"):
            out = perturb_weights(w, PerturbationSpec(target, factor))
            assert np.all(out.theta_w + out.theta_i == 1.0)
            assert np.all((out.theta_w > 0) & (out.theta_w < 1))


def test_perturb_weights_reciprocal_symmetry():
    # scaling whale by f equals scaling ice by 1/f after renormalization
    w = _weights(np.linspace(0.05, 0.95, 10))
    a = perturb_weights(w, PerturbationSpec("whale", 4.0))
    b = perturb_weights(w, PerturbationSpec("ice", 0.25))
    assert np.allclose(a.theta_w, b.theta_w, rtol=1e-12)


def test_perturbation_spec_validation():
    with pytest.raises(ConfigError, match="target"):
        PerturbationSpec("noise", 2.0)
    with pytest.raises(ConfigError, match="factor"):
        PerturbationSpec("whale", 0.0)
    with pytest.raises(ConfigError, match="factor"):
        PerturbationSpec("ice", np.inf)


def test_sensitivity_report_structure_and_null_factor(corpus_small, fit_small):
    df, truth = corpus_small
    specs = [
        PerturbationSpec("whale", 1.0),
        PerturbationSpec("whale", 2.0),
        PerturbationSpec("ice", 2.0),
    ]
    report = sensitivity_report(df, fit_small, specs)
    assert list(report.columns) == [
        "group", "target", "factor", "n",
        "mean_delta", "median_delta", "mean_v_baseline", "mean_v_perturbed",
    ]
    assert len(report) == 6
    assert report["n"].iloc[:2].sum() == len(df)

    # factor 1 leaves the weights bitwise unchanged, so every delta is zero
    null = report[report["factor"] == 1.0]
    assert (null["mean_delta"] == 0.0).all()
    assert (null["median_delta"] == 0.0).all()
    assert np.array_equal(null["mean_v_baseline"].to_numpy(),
                          null["mean_v_perturbed"].to_numpy())


def test_validation_report_perfect_agreement(corpus_small, fit_small):
    df, truth = corpus_small
    arrays = arrays_for_fit(df, fit_small)
    v_opt = risk.optimal_speeds(arrays, fit_small.weights, fit_small.scaling,
                                risk.SpeedGrid())
    agree = df.copy()
    agree["v_obs"] = v_opt
    agree["mu"] = np.where(v_opt == 0.0, 0.0, agree["mu"])
    report = validation_report(agree, fit_small)
    assert list(report["group"]) == ["G0", "G1", "overall"]
    assert np.allclose(report["correlation"].to_numpy(), 1.0, atol=1e-12)
    assert np.allclose(report["mean_observed"], report["mean_optimal"], rtol=1e-12)


def test_validation_report_on_corpus(corpus_small, fit_small):
    df, truth = corpus_small
    report = validation_report(df, fit_small)
    assert report["group"].iloc[-1] == "overall"
    assert report["n"].iloc[-1] == len(df)
    r = report["correlation"].to_numpy()
    finite = r[np.isfinite(r)]
    assert np.all((finite >= -1.0) & (finite <= 1.0))


def test_validation_report_degenerate_correlations(corpus_small, fit_small):
    df, truth = corpus_small
    flat = df[df["group"] == "G0"].head(5).copy()
    flat["v_obs"] = 7.0
    single = df[df["group"] == "G1"].head(1).copy()
    report = validation_report(pd.concat([flat, single], ignore_index=True), fit_small)
    by_group = report.set_index("group")
    # constant observed speed in G0, one row in G1: both blank
    assert np.isnan(by_group.loc["G0", "correlation"])
    assert np.isnan(by_group.loc["G1", "correlation"])


def _ratio_frame():
    rows = []
    for _ in range(6):
        rows.append({"cell_id": "A", "month": 1, "ice_tenths": 8.0, "whale": 0.8})
    for _ in range(6):
        rows.append({"cell_id": "B", "month": 1, "ice_tenths": 6.0, "whale": 0.0})
    for _ in range(6):
        rows.append({"cell_id": "D", "month": 2, "ice_tenths": 0.0, "whale": 10.0})
    for _ in range(3):
        rows.append({"cell_id": "C", "month": 1, "ice_tenths": 5.0, "whale": 1.0})
    return pd.DataFrame(rows)


def test_ratio_grid_hand_values_and_floors():
    config = RatioGridConfig(trim_lo=0.0, trim_hi=1.0, min_count=5)
    out = ratio_grid(_ratio_frame(), config)
    assert list(out["cell_id"]) == ["A", "B", "D"]
    by_cell = out.set_index("cell_id")["log10_ratio"]
    # cell A: log10(8 / 0.8) = 1; zero means hit the 1e-6 floor in B and D
    assert by_cell["A"] == pytest.approx(1.0, rel=1e-12)
    assert by_cell["B"] == pytest.approx(np.log10(6.0 / 1e-6), rel=1e-12)
    assert by_cell["D"] == pytest.approx(np.log10(1e-6 / 10.0), rel=1e-12)
    assert np.all(np.isfinite(out["log10_ratio"]))
    # cell C fell below min_count
    assert "C" not in set(out["cell_id"])


def test_ratio_grid_winsorizes_at_trim_quantiles(rand_obs):
    df = rand_obs(600, seed=12)
    base = ratio_grid(df, RatioGridConfig(trim_lo=0.0, trim_hi=1.0, min_count=1))
    raw = base["log10_ratio"].to_numpy()
    lo = risk.quantile(raw, 0.1)
    hi = risk.quantile(raw, 0.9)
    trimmed = ratio_grid(df, RatioGridConfig(trim_lo=0.1, trim_hi=0.9, min_count=1))
    assert np.array_equal(trimmed["log10_ratio"].to_numpy(), np.clip(raw, lo, hi))


def test_ratio_grid_permutation_invariant(rand_obs):
    df = rand_obs(400, seed=13)
    a = ratio_grid(df)
    b = ratio_grid(df.sample(frac=1.0, random_state=3).reset_index(drop=True))
    pd.testing.assert_frame_equal(a, b, rtol=1e-12, atol=1e-14)


def test_ratio_grid_empty_and_errors():
    frame = _ratio_frame()
    out = ratio_grid(frame, RatioGridConfig(min_count=100))
    assert len(out) == 0
    assert "log10_ratio" in out.columns

    with pytest.raises(DataError, match="requires column"):
        ratio_grid(frame.drop(columns=["whale"]))
    with pytest.raises(ConfigError, match="trim"):
        RatioGridConfig(trim_lo=0.9, trim_hi=0.1)
    with pytest.raises(ConfigError, match="min_count"):
        RatioGridConfig(min_count=0)
    with pytest.raises(ConfigError, match="eps"):
        RatioGridConfig(eps=0.0)


def test_ratio_grid_stringifies_cell_ids():
    frame = _ratio_frame()
    frame["cell_id"] = [1] * 6 + [2] * 6 + [4] * 6 + [3] * 3
    out = ratio_grid(frame, RatioGridConfig(min_count=5))
    assert list(out["cell_id"]) == ["1", "2", "4"]
