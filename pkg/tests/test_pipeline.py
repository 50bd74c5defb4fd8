import json

import numpy as np
import pytest

from ets_effects.config import RunConfig
from ets_effects.constants import BUNDLE_FILES, FAILED_MARKER
from ets_effects.errors import PipelineStageError
from ets_effects.panel import export_csv
from ets_effects.pipeline import PipelineRunner, file_sha256, run_pipeline
from ets_effects.synthgen import SynthConfig, generate


def null_config(out, **overrides):
    values = dict(preset="null", n_firms=400, seed=3, output_dir=str(out))
    values.update(overrides)
    return RunConfig.validated(values)


@pytest.fixture(scope="module")
def bundles(tmp_path_factory):
    serial = tmp_path_factory.mktemp("serial")
    threaded = tmp_path_factory.mktemp("threaded")
    first = run_pipeline(null_config(serial))
    second = run_pipeline(null_config(threaded, n_jobs=2))
    return (serial, first), (threaded, second)


def test_bundle_files(bundles):
    (out, bundle), _ = bundles
    assert sorted(p.name for p in out.iterdir()) == sorted(BUNDLE_FILES)
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest == bundle.manifest
    assert manifest["status"] == "ok"
    assert manifest["seed"] == 3
    for name, digest in manifest["files"].items():
        assert file_sha256(out / name) == digest
    assert manifest["counts"]["firms"] == 400
    assert "n_jobs" not in manifest["config"]


def test_bundle_is_identical_across_worker_counts(bundles):
    (serial, _), (threaded, _) = bundles
    for name in BUNDLE_FILES:
        assert (serial / name).read_bytes() == (threaded / name).read_bytes(), name


def test_att_grid_contents(bundles):
    (_, bundle), _ = bundles
    grid = bundle.tables["att_grid.csv"]
    assert set(grid["estimator"]) == {"NN(1:1)", "NN(1:20)", "OLS-w/R"}
    assert set(grid["window"]) == {"PhaseI", "PhaseII"}
    ok = grid[grid["status"] == "ok"]
    assert ok["se"].ge(0).all()


def test_balance_covers_every_sample(bundles):
    (_, bundle), _ = bundles
    table2 = bundle.tables["table2.csv"]
    samples = list(dict.fromkeys(table2["sample"]))
    assert samples == ["unmatched", "NN(1:1)", "NN(1:20)", "OLS-w/R"]


def test_stage_failure_writes_marker(tmp_path):
    cfg = null_config(tmp_path, n_firms=50, outcomes=["turnover"])
    with pytest.raises(PipelineStageError) as exc:
        PipelineRunner(cfg).run()
    assert exc.value.stage == "ingest"
    assert exc.value.exit_code == 2
    marker = json.loads((tmp_path / FAILED_MARKER).read_text())
    assert marker["cause"]["error"] == "UnknownVariableError"
    assert not (tmp_path / "run_manifest.json").exists()


def test_csv_input(tmp_path):
    ds, _ = generate(SynthConfig(n_firms=200, treated_share=0.2, seed=5))
    path = tmp_path / "panel.csv"
    export_csv(ds, path)
    cfg = RunConfig.validated(
        {
            "input": str(path),
            "frontier": False,
            "outcomes": ["co2", "output"],
            "output_dir": str(tmp_path / "out"),
        }
    )
    bundle = PipelineRunner(cfg).run()
    assert sorted(bundle.tables) == ["att_grid.csv", "table1.csv", "table2.csv"]
    assert bundle.manifest["counts"]["firms"] == 200


def test_propensity_frame(tmp_path):
    runner = PipelineRunner(null_config(tmp_path, n_firms=200))
    frame = runner.propensity_frame()
    assert len(frame) == 200
    assert frame["on_support"].sum() == len(runner.supported())
    assert frame["propensity"].between(0, 1).all()


# --- Monte Carlo acceptance ---


@pytest.mark.slow
def test_emissions_effect_recovered(tmp_path):
    cfg = RunConfig.validated(
        {
            "preset": "table3_phase2",
            "seed": 1,
            "frontier": False,
            "outcomes": ["co2", "output"],
        }
    )
    grid = PipelineRunner(cfg).att()
    for estimator in ("NN(1:20)", "OLS-w/R"):
        co2 = grid.get("co2", "PhaseII", estimator).result
        assert co2.estimate == pytest.approx(-0.25, abs=0.06)
        phase1 = grid.get("co2", "PhaseI", estimator).result
        assert phase1.estimate == pytest.approx(0.0, abs=0.06)


@pytest.mark.slow
def test_null_effects_are_calibrated():
    t_stats = []
    for seed in range(1, 11):
        cfg = RunConfig.validated(
            {
                "preset": "null",
                "seed": seed,
                "frontier": False,
                "outcomes": ["co2"],
                "neighbors": [5],
            }
        )
        grid = PipelineRunner(cfg).att()
        result = grid.get("co2", "PhaseII", "NN(1:5)").result
        t_stats.append(result.estimate / result.se)
    t_stats = np.array(t_stats)
    assert np.abs(t_stats).max() < 4
    assert np.mean(np.abs(t_stats) > 1.96) <= 0.3


@pytest.mark.slow
def test_matching_improves_balance_under_strong_selection():
    cfg = RunConfig.validated(
        {
            "preset": "high_selection",
            "seed": 2,
            "frontier": False,
            "outcomes": ["output"],
        }
    )
    table2 = PipelineRunner(cfg).balance()
    by_sample = table2.set_index("sample")
    assert by_sample.loc["unmatched", "level_p"] < 0.01
    assert by_sample.loc["NN(1:20)", "level_p"] > by_sample.loc["unmatched", "level_p"]
