import csv
import json
from dataclasses import replace

import pytest

from coopmc import __version__
from coopmc.evaluator import SweepGrid, expected_error
from coopmc.experiments import (
    COLUMNS,
    PRESETS,
    ExperimentSpec,
    minimum_row,
    preset,
    read_rows,
    run_experiment,
    spec_from_dict,
)
from coopmc.presets import paper_defaults, paper_scenario


def test_presets_are_fresh_copies():
    a = preset("fig3")
    a.grid.xi_r.append(99)
    assert 99 not in preset("fig3").grid.xi_r
    with pytest.raises(TypeError):
        PRESETS["fig7"] = None


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("fig9")


def test_preset_parameters_match_tables():
    assert preset("fig2").reporting == "perfect" and preset("fig2").grid.k == [3]
    assert preset("fig3").grid.k == [2] and preset("fig3").grid.rules == ["or"]
    fig4 = preset("fig4")
    assert set(fig4.engines) == {"analytic", "simulator"} and fig4.n_trials == 20_000
    assert len(fig4.grid.xi_r) * len(fig4.grid.xi_fc) >= 10
    assert preset("fig5").grid.k == [1, 2, 3, 4, 5, 6]
    fig6 = preset("fig6")
    assert fig6.layout == "asymmetric" and fig6.grid.xi_r == [(6, 8, 11)]


def test_emitted_parameter_columns_match_tables(tmp_path):
    env = paper_defaults()
    rows = run_experiment(preset("fig6"), tmp_path / "fig6.csv")
    assert {r["xi_r"] for r in rows} == {"6;8;11"}
    for r in rows:
        assert float(r["molecules_tx"]) == env["molecules_tx"]
        assert r["molecules_rx"] == "333"
        assert float(r["p_one"]) == env["environment"]["p_one"]
        assert r["toolkit_version"] == __version__


def test_csv_round_trip(tmp_path):
    spec = ExperimentSpec(id="custom", grid=SweepGrid(xi_r=[8, 10], xi_fc=[5, 7], k=[2], rules=["or", "and"]))
    path = tmp_path / "out.csv"
    rows = run_experiment(spec, path)
    back = read_rows(path)
    assert back == rows
    with path.open(encoding="utf-8") as fh:
        assert next(csv.reader(fh)) == COLUMNS
    for r in back:
        assert float(r["q_err"]) == pytest.approx(0.5 * float(r["q_md"]) + 0.5 * float(r["q_fa"]), abs=1e-15)
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["spec"]["schema_version"] == 1 and meta["columns"] == COLUMNS


def test_surface_values_match_evaluator(tmp_path):
    spec = ExperimentSpec(id="custom", grid=SweepGrid(xi_r=[9], xi_fc=[4], k=[3], rules=["majority"]))
    row = run_experiment(spec)[0]
    ref = expected_error(paper_scenario(3, "symmetric", "majority", 9, 4), "noisy")
    assert float(row["q_err"]) == ref.q_bar


def test_analytic_rerun_identical(tmp_path):
    spec = replace(preset("fig2"), grid=SweepGrid(xi_r=[5, 9, 25], xi_fc=[1], k=[3], rules=["or", "soft"]))
    run_experiment(spec, tmp_path / "a.csv")
    run_experiment(spec, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_simulator_rows_reproducible(tmp_path):
    spec = ExperimentSpec(
        id="custom",
        grid=SweepGrid(xi_r=[10], xi_fc=[7], k=[2], rules=["or"]),
        engines=("analytic", "simulator"),
        n_trials=3,
        seed=5,
    )
    run_experiment(spec, tmp_path / "a.csv")
    run_experiment(spec, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    engines = [r["engine"] for r in read_rows(tmp_path / "a.csv")]
    assert engines == ["analytic", "simulator"]


def test_fig3_minimum_row(tmp_path):
    rows = run_experiment(preset("fig3"), tmp_path / "fig3.csv")
    assert len(rows) == 40 * 40
    best = minimum_row(rows)
    assert (best["xi_r"], best["xi_fc"]) == ("10", "7")
    assert float(best["q_err"]) == pytest.approx(6.3e-3, abs=5e-4)


def test_fig2_contains_every_curve(tmp_path):
    rows = run_experiment(preset("fig2"), tmp_path / "fig2.csv")
    assert {r["rule"] for r in rows} == {"and", "or", "majority", "soft", "baseline-tx-rx", "baseline-tx-fc"}
    assert all(r["xi_fc"] == "" for r in rows)


def test_spec_from_dict_with_base():
    spec = spec_from_dict({"schema_version": 1, "base": "fig4", "id": "fig4-short", "n_trials": 50, "grid": {"xi_fc": [7]}})
    assert spec.id == "fig4-short" and spec.n_trials == 50
    assert spec.grid.xi_fc == [7] and spec.grid.k == [2]


def test_spec_validation():
    with pytest.raises(ValueError):
        spec_from_dict({"id": "x", "engines": ["oracle"]})
    with pytest.raises(ValueError):
        spec_from_dict({"id": "x", "colour": "red"})
    with pytest.raises(ValueError):
        spec_from_dict({"schema_version": 2})
    with pytest.raises(ValueError):
        ExperimentSpec(id="x", kind="optimum", engines=("simulator",))


def test_inline_scenario_spec(tmp_path):
    sc = paper_scenario(2, "symmetric", "or", 10, 7)
    spec = spec_from_dict({"id": "inline", "scenario": sc.to_dict(), "grid": {"xi_r": [10], "xi_fc": [7]}})
    row = run_experiment(spec)[0]
    assert row["layout"] == "custom"
    assert float(row["q_err"]) == pytest.approx(expected_error(sc).q_bar, abs=1e-15)


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    spec = ExperimentSpec(id="x", grid=SweepGrid(xi_r=[10], xi_fc=[7], k=[2]))
    with pytest.raises(OSError, match="file"):
        run_experiment(spec, blocker / "out.csv")
