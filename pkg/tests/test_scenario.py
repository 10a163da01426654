import json
import math

import numpy as np
import pytest

from coopmc.presets import baseline_scenario, paper_scenario, reporting_molecules
from coopmc.scenario import (
    DetectorConfig,
    FusionRule,
    ScenarioError,
    TimingConfig,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    validate_scenario,
)


def test_symmetric_layout_k3_distances():
    sc = paper_scenario(3, "symmetric")
    assert sc.symmetric
    expected = math.sqrt(2**2 + 0.6**2) * 1e-6
    np.testing.assert_allclose(sc.tx_distances, expected, rtol=1e-12)
    np.testing.assert_allclose(sc.fc_distances, 0.6e-6, rtol=1e-12)


def test_asymmetric_layout_distances():
    sc = paper_scenario(3, "asymmetric")
    assert not sc.symmetric
    np.testing.assert_allclose(sc.topology.tx_distances_um(), [1.61555, 2.08806, 2.57099], atol=1e-5)


def test_distances_match_independent_recomputation():
    for layout in ("symmetric", "asymmetric"):
        sc = paper_scenario(3, layout)
        topo = sc.topology
        for k, rx in enumerate(topo.rx_positions):
            dt = math.dist(rx, topo.tx_position) * 1e-6
            dfc = math.dist(rx, topo.fc_position) * 1e-6
            assert sc.tx_distances[k] == pytest.approx(dt, rel=1e-12)
            assert sc.fc_distances[k] == pytest.approx(dfc, rel=1e-12)


def test_volumes_and_bit_interval():
    sc = paper_scenario(2)
    assert sc.timing.bit_interval == sc.timing.t_trans + sc.timing.t_report
    np.testing.assert_allclose(sc.rx_volumes, 4 / 3 * np.pi * (0.225e-6) ** 3, rtol=1e-12)


def test_rx_sampling_filling_t_trans_rejected():
    sc = paper_scenario(2)
    tim = sc.timing
    bad = TimingConfig(**{**tim.__dict__, "dt_rx": tim.t_trans / tim.samples_rx})
    with pytest.raises(ScenarioError) as exc:
        sc.with_(timing=bad)
    assert any(v.field == "timing.samples_rx*dt_rx" for v in exc.value.violations)


def test_all_violations_reported_together():
    sc = paper_scenario(2)
    d = sc.to_dict()
    d["physical"]["p_one"] = 1.5
    d["physical"]["diffusion_info"] = 0
    d["detector"]["threshold_fc"] = 0
    d["topology"]["rx_radius"] = [-1, 0.225]
    with pytest.raises(ScenarioError) as exc:
        scenario_from_dict(d)
    fields = {v.field for v in exc.value.violations}
    assert {"physical.p_one", "physical.diffusion_info", "detector.threshold_fc", "topology.rx_radius[0]"} <= fields


def test_coincident_devices_rejected():
    sc = paper_scenario(2)
    d = sc.to_dict()
    d["topology"]["rx_positions"][1] = d["topology"]["rx_positions"][0]
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)
    d = sc.to_dict()
    d["topology"]["rx_positions"][0] = d["topology"]["tx_position"]
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


def test_bit_interval_must_match():
    d = paper_scenario(2).to_dict()
    d["timing"]["bit_interval"] = 2e-3
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


@pytest.mark.parametrize("k", range(1, 9))
def test_rule_normalization(k):
    assert FusionRule.or_rule().normalize(k) == FusionRule.n_out_of_k(1)
    assert FusionRule.and_rule().normalize(k) == FusionRule.n_out_of_k(k)
    assert FusionRule.majority().normalize(k) == FusionRule.n_out_of_k(math.ceil(k / 2))


def test_majority_k3_is_two():
    assert FusionRule.majority().normalize(3).n == 2


def test_n_out_of_k_bounds():
    sc = paper_scenario(2)
    with pytest.raises(ScenarioError):
        sc.with_rule(FusionRule.n_out_of_k(3))
    with pytest.raises(ScenarioError):
        sc.with_rule(FusionRule.n_out_of_k(0))


@pytest.mark.parametrize("text,expected", [("or", "or"), ("AND", "and"), ("n2", "n_out_of_k"), ("2-out-of-k", "n_out_of_k"), ("soft:12", "soft")])
def test_rule_parse(text, expected):
    assert FusionRule.parse(text).kind == expected


def test_rule_parse_rejects_garbage():
    with pytest.raises(ValueError):
        FusionRule.parse("sometimes")


@pytest.mark.parametrize("layout,k", [("symmetric", 1), ("symmetric", 3), ("symmetric", 6), ("asymmetric", 3)])
def test_serialization_round_trip(tmp_path, layout, k):
    sc = paper_scenario(k, layout, "majority", 9, 4)
    path = tmp_path / "sc.json"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert again == sc
    assert again.source_rule == sc.source_rule
    assert json.loads(path.read_text())["schema_version"] == 1


def test_scalar_broadcast_in_json():
    d = paper_scenario(3).to_dict()
    d["topology"]["rx_radius"] = 0.225
    d["physical"]["molecules_rx"] = 333
    d["detector"]["threshold_rx"] = 10
    sc = scenario_from_dict(d)
    assert sc.topology.rx_radius == (0.225,) * 3
    assert sc.detector.threshold_rx == (10.0,) * 3


def test_reporting_budget_split():
    assert [reporting_molecules(k) for k in range(1, 7)] == [1000, 500, 333, 250, 200, 167]


def test_detector_thresholds_floor():
    sc = paper_scenario(2).with_detector(threshold_rx=9.7, threshold_fc=7.2)
    assert sc.detector.rx_int() == (9, 9)
    assert sc.detector.fc_int() == 7
    with pytest.raises(ScenarioError):
        validate_scenario(sc.topology, sc.physical, sc.timing, DetectorConfig((0.5, 3), 1), sc.rule)


def test_baseline_scenarios():
    rx = baseline_scenario("tx-rx", 9)
    fc = baseline_scenario("tx-fc", 10)
    assert rx.physical.molecules_tx == fc.physical.molecules_tx == 11000
    assert rx.tx_distances[0] == pytest.approx(math.hypot(2, 0.6) * 1e-6)
    assert fc.tx_distances[0] == pytest.approx(2e-6)
    with pytest.raises(ValueError):
        baseline_scenario("rx-fc")
