"""Bundled reference scenarios: the environment table, both device layouts and the point-to-point baselines."""

from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib import resources

from coopmc.scenario import (
    DetectorConfig,
    FusionRule,
    PhysicalParams,
    Scenario,
    SystemTopology,
    TimingConfig,
    validate_scenario,
)


@lru_cache(maxsize=1)
def paper_defaults() -> dict:
    with resources.files("coopmc.data").joinpath("paper_defaults.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def reporting_molecules(k: int, budget: float | None = None) -> int:
    """Per-RX reporting budget: ``budget / K`` rounded to nearest, halves up."""
    budget = paper_defaults()["reporting_budget"] if budget is None else budget
    return int(math.floor(budget / k + 0.5))


def default_timing() -> TimingConfig:
    env = paper_defaults()["environment"]
    return TimingConfig(
        t_trans=env["t_trans_s"],
        t_report=env["t_report_s"],
        dt_rx=env["dt_rx_s"],
        dt_fc=env["dt_fc_s"],
        samples_rx=env["samples_rx"],
        samples_fc=env["samples_fc"],
        length=env["length"],
    )


def _as_rule(rule) -> FusionRule:
    return rule if isinstance(rule, FusionRule) else FusionRule.parse(rule)


def paper_scenario(
    k: int = 3,
    layout: str = "symmetric",
    rule: FusionRule | str = "or",
    xi_r=10,
    xi_fc=7,
    *,
    rx_indices=None,
    molecules_tx: float | None = None,
    molecules_rx: float | None = None,
    p_one: float | None = None,
    length: int | None = None,
) -> Scenario:
    """Scenario with the environment table and a device layout.

    The first ``k`` receivers of the chosen layout are used unless
    ``rx_indices`` (0-based) picks them explicitly.
    """
    cfg = paper_defaults()
    env = cfg["environment"]
    lay = cfg[layout]
    idx = list(rx_indices) if rx_indices is not None else list(range(k))
    if len(idx) != k or max(idx) >= len(lay["rx"]):
        raise ValueError(f"{layout} layout has {len(lay['rx'])} receivers; cannot pick {idx}")
    topo = SystemTopology(
        tx_position=tuple(float(c) for c in lay["tx"]),
        rx_positions=tuple(tuple(float(c) for c in lay["rx"][i]) for i in idx),
        fc_position=tuple(float(c) for c in lay["fc"]),
        rx_radius=(env["rx_radius_um"],) * k,
        fc_radius=env["fc_radius_um"],
    )
    s_k = reporting_molecules(k) if molecules_rx is None else molecules_rx
    phys = PhysicalParams(
        diffusion_info=env["diffusion_m2_s"],
        diffusion_report=(env["diffusion_m2_s"],) * k,
        molecules_tx=cfg["molecules_tx"] if molecules_tx is None else molecules_tx,
        molecules_rx=(float(s_k),) * k,
        p_one=env["p_one"] if p_one is None else p_one,
    )
    timing = default_timing()
    if length is not None:
        timing = TimingConfig(**{**timing.__dict__, "length": length})
    xi = tuple(float(x) for x in xi_r) if hasattr(xi_r, "__len__") else (float(xi_r),) * k
    det = DetectorConfig(threshold_rx=xi, threshold_fc=float(xi_fc))
    return validate_scenario(topo, phys, timing, det, _as_rule(rule))


def baseline_scenario(kind: str, threshold: float = 1, p_one: float | None = None, molecules: float | None = None) -> Scenario:
    """Single-observer link from the TX: ``tx-rx`` (RX_1 position) or ``tx-fc`` (FC position).

    Modelled as a K=1 scenario evaluated under perfect reporting; the FC sphere
    is placed at the other device's position and never consulted.
    """
    cfg = paper_defaults()
    env = cfg["environment"]
    base = cfg["baselines"]
    if kind not in ("tx-rx", "tx-fc"):
        raise ValueError(f"baseline kind must be 'tx-rx' or 'tx-fc', got {kind!r}")
    other = "tx-fc" if kind == "tx-rx" else "tx-rx"
    radius = env["rx_radius_um"] if kind == "tx-rx" else env["fc_radius_um"]
    topo = SystemTopology(
        tx_position=tuple(float(c) for c in cfg["symmetric"]["tx"]),
        rx_positions=(tuple(float(c) for c in base[kind]["observer"]),),
        fc_position=tuple(float(c) for c in base[other]["observer"]),
        rx_radius=(radius,),
        fc_radius=env["fc_radius_um"],
    )
    phys = PhysicalParams(
        diffusion_info=env["diffusion_m2_s"],
        diffusion_report=(env["diffusion_m2_s"],),
        molecules_tx=base["molecules_tx"] if molecules is None else molecules,
        molecules_rx=(0.0,),
        p_one=env["p_one"] if p_one is None else p_one,
    )
    det = DetectorConfig(threshold_rx=(float(threshold),), threshold_fc=1.0)
    return validate_scenario(topo, phys, default_timing(), det, FusionRule.or_rule())
