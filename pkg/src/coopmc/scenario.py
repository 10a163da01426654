"""Scenario types: topology, physical constants, timing, detectors and fusion rule.

Positions and radii are stored in micrometres (as they are written in scenario
files); everything handed to the channel math is converted to SI units by the
derived properties on :class:`Scenario`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

SCHEMA_VERSION = 1
UM = 1e-6
SYMMETRY_TOL_UM = 1e-9

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class Violation:
    field: str
    value: Any
    message: str

    def __str__(self) -> str:
        return f"{self.field}={self.value!r}: {self.message}"


class ScenarioError(ValueError):
    """Raised when a scenario breaks one or more structural constraints."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class SystemTopology:
    tx_position: Vec3
    rx_positions: tuple[Vec3, ...]
    fc_position: Vec3
    rx_radius: tuple[float, ...]
    fc_radius: float

    @property
    def k(self) -> int:
        return len(self.rx_positions)

    def tx_distances_um(self) -> np.ndarray:
        return np.linalg.norm(np.subtract(self.rx_positions, self.tx_position), axis=1)

    def fc_distances_um(self) -> np.ndarray:
        return np.linalg.norm(np.subtract(self.rx_positions, self.fc_position), axis=1)

    def is_symmetric(self, tol: float = SYMMETRY_TOL_UM) -> bool:
        dt, df = self.tx_distances_um(), self.fc_distances_um()
        return bool(np.ptp(dt) <= tol and np.ptp(df) <= tol)

    def subset(self, indices: Sequence[int]) -> "SystemTopology":
        return replace(
            self,
            rx_positions=tuple(self.rx_positions[i] for i in indices),
            rx_radius=tuple(self.rx_radius[i] for i in indices),
        )


@dataclass(frozen=True)
class PhysicalParams:
    diffusion_info: float
    diffusion_report: tuple[float, ...]
    molecules_tx: float
    molecules_rx: tuple[float, ...]
    p_one: float


@dataclass(frozen=True)
class TimingConfig:
    t_trans: float
    t_report: float
    dt_rx: float
    dt_fc: float
    samples_rx: int
    samples_fc: int
    length: int

    @property
    def bit_interval(self) -> float:
        return self.t_trans + self.t_report

    def rx_sample_offsets(self) -> np.ndarray:
        """Sample instants within a bit interval, measured from its start."""
        return self.dt_rx * np.arange(1, self.samples_rx + 1)

    def fc_sample_offsets(self) -> np.ndarray:
        """FC sample instants measured from the reporting instant ``t_trans``."""
        return self.dt_fc * np.arange(1, self.samples_fc + 1)


@dataclass(frozen=True)
class DetectorConfig:
    threshold_rx: tuple[float, ...]
    threshold_fc: float

    def rx_int(self) -> tuple[int, ...]:
        return tuple(int(math.floor(x)) for x in self.threshold_rx)

    def fc_int(self) -> int:
        return int(math.floor(self.threshold_fc))


_RULE_KINDS = ("n_out_of_k", "or", "and", "majority", "soft")


@dataclass(frozen=True)
class FusionRule:
    """Hard N-out-of-K fusion (with the OR/AND/majority aliases) or soft sum.

    ``n`` is only meaningful for ``n_out_of_k``; ``threshold`` only for ``soft``.
    """

    kind: str
    n: int | None = None
    threshold: float | None = None

    @classmethod
    def n_out_of_k(cls, n: int) -> "FusionRule":
        return cls("n_out_of_k", n=n)

    @classmethod
    def or_rule(cls) -> "FusionRule":
        return cls("or")

    @classmethod
    def and_rule(cls) -> "FusionRule":
        return cls("and")

    @classmethod
    def majority(cls) -> "FusionRule":
        return cls("majority")

    @classmethod
    def soft(cls, threshold: float) -> "FusionRule":
        return cls("soft", threshold=threshold)

    @classmethod
    def parse(cls, text: str) -> "FusionRule":
        """Parse ``or``, ``and``, ``majority``, ``n2`` / ``2-out-of-k`` or ``soft:12``."""
        t = text.strip().lower()
        if t in ("or", "and", "majority"):
            return cls(t)
        if t.startswith("soft"):
            _, _, thr = t.partition(":")
            return cls.soft(float(thr) if thr else 1)
        if t.startswith("n") and t[1:].isdigit():
            return cls.n_out_of_k(int(t[1:]))
        if t.endswith("-out-of-k") and t.split("-")[0].isdigit():
            return cls.n_out_of_k(int(t.split("-")[0]))
        raise ValueError(f"unknown fusion rule {text!r}")

    @property
    def is_soft(self) -> bool:
        return self.kind == "soft"

    def normalize(self, k: int) -> "FusionRule":
        if self.kind == "or":
            return FusionRule.n_out_of_k(1)
        if self.kind == "and":
            return FusionRule.n_out_of_k(k)
        if self.kind == "majority":
            return FusionRule.n_out_of_k(math.ceil(k / 2))
        return self

    @property
    def label(self) -> str:
        if self.kind == "n_out_of_k":
            return f"n{self.n}"
        if self.kind == "soft":
            return "soft"
        return self.kind

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.n is not None:
            d["n"] = self.n
        if self.threshold is not None:
            d["threshold"] = self.threshold
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionRule":
        return cls(d["kind"], n=d.get("n"), threshold=d.get("threshold"))


@dataclass(frozen=True)
class Scenario:
    """A validated scenario. Build it with :func:`validate_scenario`."""

    topology: SystemTopology
    physical: PhysicalParams
    timing: TimingConfig
    detector: DetectorConfig
    rule: FusionRule
    source_rule: FusionRule = field(compare=False)

    @property
    def k(self) -> int:
        return self.topology.k

    @cached_property
    def tx_distances(self) -> np.ndarray:
        """TX to RX_k distances in metres."""
        return self.topology.tx_distances_um() * UM

    @cached_property
    def fc_distances(self) -> np.ndarray:
        """RX_k to FC distances in metres."""
        return self.topology.fc_distances_um() * UM

    @cached_property
    def rx_radii(self) -> np.ndarray:
        return np.asarray(self.topology.rx_radius, dtype=float) * UM

    @property
    def fc_radius(self) -> float:
        return self.topology.fc_radius * UM

    @cached_property
    def rx_volumes(self) -> np.ndarray:
        return sphere_volume(self.rx_radii)

    @property
    def fc_volume(self) -> float:
        return float(sphere_volume(self.fc_radius))

    @cached_property
    def symmetric(self) -> bool:
        return self.topology.is_symmetric()

    def with_detector(self, threshold_rx=None, threshold_fc=None) -> "Scenario":
        det = self.detector
        if threshold_rx is not None:
            det = replace(det, threshold_rx=_per_rx(threshold_rx, self.k))
        if threshold_fc is not None:
            det = replace(det, threshold_fc=threshold_fc)
        return validate_scenario(self.topology, self.physical, self.timing, det, self.source_rule)

    def with_rule(self, rule: FusionRule) -> "Scenario":
        return validate_scenario(self.topology, self.physical, self.timing, self.detector, rule)

    def with_(self, **changes) -> "Scenario":
        """Revalidated copy; keys are ``topology``, ``physical``, ``timing``, ``detector``, ``rule``."""
        parts = dict(
            topology=self.topology,
            physical=self.physical,
            timing=self.timing,
            detector=self.detector,
            rule=self.source_rule,
        )
        parts.update(changes)
        return validate_scenario(**parts)

    def to_dict(self) -> dict:
        topo, phys, tim, det = self.topology, self.physical, self.timing, self.detector
        return {
            "schema_version": SCHEMA_VERSION,
            "topology": {
                "tx_position": list(topo.tx_position),
                "rx_positions": [list(p) for p in topo.rx_positions],
                "fc_position": list(topo.fc_position),
                "rx_radius": list(topo.rx_radius),
                "fc_radius": topo.fc_radius,
            },
            "physical": {
                "diffusion_info": phys.diffusion_info,
                "diffusion_report": list(phys.diffusion_report),
                "molecules_tx": phys.molecules_tx,
                "molecules_rx": list(phys.molecules_rx),
                "p_one": phys.p_one,
            },
            "timing": {
                "t_trans": tim.t_trans,
                "t_report": tim.t_report,
                "bit_interval": tim.bit_interval,
                "dt_rx": tim.dt_rx,
                "dt_fc": tim.dt_fc,
                "samples_rx": tim.samples_rx,
                "samples_fc": tim.samples_fc,
                "length": tim.length,
            },
            "detector": {
                "threshold_rx": list(det.threshold_rx),
                "threshold_fc": det.threshold_fc,
            },
            "fusion": self.source_rule.to_dict(),
        }


def sphere_volume(radius):
    return 4.0 / 3.0 * np.pi * np.asarray(radius, dtype=float) ** 3


def _per_rx(value, k: int) -> tuple:
    if np.ndim(value) == 0:
        return (value,) * k
    return tuple(value)


def _vec3(p) -> Vec3:
    x, y, z = (float(c) for c in p)
    return (x, y, z)


def validate_scenario(
    topology: SystemTopology,
    physical: PhysicalParams,
    timing: TimingConfig,
    detector: DetectorConfig,
    rule: FusionRule,
) -> Scenario:
    """Check every structural constraint and return a :class:`Scenario`.

    All violations are collected before raising :class:`ScenarioError`.
    """
    bad: list[Violation] = []

    def check(ok, name, value, msg):
        if not ok:
            bad.append(Violation(name, value, msg))

    k = topology.k
    check(k >= 1, "topology.rx_positions", k, "need at least one receiver")
    check(len(topology.rx_radius) == k, "topology.rx_radius", len(topology.rx_radius), f"expected {k} entries")
    for i, r in enumerate(topology.rx_radius):
        check(r > 0, f"topology.rx_radius[{i}]", r, "radius must be > 0")
    check(topology.fc_radius > 0, "topology.fc_radius", topology.fc_radius, "radius must be > 0")

    if k >= 1:
        dt, df = topology.tx_distances_um(), topology.fc_distances_um()
        for i in range(k):
            check(dt[i] > 0, f"d_T[{i}]", float(dt[i]), "RX coincides with TX")
            check(df[i] > 0, f"d_FC[{i}]", float(df[i]), "RX coincides with FC")
        centers = list(topology.rx_positions)
        for i in range(k):
            for j in range(i + 1, k):
                check(
                    np.linalg.norm(np.subtract(centers[i], centers[j])) > 0,
                    f"topology.rx_positions[{j}]",
                    centers[j],
                    f"same center as RX {i}",
                )

    check(physical.diffusion_info > 0, "physical.diffusion_info", physical.diffusion_info, "must be > 0")
    check(len(physical.diffusion_report) == k, "physical.diffusion_report", len(physical.diffusion_report), f"expected {k} entries")
    for i, d in enumerate(physical.diffusion_report):
        check(d > 0, f"physical.diffusion_report[{i}]", d, "must be > 0")
    check(physical.molecules_tx >= 0, "physical.molecules_tx", physical.molecules_tx, "must be >= 0")
    check(len(physical.molecules_rx) == k, "physical.molecules_rx", len(physical.molecules_rx), f"expected {k} entries")
    for i, s in enumerate(physical.molecules_rx):
        check(s >= 0, f"physical.molecules_rx[{i}]", s, "must be >= 0")
    check(0 <= physical.p_one <= 1, "physical.p_one", physical.p_one, "must lie in [0, 1]")

    check(timing.t_trans > 0, "timing.t_trans", timing.t_trans, "must be > 0")
    check(timing.t_report > 0, "timing.t_report", timing.t_report, "must be > 0")
    check(timing.dt_rx > 0, "timing.dt_rx", timing.dt_rx, "must be > 0")
    check(timing.dt_fc > 0, "timing.dt_fc", timing.dt_fc, "must be > 0")
    check(timing.samples_rx >= 1, "timing.samples_rx", timing.samples_rx, "must be >= 1")
    check(timing.samples_fc >= 1, "timing.samples_fc", timing.samples_fc, "must be >= 1")
    span_rx = timing.samples_rx * timing.dt_rx
    check(
        span_rx < timing.t_trans * (1 - 1e-12),
        "timing.samples_rx*dt_rx",
        span_rx,
        f"RX sampling must end strictly before t_trans={timing.t_trans}",
    )
    span_fc = timing.samples_fc * timing.dt_fc
    check(
        span_fc <= timing.t_report * (1 + 1e-12),
        "timing.samples_fc*dt_fc",
        span_fc,
        f"FC sampling must fit in t_report={timing.t_report}",
    )
    check(timing.length >= 1, "timing.length", timing.length, "must be >= 1")

    check(len(detector.threshold_rx) == k, "detector.threshold_rx", len(detector.threshold_rx), f"expected {k} entries")
    for i, x in enumerate(detector.threshold_rx):
        check(x >= 1, f"detector.threshold_rx[{i}]", x, "threshold must be >= 1")
    check(detector.threshold_fc >= 1, "detector.threshold_fc", detector.threshold_fc, "threshold must be >= 1")

    check(rule.kind in _RULE_KINDS, "fusion.kind", rule.kind, f"one of {_RULE_KINDS}")
    if rule.kind == "n_out_of_k":
        check(rule.n is not None and 1 <= rule.n <= k, "fusion.n", rule.n, f"need 1 <= N <= K={k}")
    if rule.kind == "soft":
        check(rule.threshold is not None and rule.threshold >= 1, "fusion.threshold", rule.threshold, "soft threshold must be >= 1")

    if bad:
        raise ScenarioError(bad)
    return Scenario(topology, physical, timing, detector, rule.normalize(k), source_rule=rule)


def scenario_from_dict(d: dict) -> Scenario:
    """Build and validate a scenario from the JSON layout.

    Per-RX fields may be given as a scalar, which is broadcast to all receivers.
    A ``timing.bit_interval`` entry, if present, must equal ``t_trans + t_report``.
    """
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError([Violation("schema_version", version, f"supported: {SCHEMA_VERSION}")])
    try:
        t, p, tm, dt, fu = d["topology"], d["physical"], d["timing"], d["detector"], d["fusion"]
    except KeyError as exc:
        raise ScenarioError([Violation(str(exc.args[0]), None, "missing section")]) from None

    rx_pos = tuple(_vec3(x) for x in t["rx_positions"])
    k = len(rx_pos)
    topology = SystemTopology(
        tx_position=_vec3(t["tx_position"]),
        rx_positions=rx_pos,
        fc_position=_vec3(t["fc_position"]),
        rx_radius=tuple(float(r) for r in _per_rx(t["rx_radius"], k)),
        fc_radius=float(t["fc_radius"]),
    )
    physical = PhysicalParams(
        diffusion_info=float(p["diffusion_info"]),
        diffusion_report=tuple(float(x) for x in _per_rx(p["diffusion_report"], k)),
        molecules_tx=float(p["molecules_tx"]),
        molecules_rx=tuple(float(x) for x in _per_rx(p["molecules_rx"], k)),
        p_one=float(p["p_one"]),
    )
    timing = TimingConfig(
        t_trans=float(tm["t_trans"]),
        t_report=float(tm["t_report"]),
        dt_rx=float(tm["dt_rx"]),
        dt_fc=float(tm["dt_fc"]),
        samples_rx=int(tm["samples_rx"]),
        samples_fc=int(tm["samples_fc"]),
        length=int(tm["length"]),
    )
    if "bit_interval" in tm and not math.isclose(tm["bit_interval"], timing.bit_interval, rel_tol=1e-12):
        raise ScenarioError(
            [Violation("timing.bit_interval", tm["bit_interval"], f"must equal t_trans + t_report = {timing.bit_interval}")]
        )
    detector = DetectorConfig(
        threshold_rx=tuple(float(x) for x in _per_rx(dt["threshold_rx"], k)),
        threshold_fc=float(dt["threshold_fc"]),
    )
    return validate_scenario(topology, physical, timing, detector, FusionRule.from_dict(fu))


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)
