"""Named experiment presets and a runner that writes plot-ready CSV tables.

Two experiment kinds exist:

``surface``
    every combination of rule, RX threshold and FC threshold is evaluated and
    written as one row per engine;
``optimum``
    for every K and rule the thresholds are optimised over the grid and the
    optimum is written as one row.

Soft fusion rows put the pooled threshold in the ``xi_r`` column. Baseline rows
(``baseline-tx-rx`` / ``baseline-tx-fc``) describe single point-to-point links.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Callable

import numpy as np

from coopmc import __version__
from coopmc import sim
from coopmc.evaluator import (
    NOISY,
    PERFECT,
    AnalyticEngine,
    SweepGrid,
    baseline_error,
    optimize_soft,
    soft_fusion_error,
)
from coopmc.presets import baseline_scenario, paper_scenario
from coopmc.scenario import SCHEMA_VERSION, FusionRule, Scenario, scenario_from_dict

logger = logging.getLogger(__name__)

KINDS = ("surface", "optimum")
ENGINES = ("analytic", "simulator")
BASELINES = ("tx-rx", "tx-fc")
DEFAULT_TRIALS = 20_000
DEFAULT_SEED = 20_240_601

COLUMNS = [
    "experiment",
    "engine",
    "k",
    "layout",
    "rule",
    "reporting",
    "xi_r",
    "xi_fc",
    "molecules_tx",
    "molecules_rx",
    "p_one",
    "q_md",
    "q_fa",
    "q_err",
    "method",
    "ci_halfwidth",
    "n_trials",
    "seed",
    "toolkit_version",
]


@dataclass(frozen=True)
class ExperimentSpec:
    """What to evaluate and where to write it.

    ``grid.k`` lists the receiver counts (default: the scenario's K) and
    ``grid.rules`` the fusion rules in :meth:`FusionRule.parse` syntax.
    ``overrides`` go to :func:`coopmc.presets.paper_scenario` (``molecules_tx``,
    ``molecules_rx``, ``p_one``, ``length``, ``rx_indices``). An inline
    ``scenario`` dict replaces the preset device layout entirely.
    """

    id: str
    kind: str = "surface"
    reporting: str = NOISY
    layout: str = "symmetric"
    grid: SweepGrid = field(default_factory=SweepGrid)
    engines: tuple = ("analytic",)
    baselines: tuple = ()
    n_trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    overrides: dict = field(default_factory=dict)
    scenario: dict | None = None
    output: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.reporting not in (PERFECT, NOISY):
            raise ValueError(f"reporting must be 'perfect' or 'noisy', got {self.reporting!r}")
        bad = set(self.engines) - set(ENGINES)
        if bad or not self.engines:
            raise ValueError(f"engines must be a non-empty subset of {ENGINES}, got {self.engines}")
        bad = set(self.baselines) - set(BASELINES)
        if bad:
            raise ValueError(f"unknown baselines {sorted(bad)}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.kind == "optimum" and "simulator" in self.engines:
            raise ValueError("optimum experiments are analytic only")

    @property
    def rules(self) -> list[str]:
        return list(self.grid.rules or ["or"])

    @property
    def ks(self) -> list[int]:
        if self.grid.k:
            return [int(k) for k in self.grid.k]
        if self.scenario is not None:
            return [len(self.scenario["topology"]["rx_positions"])]
        return [3]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["engines"] = list(self.engines)
        d["baselines"] = list(self.baselines)
        return d


def spec_from_dict(d: dict) -> ExperimentSpec:
    """Parse the JSON form. ``base`` names a preset whose fields are the defaults."""
    d = dict(d)
    version = d.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}; supported: {SCHEMA_VERSION}")
    base = d.pop("base", None)
    spec = preset(base) if base else ExperimentSpec(id=d.get("id", "custom"))
    grid = d.pop("grid", None)
    if grid is not None:
        merged = {**asdict(spec.grid), **grid} if base else grid
        d["grid"] = SweepGrid(**merged)
    for key in ("engines", "baselines"):
        if key in d:
            d[key] = tuple(d[key])
    unknown = set(d) - set(ExperimentSpec.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown experiment fields {sorted(unknown)}")
    d.setdefault("id", "custom")
    return replace(spec, **d)


def load_spec(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def _fig2() -> ExperimentSpec:
    return ExperimentSpec(
        id="fig2",
        reporting=PERFECT,
        grid=SweepGrid(xi_r=list(range(1, 41)), xi_fc=[1], k=[3], rules=["and", "or", "majority", "soft"]),
        baselines=BASELINES,
    )


def _fig3() -> ExperimentSpec:
    return ExperimentSpec(id="fig3", grid=SweepGrid(k=[2], rules=["or"]))


def _fig4() -> ExperimentSpec:
    return ExperimentSpec(
        id="fig4",
        grid=SweepGrid(xi_r=list(range(2, 21, 2)), xi_fc=[4, 7, 10], k=[2], rules=["or"]),
        engines=("analytic", "simulator"),
    )


def _fig5() -> ExperimentSpec:
    return ExperimentSpec(
        id="fig5",
        kind="optimum",
        grid=SweepGrid(k=[1, 2, 3, 4, 5, 6], rules=["and", "or", "majority"]),
        baselines=BASELINES,
    )


def _fig6() -> ExperimentSpec:
    return ExperimentSpec(
        id="fig6",
        layout="asymmetric",
        grid=SweepGrid(xi_r=[(6, 8, 11)], xi_fc=list(range(1, 41)), k=[3], rules=["and", "or", "majority"]),
    )


# built-ins are factories so callers can never mutate a shared preset
PRESETS: MappingProxyType = MappingProxyType(
    {"fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "fig6": _fig6}
)


def preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; available: {sorted(PRESETS)}") from None


def build_scenario(spec: ExperimentSpec, k: int, rule: str = "or") -> Scenario:
    parsed = FusionRule.parse(rule)
    if spec.scenario is not None:
        sc = scenario_from_dict(spec.scenario)
        if sc.k != k:
            raise ValueError(f"inline scenario has K={sc.k}, grid asks for K={k}")
        return sc.with_rule(parsed)
    # soft rules carry their own threshold; the scenario default is a placeholder
    return paper_scenario(k, spec.layout, parsed, **spec.overrides)


def _fmt_xi(x) -> str:
    if np.ndim(x) == 0:
        return str(int(x))
    vals = [int(v) for v in x]
    return str(vals[0]) if len(set(vals)) == 1 else ";".join(map(str, vals))


def _fmt_num(x) -> str:
    return "" if x is None else repr(float(x))


class _Writer:
    """Single CSV writer; every row is flushed so partial results survive a crash."""

    def __init__(self, path: Path | None):
        self.path = path
        self.rows: list[dict] = []
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            try:
                self._fh = open(path, "w", newline="", encoding="utf-8")
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc.strerror}") from exc
            self._csv = csv.DictWriter(self._fh, fieldnames=COLUMNS, lineterminator="\n")
            self._csv.writeheader()

    def write(self, row: dict):
        self.rows.append(row)
        if self._fh is not None:
            self._csv.writerow(row)
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _row(spec: ExperimentSpec, sc: Scenario, engine: str, rule: str, xi_r, xi_fc, report, layout=None) -> dict:
    return {
        "experiment": spec.id,
        "engine": engine,
        "k": str(sc.k),
        "layout": layout or (spec.layout if spec.scenario is None else "custom"),
        "rule": rule,
        "reporting": spec.reporting,
        "xi_r": _fmt_xi(xi_r),
        "xi_fc": "" if xi_fc is None else str(int(xi_fc)),
        "molecules_tx": _fmt_num(sc.physical.molecules_tx),
        "molecules_rx": _fmt_xi(sc.physical.molecules_rx) if sc.physical.molecules_rx[0] else "0",
        "p_one": _fmt_num(sc.physical.p_one),
        "q_md": _fmt_num(report.q_md_bar),
        "q_fa": _fmt_num(report.q_fa_bar),
        "q_err": _fmt_num(report.q_bar),
        "method": report.method,
        "ci_halfwidth": _fmt_num(report.ci_halfwidth),
        "n_trials": "" if report.method != "monte-carlo" else str(report.n_samples),
        "seed": "" if report.seed is None else str(report.seed),
        "toolkit_version": __version__,
    }


class _Report:
    """Minimal stand-in so analytic arrays and simulator reports share one row builder."""

    def __init__(self, per_interval: np.ndarray, method: str = "exact-enumeration"):
        self.q_md_bar = float(per_interval[:, 0].mean())
        self.q_fa_bar = float(per_interval[:, 1].mean())
        self.q_bar = float(per_interval[:, 2].mean())
        self.method = method
        self.ci_halfwidth = None
        self.n_samples = None
        self.seed = None


def _baseline_rows(spec: ExperimentSpec, out: _Writer, optimum: bool):
    p_one = spec.overrides.get("p_one", 0.5)
    for kind in spec.baselines:
        label = f"baseline-{kind}"
        if optimum:
            rep = baseline_error(kind, p_one=p_one, xi_values=[int(x) for x in spec.grid.xi_r])
            sc = baseline_scenario(kind, rep.metadata["threshold"], p_one=p_one)
            out.write(_row(spec, sc, "analytic", label, rep.metadata["threshold"], None, rep, layout="baseline"))
            continue
        for xi in spec.grid.xi_r:
            rep = baseline_error(kind, threshold=int(xi), p_one=p_one)
            sc = baseline_scenario(kind, int(xi), p_one=p_one)
            out.write(_row(spec, sc, "analytic", label, xi, None, rep, layout="baseline"))


def _run_surface(spec: ExperimentSpec, out: _Writer, progress: Callable | None):
    xi_fc = [int(x) for x in spec.grid.xi_fc]
    fc_col = (lambda x: None) if spec.reporting == PERFECT else int
    for k in spec.ks:
        hard = [r for r in spec.rules if not FusionRule.parse(r).is_soft]
        soft = [r for r in spec.rules if FusionRule.parse(r).is_soft]
        base = build_scenario(spec, k, hard[0] if hard else "or")
        engine = AnalyticEngine(base, spec.reporting, xi_fc_max=max(xi_fc))
        assignments = [tuple(int(v) for v in np.broadcast_to(x, (k,))) for x in spec.grid.xi_r]
        for rule in hard:
            sc = base.with_rule(FusionRule.parse(rule))
            if "analytic" in spec.engines:
                for a in assignments:
                    res = engine.interval_errors(a, xi_fc, rule=sc.rule)
                    for f, xf in enumerate(xi_fc):
                        out.write(_row(spec, sc, "analytic", sc.source_rule.label, a, fc_col(xf), _Report(res[:, f])))
                        if spec.reporting == PERFECT:
                            break
            if "simulator" in spec.engines:
                points = [(a, xf) for a in assignments for xf in (xi_fc[:1] if spec.reporting == PERFECT else xi_fc)]
                logger.info("simulating %d trials for %s, K=%d", spec.n_trials, sc.source_rule.label, k)
                reports = sim.estimate_error_grid(sc, spec.n_trials, spec.seed, points, spec.reporting, progress=progress)
                for (a, xf), rep in zip(points, reports):
                    out.write(_row(spec, sc, "simulator", sc.source_rule.label, a, fc_col(xf), rep))
        for rule in soft:
            # the pooled threshold is swept along the xi_r axis
            for xi in spec.grid.xi_r:
                sc = base.with_rule(FusionRule.soft(int(xi)))
                rep = soft_fusion_error(sc, int(xi))
                out.write(_row(spec, sc, "analytic", "soft", xi, None, rep))
    _baseline_rows(spec, out, optimum=False)


def _run_optimum(spec: ExperimentSpec, out: _Writer):
    xi_fc = [1] if spec.reporting == PERFECT else [int(x) for x in spec.grid.xi_fc]
    for k in spec.ks:
        base = build_scenario(spec, k)
        engine = AnalyticEngine(base, spec.reporting, xi_fc_max=max(xi_fc))
        assignments = [tuple(int(v) for v in np.broadcast_to(x, (k,))) for x in spec.grid.xi_r]
        for rule in spec.rules:
            parsed = FusionRule.parse(rule)
            if parsed.is_soft:
                xi, _, _ = optimize_soft(base, [int(x) for x in spec.grid.xi_r])
                sc = base.with_rule(FusionRule.soft(xi))
                out.write(_row(spec, sc, "analytic", "soft", xi, None, soft_fusion_error(sc, xi)))
                continue
            sc = base.with_rule(parsed)
            best = None
            for a in assignments:
                res = engine.interval_errors(a, xi_fc, rule=sc.rule)
                q = res[:, :, 2].mean(axis=0)
                for f, xf in enumerate(xi_fc):
                    key = (q[f], xf, a)
                    if best is None or key < best[0]:
                        best = (key, res[:, f])
            (_, xf, a), per_interval = best
            fc = None if spec.reporting == PERFECT else xf
            out.write(_row(spec, sc, "analytic", sc.source_rule.label, a, fc, _Report(per_interval)))
    _baseline_rows(spec, out, optimum=True)


def run_experiment(spec: ExperimentSpec, output=None, progress: Callable | None = None) -> list[dict]:
    """Evaluate ``spec`` and return its rows; they are also streamed to CSV when a path is set.

    A JSON sidecar next to the CSV records the experiment spec and the toolkit version.
    """
    path = output if output is not None else spec.output
    path = Path(path) if path is not None else None
    writer = _Writer(path)
    try:
        if spec.kind == "surface":
            _run_surface(spec, writer, progress)
        else:
            _run_optimum(spec, writer)
    finally:
        writer.close()
    if path is not None:
        meta = {
            "spec": spec.to_dict(),
            "toolkit_version": __version__,
            "rng": sim.RNG_ALGORITHM if "simulator" in spec.engines else None,
            "columns": COLUMNS,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=list), encoding="utf-8")
    return writer.rows


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def minimum_row(rows: list[dict], engine: str = "analytic") -> dict:
    """Row with the smallest ``q_err`` for ``engine`` (first one on ties)."""
    cand = [r for r in rows if r["engine"] == engine]
    return min(cand, key=lambda r: float(r["q_err"]))

