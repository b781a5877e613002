"""
Experiment surface: exhaustive search, baselines and parameter sweeps.

Every method runs through `solve_method`, which returns a MethodOutcome in
physical units; `run_experiment` fans (sweep point, seed) tasks out to a
thread pool and writes three files next to the configured prefix:

    <prefix>.csv           one ResultRow per (sweep point, seed, method)
    <prefix>.jsonl         the same rows plus traces and solver diagnostics
    <prefix>_mean_dbm.csv  mean power per (sweep point, method) in dBm
"""
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from irs_alloc.chansim import GeometryConfig
from irs_alloc.conic import ConicStatus, ToleranceSet
from irs_alloc.gbd import (DEFAULT_DELTA, FixedResult, GbdAborted, GbdAdapter, GbdStatus, PerfectCsiAdapter,
                           gbd_perfect_csi, solve_fixed)
from irs_alloc.model import (Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, db_to_linear, selections,
                             verify_qos, watts_to_dbm)
from irs_alloc.robust import (RobustCsiAdapter, RobustInstance, gbd_robust, robust_baseline_no_irs,
                              robust_baseline_random, solve_robust_sca, worst_case_sinr_check)
from irs_alloc.sca import ScaConfig, ScaStatus, solve_sca
from irs_alloc.scenario import Scenario, json_default

logger = logging.getLogger(__name__)

### BENCH INFO
ES_CAP = 4096
WORST_CASE_SAMPLES = 1000
RESULTS_SCHEMA = "irs-alloc-results/1"
METHODS = ('gbd', 'sca', 'es', 'baseline_no_irs', 'baseline_random', 'gbd_perfect_csi')
METHOD_ALIASES = {'no-irs': 'baseline_no_irs', 'random': 'baseline_random', 'no_irs': 'baseline_no_irs'}
AXES = ('gamma_db', 'N', 'kappa', 'L')
RESULT_COLUMNS = ('method', 'seed', 'axis', 'value', 'status', 'converged', 'power_watts', 'power_dbm',
                  'iterations', 'wall_time', 'min_slack', 'rank_ratio', 'certified', 'selection',
                  'scenario_md5', 'error', 'schema')
AGGREGATE_COLUMNS = ('axis', 'value', 'method', 'rows', 'feasible', 'mean_power_watts', 'mean_power_dbm')
DEFAULTS_FILE = 'defaults.yaml'
SPEC_SECTIONS = ('scenario', 'geometry', 'sca', 'experiment')


class SearchCapExceeded(ValueError):
    """Exhaustive search refused because L**N exceeds the cap."""


class SearchStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


def canonical_method(name: str) -> str:
    method = METHOD_ALIASES.get(name, name)
    if method not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return method


def load_defaults(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Reads config/defaults.yaml from the source tree or the installed share directory.

    Returns:
        The parsed mapping, or {} when no defaults file can be found.
    """
    candidates = [path] if path else [
        os.path.join(os.path.dirname(__file__), '..', 'config', DEFAULTS_FILE),
        os.path.join(sys.prefix, 'share', 'irs_alloc', 'config', DEFAULTS_FILE),
    ]
    for candidate in candidates:
        if candidate and os.path.isfile(candidate):
            with open(candidate, 'r') as f:
                return yaml.safe_load(f) or {}
    if path:
        raise ValueError(f"defaults file {path} does not exist")
    logger.debug("[config] no defaults file found, using built-in values")
    return {}


### EXHAUSTIVE SEARCH

@dataclass(eq=False)
class SearchResult:
    """
    Attributes:
        status: OPTIMAL, or INFEASIBLE when no configuration supports the QoS set.
        selection: First minimizer in lexicographic order.
        beamformer: Its physical beamformer.
        power: Minimum power in watts.
        powers: Power of every configuration in enumeration order (inf when infeasible).
        failed: Configurations whose solve ended without a certificate either way.
        outcome: Fixed-selection result of the minimizer.
    """
    status: SearchStatus
    selection: Optional[PhaseSelection]
    beamformer: Optional[Beamformer]
    power: float
    powers: List[float]
    failed: int = 0
    outcome: Optional[FixedResult] = None

    @property
    def evaluated(self) -> int:
        return len(self.powers)


def check_search_cap(N: int, L: int, cap: int = ES_CAP) -> int:
    """Returns L**N, or raises SearchCapExceeded when it is above `cap`."""
    total = L ** N
    if total > cap:
        raise SearchCapExceeded(f"exhaustive search over L^N = {L}^{N} = {total} configurations exceeds the cap "
                                f"of {cap}; reduce N or B_bits, or use gbd which reaches the same optimum")
    return total


def search_selections(adapter: GbdAdapter, cap: int = ES_CAP, workers: int = 1,
                      tol: Optional[ToleranceSet] = None) -> SearchResult:
    """
    Solves the fixed-selection problem at all L**N configurations.

    Raises:
        SearchCapExceeded: L**N is larger than `cap`.
    """
    N, L = adapter.N, adapter.L
    total = check_search_cap(N, L, cap)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    sels = list(selections(N, L))

    def evaluate(item: Tuple[int, PhaseSelection]) -> FixedResult:
        i, sel = item
        res = solve_fixed(adapter, sel, tol)
        logger.debug(f"[ES {i + 1}/{total}] {sel.idx} {res.status.value} power={res.power:.6g}")
        return res

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(evaluate, enumerate(sels)))
    failed = sum(r.status not in (ConicStatus.OPTIMAL, ConicStatus.PRIMAL_INFEASIBLE) for r in results)
    if failed:
        logger.warning(f"[ES] {failed} of {total} configurations ended without a certificate")
    best = None
    for res in results:
        if res.feasible and (best is None or res.power < best.power):
            best = res
    powers = [r.power if r.feasible else float('inf') for r in results]
    if best is None:
        logger.info(f"[ES] all {total} configurations are infeasible")
        return SearchResult(SearchStatus.INFEASIBLE, None, None, float('inf'), powers, failed)
    logger.info(f"[ES] optimum {best.power:.6e} W at {best.selection.idx} over {total} configurations")
    return SearchResult(SearchStatus.OPTIMAL, best.selection, best.beamformer, best.power, powers, failed, best)


def exhaustive_search(ch: ChannelSet, cfg: ScenarioConfig, cap: int = ES_CAP, workers: int = 1,
                      tol: Optional[ToleranceSet] = None) -> SearchResult:
    """Global optimum of the perfect-CSI problem by enumeration."""
    check_search_cap(cfg.N, cfg.L, cap)
    return search_selections(PerfectCsiAdapter(ch, cfg), cap, workers, tol)


def robust_exhaustive_search(inst: RobustInstance, cfg: ScenarioConfig, cap: int = ES_CAP, workers: int = 1,
                             tol: Optional[ToleranceSet] = None) -> SearchResult:
    """Global optimum of the robust problem by enumeration."""
    check_search_cap(cfg.N, cfg.L, cap)
    return search_selections(RobustCsiAdapter(inst, cfg), cap, workers, tol)


### BASELINES

def baseline_no_irs(ch: ChannelSet, cfg: ScenarioConfig, tol: Optional[ToleranceSet] = None) -> FixedResult:
    """Power minimization over the direct links alone."""
    adapter = PerfectCsiAdapter(ch.without_irs(), cfg.with_changes(N=0))
    return solve_fixed(adapter, PhaseSelection((), cfg.L), tol)


def baseline_random(ch: ChannelSet, cfg: ScenarioConfig, seed: int,
                    tol: Optional[ToleranceSet] = None) -> FixedResult:
    """Power minimization at one uniformly drawn configuration."""
    sel = PhaseSelection.random(cfg.N, cfg.L, np.random.default_rng(seed))
    logger.info(f"[baseline random {seed}] selection {sel.idx}")
    return solve_fixed(PerfectCsiAdapter(ch, cfg), sel, tol)


### METHOD DISPATCH

@dataclass(eq=False)
class MethodOutcome:
    """
    Result of one method on one scenario, in physical units.

    Attributes:
        direct_only: The design ignores the IRS (selection is empty).
        robust: The design targets the estimate and its error ball.
    """
    method: str
    status: str
    converged: bool
    infeasible: bool
    selection: Optional[PhaseSelection]
    beamformer: Optional[Beamformer]
    power: float
    iterations: int = 1
    direct_only: bool = False
    robust: bool = False
    trace: List[Dict[str, Any]] = field(default_factory=list)
    info: Dict[str, Any] = field(default_factory=dict)


def _from_fixed(method: str, res: FixedResult, direct_only: bool, robust: bool) -> MethodOutcome:
    info = {'rank_ratios': res.outcome.info.get('rank_ratios')} if robust and res.feasible else {}
    return MethodOutcome(method, res.status.value, res.feasible, res.status is ConicStatus.PRIMAL_INFEASIBLE,
                         res.selection, res.beamformer, res.power, 1, direct_only, robust, info=info)


def solve_method(method: str, scn: Scenario, robust: bool = False, seed: int = 0, delta: float = DEFAULT_DELTA,
                 sca_cfg: Optional[ScaConfig] = None, es_cap: int = ES_CAP, workers: int = 1,
                 max_iter: Optional[int] = None, tol: Optional[ToleranceSet] = None) -> MethodOutcome:
    """
    Runs one method on a scenario.

    Args:
        method: One of METHODS (CLI aliases accepted).
        scn: Scenario; robust runs need its estimate.
        robust: Design against the estimate and its error radii.
        seed: Seed of random starts and of the random baseline.

    Raises:
        ValueError: Unknown method, or a robust run on a scenario without estimate.
        GbdAborted: The decomposition could not certify a selection.
    """
    method = canonical_method(method)
    cfg = scn.cfg
    if robust and method != 'gbd_perfect_csi' and scn.estimate is None:
        raise ValueError("robust methods need a scenario with a channel estimate (generate it with kappa)")
    inst = scn.estimate
    if method == 'gbd_perfect_csi' or (method == 'gbd' and not robust):
        res = gbd_perfect_csi(scn.ch, cfg, delta=delta, seed=seed, max_iter=max_iter, tol=tol)
        return _from_gbd(method, res, robust=False)
    if method == 'gbd':
        return _from_gbd(method, gbd_robust(inst, cfg, delta=delta, seed=seed, max_iter=max_iter, tol=tol),
                         robust=True)
    if method == 'sca':
        res = solve_robust_sca(inst, cfg, sca_cfg, seed, tol) if robust else solve_sca(scn.ch, cfg, sca_cfg, seed, tol)
        info = {'binary_gap': res.binary_gap, **res.metadata}
        return MethodOutcome(method, res.status.value,
                             res.status is ScaStatus.CONVERGED and res.beamformer is not None,
                             res.beamformer is None, res.selection, res.beamformer, res.power, res.iterations,
                             robust=robust, trace=res.trace.rows(), info=info)
    if method == 'es':
        res = robust_exhaustive_search(inst, cfg, es_cap, workers, tol) if robust \
            else exhaustive_search(scn.ch, cfg, es_cap, workers, tol)
        info = {'failed': res.failed}
        if robust and res.outcome is not None:
            info['rank_ratios'] = res.outcome.outcome.info.get('rank_ratios')
        return MethodOutcome(method, res.status.value, res.status is SearchStatus.OPTIMAL,
                             res.status is SearchStatus.INFEASIBLE, res.selection, res.beamformer, res.power,
                             res.evaluated, robust=robust, info=info)
    if method == 'baseline_no_irs':
        res = robust_baseline_no_irs(inst, cfg, tol) if robust else baseline_no_irs(scn.ch, cfg, tol)
        return _from_fixed(method, res, True, robust)
    res = robust_baseline_random(inst, cfg, seed, tol) if robust else baseline_random(scn.ch, cfg, seed, tol)
    return _from_fixed(method, res, False, robust)


def _from_gbd(method: str, res, robust: bool) -> MethodOutcome:
    info = {}
    if robust and res.outcome is not None:
        info['rank_ratios'] = res.outcome.info.get('rank_ratios')
    if res.trace.records:
        last = res.trace.records[-1]
        info['gap'] = (last.UB - last.LB) * res.trace.power_scale if np.isfinite(last.UB - last.LB) else None
    return MethodOutcome(method, res.status.value,
                         res.status is GbdStatus.CONVERGED and res.beamformer is not None,
                         res.status is GbdStatus.GLOBALLY_INFEASIBLE, res.selection, res.beamformer, res.power,
                         res.iterations, robust=robust, trace=res.trace.rows(), info=info)


@dataclass(frozen=True)
class Assessment:
    """QoS check of an outcome: exact SINR for perfect-CSI designs, worst case for robust ones."""
    min_slack: float
    certified: Optional[bool] = None
    rank_ratio: Optional[float] = None


def assess(out: MethodOutcome, scn: Scenario, samples: int = WORST_CASE_SAMPLES, seed: int = 0) -> Assessment:
    """Re-checks a design against the scenario it was computed for."""
    ratios = out.info.get('rank_ratios')
    rank = float(max(ratios)) if ratios else None
    if out.beamformer is None or out.selection is None:
        return Assessment(float('nan'), None, rank)
    cfg = scn.cfg.with_changes(N=0) if out.direct_only else scn.cfg
    with np.errstate(divide='ignore', invalid='ignore'):
        if out.robust:
            inst = scn.estimate.without_irs() if out.direct_only else scn.estimate
            rep = worst_case_sinr_check(out.beamformer, out.selection, inst, cfg, samples, seed)
            slack = np.where(cfg.gamma > 0, rep.min_sinr / np.where(cfg.gamma > 0, cfg.gamma, 1.0) - 1.0, np.inf)
            return Assessment(float(np.min(slack)), bool(np.all(rep.certified)), rank)
        ch = scn.ch.without_irs() if out.direct_only else scn.ch
        report = verify_qos(out.beamformer, out.selection, ch, cfg)
    return Assessment(float(np.min(report.slack)), None, rank)


### EXPERIMENTS

@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """
    One sweep.

    Attributes:
        scenario: Base configuration; the sweep axis overrides one of its fields.
        geometry: Deployment geometry.
        methods: Methods to run at every point.
        axis: gamma_db, N, kappa, L or None for a single point.
        values: Grid of the sweep axis.
        seeds: Channel seeds; each seed is one realization per point.
        robust: Design against estimates with error level `kappa`.
        kappa: Error level when it is not the sweep axis.
        output: Path prefix of the result files; None keeps results in memory.
        es_cap: Largest L**N exhaustive search may enumerate.
    """
    scenario: ScenarioConfig
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    methods: Tuple[str, ...] = ('gbd',)
    axis: Optional[str] = None
    values: Tuple[float, ...] = ()
    seeds: Tuple[int, ...] = (0,)
    robust: bool = False
    kappa: float = 0.0
    output: Optional[str] = None
    es_cap: int = ES_CAP
    delta: float = DEFAULT_DELTA
    sca: ScaConfig = field(default_factory=ScaConfig)
    worst_case_samples: int = WORST_CASE_SAMPLES
    max_iter: Optional[int] = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("experiment needs at least one method")
        object.__setattr__(self, 'methods', tuple(canonical_method(m) for m in self.methods))
        if len(set(self.methods)) != len(self.methods):
            raise ValueError(f"duplicate methods in {self.methods}")
        if not self.seeds:
            raise ValueError("experiment needs at least one seed")
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(AXES)}")
        if self.axis is not None and not self.values:
            raise ValueError(f"sweep axis {self.axis} needs a non-empty grid of values")
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        if self.axis == 'kappa' and not self.robust:
            raise ValueError("a kappa sweep needs robust: true")
        if self.es_cap < 1 or self.worst_case_samples < 1:
            raise ValueError("es_cap and worst_case_samples must be >= 1")
        points = self.points()
        if 'es' in self.methods:
            for value, cfg, _ in points:
                if cfg.L ** cfg.N > self.es_cap:
                    raise SearchCapExceeded(f"es at {self.axis}={value} needs L^N = {cfg.L ** cfg.N} solves, "
                                            f"above the cap {self.es_cap}")

    def points(self) -> List[Tuple[Optional[float], ScenarioConfig, float]]:
        """(axis value, config, kappa) per sweep point in grid order."""
        if self.axis is None:
            return [(None, self.scenario, self.kappa)]
        return [(v,) + self._apply(v) for v in self.values]

    def _apply(self, value: float) -> Tuple[ScenarioConfig, float]:
        cfg = self.scenario
        if self.axis == 'gamma_db':
            return cfg.with_changes(gamma=db_to_linear(np.full(cfg.K, value))), self.kappa
        if self.axis == 'N':
            if int(value) != value or value < 0:
                raise ValueError(f"N grid values must be nonnegative integers, got {value}")
            return cfg.with_changes(N=int(value)), self.kappa
        if self.axis == 'L':
            bits = int(round(np.log2(value))) if value >= 2 else 0
            if bits < 1 or 2 ** bits != value:
                raise ValueError(f"L grid values must be powers of two >= 2, got {value}")
            return cfg.with_changes(B_bits=bits), self.kappa
        if not 0 <= value < 1:
            raise ValueError(f"kappa grid values must lie in [0, 1), got {value}")
        return cfg, float(value)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> 'ExperimentSpec':
        """
        Builds a spec from a document with scenario, geometry, sca and experiment sections.

        Each section is merged key by key over the same section of `defaults`.
        """
        defaults = defaults or {}
        sections = {}
        for name in SPEC_SECTIONS:
            merged = dict(defaults.get(name) or {})
            merged.update(data.get(name) or {})
            sections[name] = merged
        stray = set(data) - set(SPEC_SECTIONS)
        if stray:
            raise ValueError(f"unknown experiment spec sections {sorted(stray)}")
        if not sections['scenario']:
            raise ValueError("experiment spec needs a scenario section")
        kwargs = sections['experiment']
        sweep = kwargs.pop('sweep', None) or {}
        unknown = set(kwargs) - (set(cls.__dataclass_fields__) - set(SPEC_SECTIONS))
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        if sweep:
            kwargs['axis'] = sweep.get('axis')
            kwargs['values'] = sweep.get('values') or ()
        for key in ('methods', 'seeds', 'values'):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(scenario=ScenarioConfig.from_dict(sections['scenario']),
                   geometry=GeometryConfig.from_dict(sections['geometry']),
                   sca=ScaConfig.from_dict(sections['sca']), **kwargs)

    @classmethod
    def load(cls, path: str, defaults: Optional[Dict[str, Any]] = None) -> 'ExperimentSpec':
        """Reads a YAML or JSON spec file."""
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ValueError(f"experiment spec {path} must be a mapping")
        return cls.from_dict(data, defaults)


@dataclass
class ResultRow:
    method: str
    seed: int
    axis: Optional[str]
    value: Optional[float]
    status: str
    converged: bool = False
    power_watts: Optional[float] = None
    power_dbm: Optional[float] = None
    iterations: int = 0
    wall_time: float = 0.0
    min_slack: Optional[float] = None
    rank_ratio: Optional[float] = None
    certified: Optional[bool] = None
    selection: str = ''
    scenario_md5: str = ''
    error: str = ''
    schema: str = RESULTS_SCHEMA

    def __post_init__(self):
        if self.power_watts is not None and self.power_watts < 0:
            raise ValueError(f"power must be nonnegative, got {self.power_watts}")


def _finite(value: Optional[float]) -> Optional[float]:
    return float(value) if value is not None and np.isfinite(value) else None


def outcome_row(out: MethodOutcome, check: Assessment, seed: int, axis: Optional[str], value: Optional[float],
                wall_time: float, md5: str) -> ResultRow:
    power = _finite(out.power)
    converged = out.converged
    if converged and check.min_slack < -1e-6:
        logger.warning(f"[bench {out.method} seed {seed}] converged design misses QoS (slack {check.min_slack:.2e})")
        converged = False
    return ResultRow(method=out.method, seed=seed, axis=axis, value=value, status=out.status, converged=converged,
                     power_watts=power, power_dbm=watts_to_dbm(power) if power is not None else None,
                     iterations=out.iterations, wall_time=wall_time, min_slack=_finite(check.min_slack),
                     rank_ratio=check.rank_ratio, certified=check.certified,
                     selection=' '.join(str(i) for i in out.selection.idx) if out.selection is not None else '',
                     scenario_md5=md5)


@dataclass(eq=False)
class ExperimentResult:
    rows: List[ResultRow]
    details: List[Dict[str, Any]]
    paths: Dict[str, str] = field(default_factory=dict)

    def aggregate(self) -> List[Dict[str, Any]]:
        """Mean power per (axis value, method) in sweep order; rows without a design count but do not average."""
        groups: Dict[Tuple[Any, str], List[ResultRow]] = {}
        for row in self.rows:
            groups.setdefault((row.value, row.method), []).append(row)
        out = []
        for (value, method), rows in groups.items():
            powers = [r.power_watts for r in rows if r.power_watts is not None and not r.error]
            mean = float(np.mean(powers)) if powers else None
            out.append({'axis': rows[0].axis, 'value': value, 'method': method, 'rows': len(rows),
                        'feasible': len(powers), 'mean_power_watts': mean,
                        'mean_power_dbm': watts_to_dbm(mean) if mean is not None else None})
        return out


def _run_task(spec: ExperimentSpec, value: Optional[float], cfg: ScenarioConfig, kappa: float,
              seed: int) -> List[Tuple[ResultRow, Dict[str, Any]]]:
    """All methods on one realization; failures become error rows."""
    tag = f"[sweep {spec.axis}={value} seed {seed}]" if spec.axis else f"[sweep seed {seed}]"
    try:
        scn = Scenario.generate(cfg, spec.geometry, seed, kappa=kappa if spec.robust else None)
        md5 = scn.md5
    except Exception as e:
        logger.error(f"{tag} scenario generation failed: {e}")
        return [(ResultRow(m, seed, spec.axis, value, 'error', error=str(e)), {}) for m in spec.methods]
    results = []
    for method in spec.methods:
        start = time.perf_counter()
        try:
            out = solve_method(method, scn, robust=spec.robust, seed=seed, delta=spec.delta, sca_cfg=spec.sca,
                               es_cap=spec.es_cap, max_iter=spec.max_iter)
            check = assess(out, scn, spec.worst_case_samples, seed)
            row = outcome_row(out, check, seed, spec.axis, value, time.perf_counter() - start, md5)
            detail = {'trace': out.trace, 'info': out.info}
            logger.info(f"{tag} {method}: {row.status} power={row.power_dbm} dBm in {row.wall_time:.2f} s")
        except (GbdAborted, ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.error(f"{tag} {method} failed: {e}")
            row = ResultRow(method, seed, spec.axis, value, 'error', wall_time=time.perf_counter() - start,
                            scenario_md5=md5, error=str(e))
            detail = {}
        results.append((row, detail))
    return results


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """
    Runs every (sweep point, seed) task and writes the result files.

    Rows come back in sweep order (points, then seeds, then methods) whatever
    the completion order of the pool.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    tasks = [(value, cfg, kappa, seed) for value, cfg, kappa in spec.points() for seed in spec.seeds]
    logger.info(f"[sweep] {len(tasks)} tasks x {len(spec.methods)} methods on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(pool.map(lambda t: _run_task(spec, *t), tasks))
    pairs = [pair for task in done for pair in task]
    result = ExperimentResult(rows=[p[0] for p in pairs], details=[p[1] for p in pairs])
    if spec.output:
        result.paths = write_results(result, spec.output)
    return result


def write_results(result: ExperimentResult, prefix: str) -> Dict[str, str]:
    folder = os.path.dirname(prefix)
    if folder:
        os.makedirs(folder, exist_ok=True)
    paths = {'csv': f"{prefix}.csv", 'jsonl': f"{prefix}.jsonl", 'aggregate': f"{prefix}_mean_dbm.csv"}
    with open(paths['csv'], 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in result.rows:
            writer.writerow(asdict(row))
    with open(paths['jsonl'], 'w') as f:
        for row, detail in zip(result.rows, result.details):
            f.write(json.dumps({**asdict(row), **detail}, default=json_default) + '\n')
    with open(paths['aggregate'], 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=AGGREGATE_COLUMNS)
        writer.writeheader()
        for entry in result.aggregate():
            writer.writerow(entry)
    logger.info(f"[sweep] wrote {', '.join(paths.values())}")
    return paths


__all__ = ['SearchCapExceeded', 'SearchStatus', 'SearchResult', 'check_search_cap', 'search_selections',
           'exhaustive_search', 'robust_exhaustive_search', 'baseline_no_irs', 'baseline_random', 'MethodOutcome',
           'solve_method', 'Assessment', 'assess', 'ExperimentSpec', 'ResultRow', 'ExperimentResult', 'run_experiment',
           'write_results', 'load_defaults', 'canonical_method', 'METHODS', 'AXES', 'ES_CAP']
