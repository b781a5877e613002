"""
Scenario and solution documents.

Both are JSON objects with a "format" tag. Complex arrays are nested lists
whose innermost entries are [re, im] pairs; real numbers are plain decimals.

Scenario:
    {"format", "config": ScenarioConfig.to_dict(), "geometry", "seed",
     "channels": {"F", "h", "d"},
     "estimate": {"kappa", "seed", "Ebar", "dbar", "eps_E", "eps_d"} | null,
     "assumptions": {...}}

Solution:
    {"format", "method", "robust", "scenario_md5", "status", "selection", "L",
     "W", "power_watts", "power_dbm", "iterations", "info"}
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from irs_alloc.chansim import CsiErrorSpec, GeometryConfig, estimate_with_error, gen_scenario
from irs_alloc.model import Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, watts_to_dbm

logger = logging.getLogger(__name__)

### DOCUMENT INFO
SCENARIO_FORMAT = "irs-alloc-scenario/1"
SOLUTION_FORMAT = "irs-alloc-solution/1"


def encode_complex(arr) -> list:
    """Nested lists with [re, im] leaves."""
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def decode_complex(data, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """Inverse of encode_complex; `shape` restores empty arrays."""
    pairs = np.asarray(data, dtype=float)
    if pairs.size == 0:
        return np.zeros(shape or (0,), dtype=complex)
    if pairs.shape[-1] != 2:
        raise ValueError(f"complex entries must be [re, im] pairs, got trailing size {pairs.shape[-1]}")
    arr = pairs[..., 0] + 1j * pairs[..., 1]
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"complex array has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def json_default(value):
    """json.dump hook for numpy scalars and arrays; non-finite floats become null."""
    if isinstance(value, np.generic):
        value = value.item()
        if isinstance(value, float) and not np.isfinite(value):
            return None
        return value
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def fingerprint(doc: Dict[str, Any]) -> str:
    """md5 of the canonical JSON text of a document."""
    return hashlib.md5(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass(eq=False)
class Scenario:
    """
    One realization plus everything needed to regenerate it.

    Attributes:
        cfg: Dimensions and QoS targets.
        ch: True channels.
        geo: Geometry the channels were drawn from (None for hand-made channels).
        seed: Channel seed.
        estimate: Robust instance when the scenario carries imperfect CSI.
        kappa: Error level of the estimate.
        estimate_seed: Seed of the error draw.
    """
    cfg: ScenarioConfig
    ch: ChannelSet
    geo: Optional[GeometryConfig] = None
    seed: Optional[int] = None
    estimate: Any = None
    kappa: float = 0.0
    estimate_seed: Optional[int] = None
    assumptions: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.ch.check(self.cfg)
        if self.estimate is not None:
            self.estimate.check(self.cfg)

    @classmethod
    def generate(cls, cfg: ScenarioConfig, geo: GeometryConfig, seed: int,
                 kappa: Optional[float] = None, estimate_seed: Optional[int] = None) -> 'Scenario':
        """Draws the channels and, when kappa is given, an estimate with norm-bounded errors."""
        ch = gen_scenario(cfg, geo, seed)
        estimate = None
        if kappa is not None:
            estimate_seed = seed if estimate_seed is None else estimate_seed
            estimate = estimate_with_error(ch, CsiErrorSpec(kappa=kappa), estimate_seed, cfg)
        return cls(cfg=cfg, ch=ch, geo=geo, seed=seed, estimate=estimate, kappa=kappa or 0.0,
                   estimate_seed=estimate_seed, assumptions=geo.assumptions(cfg.K))

    def to_dict(self) -> Dict[str, Any]:
        est = None
        if self.estimate is not None:
            est = {'kappa': self.kappa, 'seed': self.estimate_seed,
                   'Ebar': encode_complex(self.estimate.Ebar), 'dbar': encode_complex(self.estimate.dbar),
                   'eps_E': self.estimate.eps_E.tolist(), 'eps_d': self.estimate.eps_d.tolist()}
        return {
            'format': SCENARIO_FORMAT,
            'config': self.cfg.to_dict(),
            'geometry': self.geo.to_dict() if self.geo is not None else None,
            'seed': self.seed,
            'channels': {'F': encode_complex(self.ch.F), 'h': encode_complex(self.ch.h),
                         'd': encode_complex(self.ch.d)},
            'estimate': est,
            'assumptions': self.assumptions,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'Scenario':
        from irs_alloc.robust import RobustInstance

        if doc.get('format') != SCENARIO_FORMAT:
            raise ValueError(f"unsupported scenario format {doc.get('format')!r}")
        cfg = ScenarioConfig.from_dict(doc['config'])
        M, K, N = cfg.M, cfg.K, cfg.N
        chans = doc['channels']
        ch = ChannelSet(F=decode_complex(chans['F'], (N, M)), h=decode_complex(chans['h'], (K, N)),
                        d=decode_complex(chans['d'], (K, M)))
        est = doc.get('estimate')
        estimate, kappa, est_seed = None, 0.0, None
        if est is not None:
            estimate = RobustInstance(Ebar=decode_complex(est['Ebar'], (K, N, M)),
                                      dbar=decode_complex(est['dbar'], (K, M)),
                                      eps_E=est['eps_E'], eps_d=est['eps_d'])
            kappa, est_seed = float(est.get('kappa', 0.0)), est.get('seed')
        geo = GeometryConfig.from_dict(doc['geometry']) if doc.get('geometry') is not None else None
        return cls(cfg=cfg, ch=ch, geo=geo, seed=doc.get('seed'), estimate=estimate, kappa=kappa,
                   estimate_seed=est_seed, assumptions=dict(doc.get('assumptions') or {}))

    @property
    def md5(self) -> str:
        return fingerprint(self.to_dict())

    def save(self, path: str):
        with open(path, 'w') as fh:
            json.dump(self.to_dict(), fh, indent=1)
        logger.info(f"[scenario] wrote {path} (md5 {self.md5})")

    @classmethod
    def load(cls, path: str) -> 'Scenario':
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(eq=False)
class Solution:
    """A stored design: selection, physical beamformer and the solver's verdict."""
    method: str
    status: str
    selection: Optional[PhaseSelection]
    beamformer: Optional[Beamformer]
    power_watts: float
    robust: bool = False
    scenario_md5: Optional[str] = None
    iterations: int = 0
    info: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        finite = bool(np.isfinite(self.power_watts))
        return {
            'format': SOLUTION_FORMAT,
            'method': self.method,
            'robust': self.robust,
            'scenario_md5': self.scenario_md5,
            'status': self.status,
            'selection': list(self.selection.idx) if self.selection is not None else None,
            'L': self.selection.L if self.selection is not None else None,
            'W': encode_complex(self.beamformer.W) if self.beamformer is not None else None,
            'power_watts': self.power_watts if finite else None,
            'power_dbm': watts_to_dbm(self.power_watts) if finite and self.power_watts > 0 else None,
            'iterations': self.iterations,
            'info': self.info,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'Solution':
        if doc.get('format') != SOLUTION_FORMAT:
            raise ValueError(f"unsupported solution format {doc.get('format')!r}")
        sel = None
        if doc.get('selection') is not None:
            sel = PhaseSelection(idx=tuple(int(i) for i in doc['selection']), L=int(doc['L']))
        W = Beamformer(decode_complex(doc['W'])) if doc.get('W') is not None else None
        power = doc.get('power_watts')
        return cls(method=doc['method'], status=doc['status'], selection=sel, beamformer=W,
                   power_watts=float(power) if power is not None else float('inf'),
                   robust=bool(doc.get('robust', False)), scenario_md5=doc.get('scenario_md5'),
                   iterations=int(doc.get('iterations', 0)), info=dict(doc.get('info') or {}))

    def save(self, path: str):
        with open(path, 'w') as fh:
            json.dump(self.to_dict(), fh, indent=1, default=json_default)

    @classmethod
    def load(cls, path: str) -> 'Solution':
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


__all__ = ['Scenario', 'Solution', 'encode_complex', 'decode_complex', 'fingerprint', 'SCENARIO_FORMAT',
           'SOLUTION_FORMAT', 'json_default']
