"""Experiment configuration and its JSON form.

A config file is one JSON object. Top-level keys mirror
:class:`ExperimentConfig`; ``params``, ``pilot``, ``hyper``, ``cs`` and
``detector`` are nested objects. Missing keys take the defaults below,
unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..dd_channel import PilotLayout, SystemParams
from ..estimator import SblHyper

__all__ = [
    "ALGORITHMS",
    "EXPERIMENTS",
    "PilotConfig",
    "CsConfig",
    "DetectorConfig",
    "ExperimentConfig",
    "default_config",
    "load_config",
]

ALGORITHMS = ("omp", "sbl", "ifsbl", "ifsblt")
EXPERIMENTS = ("nmse_sweep", "ber_sweep", "convergence", "success_rate")


@dataclass(frozen=True)
class PilotConfig:
    """Centred pilot block; ``amplitude`` is ``[re, im]``."""

    n_doppler: int = 1
    n_delay: int = 1
    amplitude: tuple = (1.0, 0.0)

    def layout(self, params):
        amp = complex(self.amplitude[0], self.amplitude[1])
        return PilotLayout.centered(params, self.n_doppler, self.n_delay, amp)


@dataclass(frozen=True)
class CsConfig:
    """Generic compressed-sensing problems (dense random dictionary).

    ``snr_db=None`` means noiseless. ``m_grid`` is the sweep of
    measurement counts for the success-rate experiment.
    """

    length: int = 240
    measurements: int = 180
    sparsity: int = 12
    snr_db: Optional[float] = 10.0
    m_grid: tuple = (24, 36, 48, 60, 90, 120, 180, 240)
    success_db: float = -20.0
    dictionary: str = "gaussian"


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "mp"
    max_iter: int = 30
    damping: float = 0.6
    prune: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's CSV output.

    ``noise_model`` selects how the SBL family treats the noise precision:
    ``"learned"`` runs the Gamma update, ``"known"`` pins it to the true
    ``1 / noise_var``. ``omp_stop`` is ``"residual"`` (stop at
    ``sqrt(Q noise_var)``) or ``"sparsity"`` (fixed atom budget).
    """

    experiment: str = "nmse_sweep"
    params: SystemParams = field(default_factory=SystemParams.desk)
    pilot: PilotConfig = field(default_factory=PilotConfig)
    hyper: SblHyper = field(default_factory=SblHyper)
    algorithms: tuple = ALGORITHMS
    snr_db: tuple = (3.0, 6.0, 9.0, 12.0, 15.0)
    trials: int = 200
    seed: int = 0
    paths: int = 4
    fractional: bool = True
    pdp: str = "exponential"
    noise_model: str = "learned"
    omp_stop: str = "residual"
    cs: CsConfig = field(default_factory=CsConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    out_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.algorithms or not set(self.algorithms) <= set(ALGORITHMS):
            raise ValueError(f"algorithms must be a nonempty subset of {ALGORITHMS}")
        if self.experiment in ("nmse_sweep", "ber_sweep") and not self.snr_db:
            raise ValueError("SNR grid must be nonempty for sweeps")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.noise_model not in ("learned", "known"):
            raise ValueError(f"unknown noise_model {self.noise_model!r}")
        if self.omp_stop not in ("residual", "sparsity"):
            raise ValueError(f"unknown omp_stop {self.omp_stop!r}")
        if self.detector.kind not in ("mp", "lmmse"):
            raise ValueError(f"unknown detector {self.detector.kind!r}")
        if self.experiment == "success_rate" and not self.cs.m_grid:
            raise ValueError("m_grid must be nonempty")

    def layout(self):
        return self.pilot.layout(self.params)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("algorithms", "snr_db"):
            out[key] = list(out[key])
        out["pilot"]["amplitude"] = list(out["pilot"]["amplitude"])
        out["cs"]["m_grid"] = list(out["cs"]["m_grid"])
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        nested = {"params": SystemParams, "pilot": PilotConfig, "hyper": SblHyper,
                  "cs": CsConfig, "detector": DetectorConfig}
        for key, typ in nested.items():
            if key in data:
                data[key] = _build(typ, data[key])
        if "pilot" in data:
            data["pilot"] = dataclasses.replace(
                data["pilot"], amplitude=tuple(data["pilot"].amplitude))
        if "cs" in data:
            data["cs"] = dataclasses.replace(data["cs"], m_grid=tuple(data["cs"].m_grid))
        return _build(cls, data)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n")


def _build(typ, data):
    if isinstance(data, typ):
        return data
    names = {f.name for f in dataclasses.fields(typ)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {typ.__name__} keys: {sorted(unknown)}")
    return typ(**data)


def load_config(path):
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def default_config(experiment, scale="desk"):
    """Defaults for one experiment at ``"desk"`` or ``"paper"`` scale.

    Desk scale is ``M = N = 32, P = 4, l_max = 8, k_max = 6, eta = 3``;
    paper scale is ``M = N = 128, P = 9, l_max = 20, k_max = 16, eta = 5``.
    The generic compressed-sensing experiments do not depend on scale.
    """
    if scale == "desk":
        params, paths = SystemParams.desk(), 4
    elif scale == "paper":
        params, paths = SystemParams.paper(), 9
    else:
        raise ValueError(f"unknown scale {scale!r}")
    cfg = ExperimentConfig(experiment=experiment, params=params, paths=paths)
    if experiment == "convergence":
        cfg = cfg.replace(algorithms=("sbl", "ifsbl", "ifsblt"), trials=100)
    elif experiment == "success_rate":
        cfg = cfg.replace(trials=100, omp_stop="sparsity",
                          cs=dataclasses.replace(cfg.cs, snr_db=None))
    return cfg
