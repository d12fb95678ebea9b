"""YAML experiment documents: one experiment per file, optional sweep block.

Schema (see README for the field-by-field description)::

    run: sweep                 # sweep | rho-curve | compare (default sweep)
    experiment:
      num_tasks: 3
      ambient_dim: 500
      known_dim: 100
      samples_per_task: 100    # int or list of num_tasks ints
      rho: 0.8
      gamma1: 0.01
      gamma2: 1.0
      loss_kind: squared       # squared | logistic
      model_kind: linear_regression   # or binary_classification
      seed: 20240601
    sweep:
      axis: kappa              # kappa | T | rho | gamma2 | R
      grid: [0.2, 0.5, 0.8]
      trials: 25
      emit_theory: true
      emit_simulation: true    # defaults to false on the gamma2 axis
      theory_source: auto      # auto | theorem1 | lemma1 | theorem2 | separate
      outputs: results/run
      R: null                  # fixed alignment strength for source=separate
"""

from __future__ import annotations

from pathlib import Path

import yaml

from ..model import ExperimentConfig
from .sweep import SweepSpec

__all__ = ["load_document", "RUN_KINDS"]

RUN_KINDS = ("sweep", "rho-curve", "compare")

_SWEEP_KEYS = {
    "axis", "grid", "trials", "emit_theory", "emit_simulation",
    "theory_source", "outputs", "R", "quad_order", "workers",
}


def load_document(path):
    """Parse one experiment document; returns (run kind, config, sweep or None)."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or "experiment" not in data:
        raise ValueError(f"{path}: expected a mapping with an 'experiment' section")
    run = data.get("run", "sweep")
    if run not in RUN_KINDS:
        raise ValueError(f"{path}: run must be one of {RUN_KINDS}, got {run!r}")
    config = ExperimentConfig.from_mapping(data["experiment"])
    sweep = None
    if "sweep" in data and data["sweep"] is not None:
        section = dict(data["sweep"])
        extra = set(section) - _SWEEP_KEYS
        if extra:
            raise ValueError(f"{path}: unknown sweep keys {sorted(extra)}")
        if "axis" not in section or "grid" not in section:
            raise ValueError(f"{path}: sweep needs 'axis' and 'grid'")
        if section.get("axis") == "gamma2":
            section.setdefault("emit_simulation", False)
        section.setdefault("outputs", str(Path(path).stem) + "_results")
        sweep = SweepSpec(base=config, **section)
    return run, config, sweep
