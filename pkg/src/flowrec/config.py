"""Run configuration: one YAML document drives generation, training,
evaluation, and scaling.

Resolution order: built-in defaults <- benchmark preset <- user file.  Every
omitted field falls back to a documented default; unknown keys are rejected.
The three named presets reproduce the reference experiment setups exactly.
"""

import copy
from dataclasses import dataclass

import numpy as np
import yaml

from . import benchmarks
from .decomposition import Budget, GlobalDomain, partition
from .network import ExpertConfig
from .physics import LossWeights
from .runtime import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_BENCHMARK_DEFAULTS = {
    "kovasznay": {"reynolds": 40.0},
    "taylor_green": {"reynolds": 100.0},
    "beltrami": {"reynolds": 1.0, "a": 1.0, "d": 1.0},
}

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "name": "run",
    "benchmark": {"name": "kovasznay", "reynolds": None, "a": None, "d": None},
    "reference": {"nx": 129, "snapshots": 11},
    "observations": {"kind": "grid", "n_per_axis": 10, "per_snapshot": 200},
    "decomposition": {
        "spatial": None,  # defaults to all-ones for the regime
        "temporal": 1,
        "delta_space": 0.1,
        "delta_time": 0.0,
    },
    "anchor": None,  # defaults to lo + 0.25 * extent per spatial axis
    "budgets": {"n_obs": 100, "n_pde": 2000, "n_ghost_per_interface": 100},
    "network": {"hidden_layers": 4, "width": 64, "activation": "tanh", "omega0": 1.0},
    "training": {
        "epochs": 2000,
        "batch_size": 2000,
        "learning_rate": 1e-2,
        "lr_factor": 0.5,
        "lr_interval": 1500,
        "comm_interval": 1,
        "clip_norm": None,
        "pressure_coupling": "anchored_master",
        "weights": {"obs": 10.0, "pde": 4.0, "ghost_u": 1.0, "ghost_p": 1.0},
        "velocity_weights": None,
    },
    "seeds": [0, 1, 2, 3, 4],
}

# Named experiment presets (steady cavity-class, unsteady 2D wake-class,
# unsteady 3D wake-class) backed by the manufactured benchmark flows.
PRESETS = {
    "cavity2d": {
        "benchmark": {"name": "kovasznay", "reynolds": 100.0},
        "reference": {"nx": 257, "snapshots": 1},
        "observations": {"kind": "grid", "n_per_axis": 10},
        "decomposition": {"spatial": [2, 2], "temporal": 1, "delta_space": 0.2},
        "budgets": {"n_obs": 100, "n_pde": 5000, "n_ghost_per_interface": 100},
        "network": {"hidden_layers": 6, "width": 80, "activation": "tanh"},
        "training": {
            "epochs": 12000,
            "batch_size": 1250,
            "learning_rate": 1e-2,
            "lr_factor": 0.5,
            "lr_interval": 1500,
            "comm_interval": 1,
            "weights": {"obs": 10.0, "pde": 4.0, "ghost_u": 1.0, "ghost_p": 1.0},
        },
    },
    "cylinder2d": {
        "benchmark": {"name": "taylor_green", "reynolds": 100.0},
        "reference": {"nx": 65, "snapshots": 50},
        "observations": {"kind": "snapshot_random", "per_snapshot": 200},
        "decomposition": {
            "spatial": [2, 2],
            "temporal": 1,
            "delta_space": 2.0,
            "delta_time": 1.0,
        },
        "budgets": {"n_obs": 10000, "n_pde": 500000, "n_ghost_per_interface": 1000},
        "network": {"hidden_layers": 6, "width": 150, "activation": "sin"},
        "training": {
            "epochs": 8000,
            "batch_size": 25000,
            "learning_rate": 1e-3,
            "lr_factor": 0.2,
            "lr_interval": 2000,
            "comm_interval": 1,
            "weights": {"obs": 10.0, "pde": 5.0, "ghost_u": 1.0, "ghost_p": 1.0},
        },
    },
    "cylinder3d": {
        "benchmark": {"name": "beltrami", "reynolds": 300.0},
        "reference": {"nx": 17, "snapshots": 80},
        "observations": {"kind": "snapshot_random", "per_snapshot": 1250},
        "decomposition": {
            "spatial": [2, 2, 2],
            "temporal": 1,
            "delta_space": 0.2,
            "delta_time": 0.2,
        },
        "budgets": {"n_obs": 100000, "n_pde": 600000, "n_ghost_per_interface": 5000},
        "network": {"hidden_layers": 8, "width": 200, "activation": "sin"},
        "training": {
            "epochs": 25000,
            "batch_size": 25000,
            "learning_rate": 1e-3,
            "lr_factor": 0.3,
            "lr_interval": 5000,
            "comm_interval": 1,
            "clip_norm": 1.0,
            "weights": {"obs": 10.0, "pde": 10.0, "ghost_u": 1.0, "ghost_p": 1.0},
            "velocity_weights": [1.0, 5.0, 100.0],
        },
    },
}


def _merge(base, override, path="config"):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown key {path}.{key}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    # -- constructed objects ------------------------------------------------
    def solution(self):
        b = self.raw["benchmark"]
        name = b["name"]
        if name not in _BENCHMARK_DEFAULTS:
            raise ConfigError(
                f"unknown benchmark {name!r} (available: {sorted(_BENCHMARK_DEFAULTS)})"
            )
        defaults = _BENCHMARK_DEFAULTS[name]
        re = b["reynolds"] if b["reynolds"] is not None else defaults["reynolds"]
        if name == "beltrami":
            a = b["a"] if b["a"] is not None else defaults["a"]
            d = b["d"] if b["d"] is not None else defaults["d"]
            return benchmarks.get_solution(name, a=float(a), d=float(d), re=float(re))
        for extra in ("a", "d"):
            if b[extra] is not None:
                raise ConfigError(f"benchmark.{extra} only applies to beltrami")
        return benchmarks.get_solution(name, re=float(re))

    def domain(self):
        return GlobalDomain.from_solution(self.solution())

    def anchor(self):
        dom = self.domain()
        anc = self.raw["anchor"]
        if anc is None:
            return tuple(lo + 0.25 * (hi - lo) for lo, hi in dom.spatial_box)
        anc = tuple(float(a) for a in anc)
        if len(anc) != dom.regime.n_space:
            raise ConfigError(
                f"anchor needs {dom.regime.n_space} coordinates, got {len(anc)}"
            )
        return anc

    def spatial_counts(self):
        dom = self.domain()
        counts = self.raw["decomposition"]["spatial"]
        if counts is None:
            return (1,) * dom.regime.n_space
        counts = tuple(int(c) for c in counts)
        if len(counts) != dom.regime.n_space:
            raise ConfigError(
                f"decomposition.spatial needs {dom.regime.n_space} entries, got {len(counts)}"
            )
        return counts

    def subdomains(self):
        d = self.raw["decomposition"]
        return partition(
            self.domain(),
            self.spatial_counts(),
            time_splits=int(d["temporal"]),
            delta_space=float(d["delta_space"]),
            delta_time=float(d["delta_time"]),
        )

    def budget(self):
        b = self.raw["budgets"]
        return Budget(
            n_obs=int(b["n_obs"]),
            n_pde=int(b["n_pde"]),
            n_ghost_per_interface=int(b["n_ghost_per_interface"]),
        )

    def expert_config(self, regime):
        n = self.raw["network"]
        return ExpertConfig.for_regime(
            regime,
            hidden_layers=int(n["hidden_layers"]),
            width=int(n["width"]),
            activation=n["activation"],
            omega0=float(n["omega0"]),
        )

    def loss_weights(self):
        t = self.raw["training"]
        w = dict(t["weights"])
        ghost_p = w.pop("ghost_p", None)
        space = w.pop("ghost_p_space", ghost_p)
        time = w.pop("ghost_p_time", ghost_p)
        if space is None or time is None:
            raise ConfigError("training.weights needs ghost_p or both ghost_p_space/time")
        missing = {"obs", "pde", "ghost_u"} - set(w)
        if missing:
            raise ConfigError(f"training.weights missing {sorted(missing)}")
        obs, pde, ghost_u = (float(w.pop(k)) for k in ("obs", "pde", "ghost_u"))
        if w:
            raise ConfigError(f"unknown training.weights keys {sorted(w)}")
        return LossWeights(
            obs=obs,
            pde=pde,
            ghost_u=ghost_u,
            ghost_p_space=float(space),
            ghost_p_time=float(time),
            velocity=t["velocity_weights"],
        )

    def train_config(self, seed):
        t = self.raw["training"]
        return TrainConfig(
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            weights=self.loss_weights(),
            anchor=self.anchor(),
            lr_factor=float(t["lr_factor"]),
            lr_interval=int(t["lr_interval"]),
            comm_interval=int(t["comm_interval"]),
            clip_norm=None if t["clip_norm"] is None else float(t["clip_norm"]),
            seed=int(seed),
            pressure_coupling=t["pressure_coupling"],
        )

    def observation_plan(self, table):
        from .decomposition import grid_observations, snapshot_observations

        o = self.raw["observations"]
        if o["kind"] == "grid":
            return grid_observations(table, int(o["n_per_axis"]))
        if o["kind"] == "snapshot_random":
            # the plan is part of the problem statement: fixed across run seeds
            return snapshot_observations(table, int(o["per_snapshot"]), seed=0)
        raise ConfigError(f"unknown observations.kind {o['kind']!r}")

    @property
    def seeds(self):
        return [int(s) for s in self.raw["seeds"]]

    @property
    def name(self):
        return str(self.raw["name"])

    def reference_spec(self):
        r = self.raw["reference"]
        return int(r["nx"]), int(r["snapshots"])


def config_from_dict(user, preset=None):
    base = DEFAULTS
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (available: {sorted(PRESETS)})")
        base = _merge(DEFAULTS, PRESETS[preset])
    user = dict(user or {})
    preset_key = user.pop("preset", None)
    if preset_key is not None:
        return config_from_dict(user, preset=str(preset_key))
    merged = _merge(base, user)
    if int(merged["schema"]) != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema version {merged['schema']} (this build reads {SCHEMA_VERSION})"
        )
    cfg = RunConfig(raw=merged)
    # construct everything once so validation errors surface before any work
    cfg.solution()
    cfg.subdomains()
    cfg.budget()
    cfg.expert_config(cfg.domain().regime)
    cfg.train_config(cfg.seeds[0] if cfg.seeds else 0)
    return cfg


def load_config(path):
    with open(path) as f:
        doc = yaml.safe_load(f) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    try:
        return config_from_dict(doc)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e)) from e


def preset_config(name, overrides=None):
    return config_from_dict(dict(overrides or {}, preset=name))


def decomposition_for_procs(regime, n_procs):
    """Canonical strong-scaling decompositions: spatial splits first, then a
    temporal bisection (2D) or the third spatial axis (3D)."""
    table_2d = {1: ((1, 1), 1), 2: ((2, 1), 1), 4: ((2, 2), 1), 8: ((2, 2), 2)}
    table_3d = {
        1: ((1, 1, 1), 1),
        2: ((2, 1, 1), 1),
        4: ((2, 2, 1), 1),
        8: ((2, 2, 2), 1),
    }
    table = table_3d if regime.n_space == 3 else table_2d
    if n_procs not in table:
        raise ConfigError(
            f"no canonical decomposition for P={n_procs} (choose from {sorted(table)})"
        )
    counts, m = table[n_procs]
    if m > 1 and not regime.has_time:
        raise ConfigError(f"P={n_procs} needs a temporal split; {regime.kind} is steady")
    return counts, m
