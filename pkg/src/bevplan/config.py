"""Run configuration layered as defaults < JSON config file < command-line flags."""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigurationError
from .geometry import DepthSet, GridSpec
from .learning import LearnerConfig, LossWeights
from .planner import DRIVING_WEIGHTS, PLANNING_FOOTPRINT, ComfortThresholds, CostWeights
from .scenarios import TRAINING_SAMPLER
from .semgrid import FORECASTERS
from .trajectory import SamplerConfig


@dataclass(frozen=True)
class RunConfig:
    grid: dict = field(default_factory=lambda: asdict(GridSpec()))
    depths: dict = field(default_factory=lambda: asdict(DepthSet()))
    sampler: dict = field(default_factory=lambda: asdict(SamplerConfig()))
    training_sampler: dict = field(default_factory=lambda: asdict(TRAINING_SAMPLER))
    weights: str = None                 # path to a key=value file; None = bundled driving weights
    thresholds: dict = field(default_factory=lambda: asdict(ComfortThresholds()))
    loss_weights: dict = field(default_factory=lambda: asdict(LossWeights()))
    learner: dict = field(default_factory=lambda: {"learning_rate": 0.01, "iterations": 200})
    forecaster: str = "oracle"
    footprint: tuple = PLANNING_FOOTPRINT
    reduction: str = "max"
    episodes: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.forecaster not in FORECASTERS:
            raise ConfigurationError(f"forecaster must be one of {sorted(FORECASTERS)}")
        if self.episodes < 1:
            raise ConfigurationError("episodes must be at least 1")
        if self.weights is not None and not Path(self.weights).is_file():
            raise FileNotFoundError(self.weights)
        object.__setattr__(self, "footprint", tuple(float(v) for v in self.footprint))
        # build every typed view once so invalid values fail early
        for build in (self.grid_spec, self.depth_set, self.sampler_config,
                      self.training_sampler_config, self.comfort, self.loss_weight_set,
                      self.learner_config):
            build()

    # typed views ---------------------------------------------------------------

    def grid_spec(self):
        return _build(GridSpec, self.grid)

    def depth_set(self):
        return _build(DepthSet, self.depths)

    def sampler_config(self):
        return _sampler(self.sampler)

    def training_sampler_config(self):
        return _sampler(self.training_sampler)

    def comfort(self):
        return _build(ComfortThresholds, self.thresholds)

    def loss_weight_set(self):
        return _build(LossWeights, self.loss_weights)

    def learner_config(self):
        return _build(LearnerConfig, {**self.learner, "seed": self.seed})

    def cost_weights(self):
        return DRIVING_WEIGHTS if self.weights is None else CostWeights.load(self.weights)

    # persistence ---------------------------------------------------------------

    def to_dict(self):
        d = asdict(self)
        d["footprint"] = list(self.footprint)
        return d

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _sampler(values):
    d = dict(values)
    for key in ("lateral_offsets", "accel_profiles"):
        if key in d:
            d[key] = tuple(float(v) for v in d[key])
    return _build(SamplerConfig, d)


def _build(cls, values):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{cls.__name__}: {exc}") from exc


def _merge(base, update):
    """Recursive dict update; nested tables merge key by key."""
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, **overrides):
    """Defaults, then the JSON file at ``path``, then non-``None`` ``overrides``.

    Override keys may be dotted (``"sampler.kappa_max"``) to reach nested tables.
    """
    data = RunConfig().to_dict()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(path)
        try:
            file_data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        unknown = set(file_data) - set(data)
        if unknown:
            raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
        if file_data.get("weights") is not None and not Path(file_data["weights"]).is_absolute():
            file_data["weights"] = str(path.parent / file_data["weights"])
        data = _merge(data, file_data)
    for key, value in overrides.items():
        if value is None:
            continue
        head, _, tail = key.partition(".")
        if tail:
            data[head] = {**data[head], tail: value}
        else:
            data[head] = value
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc

