"""JSON run configuration with dotted ``key=value`` overrides."""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError
from .evaluation import METHODS, MCDropoutParams
from .models import ArchConfig, default_generator_config, default_target_config
from .objectives import DiversityConfig
from .trainer import TrainingSchedule

DATA_TYPES = ("blobs", "ring", "idx", "signals")


@dataclass
class RunConfig:
    mode: str = "trustgan"
    seed: int = 0
    target: ArchConfig = field(default_factory=ArchConfig)
    generator: ArchConfig = field(default_factory=default_generator_config)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    data: dict = field(default_factory=dict)
    diversity: DiversityConfig = field(default_factory=DiversityConfig)
    mcdropout: MCDropoutParams = field(default_factory=MCDropoutParams)
    methods: list = field(default_factory=lambda: list(METHODS))
    threshold: float = 0.9
    out: str = "runs/default"
    export_count: int = 64
    log_timing: bool = False

    def to_dict(self):
        d = asdict(self)
        d["target"] = self.target.to_dict()
        d["generator"] = self.generator.to_dict()
        return d


def set_dotted(raw, key, value):
    """Set ``raw["a"]["b"] = value`` for ``key == "a.b"``, parsing JSON when possible."""
    try:
        parsed = json.loads(value) if isinstance(value, str) else value
    except json.JSONDecodeError:
        parsed = value
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
            continue
        node = node.setdefault(part, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"cannot descend into non-object at {part!r} in {key!r}")
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = parsed
    else:
        node[last] = parsed


def _build(cls, section, defaults, what):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return replace(defaults, **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def _check_paths(spec, where):
    for key in ("images", "labels", "path"):
        if key in spec and spec[key] is not None and not Path(spec[key]).exists():
            raise ConfigError(f"{where}.{key}: file {spec[key]} does not exist")


def _validate_data(data):
    if "train" not in data:
        raise ConfigError("data.train is required")
    if "val" not in data and "split" not in data:
        raise ConfigError("data needs either a val set or a split spec")
    if "val" not in data:
        SplitSpec.from_dict(data["split"])
    specs = [("data.train", data["train"])]
    specs += [(f"data.{k}", data[k]) for k in ("val", "test") if k in data]
    specs += [(f"data.ood.{i}", s) for i, s in enumerate(data.get("ood", []))]
    for where, spec in specs:
        if spec.get("type") not in DATA_TYPES:
            raise ConfigError(f"{where}.type must be one of {DATA_TYPES}, got {spec.get('type')!r}")
        _check_paths(spec, where)


def parse_config(raw):
    """Build a :class:`RunConfig` from a plain dict.

    Unset sub-seeds derive from the top-level ``seed`` so one override
    reseeds the whole run.
    """
    raw = json.loads(json.dumps(raw))
    unknown = set(raw) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    mode = raw.get("mode", "trustgan")
    if mode not in ("standard", "trustgan"):
        raise ConfigError(f"mode must be 'standard' or 'trustgan', got {mode!r}")

    tsec = dict(raw.get("target", {}))
    kind = tsec.get("kind", "conv")
    tsec.setdefault("seed", seed)
    target = _build(ArchConfig, tsec, default_target_config(kind), "target")
    gsec = dict(raw.get("generator", {}))
    gsec.setdefault("seed", seed + 1)
    generator = _build(ArchConfig, gsec, default_generator_config(kind), "generator")
    target.validate("target")
    generator.validate("generator")

    ssec = dict(raw.get("schedule", {}))
    ssec.setdefault("seed", seed)
    schedule = _build(TrainingSchedule, ssec, TrainingSchedule(), "schedule")
    if mode == "standard":
        schedule = replace(schedule, epochs_target_alone=max(schedule.epochs,
                                                             schedule.epochs_target_alone))
    schedule.validate()

    dsec = dict(raw.get("diversity", {}))
    try:
        diversity = DiversityConfig(**dsec)
    except TypeError as exc:
        raise ConfigError(f"invalid diversity: {exc}") from exc
    msec = dict(raw.get("mcdropout", {}))
    msec.setdefault("seed", seed)
    mcd = _build(MCDropoutParams, msec, MCDropoutParams(), "mcdropout")
    if mcd.realizations < 1 or not 0.0 <= mcd.rate < 1.0:
        raise ConfigError(f"invalid MC dropout parameters {mcd}")

    methods = list(raw.get("methods", METHODS))
    bad = set(methods) - set(METHODS)
    if bad:
        raise ConfigError(f"unknown scoring methods {sorted(bad)}")
    threshold = float(raw.get("threshold", 0.9))
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"abstention threshold must lie in [0, 1], got {threshold}")

    data = raw.get("data", {})
    _validate_data(data)
    return RunConfig(mode=mode, seed=seed, target=target, generator=generator,
                     schedule=schedule, data=data, diversity=diversity, mcdropout=mcd,
                     methods=methods, threshold=threshold, out=raw.get("out", "runs/default"),
                     export_count=int(raw.get("export_count", 64)),
                     log_timing=bool(raw.get("log_timing", False)))


def load_config(path, overrides=(), seed=None, out=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    base = path.parent
    for section in _data_specs(raw.get("data", {})):
        for key in ("images", "labels", "path"):
            if isinstance(section.get(key), str) and not Path(section[key]).is_absolute():
                section[key] = str(base / section[key])
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        set_dotted(raw, key.strip(), value)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = str(out)
    return parse_config(raw)


def _data_specs(data):
    for key in ("train", "val", "test"):
        if isinstance(data.get(key), dict):
            yield data[key]
    for spec in data.get("ood", []):
        if isinstance(spec, dict):
            yield spec
