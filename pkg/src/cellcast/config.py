"""Run configuration: an INI-style ``key = value`` file with sections.

Every setting has a default, so an empty file is a valid configuration.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import MissingInputError, UsageError, ValidationError
from .model import VARIANTS, ModelSpec, MultiTcnLstmConfig
from .trainer import TrainConfig

WORKDIR_ENV = "CELLCAST_WORKDIR"
DEFAULT_WORKDIR = "cellcast-work"


def default_workdir() -> Path:
    return Path(os.environ.get(WORKDIR_ENV) or DEFAULT_WORKDIR)


def _ints(text):
    text = text.strip()
    return tuple(int(v) for v in text.replace(",", " ").split()) if text else ()


@dataclass
class RunConfig:
    input_dir: str = ""
    workdir: str = field(default_factory=lambda: str(default_workdir()))
    selector: str = "internet"
    start: str = "2013-11-01"
    days: int = 30
    tz: str = "Europe/Rome"
    block: int = 0
    k: int = 2
    fold: bool = False
    variants: tuple[str, ...] = VARIANTS
    seed: int = 0
    jobs: int = 1
    tcn: MultiTcnLstmConfig = field(default_factory=MultiTcnLstmConfig)
    lstm_hidden: int = 64
    mlp_widths: tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValidationError(f"unknown variants {unknown}; expected a subset of {VARIANTS}")
        if self.input_dir and Path(self.input_dir).resolve() == Path(self.workdir).resolve():
            raise ValidationError("input_dir and workdir must be distinct paths")
        if self.k < 1:
            raise ValidationError("k must be at least 1")

    def model_spec(self, variant: str) -> ModelSpec:
        return ModelSpec(variant, self.tcn, self.lstm_hidden, self.mlp_widths)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise UsageError(f"cannot parse config {path}: {exc}".replace("\n", " ")) from None
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "RunConfig":
        known = {
            "paths": {"input_dir", "workdir"},
            "ingest": {"selector", "start", "days", "tz", "block"},
            "cluster": {"k", "fold"},
            "run": {"variants", "seed", "jobs"},
            "model": {"channels", "kernel", "dilations", "lstm_hidden", "window", "horizon",
                      "baseline_lstm_hidden", "mlp_widths"},
            "train": {f.name for f in fields(TrainConfig)} - {"seed"},
        }
        for section in parser.sections():
            if section not in known:
                raise UsageError(f"unknown config section [{section}]")
            extra = set(parser[section]) - known[section]
            if extra:
                raise UsageError(f"unknown keys in [{section}]: {sorted(extra)}")
        try:
            get = lambda s, k, fb: parser.get(s, k, fallback=fb)  # noqa: E731
            seed = parser.getint("run", "seed", fallback=0)
            variants = get("run", "variants", ",".join(VARIANTS))
            tcn_kwargs = {"seed": seed}
            if parser.has_option("model", "channels"):
                tcn_kwargs["channels"] = _ints(parser["model"]["channels"])
            if parser.has_option("model", "dilations"):
                tcn_kwargs["dilations"] = _ints(parser["model"]["dilations"])
            if parser.has_option("model", "lstm_hidden"):
                tcn_kwargs["lstm_hidden"] = _ints(parser["model"]["lstm_hidden"])
            for key in ("kernel", "window", "horizon"):
                if parser.has_option("model", key):
                    tcn_kwargs[key] = parser.getint("model", key)
            train_kwargs = {"seed": seed}
            for f in fields(TrainConfig):
                if f.name != "seed" and parser.has_option("train", f.name):
                    cast = float if f.type in ("float", float) else int
                    train_kwargs[f.name] = cast(parser["train"][f.name])
            return cls(
                input_dir=get("paths", "input_dir", ""),
                workdir=get("paths", "workdir", str(default_workdir())),
                selector=get("ingest", "selector", "internet"),
                start=get("ingest", "start", "2013-11-01"),
                days=parser.getint("ingest", "days", fallback=30),
                tz=get("ingest", "tz", "Europe/Rome"),
                block=parser.getint("ingest", "block", fallback=0),
                k=parser.getint("cluster", "k", fallback=2),
                fold=parser.getboolean("cluster", "fold", fallback=False),
                variants=tuple(v.strip() for v in variants.split(",") if v.strip()),
                seed=seed,
                jobs=parser.getint("run", "jobs", fallback=1),
                tcn=MultiTcnLstmConfig(**tcn_kwargs),
                lstm_hidden=parser.getint("model", "baseline_lstm_hidden", fallback=64),
                mlp_widths=_ints(get("model", "mlp_widths", "64 64")),
                train=TrainConfig(**train_kwargs),
            )
        except ValueError as exc:
            raise UsageError(f"invalid config value: {exc}") from None

    def items(self):
        """Flattened (key, value) pairs, for echoing into the run log."""
        out = {
            "paths.input_dir": self.input_dir,
            "paths.workdir": self.workdir,
            "ingest.selector": self.selector,
            "ingest.start": self.start,
            "ingest.days": self.days,
            "ingest.tz": self.tz,
            "ingest.block": self.block,
            "cluster.k": self.k,
            "cluster.fold": self.fold,
            "run.variants": ",".join(self.variants),
            "run.seed": self.seed,
            "run.jobs": self.jobs,
            "model.baseline_lstm_hidden": self.lstm_hidden,
            "model.mlp_widths": " ".join(map(str, self.mlp_widths)),
        }
        for key, value in self.tcn.to_dict().items():
            if key != "seed":
                out[f"model.{key}"] = " ".join(map(str, value)) if isinstance(value, list) else value
        for f in fields(TrainConfig):
            if f.name != "seed":
                out[f"train.{f.name}"] = getattr(self.train, f.name)
        return list(out.items())
