"""On-disk layout of trained runs.

A run directory holds ``run.json`` (variant, model settings, per-model
normalisation and history), one ``<model_id>.weights`` file per model and
``train_log.jsonl`` with one line per model epoch.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from .errors import MissingInputError
from .model import ModelSpec
from .nn import load_weights, save_weights
from .trainer import NormStats, TrainConfig, TrainRun

RUN_FILE = "run.json"
LOG_FILE = "train_log.jsonl"


def save_runs(runs: dict[str, TrainRun], spec: ModelSpec, config: TrainConfig, clustered: bool, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variant = spec.variant + ("-C" if clustered else "")
    meta = {
        "variant": variant,
        "clustered": clustered,
        "spec": spec.to_dict(),
        "train_config": asdict(config),
        "models": {},
    }
    log_lines = []
    for model_id in sorted(runs):
        run = runs[model_id]
        weights_name = f"{model_id}.weights"
        save_weights(run.weights, out_dir / weights_name)
        meta["models"][model_id] = {
            "cells": list(run.cells),
            "norm": asdict(run.norm),
            "seed": run.seed,
            "epochs": run.epochs,
            "best_epoch": run.best_epoch,
            "train_loss": run.train_loss,
            "val_mape": [None if v != v else v for v in run.val_mape],
            "weights": weights_name,
        }
        for epoch, (loss, vm) in enumerate(zip(run.train_loss, run.val_mape)):
            log_lines.append(json.dumps(
                {"model_id": model_id, "epoch": epoch, "loss": loss, "val_mape": None if vm != vm else vm},
                sort_keys=True,
            ))
    (out_dir / RUN_FILE).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / LOG_FILE).write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
    return out_dir


def load_runs(run_dir) -> tuple[str, ModelSpec, bool, dict[str, TrainRun]]:
    """Return (variant name, model spec, clustered flag, model id -> TrainRun)."""
    run_dir = Path(run_dir)
    path = run_dir / RUN_FILE
    if not path.is_file():
        raise MissingInputError(f"no {RUN_FILE} in {run_dir}")
    meta = json.loads(path.read_text(encoding="utf-8"))
    spec = ModelSpec.from_dict(meta["spec"])
    runs = {}
    for model_id, m in meta["models"].items():
        runs[model_id] = TrainRun(
            variant=meta["variant"],
            model_id=model_id,
            seed=m["seed"],
            norm=NormStats(**m["norm"]),
            cells=tuple(m["cells"]),
            train_loss=list(m["train_loss"]),
            val_mape=[float("nan") if v is None else v for v in m["val_mape"]],
            best_epoch=m["best_epoch"],
            weights=load_weights(run_dir / m["weights"]),
        )
    return meta["variant"], spec, bool(meta["clustered"]), runs


def find_run_dirs(models_dir) -> list[Path]:
    """``models_dir`` itself if it is a run directory, else its run subdirectories."""
    models_dir = Path(models_dir)
    if (models_dir / RUN_FILE).is_file():
        return [models_dir]
    if not models_dir.is_dir():
        return []
    return sorted(p for p in models_dir.iterdir() if (p / RUN_FILE).is_file())
