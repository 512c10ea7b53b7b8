from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.attention import AblationMode
from models.checkpoint import load_checkpoint
from tasks.datasets import Dataset, DatasetSpec, generate_splits

from .evaluation import evaluate
from .training import train

if TYPE_CHECKING:
    from run_config import RunConfig

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ["mode", "seed", "split", "metric", "value", "best_epoch"]


class AblationConfig(BaseModel):
    """Variants and seeds trained side by side by ``compare_variants``."""

    model_config = ConfigDict(extra="forbid")

    modes: list[AblationMode] = Field(
        default_factory=lambda: [AblationMode.BASE, AblationMode.VALUE_ABLATION, AblationMode.ATTENTION_ABLATION]
    )
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])

    @field_validator("modes", "seeds")
    @classmethod
    def _non_empty(cls, values: list) -> list:
        if not values:
            raise ValueError("at least one entry is required")
        if len(set(values)) != len(values):
            raise ValueError(f"entries must be distinct, got {values}")
        return values


def compare_variants(config: "RunConfig", out_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Train one model per (mode, seed) under ``<out_dir>/<mode>-seed<seed>`` and score
    each best-validation checkpoint on every held-out split. Everything except
    ``model.mode`` and ``seed`` comes from ``config``.
    """
    out_dir = Path(out_dir)
    rows = []
    for seed in config.ablation.seeds:
        spec = DatasetSpec(**config.data.model_dump(), seed=seed)
        splits = {
            name: Dataset(spec=spec, split=name, instances=instances)
            for name, instances in generate_splits(spec).items()
        }
        for mode in config.ablation.modes:
            run = config.model_copy(
                update={"seed": seed, "model": config.model.model_copy(update={"mode": mode})}
            )
            logger.info("ablation run mode=%s seed=%s", mode.value, seed)
            result = train(run, out_dir / f"{mode.value}-seed{seed}", splits)
            model = load_checkpoint(result.checkpoint_path)
            for name, dataset in splits.items():
                if name == "train":
                    continue
                scored = evaluate(model, dataset, config.train.eval_batch_size)
                rows.append(
                    {
                        "mode": mode.value,
                        "seed": seed,
                        "split": name,
                        "metric": scored.metric,
                        "value": scored.value,
                        "best_epoch": result.best_epoch,
                    }
                )
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def mean_by_mode(table: pd.DataFrame, split: str) -> pd.Series:
    """Seed-averaged score per mode on one split."""
    scores = table.loc[table["split"] == split]
    if scores.empty:
        raise KeyError(f"no ablation rows for split {split!r}")
    return scores.groupby("mode")["value"].mean()


def ablation_gap(
    table: pd.DataFrame,
    split: str,
    baseline: AblationMode = AblationMode.BASE,
    variant: AblationMode = AblationMode.VALUE_ABLATION,
) -> float:
    """Seed-averaged ``baseline - variant`` score on ``split``."""
    means = mean_by_mode(table, split)
    return float(means[baseline.value] - means[variant.value])
