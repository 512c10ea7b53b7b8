from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from engine import no_grad
from models.config import ModelConfig
from models.encoder import EncoderModel

logger = logging.getLogger(__name__)

BENCH_LABELS = 5


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sizes: list[int] = Field(default_factory=lambda: [16, 32, 64])
    repeats: int = Field(default=3, ge=1)
    warmup: int = Field(default=1, ge=0)
    batch_size: int = Field(default=1, ge=1)
    # only sizes >= fit_from enter the slope fit; 0 fits all of them
    fit_from: int = Field(default=0, ge=0)


@dataclass
class ScalingReport:
    table: pd.DataFrame
    slope: float


def loglog_slope(sizes, seconds) -> float:
    """Least-squares slope of log(seconds) against log(n); NaN with fewer than two sizes."""
    if len(sizes) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(np.asarray(sizes, dtype=np.float64)), np.log(seconds), 1)
    return float(slope)


def bench_scaling(
    config: ModelConfig,
    sizes: list[int],
    repeats: int = 3,
    warmup: int = 1,
    batch_size: int = 1,
    seed: int = 0,
    fit_from: int = 0,
) -> ScalingReport:
    """
    Median wall time of an encoder forward pass on random dense graphs of each size.

    The log-log slope is fitted over sizes >= ``fit_from``. At small n the O(n^2 d^2)
    projections still outweigh the O(n^3 d) pivot contraction.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    updates = {
        field: BENCH_LABELS
        for field in ("num_edge_labels", "num_output_labels")
        if getattr(config, field) == 0
    }
    model = EncoderModel(config.model_copy(update=updates), seed=seed)
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        label_ids = rng.integers(model.config.num_edge_labels + 1, size=(batch_size, n, n))
        queries = np.zeros((batch_size, 2), dtype=np.int64)
        samples = []
        with no_grad():
            for _ in range(warmup):
                model.forward(label_ids, queries)
            for _ in range(repeats):
                started = time.perf_counter()
                model.forward(label_ids, queries)
                samples.append(time.perf_counter() - started)
        median = float(np.median(samples))
        rows.append({"n": n, "median_seconds": median, "repeats": repeats})
        logger.info("n=%s median forward %.6fs over %s repeats", n, median, repeats)
    table = pd.DataFrame(rows, columns=["n", "median_seconds", "repeats"])
    fitted = table.loc[table["n"] >= fit_from]
    slope = loglog_slope(fitted["n"].to_numpy(), fitted["median_seconds"].to_numpy())
    logger.info("log-log slope %.3f over n >= %s", slope, fit_from)
    return ScalingReport(table=table, slope=slope)
