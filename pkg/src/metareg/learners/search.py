from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..errors import TrainingError

log = logging.getLogger(__name__)


@dataclass
class GridResult:
    best: dict
    model: object
    metric: float
    metrics: list[float] = field(default_factory=list)
    failures: list[tuple[dict, str]] = field(default_factory=list)


def grid_search(fit: Callable[[dict], object], grid: Sequence[dict],
                evaluate: Callable[[object], float]) -> GridResult:
    """Fit one model per setting and keep the one with the highest metric.

    Ties keep the earliest setting. An undefined (NaN) metric ranks below any
    real value. Settings whose fit raises are skipped; if every setting
    fails a TrainingError is raised.
    """
    if not grid:
        raise ValueError("grid must be non-empty")
    best = None
    metrics, failures = [], []
    for setting in grid:
        try:
            model = fit(setting)
            metric = float(evaluate(model))
        except (TrainingError, ArithmeticError, FloatingPointError) as exc:
            log.warning("grid setting %s failed: %s", setting, exc)
            failures.append((setting, str(exc)))
            metrics.append(math.nan)
            continue
        metrics.append(metric)
        rank = metric if math.isfinite(metric) else -math.inf
        if best is None or rank > best[0]:
            best = (rank, setting, model, metric)
    if best is None:
        raise TrainingError(f"all {len(grid)} grid settings failed: {failures[-1][1]}")
    return GridResult(best[1], best[2], best[3], metrics, failures)
