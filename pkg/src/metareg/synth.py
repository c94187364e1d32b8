"""Synthetic ROI time series whose connectivity tracks a severity score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .dataset import MAX_SCORE, Dataset, Subject
from .errors import ConfigError


def triangular_scores(mode: int = 2, n_levels: int = MAX_SCORE + 1) -> list[float]:
    """Discrete triangular distribution on 0..n_levels-1 peaked at ``mode``."""
    lo, hi = -1.0, float(n_levels)
    w = []
    for k in range(n_levels):
        if k <= mode:
            w.append((k - lo) / (mode - lo))
        else:
            w.append((hi - k) / (hi - mode))
    total = sum(w)
    return [x / total for x in w]


def _default_pairs() -> list[tuple[int, int]]:
    return [(2 * i, 2 * i + 1) for i in range(10)]


@dataclass
class SynthConfig:
    n_subjects: int = 120
    rois: int = 20
    time_points: int = 200
    score_distribution: list[float] = field(default_factory=triangular_scores)
    signal_pairs: list[tuple[int, int]] = field(default_factory=_default_pairs)
    signal_strength: float = 0.8
    noise_sd: float = 1.0
    phenotype_effect: float = 0.0
    seed: int = 0
    sites: list[str] = field(default_factory=lambda: ["SYN_A", "SYN_B", "SYN_C"])

    def validate(self) -> None:
        if self.n_subjects < 1 or self.rois < 2 or self.time_points < 1:
            raise ConfigError("n_subjects >= 1, rois >= 2 and time_points >= 1 required")
        p = self.score_distribution
        if len(p) != MAX_SCORE + 1 or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise ConfigError("score_distribution must be 9 non-negative probabilities summing to 1")
        for pair in self.signal_pairs:
            if len(pair) != 2:
                raise ConfigError(f"bad signal pair {pair}")
            i, j = pair
            if i == j or not (0 <= i < self.rois and 0 <= j < self.rois):
                raise ConfigError(f"bad signal pair {pair} for {self.rois} ROIs")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError("signal_strength must be in [0, 1]")
        if not self.noise_sd > 0:
            raise ConfigError("noise_sd must be positive")
        if not self.sites:
            raise ConfigError("at least one site name required")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.signal_pairs = [tuple(p) for p in cfg.signal_pairs]
        cfg.validate()
        return cfg


def generate(config: SynthConfig) -> Dataset:
    """Draw a dataset fully determined by ``config.seed``.

    Each signal pair (i, j) shares a latent series z with loading
    a = signal_strength * score / 8, so channel = a*z + sqrt(1 - a^2)*noise
    and the expected pair correlation is a^2, increasing with score.
    All other channels are independent noise.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    scores = rng.choice(MAX_SCORE + 1, size=config.n_subjects, p=config.score_distribution)
    width = max(3, len(str(config.n_subjects - 1)))
    subjects = []
    for i, score in enumerate(scores.tolist()):
        srng = np.random.default_rng([config.seed, i])
        T, R, sd = config.time_points, config.rois, config.noise_sd
        series = srng.normal(0.0, sd, size=(T, R))
        a = config.signal_strength * score / MAX_SCORE
        keep = math.sqrt(1.0 - a * a)
        for (p, q) in config.signal_pairs:
            z = srng.normal(0.0, sd, size=T)
            series[:, p] = a * z + keep * series[:, p]
            series[:, q] = a * z + keep * series[:, q]
        centred = score - MAX_SCORE / 2
        age = srng.normal(20.0 + config.phenotype_effect * centred, 5.0)
        fiq = srng.normal(105.0 - config.phenotype_effect * centred, 15.0)
        subjects.append(Subject(
            id=f"sub{i:0{width}d}",
            site=config.sites[i % len(config.sites)],
            series=series,
            age=float(age),
            fiq=float(fiq),
            score=int(score),
        ))
    return Dataset(tuple(subjects), config.rois)


DESCRIBE_COLUMNS = ("site", "n", "time_points", "age_mean", "age_sd", "fiq_mean", "fiq_sd")


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def describe(dataset: Dataset) -> tuple[list[dict], dict[int, int]]:
    """Per-site summary rows plus a score histogram.

    ``time_points`` is the mean scan length per subject at that site.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    sites: dict[str, list[Subject]] = {}
    for s in dataset.subjects:
        sites.setdefault(s.site, []).append(s)
    rows = []
    for site in sorted(sites):
        group = sites[site]
        age_m, age_sd = _mean_sd([s.age for s in group if s.age is not None])
        fiq_m, fiq_sd = _mean_sd([s.fiq for s in group if s.fiq is not None])
        rows.append({
            "site": site,
            "n": len(group),
            "time_points": float(np.mean([s.time_points for s in group])),
            "age_mean": age_m, "age_sd": age_sd,
            "fiq_mean": fiq_m, "fiq_sd": fiq_sd,
        })
    hist = {k: 0 for k in range(MAX_SCORE + 1)}
    for s in dataset.subjects:
        if s.score is not None:
            hist[s.score] += 1
    return rows, hist


def format_describe(rows: list[dict], hist: dict[int, int]) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.2f}"
        return str(v)

    table = [list(DESCRIBE_COLUMNS)] + [[cell(r[c]) for c in DESCRIBE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(DESCRIBE_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in table]
    lines.append("scores: " + " ".join(f"{k}:{v}" for k, v in hist.items()))
    return "\n".join(lines)
