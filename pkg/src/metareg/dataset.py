"""Subject-level data: ingestion, fold splits, window augmentation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

PHENOTYPE_HEADER = ["id", "site", "age", "fiq", "score"]
MIN_SCORE, MAX_SCORE = 0, 8


@dataclass(frozen=True, eq=False)
class Subject:
    id: str
    site: str
    series: np.ndarray
    age: float | None
    fiq: float | None
    score: int | None

    @property
    def time_points(self) -> int:
        return self.series.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    subjects: tuple[Subject, ...]
    rois: int

    def __post_init__(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject ids")
        for s in self.subjects:
            if s.series.ndim != 2 or s.series.shape[1] != self.rois:
                raise DataError(
                    f"subject {s.id}: ROI count {s.series.shape[-1]} != {self.rois}"
                )

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    def by_id(self) -> dict[str, Subject]:
        return {s.id: s for s in self.subjects}

    def subset(self, ids: Iterable[str]) -> list[Subject]:
        lookup = self.by_id()
        return [lookup[i] for i in ids]

    def __len__(self):
        return len(self.subjects)


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def _check_series(sid: str, series: np.ndarray) -> np.ndarray:
    if series.ndim != 2 or series.shape[0] < 1 or series.shape[1] < 2:
        raise DataError(f"subject {sid}: series must be time x rois with >=2 ROIs")
    if not np.all(np.isfinite(series)):
        raise DataError(f"subject {sid}: non-finite values in series")
    return series


def read_series(path: Path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return arr


def _parse_float(value: str, what: str, sid: str) -> float | None:
    value = value.strip()
    if value == "":
        return None
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"subject {sid}: bad {what} {value!r}") from None
    if not math.isfinite(x):
        raise DataError(f"subject {sid}: non-finite {what}")
    return x


def _parse_score(value: str, sid: str) -> int | None:
    x = _parse_float(value, "score", sid)
    if x is None:
        return None
    if x != int(x):
        raise DataError(f"subject {sid}: score must be an integer, got {value!r}")
    if not MIN_SCORE <= x <= MAX_SCORE:
        raise DataError(f"subject {sid}: score out of range ({value})")
    return int(x)


def read_phenotypes(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != PHENOTYPE_HEADER:
            raise DataError(f"{path}: header must be {','.join(PHENOTYPE_HEADER)}")
        return [{k.strip(): (v or "") for k, v in row.items()} for row in reader]


def load_dataset(phenotype_file: str | Path, series_dir: str | Path) -> Dataset:
    """Load subjects listed in ``phenotype_file`` with one CSV series each.

    Every subject must carry an integer score in [0, 8]. A blank FIQ is kept
    as ``None``; imputation happens at feature time.
    """
    phenotype_file, series_dir = Path(phenotype_file), Path(series_dir)
    subjects = []
    for row in read_phenotypes(phenotype_file):
        sid = row["id"].strip()
        score = _parse_score(row["score"], sid)
        if score is None:
            raise DataError(f"subject {sid}: missing score")
        path = series_dir / f"{sid}.csv"
        if not path.exists():
            raise DataError(f"missing series file for subject {sid}: {path}")
        series = _check_series(sid, read_series(path))
        subjects.append(Subject(
            id=sid,
            site=row["site"].strip(),
            series=series,
            age=_parse_float(row["age"], "age", sid),
            fiq=_parse_float(row["fiq"], "fiq", sid),
            score=score,
        ))
    return _assemble(subjects)


def load_for_prediction(data_dir: str | Path) -> Dataset:
    """Load every series under ``data_dir/series``; phenotypes are optional.

    Series files without a phenotype row still become subjects (no age, FIQ
    or score), since prediction never needs the true score.
    """
    data_dir = Path(data_dir)
    rows = {}
    pheno = data_dir / "phenotypes.csv"
    if pheno.exists():
        rows = {r["id"].strip(): r for r in read_phenotypes(pheno)}
    files = sorted((data_dir / "series").glob("*.csv"))
    if not files:
        raise DataError(f"no series files under {data_dir / 'series'}")
    subjects = []
    for path in files:
        sid = path.stem
        row = rows.get(sid, {"site": "", "age": "", "fiq": "", "score": ""})
        subjects.append(Subject(
            id=sid,
            site=row["site"].strip(),
            series=_check_series(sid, read_series(path)),
            age=_parse_float(row["age"], "age", sid),
            fiq=_parse_float(row["fiq"], "fiq", sid),
            score=_parse_score(row["score"], sid),
        ))
    return _assemble(subjects)


def load_dir(data_dir: str | Path) -> Dataset:
    data_dir = Path(data_dir)
    return load_dataset(data_dir / "phenotypes.csv", data_dir / "series")


def _assemble(subjects: Sequence[Subject]) -> Dataset:
    if not subjects:
        raise DataError("dataset is empty")
    rois = subjects[0].series.shape[1]
    for s in subjects:
        if s.series.shape[1] != rois:
            raise DataError(
                f"ROI count mismatch: subject {s.id} has {s.series.shape[1]}, expected {rois}"
            )
    return Dataset(tuple(subjects), rois)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    """Write ``phenotypes.csv`` and ``series/<id>.csv`` in the ingest format."""
    out_dir = Path(out_dir)
    (out_dir / "series").mkdir(parents=True, exist_ok=True)
    with open(out_dir / "phenotypes.csv", "w", newline="") as fh:
        fh.write(",".join(PHENOTYPE_HEADER) + "\n")
        for s in dataset.subjects:
            score = "" if s.score is None else str(s.score)
            fh.write(f"{s.id},{s.site},{_fmt(s.age)},{_fmt(s.fiq)},{score}\n")
    for s in dataset.subjects:
        with open(out_dir / "series" / f"{s.id}.csv", "w") as fh:
            for row in s.series:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def kfold_split(dataset: Dataset | Sequence[str], k: int, val_fraction: float,
                seed: int) -> list[Split]:
    """Subject-level k-fold splits with a per-fold validation draw.

    Ids are sorted, shuffled with ``seed`` and dealt round-robin into k test
    buckets. Each fold then draws round(val_fraction * N) validation ids
    from its non-test remainder; the rest is training data.
    """
    ids = sorted(dataset.ids if isinstance(dataset, Dataset) else dataset)
    n = len(ids)
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    if k > n:
        raise ValueError(f"k={k} exceeds subject count {n}")
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(n)]
    buckets = [perm[i::k] for i in range(k)]
    n_val = int(math.floor(val_fraction * n + 0.5))
    splits = []
    for fold, test in enumerate(buckets):
        test_set = set(test)
        rest = [i for i in perm if i not in test_set]
        if n_val >= len(rest):
            raise ValueError("validation fraction leaves no training subjects")
        fold_rng = np.random.default_rng([seed, fold])
        pick = set(fold_rng.choice(len(rest), size=n_val, replace=False).tolist())
        val = [rest[i] for i in range(len(rest)) if i in pick]
        train = [rest[i] for i in range(len(rest)) if i not in pick]
        splits.append(Split(tuple(sorted(train)), tuple(sorted(val)),
                            tuple(sorted(test)), seed))
    return splits


def window(series: np.ndarray, length: int, stride: int) -> list[np.ndarray]:
    """Overlapping windows of ``length`` rows taken every ``stride`` rows."""
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    series = np.asarray(series)
    T = series.shape[0]
    if T < length:
        raise DataError(f"series shorter than window ({T} < {length})")
    count = (T - length) // stride + 1
    return [series[i * stride:i * stride + length] for i in range(count)]


def aggregate_by_subject(predictions: Iterable[tuple[str, float]]) -> dict[str, float]:
    """Average sample-level predictions per subject."""
    groups: dict[str, list[float]] = defaultdict(list)
    for sid, value in predictions:
        groups[sid].append(float(value))
    if not groups:
        raise ValueError("no predictions to aggregate")
    return {sid: math.fsum(v) / len(v) for sid, v in groups.items()}
