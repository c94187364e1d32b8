"""Feature views: connectivity vectors and phenotype-augmented sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Subject, window

FC = "fc"
SEQ = "seq"
PHENOTYPES = ("age", "fiq")


def znorm(values, mean: float, sd: float) -> np.ndarray:
    """(x - mean) / sd, or zeros when sd is 0."""
    x = np.asarray(values, dtype=float)
    if sd < 0:
        raise ValueError("sd must be non-negative")
    if sd == 0:
        return np.zeros_like(x)
    return (x - mean) / sd


def connectivity_batch(windows: np.ndarray) -> np.ndarray:
    """Pearson correlation matrices for a stack of (n, T, R) windows.

    Flat ROI columns get zero correlation with everything else; the diagonal
    is always 1.
    """
    w = np.asarray(windows, dtype=float)
    if w.ndim != 3:
        raise ValueError("expected a (n, T, R) stack")
    if w.shape[1] < 3:
        raise ValueError("connectivity needs at least 3 time points")
    centered = w - w.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ntr,ntr->nr", centered, centered))
    flat = norms == 0
    scaled = centered / np.where(flat, 1.0, norms)[:, None, :]
    corr = np.einsum("nti,ntj->nij", scaled, scaled)
    np.clip(corr, -1.0, 1.0, out=corr)
    r = w.shape[2]
    idx = np.arange(r)
    corr[:, idx, idx] = 1.0
    return corr


def connectivity(series: np.ndarray) -> np.ndarray:
    """R x R Pearson correlation matrix of a T x R series."""
    return connectivity_batch(np.asarray(series, dtype=float)[None])[0]


def upper_triangle(mat: np.ndarray) -> np.ndarray:
    """Strictly upper-triangular entries in row-major order."""
    mat = np.asarray(mat)
    if mat.ndim < 2 or mat.shape[-1] != mat.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    iu = np.triu_indices(mat.shape[-1], k=1)
    return mat[..., iu[0], iu[1]]


def attach_phenotypes(series: np.ndarray, phenotypes: Sequence[float]) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    ph = np.asarray(phenotypes, dtype=float).ravel()
    if ph.size == 0:
        return series.copy()
    cols = np.broadcast_to(ph, (series.shape[0], ph.size))
    return np.concatenate([series, cols], axis=1)


@dataclass(frozen=True)
class PhenotypeStats:
    """Training-split means and population SDs for each phenotype."""

    mean: tuple[float, ...]
    sd: tuple[float, ...]
    names: tuple[str, ...] = PHENOTYPES

    @classmethod
    def fit(cls, subjects: Sequence[Subject]) -> "PhenotypeStats":
        means, sds = [], []
        for name in PHENOTYPES:
            vals = np.array([getattr(s, name) for s in subjects
                             if getattr(s, name) is not None], dtype=float)
            if vals.size == 0:
                means.append(0.0)
                sds.append(0.0)
            else:
                means.append(float(vals.mean()))
                sds.append(float(vals.std()))
        return cls(tuple(means), tuple(sds))

    def transform(self, subject: Subject) -> np.ndarray:
        # an absent value maps to z = 0 (e.g. sites without FIQ)
        out = []
        for name, m, sd in zip(self.names, self.mean, self.sd):
            v = getattr(subject, name)
            out.append(0.0 if v is None else float(znorm([v], m, sd)[0]))
        return np.array(out)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": list(self.mean), "sd": list(self.sd)}

    @classmethod
    def from_dict(cls, d: dict) -> "PhenotypeStats":
        return cls(tuple(d["mean"]), tuple(d["sd"]), tuple(d["names"]))


@dataclass
class SampleSet:
    """Windowed samples with their subject bookkeeping and feature views.

    ``scores`` holds the subject's true score per sample (NaN when unknown).
    """

    subject_ids: np.ndarray
    window_index: np.ndarray
    scores: np.ndarray
    fc: np.ndarray | None = None
    seq: np.ndarray | None = None

    def __len__(self):
        return len(self.subject_ids)

    def view(self, name: str) -> np.ndarray:
        x = self.fc if name == FC else self.seq if name == SEQ else None
        if x is None:
            raise ValueError(f"sample set has no {name!r} view")
        return x

    def subject_scores(self) -> dict[str, float]:
        out = {}
        for sid, s in zip(self.subject_ids, self.scores):
            out.setdefault(str(sid), float(s))
        return out

    def take(self, mask) -> "SampleSet":
        return SampleSet(
            self.subject_ids[mask], self.window_index[mask], self.scores[mask],
            None if self.fc is None else self.fc[mask],
            None if self.seq is None else self.seq[mask],
        )


def build_samples(
    subjects: Sequence[Subject],
    length: int,
    stride: int,
    pheno_stats: PhenotypeStats | None = None,
    views: Sequence[str] = (FC, SEQ),
) -> SampleSet:
    """Window every subject and compute the requested feature views.

    Windowing happens per subject, so samples never straddle subjects and
    any split made beforehand stays leak-free.
    """
    ids, widx, scores, wins, phen = [], [], [], [], []
    for s in subjects:
        ws = window(s.series, length, stride)
        ph = pheno_stats.transform(s) if pheno_stats is not None else np.zeros(0)
        for i, w in enumerate(ws):
            ids.append(s.id)
            widx.append(i)
            scores.append(np.nan if s.score is None else float(s.score))
            wins.append(w)
            phen.append(ph)
    stack = np.stack(wins).astype(float)
    fc = seq = None
    if FC in views:
        fc = upper_triangle(connectivity_batch(stack))
    if SEQ in views:
        ph = np.stack(phen)
        seq = np.concatenate(
            [stack, np.broadcast_to(ph[:, None, :], (len(stack), length, ph.shape[1]))],
            axis=2,
        )
    return SampleSet(np.array(ids, dtype=object), np.array(widx), np.array(scores), fc, seq)


def write_feature_cache(samples: SampleSet, path) -> None:
    """CSV cache of the connectivity view: subject_id,window_index,f_0..f_{D-1}."""
    fc = samples.view(FC)
    with open(path, "w") as fh:
        fh.write(",".join(["subject_id", "window_index"]
                          + [f"f_{i}" for i in range(fc.shape[1])]) + "\n")
        for sid, wi, row in zip(samples.subject_ids, samples.window_index, fc):
            fh.write(f"{sid},{wi}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_feature_cache(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["subject_id", "window_index"]:
            raise ValueError("bad feature cache header")
        ids, widx, rows = [], [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            widx.append(int(parts[1]))
            rows.append([float(v) for v in parts[2:]])
    return ids, np.array(widx), np.array(rows, dtype=float).reshape(len(ids), len(header) - 2)
