"""CSV ingestion and writing, synthetic datasets, subsets and feature reduction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (ConfigError, FormatError, IntegrityError, ParseError,
                     RangeError, SamplingError)
from .model import FeatureBank, RatingsTable, inverse_logit

logger = logging.getLogger(__name__)

__all__ = [
    "RATINGS_HEADER",
    "SyntheticConfig",
    "SyntheticDataset",
    "load_ratings",
    "write_ratings",
    "load_features",
    "write_features",
    "generate_synthetic",
    "subset_sample",
    "reduce_features",
]

RATINGS_HEADER = ("obs_id", "participant_id", "face_id", "trait_id", "rating")


def _parse_int(value, column, line):
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"line {line}: {column} {value!r} is not an integer") from None


def load_ratings(path, delta: float = 1e-3) -> RatingsTable:
    """Read a ratings CSV with header ``obs_id,participant_id,face_id,trait_id,rating``.

    Ratings of exactly 0 or 100 are clamped to ``100*delta`` and
    ``100*(1-delta)``; the number of clamped rows is stored on the table.
    """
    obs, pid, face, trait, rating = [], [], [], [], []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in RATINGS_HEADER if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in RATINGS_HEADER}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
            oid = _parse_int(row[col["obs_id"]], "obs_id", line)
            if oid in seen:
                raise IntegrityError(f"duplicate obs_id {oid}")
            seen.add(oid)
            try:
                r = float(row[col["rating"]])
            except ValueError:
                raise ParseError(f"line {line}: rating {row[col['rating']]!r} is not numeric") from None
            if not 0.0 <= r <= 100.0:
                raise RangeError(f"line {line}: rating {r} outside [0, 100]")
            obs.append(oid)
            pid.append(_parse_int(row[col["participant_id"]], "participant_id", line))
            face.append(_parse_int(row[col["face_id"]], "face_id", line))
            trait.append(_parse_int(row[col["trait_id"]], "trait_id", line))
            rating.append(r)

    rating = np.asarray(rating, dtype=np.float64)
    low, high = rating == 0.0, rating == 100.0
    n_clamped = int(low.sum() + high.sum())
    rating[low] = 100.0 * delta
    rating[high] = 100.0 * (1.0 - delta)
    if n_clamped:
        logger.warning("%s: clamped %d rating(s) at 0 or 100", path, n_clamped)
    return RatingsTable.from_arrays(obs, face, trait, rating, pid, n_clamped)


def write_ratings(table: RatingsTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_HEADER)
        for row in zip(table.obs_id.tolist(), table.participant_id.tolist(),
                       table.face_id.tolist(), table.trait_id.tolist(),
                       table.rating.tolist()):
            w.writerow(row[:4] + (repr(row[4]),))


def load_features(path) -> np.ndarray:
    """Read a headerless CSV of equal-length numeric rows into an N x D matrix."""
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}: line {line} has {len(row)} values, expected {width}")
            try:
                vals = np.array([float(v) for v in row])
            except ValueError:
                raise ParseError(f"{path}: line {line} contains a non-numeric value") from None
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{path}: line {line} contains NaN or inf")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    return np.vstack(rows)


def write_features(matrix, path) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in m.tolist():
            w.writerow([repr(v) for v in row])


@dataclass(frozen=True)
class SyntheticConfig:
    n_faces: int = 50
    n_traits: int = 10
    feat_dim_face: int = 4
    feat_dim_trait: int = 3
    true_latent_dim: int = 4
    ratings_per_cell: int = 4
    noise_precision: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_faces", "n_traits", "feat_dim_face", "feat_dim_trait",
                     "true_latent_dim", "ratings_per_cell"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not self.noise_precision > 0:
            raise ConfigError("noise_precision must be positive")


class SyntheticDataset(NamedTuple):
    table: RatingsTable
    bank: FeatureBank
    true_W_F: np.ndarray
    true_W_T: np.ndarray


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    """Ratings drawn from the model itself at known weights.

    Observations are laid out face-major, then trait, then rater; the rater
    index doubles as ``participant_id``.
    """
    rng = np.random.default_rng(cfg.seed)
    F = rng.standard_normal((cfg.n_faces, cfg.feat_dim_face))
    T = rng.standard_normal((cfg.n_traits, cfg.feat_dim_trait))
    W_F = rng.standard_normal((cfg.true_latent_dim, cfg.feat_dim_face))
    W_T = rng.standard_normal((cfg.true_latent_dim, cfg.feat_dim_trait))
    r_star = (F @ W_F.T) @ (T @ W_T.T).T

    n_rep = cfg.ratings_per_cell
    face = np.repeat(np.arange(cfg.n_faces), cfg.n_traits * n_rep)
    trait = np.tile(np.repeat(np.arange(cfg.n_traits), n_rep), cfg.n_faces)
    rater = np.tile(np.arange(n_rep), cfg.n_faces * cfg.n_traits)
    noise = rng.standard_normal(face.size) / math.sqrt(cfg.noise_precision)
    rating = inverse_logit(r_star[face, trait] + noise)
    # keep strictly inside (0, 100) where float saturation would hit the bounds
    rating = np.clip(rating, np.nextafter(0.0, 1.0), np.nextafter(100.0, 0.0))
    table = RatingsTable(np.arange(face.size), face, trait, rating, rater)
    return SyntheticDataset(table, FeatureBank(F, T), W_F, W_T)


def subset_sample(table: RatingsTable, n_faces: int, n_traits: int, per_cell: int | None,
                  seed: int) -> RatingsTable:
    """Random faces x traits cross-section with ``per_cell`` ratings per cell.

    ``per_cell=None`` keeps every observation of the selected cells. Face and
    trait ids keep their feature-bank indices; obs_ids are renumbered densely.
    """
    rng = np.random.default_rng(seed)
    faces = np.unique(table.face_id)
    traits = np.unique(table.trait_id)
    if n_faces > faces.size or n_traits > traits.size:
        raise SamplingError(
            f"requested {n_faces} faces x {n_traits} traits, table has {faces.size} x {traits.size}")
    pick_f = np.sort(rng.choice(faces, n_faces, replace=False))
    pick_t = np.sort(rng.choice(traits, n_traits, replace=False))

    order = np.lexsort((table.obs_id, table.trait_id, table.face_id))
    keep = []
    for f in pick_f.tolist():
        in_face = order[table.face_id[order] == f]
        for t in pick_t.tolist():
            obs = in_face[table.trait_id[in_face] == t]
            if per_cell is None:
                keep.append(obs)
                continue
            if obs.size < per_cell:
                raise SamplingError(f"cell (face {f}, trait {t}) has {obs.size} observations, "
                                    f"{per_cell} requested")
            keep.append(np.sort(rng.choice(obs, per_cell, replace=False)))
    return table.subset(np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64))


def reduce_features(matrix, target_dim: int, method: str = "pca", seed: int = 0) -> np.ndarray:
    """Linear dimensionality reduction of a feature matrix to ``target_dim`` columns.

    ``pca`` projects the centered matrix on its leading principal axes, each
    oriented so its largest-magnitude loading is positive.
    ``random_projection`` multiplies by a seeded Gaussian matrix scaled by
    ``1/sqrt(target_dim)``.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("feature matrix must be 2-D")
    if int(target_dim) != target_dim or not 1 <= target_dim <= X.shape[1]:
        raise ConfigError(f"target_dim must lie in [1, {X.shape[1]}]")
    if method == "pca":
        Xc = X - X.mean(axis=0)
        _, _, Vt = np.linalg.svd(Xc, full_matrices=target_dim > min(X.shape))
        V = Vt[:target_dim].T
        pivot = np.abs(V).argmax(axis=0)
        V = V * np.sign(V[pivot, np.arange(target_dim)])
        return Xc @ V
    if method == "random_projection":
        G = np.random.default_rng(seed).standard_normal((X.shape[1], target_dim))
        return X @ G / math.sqrt(target_dim)
    raise ConfigError(f"unknown reduction method {method!r}")
