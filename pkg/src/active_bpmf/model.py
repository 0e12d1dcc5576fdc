"""Bilinear Bayesian matrix factorization over two-sided feature banks.

A rating of face ``j`` on trait ``h`` is modelled on the logit scale as

    r* = (W_F f_j) . (W_T t_h) + noise,    r_hat = 100 * sigmoid(r*)

with shared projection matrices ``W_F`` (K x D_f) and ``W_T`` (K x D_t),
isotropic Gaussian priors on both (precisions ``sigma`` and ``theta``) and
Gamma(a, b) priors on the two precisions. Observed ratings enter the
likelihood through :func:`logit_transform`, so the likelihood is Gaussian
with fixed precision ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError, IntegrityError, ShapeError

__all__ = [
    "RatingsTable",
    "FeatureBank",
    "Hyperparams",
    "ModelState",
    "Gradient",
    "CellPrediction",
    "PosteriorTarget",
    "latent_embed",
    "predict_cell",
    "predict_cells",
    "logit_transform",
    "inverse_logit",
    "log_posterior",
    "log_posterior_unconstrained",
    "grad_log_posterior",
    "sample_prior_state",
    "check_compatible",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RatingsTable:
    """Individually queryable rating observations over (face, trait) cells.

    Arrays are parallel and ordered by ``obs_id``, which must equal
    ``arange(N)``. Use :meth:`from_arrays` to build a table from unordered
    input.
    """

    obs_id: np.ndarray
    face_id: np.ndarray
    trait_id: np.ndarray
    rating: np.ndarray
    participant_id: np.ndarray | None = None
    n_clamped: int = 0

    def __post_init__(self):
        obs = _frozen(self.obs_id, np.int64).reshape(-1)
        n = obs.size
        arrays = {
            "face_id": _frozen(self.face_id, np.int64).reshape(-1),
            "trait_id": _frozen(self.trait_id, np.int64).reshape(-1),
            "rating": _frozen(self.rating, np.float64).reshape(-1),
        }
        pid = self.participant_id
        arrays["participant_id"] = _frozen(
            np.full(n, -1) if pid is None else pid, np.int64
        ).reshape(-1)
        for name, arr in arrays.items():
            if arr.size != n:
                raise ShapeError(f"{name} has {arr.size} entries, expected {n}")
        if not np.array_equal(obs, np.arange(n)):
            raise IntegrityError("obs_id values must be unique and dense in [0, N)")
        if n and (arrays["face_id"].min() < 0 or arrays["trait_id"].min() < 0):
            raise IntegrityError("face_id and trait_id must be non-negative")
        r = arrays["rating"]
        if n and not np.all((r > 0.0) & (r < 100.0)):
            raise DomainError("ratings must lie strictly inside (0, 100)")
        object.__setattr__(self, "obs_id", obs)
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, obs_id, face_id, trait_id, rating, participant_id=None,
                    n_clamped=0):
        """Build a table from arrays in any obs_id order."""
        obs_id = np.asarray(obs_id, dtype=np.int64)
        order = np.argsort(obs_id, kind="stable")
        pid = None if participant_id is None else np.asarray(participant_id)[order]
        return cls(obs_id[order], np.asarray(face_id)[order],
                   np.asarray(trait_id)[order], np.asarray(rating)[order],
                   pid, n_clamped)

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, z, z, z)

    def __len__(self):
        return self.obs_id.size

    def subset(self, obs_ids) -> "RatingsTable":
        """Observations ``obs_ids`` as a new table with dense obs_ids 0..n-1."""
        idx = np.asarray(obs_ids, dtype=np.int64)
        return RatingsTable(np.arange(idx.size), self.face_id[idx],
                            self.trait_id[idx], self.rating[idx],
                            self.participant_id[idx])

    def cells(self):
        """Unique (face_id, trait_id) cells and the cell index of every observation.

        Returns ``(cell_faces, cell_traits, inverse)`` with cells sorted by
        (face_id, trait_id).
        """
        pairs = np.stack([self.face_id, self.trait_id], axis=1)
        uniq, inverse = np.unique(pairs.reshape(-1, 2), axis=0, return_inverse=True)
        return uniq[:, 0], uniq[:, 1], inverse.reshape(-1)


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Dense face features (N_f x D_f) and trait features (N_t x D_t)."""

    face_features: np.ndarray
    trait_features: np.ndarray

    def __post_init__(self):
        for name in ("face_features", "trait_features"):
            m = _frozen(getattr(self, name), np.float64)
            if m.ndim != 2 or m.shape[1] < 1:
                raise ShapeError(f"{name} must be a 2-D matrix with at least one column")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, m)

    @property
    def n_faces(self):
        return self.face_features.shape[0]

    @property
    def n_traits(self):
        return self.trait_features.shape[0]

    @property
    def face_dim(self):
        return self.face_features.shape[1]

    @property
    def trait_dim(self):
        return self.trait_features.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    latent_dim: int = 16
    gamma_shape: float = 2.0
    gamma_rate: float = 2.0
    noise_precision: float = 1.0
    logit_clamp: float = 1e-3

    def __post_init__(self):
        if int(self.latent_dim) != self.latent_dim or self.latent_dim < 1:
            raise DomainError("latent_dim must be a positive integer")
        for name in ("gamma_shape", "gamma_rate", "noise_precision", "logit_clamp"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")
        if not self.logit_clamp < 0.5:
            raise DomainError("logit_clamp must be below 0.5")


@dataclass(frozen=True, eq=False)
class ModelState:
    """One MCMC draw: projection weights and prior precisions."""

    W_F: np.ndarray
    W_T: np.ndarray
    sigma: float
    theta: float

    def __post_init__(self):
        W_F = _frozen(self.W_F, np.float64)
        W_T = _frozen(self.W_T, np.float64)
        if W_F.ndim != 2 or W_T.ndim != 2 or W_F.shape[0] != W_T.shape[0]:
            raise ShapeError("W_F and W_T must be matrices with the same row count K")
        object.__setattr__(self, "W_F", W_F)
        object.__setattr__(self, "W_T", W_T)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "theta", float(self.theta))
        _check_precisions(self.sigma, self.theta)

    @property
    def latent_dim(self):
        return self.W_F.shape[0]

    def pack(self) -> np.ndarray:
        """Flat unconstrained vector ``[W_F, W_T, log sigma, log theta]``."""
        return np.concatenate([self.W_F.ravel(), self.W_T.ravel(),
                               [np.log(self.sigma), np.log(self.theta)]])

    @classmethod
    def unpack(cls, q, latent_dim, face_dim, trait_dim) -> "ModelState":
        nf = latent_dim * face_dim
        nt = latent_dim * trait_dim
        return cls(q[:nf].reshape(latent_dim, face_dim),
                   q[nf:nf + nt].reshape(latent_dim, trait_dim),
                   np.exp(q[nf + nt]), np.exp(q[nf + nt + 1]))


class Gradient(NamedTuple):
    W_F: np.ndarray
    W_T: np.ndarray
    log_sigma: float
    log_theta: float


class CellPrediction(NamedTuple):
    r_star: float
    r_hat: float


def _check_precisions(sigma, theta):
    if not (np.isfinite(sigma) and sigma > 0 and np.isfinite(theta) and theta > 0):
        raise DomainError("sigma and theta must be finite and strictly positive")


def check_compatible(state: ModelState, bank: FeatureBank, hyper: Hyperparams | None = None):
    if state.W_F.shape[1] != bank.face_dim or state.W_T.shape[1] != bank.trait_dim:
        raise ShapeError(
            f"weights {state.W_F.shape}/{state.W_T.shape} do not match feature "
            f"dims {bank.face_dim}/{bank.trait_dim}")
    if hyper is not None and state.latent_dim != hyper.latent_dim:
        raise ShapeError(f"state has K={state.latent_dim}, hyperparams K={hyper.latent_dim}")


def _check_ids(table: RatingsTable, bank: FeatureBank):
    if len(table) == 0:
        return
    if table.face_id.max() >= bank.n_faces or table.trait_id.max() >= bank.n_traits:
        raise IndexError("ratings reference face or trait rows outside the feature bank")


def latent_embed(feature_row, weights) -> np.ndarray:
    """Project one feature row into the K-dimensional latent space."""
    x = np.asarray(feature_row, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if x.ndim != 1 or W.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot apply weights {W.shape} to feature row {x.shape}")
    return W @ x


def predict_cell(state: ModelState, bank: FeatureBank, face_id: int, trait_id: int) -> CellPrediction:
    """Noise-free latent score and rating for one (face, trait) cell."""
    if not (0 <= face_id < bank.n_faces and 0 <= trait_id < bank.n_traits):
        raise IndexError(f"cell ({face_id}, {trait_id}) outside the feature bank")
    r_star = float(latent_embed(bank.face_features[face_id], state.W_F)
                   @ latent_embed(bank.trait_features[trait_id], state.W_T))
    return CellPrediction(r_star, 100.0 * float(expit(r_star)))


def predict_cells(state: ModelState, bank: FeatureBank, face_ids, trait_ids) -> np.ndarray:
    """Vectorised ``r_star`` for many cells."""
    A = bank.face_features[face_ids] @ state.W_F.T
    B = bank.trait_features[trait_ids] @ state.W_T.T
    return np.einsum("ij,ij->i", A, B)


def logit_transform(rating, delta=1e-3):
    """Map ratings in (0, 100) onto the latent scale, clamping to [delta, 1-delta]."""
    r = np.asarray(rating, dtype=np.float64)
    if not np.all((r > 0.0) & (r < 100.0)):
        raise DomainError("ratings must lie strictly inside (0, 100)")
    y = logit(np.clip(r / 100.0, delta, 1.0 - delta))
    return float(y) if y.ndim == 0 else y


def inverse_logit(y):
    out = 100.0 * expit(np.asarray(y, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


class PosteriorTarget:
    """Log-posterior and gradient over the flat unconstrained parameter vector.

    Observations are compressed to per-cell counts, means and within-cell
    sums of squares, which reproduces the per-observation Gaussian
    likelihood exactly at a fraction of the cost.
    """

    def __init__(self, table: RatingsTable, bank: FeatureBank, hyper: Hyperparams):
        _check_ids(table, bank)
        self.hyper = hyper
        self.K = hyper.latent_dim
        self.face_dim = bank.face_dim
        self.trait_dim = bank.trait_dim
        self.n_face_w = self.K * self.face_dim
        self.n_trait_w = self.K * self.trait_dim
        self.size = self.n_face_w + self.n_trait_w + 2

        y = logit_transform(table.rating, hyper.logit_clamp) if len(table) else np.zeros(0)
        y = np.atleast_1d(y)
        faces, traits, inv = table.cells()
        count = np.bincount(inv, minlength=faces.size).astype(np.float64)
        total = np.bincount(inv, weights=y, minlength=faces.size)
        with np.errstate(invalid="ignore"):
            ybar = np.where(count > 0, total / np.maximum(count, 1), 0.0)
        self.count = count
        self.ybar = ybar
        self.ss_within = float(np.sum((y - ybar[inv]) ** 2)) if y.size else 0.0
        self.Fc = bank.face_features[faces]
        self.Tc = bank.trait_features[traits]

    def unpack(self, q) -> ModelState:
        return ModelState.unpack(q, self.K, self.face_dim, self.trait_dim)

    def logp_and_grad(self, q):
        """Unconstrained log density (log-precision Jacobian included) and gradient."""
        h = self.hyper
        nf, nt = self.n_face_w, self.n_trait_w
        W_F = q[:nf].reshape(self.K, self.face_dim)
        W_T = q[nf:nf + nt].reshape(self.K, self.trait_dim)
        u, v = q[nf + nt], q[nf + nt + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            sigma, theta = np.exp(u), np.exp(v)
            A = self.Fc @ W_F.T
            B = self.Tc @ W_T.T
            resid = self.ybar - np.einsum("ij,ij->i", A, B)
            w = h.noise_precision * self.count * resid
            ssf = float(np.sum(W_F * W_F))
            sst = float(np.sum(W_T * W_T))
            logp = (-0.5 * h.noise_precision * (float(np.sum(self.count * resid ** 2)) + self.ss_within)
                    + 0.5 * nf * u - 0.5 * sigma * ssf
                    + 0.5 * nt * v - 0.5 * theta * sst
                    + h.gamma_shape * u - h.gamma_rate * sigma
                    + h.gamma_shape * v - h.gamma_rate * theta)
            grad = np.empty(self.size)
            grad[:nf] = ((w[:, None] * B).T @ self.Fc - sigma * W_F).ravel()
            grad[nf:nf + nt] = ((w[:, None] * A).T @ self.Tc - theta * W_T).ravel()
            grad[nf + nt] = 0.5 * nf - 0.5 * sigma * ssf + h.gamma_shape - h.gamma_rate * sigma
            grad[nf + nt + 1] = 0.5 * nt - 0.5 * theta * sst + h.gamma_shape - h.gamma_rate * theta
        if not np.isfinite(logp):
            logp = -np.inf
        return float(logp), grad

    def logp(self, q) -> float:
        return self.logp_and_grad(q)[0]


def _target_for(state, table, bank, hyper):
    _check_precisions(state.sigma, state.theta)
    check_compatible(state, bank, hyper)
    return PosteriorTarget(table, bank, hyper)


def log_posterior(state: ModelState, table: RatingsTable, bank: FeatureBank,
                  hyper: Hyperparams) -> float:
    """Log joint density of ``state`` given the table, up to a state-free constant.

    Includes the Gaussian log-likelihood of logit ratings, both weight
    log-priors with their ``(K D / 2) log precision`` normalizers, and the
    Gamma log-priors on ``sigma`` and ``theta``.
    """
    target = _target_for(state, table, bank, hyper)
    return target.logp(state.pack()) - np.log(state.sigma) - np.log(state.theta)


def log_posterior_unconstrained(state, table, bank, hyper) -> float:
    """:func:`log_posterior` in (log sigma, log theta) coordinates, Jacobian included."""
    return _target_for(state, table, bank, hyper).logp(state.pack())


def grad_log_posterior(state: ModelState, table: RatingsTable, bank: FeatureBank,
                       hyper: Hyperparams) -> Gradient:
    """Analytic gradient of :func:`log_posterior_unconstrained`.

    Weight components coincide with the gradient of :func:`log_posterior`;
    the precision components are taken with respect to their logarithms and
    carry the +1 Jacobian term.
    """
    target = _target_for(state, table, bank, hyper)
    _, g = target.logp_and_grad(state.pack())
    nf, nt = target.n_face_w, target.n_trait_w
    return Gradient(g[:nf].reshape(state.W_F.shape), g[nf:nf + nt].reshape(state.W_T.shape),
                    float(g[nf + nt]), float(g[nf + nt + 1]))


def sample_prior_state(bank: FeatureBank, hyper: Hyperparams, rng: np.random.Generator) -> ModelState:
    """Draw precisions from their Gamma priors, then weights given the precisions."""
    a, b = hyper.gamma_shape, hyper.gamma_rate
    sigma = rng.gamma(a, 1.0 / b)
    theta = rng.gamma(a, 1.0 / b)
    K = hyper.latent_dim
    W_F = rng.standard_normal((K, bank.face_dim)) / np.sqrt(sigma)
    W_T = rng.standard_normal((K, bank.trait_dim)) / np.sqrt(theta)
    return ModelState(W_F, W_T, sigma, theta)
