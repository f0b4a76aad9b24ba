"""Generative model: parameter container, validity checks, ancestral sampling.

Each of the N latent components is an independent switching linear
dynamical system: a K-state sticky Markov chain picks, at every step, which
linear-Gaussian dynamics advance a d-dimensional latent vector.  The
observable component is the first coordinate of that vector.  Components
are mixed by an MLP and observed under diagonal Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigInvalid
from .linalg import cholesky
from .nets import MlpWeights, decoder_forward, init_mlp
from .seeding import substream


@dataclass
class ModelParams:
    """All generative parameters.

    Per-component arrays are stacked on a leading axis of size N; per-state
    arrays add a second axis of size K.
    """

    N: int  # number of components
    d: int  # continuous state dimension per component
    K: int  # discrete states per component
    M: int  # observation dimension

    init_dist: np.ndarray  # (N, K) simplex rows
    trans: np.ndarray  # (N, K, K) row-stochastic
    init_mean: np.ndarray  # (N, K, d)
    init_prec: np.ndarray  # (N, K, d, d) SPD
    dyn_matrix: np.ndarray  # (N, K, d, d)
    dyn_offset: np.ndarray  # (N, K, d)
    dyn_prec: np.ndarray  # (N, K, d, d) SPD
    decoder: MlpWeights
    obs_noise_diag: np.ndarray  # (M,) positive diagonal of R

    def validate(self) -> None:
        n, d, k, m = self.N, self.d, self.K, self.M
        if m < n:
            raise ConfigInvalid(f"need M >= N, got M={m} N={n}")
        checks = {
            "init_dist": (self.init_dist, (n, k)),
            "trans": (self.trans, (n, k, k)),
            "init_mean": (self.init_mean, (n, k, d)),
            "init_prec": (self.init_prec, (n, k, d, d)),
            "dyn_matrix": (self.dyn_matrix, (n, k, d, d)),
            "dyn_offset": (self.dyn_offset, (n, k, d)),
            "dyn_prec": (self.dyn_prec, (n, k, d, d)),
            "obs_noise_diag": (self.obs_noise_diag, (m,)),
        }
        for name, (arr, shape) in checks.items():
            if arr.shape != shape:
                raise ConfigInvalid(f"{name} has shape {arr.shape}, want {shape}")
        if np.max(np.abs(self.init_dist.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigInvalid("initial distributions must sum to 1")
        if np.max(np.abs(self.trans.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigInvalid("transition rows must sum to 1")
        if np.any(self.init_dist < 0) or np.any(self.trans < 0):
            raise ConfigInvalid("probabilities must be nonnegative")
        if np.any(self.obs_noise_diag <= 0):
            raise ConfigInvalid("observation noise diagonal must be positive")
        for i in range(n):
            for j in range(k):
                cholesky(self.init_prec[i, j])
                cholesky(self.dyn_prec[i, j])
        if self.decoder.in_dim != n or self.decoder.out_dim != m:
            raise ConfigInvalid(
                f"decoder maps {self.decoder.in_dim}->{self.decoder.out_dim}, want {n}->{m}"
            )

    def copy(self) -> "ModelParams":
        return replace(
            self,
            init_dist=self.init_dist.copy(),
            trans=self.trans.copy(),
            init_mean=self.init_mean.copy(),
            init_prec=self.init_prec.copy(),
            dyn_matrix=self.dyn_matrix.copy(),
            dyn_offset=self.dyn_offset.copy(),
            dyn_prec=self.dyn_prec.copy(),
            decoder=self.decoder.copy(),
            obs_noise_diag=self.obs_noise_diag.copy(),
        )


@dataclass
class Dataset:
    """A length-T observation sequence plus simulated ground truth if any."""

    x: np.ndarray  # (T, M)
    s: Optional[np.ndarray] = None  # (T, N) true components
    u: Optional[np.ndarray] = None  # (T, N) true discrete states
    f_s: Optional[np.ndarray] = None  # (T, M) noise-free observations
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def M(self) -> int:
        return self.x.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self.s is not None and self.f_s is not None


@dataclass
class SimConfig:
    """Knobs for the default simulator."""

    T: int = 1000
    N: int = 3
    M: int = 12
    d: int = 2
    K: int = 2
    mixing_layers: int = 1
    mixing_hidden: int = 128
    obs_noise: float = 0.1
    stay_prob: float = 0.99
    seed: int = 0
    # optional overrides for the per-state dynamics (K, d, d)
    dyn_matrices: Optional[np.ndarray] = None

    def validate(self) -> None:
        if min(self.T, self.N, self.M, self.d, self.K, self.mixing_layers) < 1:
            raise ConfigInvalid("all dimensions must be positive")
        if self.M < self.N:
            raise ConfigInvalid(f"need M >= N, got M={self.M} N={self.N}")
        if not 0.0 < self.stay_prob < 1.0:
            raise ConfigInvalid("stay_prob must lie in (0, 1)")
        if self.obs_noise <= 0:
            raise ConfigInvalid("obs_noise must be positive")


def sample_hmm_chain(
    init: np.ndarray, trans: np.ndarray, T: int, rng: np.random.Generator
) -> np.ndarray:
    """Ancestral sample of a discrete Markov chain: u_1 ~ init, u_t ~ trans row."""
    init = np.asarray(init, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    K = init.shape[0]
    if T < 1:
        raise ConfigInvalid("chain length must be >= 1")
    # inverse-CDF sampling against one uniform draw per step
    cum_init = np.cumsum(init)
    cum_trans = np.cumsum(trans, axis=1)
    u = np.empty(T, dtype=np.int64)
    draws = rng.random(T)
    u[0] = int(np.searchsorted(cum_init, draws[0] * cum_init[-1]))
    for t in range(1, T):
        row = cum_trans[u[t - 1]]
        u[t] = int(np.searchsorted(row, draws[t] * row[-1]))
    np.clip(u, 0, K - 1, out=u)
    return u


def sample_slds(
    init_mean: np.ndarray,
    init_prec: np.ndarray,
    dyn_matrix: np.ndarray,
    dyn_offset: np.ndarray,
    dyn_prec: np.ndarray,
    u: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample one component's continuous chain given its state sequence.

    Arrays are per-state stacks of shape (K, ...).  Noise is drawn through
    the Cholesky factor of each state's covariance (inverse precision).
    """
    T = u.shape[0]
    K, d = init_mean.shape
    # per-state covariance Cholesky factors, from precision
    cov_chol = np.empty((K, d, d))
    init_cov_chol = np.empty((K, d, d))
    for k in range(K):
        cov_chol[k] = np.linalg.cholesky(np.linalg.inv(dyn_prec[k]))
        init_cov_chol[k] = np.linalg.cholesky(np.linalg.inv(init_prec[k]))
    eps = rng.standard_normal((T, d))
    y = np.empty((T, d))
    k0 = u[0]
    y[0] = init_mean[k0] + init_cov_chol[k0] @ eps[0]
    for t in range(1, T):
        k = u[t]
        y[t] = dyn_matrix[k] @ y[t - 1] + dyn_offset[k] + cov_chol[k] @ eps[t]
    return y


def extract_components(y_blocks: np.ndarray) -> np.ndarray:
    """First coordinate of each component's state: (N, T, d) -> (T, N)."""
    y_blocks = np.asarray(y_blocks)
    return y_blocks[:, :, 0].T.copy()


def mix_and_noise(
    s: np.ndarray,
    decoder: MlpWeights,
    obs_noise_diag: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Observations x = f(s) + eps with eps ~ N(0, diag(obs_noise_diag))."""
    f_s = decoder_forward(decoder, s)
    noise = rng.standard_normal(f_s.shape) * np.sqrt(obs_noise_diag)
    return f_s + noise, f_s


def default_regime_matrices(d: int, K: int) -> np.ndarray:
    """Per-state dynamics used by the default simulator.

    State 0 is strongly mean-reverting (0.5 * I).  State 1 rotates the
    first two coordinates by 0.3 rad at modulus 0.99, giving slow
    oscillations; extra coordinates decay at 0.5.  States beyond the second
    interpolate the rotation angle, keeping regimes distinct.
    """
    mats = np.zeros((K, d, d))
    mats[0] = 0.5 * np.eye(d)
    for k in range(1, K):
        m = 0.5 * np.eye(d)
        if d >= 2:
            angle = 0.3 * k
            rot = np.array(
                [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
            )
            m[:2, :2] = 0.99 * rot
        else:
            m[0, 0] = -0.99
        mats[k] = m
    return mats


def default_params(config: SimConfig) -> ModelParams:
    """Generative parameters for the default simulated regimes."""
    config.validate()
    n, d, k, m = config.N, config.d, config.K, config.M
    stay = config.stay_prob
    trans_row = np.full((k, k), (1.0 - stay) / max(k - 1, 1))
    np.fill_diagonal(trans_row, stay if k > 1 else 1.0)
    dyn = (
        np.asarray(config.dyn_matrices, dtype=np.float64)
        if config.dyn_matrices is not None
        else default_regime_matrices(d, k)
    )
    if dyn.shape != (k, d, d):
        raise ConfigInvalid(f"dyn_matrices must have shape {(k, d, d)}")
    eye = np.eye(d)
    mixer = init_mlp(
        n,
        m,
        config.mixing_layers,
        config.mixing_hidden,
        substream(config.seed, "simulate/mixing"),
        activation="leaky_tanh",
        column_normalize=True,
    )
    params = ModelParams(
        N=n,
        d=d,
        K=k,
        M=m,
        init_dist=np.tile(np.full(k, 1.0 / k), (n, 1)),
        trans=np.tile(trans_row, (n, 1, 1)),
        init_mean=np.zeros((n, k, d)),
        init_prec=np.tile(eye, (n, k, 1, 1)),
        dyn_matrix=np.tile(dyn, (n, 1, 1, 1)),
        dyn_offset=np.zeros((n, k, d)),
        dyn_prec=np.tile(eye, (n, k, 1, 1)),
        decoder=mixer,
        obs_noise_diag=np.full(m, config.obs_noise),
    )
    params.validate()
    return params


def simulate(config: SimConfig, params: Optional[ModelParams] = None) -> Dataset:
    """Draw a full dataset (observations plus ground truth) from the model."""
    config.validate()
    if params is None:
        params = default_params(config)
    params.validate()
    T, n, d = config.T, params.N, params.d
    u = np.empty((T, n), dtype=np.int64)
    y = np.empty((n, T, d))
    for i in range(n):
        rng_u = substream(config.seed, f"simulate/states/{i}")
        rng_y = substream(config.seed, f"simulate/dynamics/{i}")
        u[:, i] = sample_hmm_chain(params.init_dist[i], params.trans[i], T, rng_u)
        y[i] = sample_slds(
            params.init_mean[i],
            params.init_prec[i],
            params.dyn_matrix[i],
            params.dyn_offset[i],
            params.dyn_prec[i],
            u[:, i],
            rng_y,
        )
    s = extract_components(y)
    x, f_s = mix_and_noise(
        s, params.decoder, params.obs_noise_diag, substream(config.seed, "simulate/noise")
    )
    meta = {
        "T": T,
        "N": n,
        "M": params.M,
        "d": d,
        "K": params.K,
        "mixing_layers": config.mixing_layers,
        "obs_noise": config.obs_noise,
        "stay_prob": config.stay_prob,
    }
    return Dataset(x=x, s=s, u=u, f_s=f_s, seed=config.seed, meta=meta)
