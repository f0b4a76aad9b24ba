"""Gaussians in natural-parameter form and the block operations chains need.

A Gaussian potential here is exp(<h, y> + y' J y + logc) with J symmetric
and -2J positive definite when the potential is proper.  All message
passing composes potentials additively in (h, J) and tracks the scalar
``logc`` explicitly: the variational objective needs exact normalizers, so
no "proportional to" shortcuts are taken anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, ShapeMismatch
from .linalg import cholesky, inv_spd, logdet_spd, solve_spd

LOG_2PI = np.log(2.0 * np.pi)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class GaussianNat:
    """Gaussian potential exp(<h,y> + y'Jy + logc) in natural parameters."""

    h: np.ndarray
    J: np.ndarray
    logc: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=np.float64))
        object.__setattr__(self, "J", _sym(np.asarray(self.J, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    def __add__(self, other: "GaussianNat") -> "GaussianNat":
        """Product of potentials = sum of natural parameters."""
        return GaussianNat(self.h + other.h, self.J + other.J, self.logc + other.logc)

    def evaluate(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=np.float64)
        return float(self.h @ y + y @ self.J @ y + self.logc)


@dataclass(frozen=True)
class CategoricalNat:
    """Unnormalized categorical potential as a vector of log-weights."""

    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if not np.all(np.isfinite(lw)):
            raise ValueError("categorical log-weights must be finite")
        object.__setattr__(self, "log_weights", lw)


def nat_from_moments(mean: np.ndarray, cov: np.ndarray) -> GaussianNat:
    """Natural parameters of N(mean, cov): h = cov^-1 mean, J = -cov^-1 / 2."""
    mean = np.asarray(mean, dtype=np.float64)
    prec = inv_spd(np.asarray(cov, dtype=np.float64))
    return GaussianNat(prec @ mean, -0.5 * prec)


def moments_from_nat(g: GaussianNat) -> tuple[np.ndarray, np.ndarray]:
    """(mean, cov) of the normalized density.  cov = (-2J)^-1, mean = cov h."""
    cov = inv_spd(-2.0 * g.J)
    return cov @ g.h, cov


def log_normalizer(g: GaussianNat) -> float:
    """log of the Gaussian integral of exp(<h,y> + y'Jy) over R^d.

    Does not include ``g.logc``; callers that carry constants add it.
    """
    prec = -2.0 * g.J
    half_hph = 0.5 * float(g.h @ solve_spd(prec, g.h))
    return half_hph + 0.5 * (g.dim * LOG_2PI - logdet_spd(prec))


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy of N(mean, cov)."""
    d = cov.shape[0]
    return 0.5 * (d * (LOG_2PI + 1.0) + logdet_spd(cov))


def conditional_log_normalizer(b: np.ndarray, prec: np.ndarray) -> float:
    """The additive constant turning a pair/init potential into a density.

    For p(y) = N(y; b, prec^-1) written as exp(<h,y> + y'Jy - logZ), this
    returns logZ = b'(prec)b/2 - logdet(prec)/2 + d log(2 pi)/2.
    """
    b = np.asarray(b, dtype=np.float64)
    d = b.shape[0]
    return float(0.5 * b @ prec @ b - 0.5 * logdet_spd(prec) + 0.5 * d * LOG_2PI)


def init_potential(b_init: np.ndarray, prec_init: np.ndarray) -> GaussianNat:
    """Potential over y_1 equal (including constant) to log N(y_1; b, prec^-1)."""
    prec_init = np.asarray(prec_init, dtype=np.float64)
    return GaussianNat(
        prec_init @ np.asarray(b_init, dtype=np.float64),
        -0.5 * prec_init,
        -conditional_log_normalizer(b_init, prec_init),
    )


def pair_potential(B: np.ndarray, b: np.ndarray, Q: np.ndarray) -> GaussianNat:
    """Potential over the stacked pair (y_prev, y_cur) for one transition.

    Evaluating the potential (with its logc) at (y, y') equals
    log N(y'; B y + b, Q^-1) for all y, y'.
    """
    B = np.asarray(B, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    d = b.shape[0]
    if B.shape != (d, d) or Q.shape != (d, d):
        raise ShapeMismatch(
            f"pair_potential dims disagree: B{B.shape} b{b.shape} Q{Q.shape}"
        )
    cholesky(Q)  # validate SPD up front
    QB = Q @ B
    J = np.zeros((2 * d, 2 * d))
    J[:d, :d] = B.T @ QB
    J[:d, d:] = -QB.T
    J[d:, :d] = -QB
    J[d:, d:] = Q
    h = np.concatenate([-B.T @ (Q @ b), Q @ b])
    return GaussianNat(h, -0.5 * J, -conditional_log_normalizer(b, Q))


def block_marginalize(joint: GaussianNat, incoming: GaussianNat) -> GaussianNat:
    """Integrate the first block of a stacked-pair potential.

    ``joint`` lives on (y1, y2) with equal block sizes; ``incoming`` lives on
    y1.  Returns the exact natural parameters of integral exp(joint +
    incoming) dy1 as a potential over y2, with the log-constant absorbed
    during elimination accumulated into ``logc``.
    """
    d2 = joint.dim
    if d2 % 2 != 0:
        raise ShapeMismatch("joint potential must stack two equal blocks")
    d = d2 // 2
    if incoming.dim != d:
        raise ShapeMismatch("incoming message dimension must match the first block")
    h1 = joint.h[:d] + incoming.h
    h2 = joint.h[d:]
    J11 = joint.J[:d, :d] + incoming.J
    J12 = joint.J[:d, d:]
    J22 = joint.J[d:, d:]
    prec1 = -2.0 * J11
    try:
        sol_h = solve_spd(prec1, h1)
        sol_J = solve_spd(prec1, J12)
    except NotPositiveDefinite as err:
        raise NotPositiveDefinite(f"improper intermediate message: {err}") from None
    h_out = h2 + 2.0 * (J12.T @ sol_h)
    J_out = J22 + 2.0 * (J12.T @ sol_J)
    logc = (
        joint.logc
        + incoming.logc
        + 0.5 * float(h1 @ sol_h)
        + 0.5 * (d * LOG_2PI - logdet_spd(prec1))
    )
    return GaussianNat(h_out, J_out, logc)
