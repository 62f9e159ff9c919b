"""Linear Kalman filter engine over 6-dimensional lateral states.

State ordering is fixed as (x, y, vx, vy, ax, ay): position east/north [m],
velocity [m/s], and acceleration [m/s^2] in the horizontal plane. The engine
is a set of pure functions over (state, covariance) pairs, parameterized by
an LkfModel; both the neighbor tracker and the self-state estimator run on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATE_DIM = 6


class NumericalFaultError(RuntimeError):
    """Non-finite filter values or a degenerate innovation covariance."""


def _require_finite(name: str, **arrays: np.ndarray) -> None:
    for label, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalFaultError(f"{name}: non-finite entries in {label}")


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return (p + p.T) / 2.0


@dataclass
class LkfModel:
    """Discrete LTI model: x_k = A x_{k-1} + B u_k + w_k, w_k ~ N(0, Q).

    Args:
        a: 6x6 state matrix.
        b: 6x2 input matrix, or None when the model has no input.
        q: 6x6 diagonal process covariance.
        dt: step duration in seconds.
    """

    a: np.ndarray
    b: np.ndarray | None
    q: np.ndarray
    dt: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=float)
            if self.b.shape != (STATE_DIM, 2):
                raise ValueError(f"B must be 6x2, got {self.b.shape}")
            if not self.b.any():
                self.b = None
        if self.a.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"A must be 6x6, got {self.a.shape}")
        if self.q.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"Q must be 6x6, got {self.q.shape}")
        if np.any(self.q != np.diag(np.diag(self.q))):
            raise ValueError("Q must be diagonal")
        if np.any(np.diag(self.q) < 0.0):
            raise ValueError("Q diagonal entries must be >= 0")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")


@dataclass
class Measurement:
    """A 2-channel measurement z = H x + v, v ~ N(0, R), taken at `stamp`.

    H rows must each select exactly one state component (one entry equal
    to 1, the rest 0); R must be symmetric positive definite.
    """

    z: np.ndarray
    h: np.ndarray
    r: np.ndarray
    stamp: float = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.z.shape != (2,) or self.h.shape != (2, STATE_DIM):
            raise ValueError("measurement must be 2-vector with 2x6 H")
        for row in self.h:
            nonzero = row[row != 0.0]
            if nonzero.size != 1 or nonzero[0] != 1.0:
                raise ValueError(
                    "each H row must have exactly one nonzero entry equal to 1"
                )
        if self.r.shape != (2, 2) or not np.allclose(self.r, self.r.T):
            raise ValueError("R must be 2x2 symmetric")
        if np.linalg.eigvalsh(self.r).min() <= 0.0:
            raise ValueError("R must be positive definite")


def constant_acceleration_model(
    dt: float, q_diag: np.ndarray | list[float]
) -> LkfModel:
    """Decoupled constant-acceleration kinematic model (no input)."""
    a = np.eye(STATE_DIM)
    a[0, 2] = a[1, 3] = a[2, 4] = a[3, 5] = dt
    a[0, 4] = a[1, 5] = dt * dt / 2.0
    return LkfModel(a=a, b=None, q=np.diag(np.asarray(q_diag, dtype=float)), dt=dt)


def predict(
    state: np.ndarray,
    cov: np.ndarray,
    model: LkfModel,
    control: np.ndarray | None = None,
    name: str = "lkf",
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate (state, covariance) one step through the model.

    `control` must be given exactly when the model carries an input matrix.
    """
    _require_finite(name, state=state, cov=cov)
    if (control is None) != (model.b is None):
        if model.b is None:
            raise ValueError(f"{name}: control given but model has no input matrix")
        raise ValueError(f"{name}: model has an input matrix but no control given")
    x = model.a @ state
    if model.b is not None:
        x = x + model.b @ np.asarray(control, dtype=float)
    p = _symmetrize(model.a @ cov @ model.a.T + model.q)
    return x, p


def correct(
    state: np.ndarray,
    cov: np.ndarray,
    meas: Measurement,
    name: str = "lkf",
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one measurement: standard gain update, simple covariance form."""
    _require_finite(name, state=state, cov=cov)
    ph_t = cov @ meas.h.T
    s = meas.h @ ph_t + meas.r
    try:
        # K = P H^T S^-1, computed via a solve on S^T (S is symmetric).
        gain = np.linalg.solve(s, ph_t.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFaultError(f"{name}: singular innovation covariance") from exc
    if not np.all(np.isfinite(gain)):
        raise NumericalFaultError(f"{name}: non-finite Kalman gain")
    x = state + gain @ (meas.z - meas.h @ state)
    p = _symmetrize(cov - gain @ meas.h @ cov)
    return x, p


def nees(
    state_est: np.ndarray,
    cov: np.ndarray,
    state_true: np.ndarray,
    name: str = "lkf",
) -> float:
    """Normalized estimation error squared e^T P^-1 e; the filter
    consistency statistic used to tune Q and R."""
    e = np.asarray(state_est, dtype=float) - np.asarray(state_true, dtype=float)
    try:
        sol = np.linalg.solve(cov, e)
    except np.linalg.LinAlgError as exc:
        raise NumericalFaultError(f"{name}: singular covariance in NEES") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalFaultError(f"{name}: non-finite NEES solve")
    return float(e @ sol)


@dataclass
class FilterState:
    """A (state, covariance) pair owned by one filter instance."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
