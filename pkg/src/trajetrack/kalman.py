"""Constant-velocity Kalman filter over centroids (state cx, cy, vx, vy)."""
from __future__ import annotations

import numpy as np

from .core import Centroid

F = np.array([[1.0, 0.0, 1.0, 0.0],
              [0.0, 1.0, 0.0, 1.0],
              [0.0, 0.0, 1.0, 0.0],
              [0.0, 0.0, 0.0, 1.0]])
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])

PROCESS_NOISE = (1e-2, 1e-2, 1e-4, 1e-4)
OBSERVATION_NOISE = (1.0, 1.0)
INIT_VELOCITY_VAR = 1e3


def kalman_predict(x, P, Q):
    return F @ x, F @ P @ F.T + Q


def kalman_update(x, P, z, R):
    y = np.asarray(z, dtype=float) - H @ x
    S = H @ P @ H.T + R
    # pinv keeps the zero-noise limit well defined
    K = P @ H.T @ np.linalg.pinv(S)
    x = x + K @ y
    I_KH = np.eye(4) - K @ H
    # Joseph form stays symmetric PSD
    P = I_KH @ P @ I_KH.T + K @ R @ K.T
    return x, 0.5 * (P + P.T)


class KalmanTrack:
    """Filter for one track; ``predict`` commits a time step.

    The first observation fixes the position with an uninformative
    velocity. The second one re-initialises the state by two-point
    differencing (velocity = z2 - z1, covariance derived from R); after
    that the filter runs the ordinary predict/update cycle.
    """

    def __init__(self, first: Centroid, process_noise=PROCESS_NOISE,
                 observation_noise=OBSERVATION_NOISE, init_velocity_var=INIT_VELOCITY_VAR):
        self.Q = np.diag(process_noise).astype(float)
        self.R = np.diag(observation_noise).astype(float)
        self.x = np.array([first.x, first.y, 0.0, 0.0])
        self.P = np.diag([observation_noise[0], observation_noise[1],
                          init_velocity_var, init_velocity_var]).astype(float)
        self.updates = 1
        self._first = np.array([first.x, first.y])
        self._steps_since_first = 0

    def peek(self) -> Centroid:
        nx = F @ self.x
        return Centroid(float(nx[0]), float(nx[1]))

    def predict(self) -> Centroid:
        self.x, self.P = kalman_predict(self.x, self.P, self.Q)
        self._steps_since_first += 1
        return Centroid(float(self.x[0]), float(self.x[1]))

    def update(self, c: Centroid) -> None:
        z = np.array([c.x, c.y])
        if self.updates == 1 and self._steps_since_first > 0:
            dt = self._steps_since_first
            r = np.diag(self.R)
            self.x = np.concatenate([z, (z - self._first) / dt])
            self.P = np.zeros((4, 4))
            self.P[[0, 1], [0, 1]] = r
            self.P[[2, 3], [2, 3]] = 2 * r / dt ** 2
            self.P[[0, 1], [2, 3]] = self.P[[2, 3], [0, 1]] = r / dt
        else:
            self.x, self.P = kalman_update(self.x, self.P, z, self.R)
        self.updates += 1

    @property
    def position(self) -> Centroid:
        return Centroid(float(self.x[0]), float(self.x[1]))
