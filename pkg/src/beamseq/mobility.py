"""Straight-line constant-acceleration vehicle trajectories over the grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import GridSpec, Scene

__all__ = ["Trajectory", "sample_trajectory", "TrajectoryError"]


class TrajectoryError(RuntimeError):
    """Could not place a trajectory inside the grid within the retry budget."""


@dataclass(frozen=True)
class Trajectory:
    """position(t) = start + heading_unit * (v0*t + a*t^2/2), sampled per slot."""

    start: tuple[float, float]
    heading: float
    initial_speed: float
    acceleration: float
    num_slots: int
    dt: float = 1e-3

    def positions(self) -> np.ndarray:
        """(num_slots, 2) positions, slot k at time k*dt."""
        t = self.dt * np.arange(self.num_slots)
        s = self.initial_speed * t + 0.5 * self.acceleration * t * t
        direction = np.array([math.cos(self.heading), math.sin(self.heading)])
        return np.asarray(self.start) + s[:, None] * direction[None, :]


def sample_trajectory(
    scene: Scene,
    rng: np.random.Generator,
    num_slots: int,
    speed_range: tuple[float, float] = (10.0, 15.0),
    accel_range: tuple[float, float] = (-3.0, 3.0),
    dt: float = 1e-3,
    max_retries: int = 1000,
) -> Trajectory:
    """Draw start/heading/speed/acceleration so every slot position stays on
    the grid. Bounded retries; failure raises instead of truncating."""
    grid: GridSpec = scene.grid
    x_lo = grid.origin[0]
    x_hi = grid.origin[0] + (grid.n_x - 1) * grid.spacing
    y_lo = grid.origin[1]
    y_hi = grid.origin[1] + (grid.n_y - 1) * grid.spacing
    for _ in range(max_retries):
        start = (rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi))
        heading = rng.uniform(0.0, 2.0 * np.pi)
        v0 = rng.uniform(*speed_range)
        accel = rng.uniform(*accel_range)
        traj = Trajectory(
            start=start,
            heading=heading,
            initial_speed=v0,
            acceleration=accel,
            num_slots=num_slots,
            dt=dt,
        )
        pos = traj.positions()
        if (
            pos[:, 0].min() >= x_lo
            and pos[:, 0].max() <= x_hi
            and pos[:, 1].min() >= y_lo
            and pos[:, 1].max() <= y_hi
        ):
            return traj
    raise TrajectoryError(
        f"no in-grid trajectory found after {max_retries} retries "
        f"(grid {grid.extent}, {num_slots} slots)"
    )
