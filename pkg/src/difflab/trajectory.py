"""Sampling trajectories and their CSV representation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """States recorded at every schedule node, in descending time order.

    nodes   -- list of (t, x); x may carry a leading batch dimension.
    evals   -- the (t_eval, eps) model evaluations consumed, in call order.
    nfe     -- per-trajectory count of model evaluations (an analytically
               substituted first evaluation counts as zero).
    """

    nodes: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    nfe: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.nodes])

    @property
    def states(self) -> np.ndarray:
        return np.stack([x for _, x in self.nodes])

    @property
    def endpoint(self) -> np.ndarray:
        return self.nodes[-1][1]

    def state_at(self, t: float, atol: float = 1e-12) -> np.ndarray:
        for tn, x in self.nodes:
            if abs(tn - t) <= atol * max(1.0, abs(t)):
                return x
        raise KeyError(f"no node at t={t!r}")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per node, header t,x_0..x_{d-1}, full double precision."""
    d = np.asarray(traj.nodes[0][1]).shape[-1]
    if np.asarray(traj.nodes[0][1]).ndim != 1:
        raise ValueError("CSV export expects a single (unbatched) trajectory")
    with open(path, "w") as f:
        f.write("t," + ",".join(f"x_{i}" for i in range(d)) + "\n")
        for t, x in traj.nodes:
            f.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in x) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    """Read a node-only trajectory written by write_trajectory_csv."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: not a trajectory CSV")
        nodes = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            vals = [float(v) for v in line.split(",")]
            nodes.append((vals[0], np.array(vals[1:], dtype=np.float64)))
    return Trajectory(nodes=nodes, evals=[], nfe=0)
