"""Analytic score models: isotropic Gaussian mixtures with closed-form predictions.

Under the variance-exploding convention used throughout (noise scale equal to
time, zero drift), perturbing an isotropic mixture component with standard
deviation s by noise level t gives another isotropic Gaussian with variance
s^2 + t^2.  The marginal score is therefore available in closed form, and with
it the noise prediction eps(x, t) = -t * score and the data prediction
denoised = x - t * eps.  Each evaluation also exposes a feature vector (the
posterior component responsibilities, zero-padded to a fixed width) playing
the role a network's bottleneck activation would play for a learned model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory

# Width of the per-evaluation feature vector.  Responsibilities of the
# perturbed mixture are written into the first K slots, the rest stay zero.
FEATURE_DIM = 16


class DivergenceError(RuntimeError):
    """Numerical integration or sampling produced a non-finite state."""


def _lock(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture sum_k w_k N(mu_k, s_k^2 I).

    Immutable after construction; evaluations are pure functions of (x, t).
    ``zero_feature=True`` makes every evaluation report an all-zero feature
    vector (the ablation that removes state information from downstream
    predictors) without touching the scores themselves.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    zero_feature: bool = False

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        s = np.atleast_1d(np.asarray(self.stds, dtype=np.float64))
        if w.ndim != 1 or s.ndim != 1 or m.ndim != 2:
            raise ValueError("weights and stds must be 1-D, means 2-D (K, d)")
        if not (w.shape[0] == m.shape[0] == s.shape[0]):
            raise ValueError("weights, means and stds must agree on K")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(m)) or not np.all(np.isfinite(s)):
            raise ValueError("mixture parameters must be finite")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if np.any(s <= 0):
            raise ValueError("stds must be strictly positive")
        object.__setattr__(self, "weights", _lock(w))
        object.__setattr__(self, "means", _lock(m))
        object.__setattr__(self, "stds", _lock(s))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """Mixture mean sum_k w_k mu_k."""
        return self.weights @ self.means


@dataclass(frozen=True)
class ModelEval:
    """One model evaluation: noise prediction, data prediction, feature vector.

    The identity denoised = x - t * epsilon holds by construction (same
    floating-point expression), and feature is a probability vector over
    mixture components padded to FEATURE_DIM.
    """

    epsilon: np.ndarray
    denoised: np.ndarray
    feature: np.ndarray


def eval_model(model: GaussianMixture, x, t) -> ModelEval:
    """Evaluate the closed-form noise prediction at state x and time t.

    x may carry leading batch dimensions, shape (..., d).  t is a positive
    scalar or an array broadcastable against the batch dimensions, which lets
    one vectorized call use a different time per batch element.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"state has dim {x.shape[-1]}, model has dim {model.dim}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(t)):
        raise ValueError("non-finite input to model evaluation")
    if np.any(t <= 0):
        raise ValueError("time must be strictly positive")

    var = model.stds**2 + t[..., None] ** 2            # (..., K)
    diff = x[..., None, :] - model.means               # (..., K, d)
    # Log-densities of the perturbed components, constants independent of k dropped.
    logp = (
        np.log(model.weights)
        - 0.5 * np.einsum("...kd,...kd->...k", diff, diff) / var
        - 0.5 * model.dim * np.log(var)
    )
    logp = logp - logp.max(axis=-1, keepdims=True)     # log-sum-exp stabilization
    resp = np.exp(logp)
    resp /= resp.sum(axis=-1, keepdims=True)           # (..., K)

    eps = t[..., None] * np.einsum("...k,...kd->...d", resp / var, diff)
    denoised = x - t[..., None] * eps

    k = min(model.n_components, FEATURE_DIM)
    feature = np.zeros(resp.shape[:-1] + (FEATURE_DIM,))
    if not model.zero_feature:
        feature[..., :k] = resp[..., :k]
    return ModelEval(epsilon=eps, denoised=denoised, feature=feature)


def exact_trajectory(model: GaussianMixture, x_T, t: float, T: float) -> np.ndarray:
    """Exact flow-ODE solution for a single-Gaussian model.

    For K=1 the noise prediction is linear in x and the ODE integrates to
    x(t) = mu + (x_T - mu) * sqrt((s^2 + t^2) / (s^2 + T^2)).
    """
    if model.n_components != 1:
        raise ValueError("exact solution only available for a single-component model")
    if not 0 < t <= T:
        raise ValueError("need 0 < t <= T")
    mu = model.means[0]
    s = model.stds[0]
    scale = np.sqrt((s * s + t * t) / (s * s + T * T))
    return mu + (np.asarray(x_T, dtype=np.float64) - mu) * scale


def _rk4_step(model: GaussianMixture, x, t0: float, t1: float):
    h = t1 - t0
    k1 = eval_model(model, x, t0).epsilon
    k2 = eval_model(model, x + 0.5 * h * k1, t0 + 0.5 * h).epsilon
    k3 = eval_model(model, x + 0.5 * h * k2, t0 + 0.5 * h).epsilon
    k4 = eval_model(model, x + h * k3, t1).epsilon
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def oracle_solve(model: GaussianMixture, x_T, schedule, substeps: int = 128) -> Trajectory:
    """Ground-truth reference trajectory via classical RK4.

    Integrates the flow ODE from the top of the schedule down to its floor,
    splitting every schedule interval into ``substeps`` uniform sub-intervals,
    and records the state at every schedule node.  Deterministic; strictly
    more accurate than any solver under study at the default setting.
    """
    if substeps < 32:
        raise ValueError("oracle requires substeps >= 32 per interval")
    ts = schedule.times[::-1]
    x = np.asarray(x_T, dtype=np.float64)
    nodes = [(float(ts[0]), x)]
    for i in range(len(ts) - 1):
        t_hi, t_lo = float(ts[i]), float(ts[i + 1])
        grid = np.linspace(t_hi, t_lo, substeps + 1)
        for k in range(substeps):
            x = _rk4_step(model, x, grid[k], grid[k + 1])
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"oracle diverged in interval [{t_lo:g}, {t_hi:g}]")
        nodes.append((t_lo, x))
    return Trajectory(nodes=nodes, evals=[], nfe=4 * substeps * (len(ts) - 1))


def sample_data(model: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n exact samples from the unperturbed mixture."""
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dim))
    return model.means[comp] + model.stds[comp, None] * z


def load_model(path) -> GaussianMixture:
    """Load a mixture from a JSON config: {"components": [{weight, mean, std}, ...]}.

    Weights are normalized to sum to one; the dimension is inferred from the
    means.  An optional top-level "zero_feature" flag is honored.
    """
    with open(path) as f:
        cfg = json.load(f)
    comps = cfg["components"]
    if not comps:
        raise ValueError(f"{path}: no components")
    w = np.array([c["weight"] for c in comps], dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError(f"{path}: weights must be positive")
    w = w / w.sum()
    means = np.array([np.atleast_1d(c["mean"]) for c in comps], dtype=np.float64)
    stds = np.array([c["std"] for c in comps], dtype=np.float64)
    return GaussianMixture(
        weights=w, means=means, stds=stds, zero_feature=bool(cfg.get("zero_feature", False))
    )


def save_model(model: GaussianMixture, path) -> None:
    cfg = {
        "components": [
            {"weight": float(w), "mean": [float(v) for v in mu], "std": float(s)}
            for w, mu, s in zip(model.weights, model.means, model.stds)
        ],
        "zero_feature": model.zero_feature,
    }
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2)
        f.write("\n")
