"""Trajectory geometry: PCA planarity, split-point grid search, shell bounds.

The PCA utilities quantify how close a sampling trajectory is to a low-rank
affine subspace.  The grid search measures, per interval, how much moving the
two-evaluation split point away from the geometric midpoint improves agreement
with a high-accuracy reference trajectory.  The remaining functions implement
a scaled-logistic envelope for off-plane deviation, the closed-form shell
radius of the induced zero-drift diffusion, a Monte-Carlo check of that
radius, and a report comparing realized step errors against the resulting
additive bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream
from .schedules import TimeSchedule, _geom
from .score_models import GaussianMixture, eval_model, oracle_solve
from .solvers import SolverKind, step_dpm2, substep
from .trajectory import Trajectory


@dataclass(frozen=True)
class PcaResult:
    """Orthonormal components (rows, descending eigenvalue), eigenvalues, mean."""

    components: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray


def _single_states(traj: Trajectory) -> np.ndarray:
    x = traj.states
    if x.ndim != 2:
        raise ValueError("geometry analyses expect an unbatched trajectory")
    return x


def pca_trajectory(traj: Trajectory) -> PcaResult:
    """Eigen-decompose the sample covariance of the trajectory's nodes.

    Components carry a deterministic sign (first coordinate of meaningful
    magnitude is positive) so repeated runs produce identical output.  An
    all-equal trajectory yields zero eigenvalues, which is a valid result.
    """
    x = _single_states(traj)
    if x.shape[0] < 3:
        raise ValueError("PCA needs at least three nodes")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    for i, v in enumerate(comps):
        idx = np.argmax(np.abs(v) > 1e-12)
        if v[idx] < 0:
            comps[i] = -v
    return PcaResult(components=comps, eigenvalues=evals, mean=mean)


def projection_error(traj: Trajectory, k: int) -> np.ndarray:
    """Per-node relative error of the rank-k reconstruction, ||x - x~|| / ||x||.

    Nodes with zero norm are flagged with NaN.
    """
    x = _single_states(traj)
    d = x.shape[1]
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= dim")
    pca = pca_trajectory(traj)
    basis = pca.components[:k]
    xc = x - pca.mean
    recon = xc @ basis.T @ basis + pca.mean
    norms = np.linalg.norm(x, axis=1)
    err = np.linalg.norm(x - recon, axis=1)
    return np.where(norms > 0, err / np.where(norms > 0, norms, 1.0), np.nan)


def cumulative_variance(traj: Trajectory) -> np.ndarray:
    """Fraction of total variance explained by the top k components, k = 1..d."""
    pca = pca_trajectory(traj)
    cum = np.cumsum(pca.eigenvalues)
    if cum[-1] <= 0:
        return np.ones_like(cum)
    return cum / cum[-1]


def plane_deviations(traj: Trajectory, k: int = 2):
    """Per-node absolute distance from the trajectory's own rank-k subspace.

    Returns (times, deviations); feed these to fit_bound_params to calibrate
    the deviation envelope from trajectory dumps.
    """
    x = _single_states(traj)
    pca = pca_trajectory(traj)
    basis = pca.components[:k]
    xc = x - pca.mean
    recon = xc @ basis.T @ basis + pca.mean
    return traj.times, np.linalg.norm(x - recon, axis=1)


# ---------------------------------------------------------------------------
# Split-point grid search


@dataclass
class AlignmentResult:
    """Greedy grid-search output, one row per interval (descending time).

    alignment[i] = ||x_baseline - x_ref|| - ||x_searched - x_ref|| at the
    interval's target node; positive means the searched split point tracked
    the reference better than the geometric-midpoint baseline.
    """

    target_times: np.ndarray  # (steps,)
    best_r: np.ndarray        # (steps, batch)
    alignment: np.ndarray     # (steps, batch)

    @property
    def mean_alignment(self) -> np.ndarray:
        return self.alignment.mean(axis=-1)

    @property
    def mean_best_r(self) -> np.ndarray:
        return self.best_r.mean(axis=-1)


def _search_step(model, base: SolverKind, x, t_hi, t_lo, r, carry):
    """One interval with split exponent r, following the base solver.

    dpm2 consumes r natively; other solvers are split into two substeps at
    the corresponding intermediate point with neutral scaling.  r = 1
    collapses the split onto the interval bottom, leaving a single substep.
    """
    if base.tag == "dpm2":
        x2, _ = step_dpm2(model, x, t_hi, t_lo, r)
        return x2, None
    if np.all(np.asarray(r) == 1.0):
        x2, _, carry = substep(model, base, x, t_hi, t_lo, carry)
        return x2, carry
    eps1 = eval_model(model, x, t_hi).epsilon
    s = _geom(t_lo, t_hi, r)
    x_s, _, carry = substep(model, base, x, t_hi, s, carry, eps_cur=eps1)
    x2, _, carry = substep(model, base, x_s, s, t_lo, carry)
    return x2, carry


def grid_align(model, base: SolverKind, schedule: TimeSchedule, grid, oracle: Trajectory) -> AlignmentResult:
    """Greedy per-interval search of the split exponent against a reference.

    The baseline fixes r = 0.5 everywhere; the searched trajectory picks, at
    each interval and per batch element, the grid value whose step lands
    closest to the reference node, then continues from its own choice.
    """
    grid = [float(r) for r in grid]
    if not grid:
        raise ValueError("empty grid")
    for r in grid:
        if not 0 < r <= 1:
            raise ValueError("grid values must lie in (0, 1]")
    if oracle.times.shape[0] != schedule.n or not np.allclose(
        oracle.times, schedule.times[::-1], rtol=1e-12, atol=0.0
    ):
        raise ValueError("reference trajectory was not produced on this schedule")

    ts = schedule.times[::-1]
    x0 = np.asarray(oracle.nodes[0][1], dtype=np.float64)
    batched = x0.ndim == 2
    n_b = x0.shape[0] if batched else 1
    steps = schedule.n - 1

    x_base, carry_base = x0, None
    x_sea, carry_sea = x0, None
    best_r = np.zeros((steps, n_b))
    alignment = np.zeros((steps, n_b))
    for i in range(steps):
        t_hi, t_lo = float(ts[i]), float(ts[i + 1])
        y = np.asarray(oracle.nodes[i + 1][1], dtype=np.float64)
        x_base, carry_base = _search_step(model, base, x_base, t_hi, t_lo, 0.5, carry_base)
        cands = [_search_step(model, base, x_sea, t_hi, t_lo, r, carry_sea) for r in grid]
        dists = np.stack([np.linalg.norm(xc - y, axis=-1) for xc, _ in cands])
        pick = np.argmin(dists, axis=0)
        if batched:
            x_sea = np.stack([xc for xc, _ in cands])[pick, np.arange(n_b)]
            carry_sea = _gather_carry([c for _, c in cands], pick, n_b)
        else:
            x_sea, carry_sea = cands[int(pick)]
        d_base = np.linalg.norm(x_base - y, axis=-1)
        d_sea = np.linalg.norm(x_sea - y, axis=-1)
        best_r[i] = np.array(grid)[pick]
        alignment[i] = d_base - d_sea
    return AlignmentResult(target_times=np.array(ts[1:]), best_r=best_r, alignment=alignment)


def _gather_carry(carries, pick, n_b):
    """Per-sample selection among candidate solver-history states."""
    first = carries[0]
    if first is None:
        return None
    idx = np.arange(n_b)
    if isinstance(first, tuple):   # (t_prev, denoised_prev)
        t_parts = [np.broadcast_to(np.asarray(c[0], dtype=np.float64), (n_b,)) for c in carries]
        d_parts = [c[1] for c in carries]
        return (np.stack(t_parts)[pick, idx], np.stack(d_parts)[pick, idx])
    if isinstance(first, list):
        lengths = {len(c) for c in carries}
        if len(lengths) != 1:
            raise ValueError(
                "split search mixes degenerate (r=1) and interior candidates for a "
                "history-based solver; use a grid inside (0, 1) instead"
            )
        return [np.stack([c[j] for c in carries])[pick, idx] for j in range(len(first))]
    raise TypeError(f"unsupported carry type {type(first)!r}")


def write_alignment_csv(result: AlignmentResult, path) -> None:
    with open(path, "w") as f:
        f.write("step,t,mean_best_r,mean_alignment\n")
        for i, (t, r, al) in enumerate(
            zip(result.target_times, result.mean_best_r, result.mean_alignment)
        ):
            f.write(f"{i},{float(t)!r},{float(r)!r},{float(al)!r}\n")


# ---------------------------------------------------------------------------
# Off-plane deviation envelope and shell concentration


@dataclass(frozen=True)
class BoundParams:
    """Scaled-logistic envelope parameters and the ambient dimension."""

    a: float
    b: float
    d: int

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        if self.d < 1:
            raise ValueError("d must be a positive integer")

    @classmethod
    def default(cls, d: int) -> "BoundParams":
        return cls(a=math.sqrt(3.0 * d) / 15.0, b=3.0, d=d)


def logistic_bound(params: BoundParams, tau) -> np.ndarray:
    """f(tau) = a * (sigmoid(b tau) - 1/2): zero at 0, increasing, -> a/2."""
    tau = np.asarray(tau, dtype=np.float64)
    return params.a * 0.5 * np.tanh(0.5 * params.b * tau)


def shell_radius(params: BoundParams, s: float, t: float) -> float:
    """Concentration radius of the zero-drift diffusion driven by f/sqrt(d).

    r(s, t) = (a/sqrt(b)) * sqrt([1/(1+e^u)] from bs to bt + (b/4)(t - s)).
    """
    if not 0 < s < t:
        raise ValueError("need 0 < s < t")

    def antiderivative(u):
        # 1/(1 + e^u), evaluated stably
        return 0.5 * (1.0 - math.tanh(0.5 * u))

    bracket = antiderivative(params.b * t) - antiderivative(params.b * s)
    total = bracket + 0.25 * params.b * (t - s)
    return params.a / math.sqrt(params.b) * math.sqrt(total)


def shell_sigma2(params: BoundParams, s: float, t: float) -> float:
    """Per-coordinate variance of the diffusion endpoint, r^2 / d."""
    r = shell_radius(params, s, t)
    return r * r / params.d


@dataclass(frozen=True)
class ShellReport:
    mean_norm: float
    rel_std: float
    radius: float
    trials: int
    substeps: int


def mc_shell_check(params: BoundParams, s: float, t: float, trials: int, seed: int, substeps: int = 200) -> ShellReport:
    """Euler-Maruyama simulation of the zero-drift diffusion from t down to s.

    Reports the sample mean of the endpoint norm and its relative spread, to
    be compared against shell_radius.
    """
    if not 0 < s < t:
        raise ValueError("need 0 < s < t")
    if trials < 1 or substeps < 1:
        raise ValueError("trials and substeps must be positive")
    rng = stream(seed, "shell")
    taus = np.linspace(t, s, substeps + 1)
    z = np.zeros((trials, params.d))
    for k in range(substeps):
        g = float(logistic_bound(params, taus[k])) / math.sqrt(params.d)
        dt = abs(float(taus[k + 1] - taus[k]))
        z += g * math.sqrt(dt) * rng.standard_normal((trials, params.d))
    norms = np.linalg.norm(z, axis=1)
    mean = float(norms.mean())
    rel = float(norms.std() / mean) if mean > 0 else 0.0
    return ShellReport(
        mean_norm=mean,
        rel_std=rel,
        radius=shell_radius(params, s, t),
        trials=trials,
        substeps=substeps,
    )


def fit_bound_params(taus, deviations, d: int, b_grid=None) -> BoundParams:
    """Least-squares fit of the logistic envelope to (time, deviation) samples.

    For each candidate b the optimal a is closed-form; the (a, b) pair with
    the smallest residual wins.
    """
    taus = np.asarray(taus, dtype=np.float64)
    dev = np.asarray(deviations, dtype=np.float64)
    if b_grid is None:
        b_grid = np.geomspace(0.1, 30.0, 60)
    best = None
    for b in b_grid:
        g = 0.5 * np.tanh(0.5 * b * taus)
        denom = float(g @ g)
        if denom <= 0:
            continue
        a = float(g @ dev) / denom
        if a <= 0:
            continue
        resid = float(np.sum((a * g - dev) ** 2))
        if best is None or resid < best[0]:
            best = (resid, a, float(b))
    if best is None:
        raise ValueError("could not fit a positive envelope to the data")
    return BoundParams(a=best[1], b=best[2], d=d)


# ---------------------------------------------------------------------------
# Step-error bound report


@dataclass
class BoundStepRow:
    t_hi: float
    t_lo: float
    mean_actual: float
    max_actual: float
    bound: float
    mean_ratio: float
    violations: int


@dataclass
class BoundReport:
    rows: list
    batch: int
    violation_rate: float


def bound_report(model: GaussianMixture, schedule: TimeSchedule, params_trained, boundcfg: BoundParams,
                 batch: int = 64, seed: int = 0, substeps: int = 128) -> BoundReport:
    """Compare realized per-interval step errors against f(s) + f(t) + r(s, t).

    For every interval the learned single step is taken from the reference
    state at the interval top and compared with the reference state at the
    bottom.  Report-only: whether the envelope holds depends on the model.
    """
    from .amed import amed_step  # local import: geometry stays usable without the predictor

    rng = stream(seed, "bound")
    x_T = rng.standard_normal((batch, model.dim)) * schedule.t_max
    ref = oracle_solve(model, x_T, schedule, substeps=substeps)
    ts = schedule.times[::-1]
    rows = []
    total_viol = 0
    for i in range(schedule.n - 1):
        t_hi, t_lo = float(ts[i]), float(ts[i + 1])
        x_a, _ = amed_step(model, params_trained, ref.nodes[i][1], t_hi, t_lo)
        actual = np.linalg.norm(ref.nodes[i + 1][1] - x_a, axis=-1)
        bound = (
            float(logistic_bound(boundcfg, t_lo))
            + float(logistic_bound(boundcfg, t_hi))
            + shell_radius(boundcfg, t_lo, t_hi)
        )
        viol = int(np.sum(actual > bound))
        total_viol += viol
        rows.append(
            BoundStepRow(
                t_hi=t_hi,
                t_lo=t_lo,
                mean_actual=float(actual.mean()),
                max_actual=float(actual.max()),
                bound=bound,
                mean_ratio=float((actual / bound).mean()),
                violations=viol,
            )
        )
    rate = total_viol / (batch * (schedule.n - 1))
    return BoundReport(rows=rows, batch=batch, violation_rate=rate)
