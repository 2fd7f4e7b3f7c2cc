"""Baseline ODE solvers under a single stepping interface.

Every solver advances the flow ODE dx/dt = eps(x, t) from a higher time t_hi
to a lower time t_lo.  Step functions return ``(x_next, evals)`` where evals
lists the (t, eps) model evaluations performed inside the step.  Two hooks
exist for composition: ``eps_cur`` injects a precomputed (or analytically
substituted) slope at the current state, and ``scale`` multiplies the step's
direction term, which is how a learned per-step rescaling wraps a base solver.
Times may be scalars or per-sample arrays broadcast against a batched state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedules import _geom
from .score_models import DivergenceError, GaussianMixture, eval_model
from .trajectory import Trajectory

SOLVER_TAGS = ("euler_ddim", "heun_edm", "dpm2", "ipndm", "dpmpp_2m")

# Classical uniform-grid Adams-Bashforth weights by order.
_AB_COEFFS = {
    1: (1.0,),
    2: (3.0 / 2.0, -1.0 / 2.0),
    3: (23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0),
    4: (55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0),
}


@dataclass(frozen=True)
class SolverKind:
    """Solver selector: tag plus per-family options.

    r      -- intermediate-point exponent for dpm2 (r=0.5 is the default
              geometry, r=1 degenerates to the Heun step).
    order  -- maximum history order for ipndm.
    afs    -- replace the first model evaluation of a run by the analytic
              initial direction x/t, saving one evaluation.
    """

    tag: str
    r: float = 0.5
    order: int = 4
    afs: bool = False

    def __post_init__(self):
        if self.tag not in SOLVER_TAGS:
            raise ValueError(f"unknown solver tag {self.tag!r}")
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.order not in (1, 2, 3, 4):
            raise ValueError("order must be in 1..4")

    @property
    def evals_per_interval(self) -> int:
        return 2 if self.tag in ("heun_edm", "dpm2") else 1

    def label(self) -> str:
        if self.tag == "dpm2" and self.r != 0.5:
            return f"dpm2(r={self.r:g})"
        if self.tag == "ipndm" and self.order != 4:
            return f"ipndm({self.order})"
        return self.tag


@dataclass(frozen=True)
class StepPlan:
    """Intermediate times and scaling factors consumed by one composite step."""

    intermediates: tuple
    scales: tuple
    time_scales: tuple | None = None

    def validate(self, t_hi, t_lo) -> None:
        for s in self.intermediates:
            if not (np.all(np.asarray(s) > t_lo) and np.all(np.asarray(s) < t_hi)):
                raise ValueError("intermediate time must lie strictly inside the interval")
        for c in self.scales:
            c = np.asarray(c)
            if not (np.all(np.isfinite(c)) and np.all(c > 0)):
                raise ValueError("scales must be positive and finite")
        if self.time_scales is not None:
            for a in self.time_scales:
                if not np.all(np.isfinite(np.asarray(a))):
                    raise ValueError("time scales must be finite")


def _col(u, x) -> np.ndarray:
    """Broadcast a scalar-or-batched time quantity against state columns."""
    u = np.asarray(u, dtype=np.float64)
    return u[..., None] if u.ndim else u


def _check_interval(t_hi, t_lo) -> None:
    if not np.all(np.asarray(t_lo) > 0) or not np.all(np.asarray(t_lo) < np.asarray(t_hi)):
        raise ValueError("need 0 < t_lo < t_hi")


def afs_direction(x, t) -> np.ndarray:
    """Analytic stand-in for the first slope: eps(x, t) ~ x / t at large t."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("time must be strictly positive")
    return np.asarray(x, dtype=np.float64) / _col(t, x)


def _current(model, x, t_hi, eps_cur):
    """Slope at the current state, honoring an injected value."""
    if eps_cur is not None:
        return np.asarray(eps_cur, dtype=np.float64), []
    eps = eval_model(model, x, t_hi).epsilon
    return eps, [(t_hi, eps)]


def step_euler(model, x, t_hi, t_lo, *, eps_cur=None, scale=1.0):
    """Explicit rectangle step x + (t_lo - t_hi) * eps(x, t_hi)."""
    _check_interval(t_hi, t_lo)
    eps, evals = _current(model, x, t_hi, eps_cur)
    x_next = x + _col(t_lo - t_hi, x) * (_col(scale, x) * eps)
    return x_next, evals


def step_heun(model, x, t_hi, t_lo, *, eps_cur=None, scale=1.0):
    """Trapezoidal correction: Euler predictor, then average the two slopes."""
    _check_interval(t_hi, t_lo)
    eps1, evals = _current(model, x, t_hi, eps_cur)
    h = _col(t_lo - t_hi, x)
    x_pred = x + h * eps1
    eps2 = eval_model(model, x_pred, t_lo).epsilon
    evals = evals + [(t_lo, eps2)]
    x_next = x + h * (_col(scale, x) * (0.5 * eps2 + 0.5 * eps1))
    return x_next, evals


def step_dpm2(model, x, t_hi, t_lo, r=0.5, *, eps_cur=None, scale=1.0):
    """Two-evaluation step with a movable intermediate point.

    Euler to s = t_lo^r * t_hi^(1-r), evaluate there, and take the full step
    with slope weights (1/(2r), 1 - 1/(2r)).  r=0.5 uses only the midpoint
    slope; r=1 reproduces the Heun step bitwise.
    """
    _check_interval(t_hi, t_lo)
    r = np.asarray(r, dtype=np.float64)
    if not (np.all(r > 0) and np.all(r <= 1)):
        raise ValueError("r must lie in (0, 1]")
    eps1, evals = _current(model, x, t_hi, eps_cur)
    s = _geom(t_lo, t_hi, r)
    x_s = x + _col(s - t_hi, x) * eps1
    eps2 = eval_model(model, x_s, s).epsilon
    evals = evals + [(s, eps2)]
    w_mid = 1.0 / (2.0 * r)
    combo = _col(w_mid, x) * eps2 + _col(1.0 - w_mid, x) * eps1
    x_next = x + _col(t_lo - t_hi, x) * (_col(scale, x) * combo)
    return x_next, evals


def step_ipndm(model, x, t_hi, t_lo, history=(), *, eps_cur=None, scale=1.0, max_order=4):
    """Adams-Bashforth step on the slope, order set by the available history.

    history holds the most recent past slopes, newest first (at most three).
    With no history this is the Euler step.
    """
    _check_interval(t_hi, t_lo)
    history = list(history)
    if len(history) > 3:
        raise ValueError("ipndm history holds at most 3 past slopes")
    eps, evals = _current(model, x, t_hi, eps_cur)
    order = min(len(history) + 1, max_order)
    coeffs = _AB_COEFFS[order]
    combo = coeffs[0] * eps
    for c, past in zip(coeffs[1:], history):
        combo = combo + c * past
    x_next = x + _col(t_lo - t_hi, x) * (_col(scale, x) * combo)
    return x_next, evals


def step_dpmpp_2m(model, x, t_hi, t_lo, prev=None, *, eps_cur=None, scale=1.0):
    """Second-order multistep exponential-integrator step on the data prediction.

    Works in lambda = -log t.  With h = lambda(t_lo) - lambda(t_hi) and
    r0 = (lambda(t_hi) - lambda(t_prev)) / h the update is

        x_next = (t_lo/t_hi) x - (e^-h - 1) [(1 + 1/(2 r0)) D - 1/(2 r0) D_prev]

    falling back to the first-order form (exact for D constant in t) when no
    previous data prediction is available.
    """
    _check_interval(t_hi, t_lo)
    eps, evals = _current(model, x, t_hi, eps_cur)
    denoised = x - _col(t_hi, x) * eps
    h = np.log(t_hi) - np.log(t_lo)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite log-time step; check the schedule")
    if prev is None:
        d_combo = denoised
    else:
        t_prev, denoised_prev = prev
        if not np.all(np.asarray(t_prev) > np.asarray(t_hi)):
            raise ValueError("previous step must come from a higher time")
        r0 = (np.log(t_prev) - np.log(t_hi)) / h
        w = _col(1.0 / (2.0 * r0), x)
        d_combo = (1.0 + w) * denoised - w * denoised_prev
    ratio = _col(t_lo, x) / _col(t_hi, x)
    x_next = ratio * x - _col(np.expm1(-h), x) * (_col(scale, x) * d_combo)
    return x_next, evals


def substep(model, kind: SolverKind, x, t_hi, t_lo, carry=None, *, eps_cur=None, scale=1.0):
    """Apply one update of ``kind`` and thread its multistep state.

    carry is the solver's history (past slopes for ipndm, the (t, denoised)
    pair for dpmpp_2m, None otherwise); the updated carry is returned.
    """
    tag = kind.tag
    if tag == "euler_ddim":
        x2, ev = step_euler(model, x, t_hi, t_lo, eps_cur=eps_cur, scale=scale)
        return x2, ev, None
    if tag == "heun_edm":
        x2, ev = step_heun(model, x, t_hi, t_lo, eps_cur=eps_cur, scale=scale)
        return x2, ev, None
    if tag == "dpm2":
        x2, ev = step_dpm2(model, x, t_hi, t_lo, kind.r, eps_cur=eps_cur, scale=scale)
        return x2, ev, None
    if tag == "ipndm":
        hist = list(carry) if carry else []
        x2, ev = step_ipndm(
            model, x, t_hi, t_lo, hist, eps_cur=eps_cur, scale=scale, max_order=kind.order
        )
        d_used = eps_cur if eps_cur is not None else ev[0][1]
        new_hist = ([d_used] + hist)[: kind.order - 1]
        return x2, ev, new_hist
    if tag == "dpmpp_2m":
        x2, ev = step_dpmpp_2m(model, x, t_hi, t_lo, prev=carry, eps_cur=eps_cur, scale=scale)
        eps_used = eps_cur if eps_cur is not None else ev[0][1]
        denoised = x - _col(t_hi, x) * eps_used
        return x2, ev, (t_hi, denoised)
    raise ValueError(f"unknown solver tag {tag!r}")


def sample(model: GaussianMixture, kind: SolverKind, schedule, x_T) -> Trajectory:
    """Run ``kind`` from the top of the schedule down to its floor.

    Deterministic given x_T (which may be batched).  Any non-finite state
    aborts with the offending interval named rather than being clamped.
    """
    x = np.asarray(x_T, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"state has dim {x.shape[-1]}, model has dim {model.dim}")
    ts = schedule.times[::-1]
    nodes = [(float(ts[0]), x)]
    evals, nfe = [], 0
    carry = None
    for i in range(len(ts) - 1):
        t_hi, t_lo = float(ts[i]), float(ts[i + 1])
        eps_cur = afs_direction(x, t_hi) if (kind.afs and i == 0) else None
        x, ev, carry = substep(model, kind, x, t_hi, t_lo, carry, eps_cur=eps_cur)
        evals += ev
        nfe += len(ev)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"{kind.tag} diverged in interval [{t_lo:g}, {t_hi:g}]")
        nodes.append((t_lo, x))
    return Trajectory(nodes=nodes, evals=evals, nfe=nfe)


def parse_solver_spec(spec: str, afs: bool = False) -> SolverKind:
    """Parse 'tag' or 'tag:param' (r for dpm2, order for ipndm)."""
    tag, _, arg = spec.partition(":")
    tag = tag.strip()
    kw = {"afs": afs}
    if arg:
        if tag == "dpm2":
            kw["r"] = float(arg)
        elif tag == "ipndm":
            kw["order"] = int(arg)
        else:
            raise ValueError(f"solver {tag!r} takes no parameter")
    return SolverKind(tag=tag, **kw)
