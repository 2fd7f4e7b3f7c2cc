"""Learned mean-direction stepping: tiny predictor, solver, plugin, training.

The predictor is a small MLP mapping (feature vector, t_hi, t_lo) to a
per-step interval split r, a direction scale c and optionally a time scale a.
With all-zero final-layer weights the outputs sit exactly at (0.5, 1, 1), so
an untrained predictor reproduces the default two-evaluation solver geometry;
training can only move away from that baseline.

Training distills against a teacher run on a refined schedule: per interval
the student step is taken, the batch-mean L2 gap to the teacher state is the
loss, and the parameter gradient is assembled from exact MLP backpropagation
chained with central finite-difference sensitivities of the loss with respect
to the two or three scalar outputs.  No autodiff framework is involved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .rng import stream
from .schedules import TimeSchedule, _geom, refine_teacher
from .score_models import (
    FEATURE_DIM,
    DivergenceError,
    GaussianMixture,
    eval_model,
    oracle_solve,
)
from .solvers import SolverKind, StepPlan, _col, afs_direction, sample, substep
from .trajectory import Trajectory

CHECKPOINT_VERSION = 1

_SIGMOID_CLIP = 1e-9


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def time_embedding(t_hi, t_lo, emb_dim: int) -> np.ndarray:
    """Sinusoidal embedding of (log t_hi, log t_lo), emb_dim components total."""
    if emb_dim % 4 != 0 or emb_dim < 4:
        raise ValueError("emb_dim must be a positive multiple of 4")
    m = emb_dim // 4
    freqs = 0.5 * 2.0 ** np.arange(m)
    parts = []
    for t in (t_hi, t_lo):
        ang = np.log(np.asarray(t, dtype=np.float64))[..., None] * freqs
        parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class PredictorParams:
    """Weights of the step predictor.

    Feature path: two tanh layers (w1/b1 then w2/b2).  The hidden state is
    concatenated with the time embedding and mapped by w3/b3 to 2 or 3 logits,
    squashed to r in (0,1), c in (0,2) and, when present, a in (0.5,1.5).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    emb_dim: int = 16

    def __post_init__(self):
        h = self.w1.shape[1]
        if self.b1.shape != (h,) or self.w2.shape != (h, h) or self.b2.shape != (h,):
            raise ValueError("inconsistent feature-path shapes")
        if self.w3.shape[0] != h + self.emb_dim or self.b3.shape != (self.w3.shape[1],):
            raise ValueError("inconsistent output-layer shapes")
        if self.outputs not in (2, 3):
            raise ValueError("predictor must emit 2 or 3 outputs")
        for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3):
            if not np.all(np.isfinite(a)):
                raise ValueError("predictor weights must be finite")
        if self.n_params > 20_000:
            raise ValueError(f"predictor has {self.n_params} parameters, budget is 20k")

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def outputs(self) -> int:
        return self.w3.shape[1]

    @property
    def n_params(self) -> int:
        return sum(a.size for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3))

    @classmethod
    def zeros(cls, feature_dim=FEATURE_DIM, hidden=64, emb_dim=16, outputs=2):
        return cls(
            w1=np.zeros((feature_dim, hidden)),
            b1=np.zeros(hidden),
            w2=np.zeros((hidden, hidden)),
            b2=np.zeros(hidden),
            w3=np.zeros((hidden + emb_dim, outputs)),
            b3=np.zeros(outputs),
            emb_dim=emb_dim,
        )

    @classmethod
    def init(cls, rng: np.random.Generator, feature_dim=FEATURE_DIM, hidden=64, emb_dim=16, outputs=2):
        """Random feature path, zero output layer: outputs start exactly neutral."""
        return cls(
            w1=rng.standard_normal((feature_dim, hidden)) / math.sqrt(feature_dim),
            b1=np.zeros(hidden),
            w2=rng.standard_normal((hidden, hidden)) / math.sqrt(hidden),
            b2=np.zeros(hidden),
            w3=np.zeros((hidden + emb_dim, outputs)),
            b3=np.zeros(outputs),
            emb_dim=emb_dim,
        )


@dataclass(frozen=True)
class PredictorOutput:
    """Squashed predictor outputs; a is None when time scaling is disabled."""

    r: np.ndarray
    c: np.ndarray
    a: np.ndarray | None = None


def _forward(params: PredictorParams, h, t_hi, t_lo):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.feature_dim:
        raise ValueError(f"feature has width {h.shape[-1]}, predictor expects {params.feature_dim}")
    z1 = np.tanh(h @ params.w1 + params.b1)
    z2 = np.tanh(z1 @ params.w2 + params.b2)
    emb = time_embedding(t_hi, t_lo, params.emb_dim)
    if z2.ndim > emb.ndim:
        emb = np.broadcast_to(emb, z2.shape[:-1] + emb.shape[-1:])
    u = np.concatenate([z2, emb], axis=-1)
    o = u @ params.w3 + params.b3
    if not np.all(np.isfinite(o)):
        raise FloatingPointError("non-finite predictor activations")
    return {"h": h, "z1": z1, "z2": z2, "u": u, "o": o}


def predict_with_cache(params: PredictorParams, h, t_hi, t_lo):
    cache = _forward(params, h, t_hi, t_lo)
    o = cache["o"]
    r = np.clip(_sigmoid(o[..., 0]), _SIGMOID_CLIP, 1.0 - _SIGMOID_CLIP)
    c = 2.0 * np.clip(_sigmoid(o[..., 1]), _SIGMOID_CLIP, 1.0 - _SIGMOID_CLIP)
    a = 0.5 + _sigmoid(o[..., 2]) if params.outputs == 3 else None
    return PredictorOutput(r=r, c=c, a=a), cache


def predict(params: PredictorParams, h, t_hi, t_lo) -> PredictorOutput:
    """Deterministic forward pass; see PredictorParams for the output ranges."""
    out, _ = predict_with_cache(params, h, t_hi, t_lo)
    return out


def predictor_vjp(params: PredictorParams, cache, g_r, g_c, g_a=None) -> dict:
    """Exact parameter gradients given per-sample upstream output sensitivities."""
    o, u, z1, z2, h = cache["o"], cache["u"], cache["z1"], cache["z2"], cache["h"]
    sig = _sigmoid(o)
    g_o = np.zeros_like(o)
    g_o[..., 0] = np.asarray(g_r) * sig[..., 0] * (1.0 - sig[..., 0])
    g_o[..., 1] = np.asarray(g_c) * 2.0 * sig[..., 1] * (1.0 - sig[..., 1])
    if params.outputs == 3:
        if g_a is None:
            raise ValueError("predictor emits a time scale but no upstream gradient given")
        g_o[..., 2] = np.asarray(g_a) * sig[..., 2] * (1.0 - sig[..., 2])

    def flat(a, width):
        return np.asarray(a).reshape(-1, width)

    go = flat(g_o, params.outputs)
    uf = flat(u, u.shape[-1])
    gw3 = uf.T @ go
    gb3 = go.sum(axis=0)
    g_u = g_o @ params.w3.T
    g_p2 = g_u[..., : params.hidden] * (1.0 - z2**2)
    gp2 = flat(g_p2, params.hidden)
    gw2 = flat(z1, params.hidden).T @ gp2
    gb2 = gp2.sum(axis=0)
    g_p1 = (g_p2 @ params.w2.T) * (1.0 - z1**2)
    gp1 = flat(g_p1, params.hidden)
    gw1 = flat(h, params.feature_dim).T @ gp1
    gb1 = gp1.sum(axis=0)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}


_PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")


def sgd_update(params: PredictorParams, grads: dict, lr: float) -> PredictorParams:
    """Plain gradient-descent step (kept for experiments; train() uses Adam)."""
    return replace(params, **{k: getattr(params, k) - lr * grads[k] for k in _PARAM_FIELDS})


class AdamState:
    """Per-parameter first/second moments with bias correction."""

    def __init__(self, params: PredictorParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(getattr(params, k)) for k in _PARAM_FIELDS}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in _PARAM_FIELDS}

    def update(self, params: PredictorParams, grads: dict, lr: float) -> PredictorParams:
        self.t += 1
        out = {}
        for k in _PARAM_FIELDS:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / (1.0 - self.beta1**self.t)
            v_hat = self.v[k] / (1.0 - self.beta2**self.t)
            out[k] = getattr(params, k) - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return replace(params, **out)


def plan_from_output(out: PredictorOutput, t_hi, t_lo) -> StepPlan:
    s = _geom(t_lo, t_hi, out.r)
    return StepPlan(
        intermediates=(s,),
        scales=(out.c,),
        time_scales=None if out.a is None else (out.a,),
    )


def _zero_feature_like(x, feature_dim):
    shape = np.asarray(x).shape[:-1] + (feature_dim,)
    return np.zeros(shape)


def _apply_single(model, x, t_hi, t_lo, r, c, a, eps1):
    """Mean-direction update: Euler to the split point, one scaled full step."""
    s = _geom(t_lo, t_hi, r)
    x_s = x + _col(s - t_hi, x) * eps1
    t_eval = s if a is None else a * s
    eps2 = eval_model(model, x_s, t_eval).epsilon
    x_next = x + _col(c * (t_lo - t_hi), x) * eps2
    return x_next, [(t_eval, eps2)], None


def _apply_plugin(model, base, x, t_hi, t_lo, r, c, a, carry, eps1):
    """Wrap a base solver: split the interval at r, scale the second substep by c."""
    s = _geom(t_lo, t_hi, r)
    x_s, ev1, carry = substep(model, base, x, t_hi, s, carry, eps_cur=eps1)
    t_eval = s if a is None else a * s
    eps2 = eval_model(model, x_s, t_eval).epsilon
    x_next, ev2, carry = substep(model, base, x_s, s, t_lo, carry, eps_cur=eps2, scale=c)
    return x_next, ev1 + [(t_eval, eps2)] + ev2, carry


def _apply_student(model, student, x, t_hi, t_lo, r, c, a, carry, eps1):
    if student is None:
        return _apply_single(model, x, t_hi, t_lo, r, c, a, eps1)
    return _apply_plugin(model, student, x, t_hi, t_lo, r, c, a, carry, eps1)


def _predict_for_step(model, params, x, t_hi, t_lo, eps_cur):
    """Current slope, feature and predictor outputs for one interval."""
    if eps_cur is None:
        ev0 = eval_model(model, x, t_hi)
        eps1, feat, evals = ev0.epsilon, ev0.feature, [(t_hi, ev0.epsilon)]
    else:
        # Analytically substituted first slope: no evaluation, no feature.
        eps1, feat, evals = np.asarray(eps_cur, dtype=np.float64), _zero_feature_like(x, params.feature_dim), []
    out, cache = predict_with_cache(params, feat, t_hi, t_lo)
    return eps1, evals, out, cache


def amed_step(model, params, x, t_hi, t_lo, *, eps_cur=None):
    """One learned single-step update: two evaluations, learned (r, c[, a])."""
    eps1, evals, out, _ = _predict_for_step(model, params, x, t_hi, t_lo, eps_cur)
    plan = plan_from_output(out, t_hi, t_lo)
    plan.validate(t_hi, t_lo)
    x_next, ev2, _ = _apply_single(model, x, t_hi, t_lo, out.r, out.c, out.a, eps1)
    return x_next, evals + ev2


def amed_plugin_step(model, params, base: SolverKind, x, t_hi, t_lo, carry=None, *, eps_cur=None):
    """One learned wrapped-base update; threads the base solver's history."""
    eps1, evals, out, _ = _predict_for_step(model, params, x, t_hi, t_lo, eps_cur)
    plan = plan_from_output(out, t_hi, t_lo)
    plan.validate(t_hi, t_lo)
    x_next, ev2, carry = _apply_plugin(model, base, x, t_hi, t_lo, out.r, out.c, out.a, carry, eps1)
    return x_next, evals + ev2, carry


def amed_sample(model, params, schedule, x_T, base: SolverKind | None = None, afs: bool = False) -> Trajectory:
    """Run the learned solver (base=None) or the learned plugin over a schedule."""
    x = np.asarray(x_T, dtype=np.float64)
    use_afs = afs or (base is not None and base.afs)
    ts = schedule.times[::-1]
    nodes = [(float(ts[0]), x)]
    evals, nfe = [], 0
    carry = None
    for i in range(len(ts) - 1):
        t_hi, t_lo = float(ts[i]), float(ts[i + 1])
        eps_cur = afs_direction(x, t_hi) if (use_afs and i == 0) else None
        if base is None:
            x, ev = amed_step(model, params, x, t_hi, t_lo, eps_cur=eps_cur)
        else:
            x, ev, carry = amed_plugin_step(model, params, base, x, t_hi, t_lo, carry, eps_cur=eps_cur)
        evals += ev
        nfe += len(ev)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"amed diverged in interval [{t_lo:g}, {t_hi:g}]")
        nodes.append((t_lo, x))
    return Trajectory(nodes=nodes, evals=evals, nfe=nfe)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    """Distillation recipe for the step predictor.

    teacher runs on the schedule refined with m extra nodes per interval;
    student is a base solver to wrap, or None for the learned single-step
    solver.  images is the total number of start states consumed
    (ceil(images/batch) loops).  The distance metric is fixed to L2.

    Updates use Adam with one moment state per interval: the per-interval
    losses live on scales that differ by orders of magnitude (states near
    the top of the schedule are ~t_max times larger than near the floor),
    and a shared scalar step size provably cannot serve all intervals at
    once, while shared second moments let the large-scale intervals starve
    the small ones.
    """

    teacher: SolverKind
    student: SolverKind | None = None
    m: int = 2
    batch: int = 128
    images: int = 10_000
    lr: float = 3e-3
    seed: int = 0
    metric: str = "l2"
    learn_time_scale: bool = False
    hidden: int = 64
    emb_dim: int = 16

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch < 1 or self.images < 1:
            raise ValueError("batch and images must be positive")
        if self.metric != "l2":
            raise ValueError("the only supported distance metric is 'l2'")


@dataclass
class TrainResult:
    params: PredictorParams
    losses: np.ndarray  # (loops, N-1), batch-mean L2 per interval, in update order


_FD_BOUNDS = {
    "r": (_SIGMOID_CLIP, 1.0 - _SIGMOID_CLIP),
    "c": (_SIGMOID_CLIP, None),
    "a": (None, None),
}


def step_loss(model, params, student, x, t_hi, t_lo, y, carry=None, eps_cur=None) -> float:
    """Batch-mean L2 gap to the teacher state after one student step."""
    eps1, _, out, _ = _predict_for_step(model, params, x, t_hi, t_lo, eps_cur)
    x_next, _, _ = _apply_student(model, student, x, t_hi, t_lo, out.r, out.c, out.a, carry, eps1)
    return float(np.mean(np.linalg.norm(x_next - y, axis=-1)))


def step_loss_grad(model, params, student, x, t_hi, t_lo, y, carry=None, eps_cur=None):
    """Loss, assembled parameter gradient, and the student's own continuation.

    The gradient chains exact predictor backprop with central finite
    differences of the loss with respect to the scalar outputs (relative step
    1e-3).  Costs at most six extra step applications.
    """
    eps1, evals, out, cache = _predict_for_step(model, params, x, t_hi, t_lo, eps_cur)
    x_next, ev2, carry_next = _apply_student(
        model, student, x, t_hi, t_lo, out.r, out.c, out.a, carry, eps1
    )
    norms = np.linalg.norm(np.asarray(x_next) - y, axis=-1)
    loss = float(np.mean(norms))
    n_samples = max(1, norms.size)

    vals = {"r": out.r, "c": out.c, "a": out.a}
    sens = {}
    for name in ("r", "c", "a"):
        v = vals[name]
        if v is None:
            continue
        lo, hi = _FD_BOUNDS[name]
        delta = 1e-3 * np.maximum(np.abs(v), 1e-3)
        vp = np.clip(v + delta, lo, hi)
        vm = np.clip(v - delta, lo, hi)
        args_p = {**vals, name: vp}
        args_m = {**vals, name: vm}
        xp, _, _ = _apply_student(model, student, x, t_hi, t_lo, args_p["r"], args_p["c"], args_p["a"], carry, eps1)
        xm, _, _ = _apply_student(model, student, x, t_hi, t_lo, args_m["r"], args_m["c"], args_m["a"], carry, eps1)
        np_ = np.linalg.norm(np.asarray(xp) - y, axis=-1)
        nm_ = np.linalg.norm(np.asarray(xm) - y, axis=-1)
        denom = np.asarray(vp - vm)
        denom = np.where(denom == 0, 1.0, denom)
        sens[name] = (np_ - nm_) / denom / n_samples
    grads = predictor_vjp(params, cache, sens["r"], sens["c"], sens.get("a"))
    return loss, grads, x_next, evals + ev2, carry_next


def train(model: GaussianMixture, cfg: TrainConfig, schedule: TimeSchedule) -> TrainResult:
    """Distill the predictor against a refined-schedule teacher.

    Per loop: draw a batch of start states, run the teacher, then walk the
    intervals top-down taking the student step, updating the parameters after
    every interval (N-1 updates per loop), and continuing from the student's
    own states.  Bit-reproducible for a fixed seed.
    """
    params = PredictorParams.init(
        stream(cfg.seed, "init"),
        feature_dim=FEATURE_DIM,
        hidden=cfg.hidden,
        emb_dim=cfg.emb_dim,
        outputs=3 if cfg.learn_time_scale else 2,
    )
    fine = refine_teacher(schedule, cfg.m)
    ts = schedule.times[::-1]
    n = schedule.n
    loops = math.ceil(cfg.images / cfg.batch)
    losses = np.zeros((loops, n - 1))
    opt = [AdamState(params) for _ in range(n - 1)]
    for loop in range(loops):
        rng = stream(cfg.seed, "batch", loop)
        x = rng.standard_normal((cfg.batch, model.dim)) * schedule.t_max
        teacher = sample(model, cfg.teacher, fine, x)
        carry = None
        for k in range(n - 1):
            t_hi, t_lo = float(ts[k]), float(ts[k + 1])
            y = teacher.nodes[(k + 1) * (cfg.m + 1)][1]
            loss, grads, x, _, carry = step_loss_grad(
                model, params, cfg.student, x, t_hi, t_lo, y, carry
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss diverged at loop {loop}, interval {k}")
            losses[loop, k] = loss
            params = opt[k].update(params, grads, cfg.lr)
    return TrainResult(params=params, losses=losses)


def endpoint_errors(model, params, schedule, x_T, base=None, afs=False, substeps=128):
    """Per-sample endpoint L2 distance between the learned sampler and the oracle."""
    traj = amed_sample(model, params, schedule, x_T, base=base, afs=afs)
    ref = oracle_solve(model, x_T, schedule, substeps=substeps)
    return np.linalg.norm(traj.endpoint - ref.endpoint, axis=-1)


# ---------------------------------------------------------------------------
# Checkpoints


def save_predictor(params: PredictorParams, path) -> None:
    """Versioned JSON checkpoint: shapes plus row-major weight data, full doubles."""
    doc = {"version": CHECKPOINT_VERSION, "emb_dim": params.emb_dim, "arrays": {}}
    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        a = getattr(params, name)
        doc["arrays"][name] = {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_predictor(path) -> PredictorParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    arrays = {}
    for name, spec in doc["arrays"].items():
        arrays[name] = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
    return PredictorParams(emb_dim=int(doc["emb_dim"]), **arrays)
