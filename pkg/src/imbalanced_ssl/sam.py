"""SGD, sharpness-aware minimization and its reweighted variant.

All three modes share one loop. A step samples a batch, and in the SAM modes
first takes the ascent gradient (weighted per example for ``rwsam``), moves to
``phi + eps`` and descends along the unweighted gradient there. Both gradient
evaluations of a step reuse the same perturbation draws, so ``sam`` with zero
radius and ``rwsam`` with unit weights reproduce ``sgd`` and ``sam`` bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .datagen import Dataset
from .density import KdeConfig, WeightVector, compute_weights
from .errors import ConfigError, NonFiniteError
from .features import FeatureMap
from .spectral import SslObjective

MODES = ("sgd", "sam", "rwsam")


class DifferentiableObjective(Protocol):
    param_dim: int
    n: int

    def loss_and_grad(self, params, batch_idx, weights, rng) -> tuple[float, np.ndarray]: ...


@dataclass
class SamConfig:
    """``sam_radius_rho`` is the SAM neighborhood radius, unrelated to the data noise scale."""

    sam_radius_rho: float = 0.05
    p_exp: float = 2.0
    q_exp: float = 2.0
    learning_rate: float = 0.01
    steps: int = 1000
    batch_size: int = 256
    seed: int = 0
    lr_schedule: str = "constant"
    log_interval: int = 0

    def validate(self):
        if not self.sam_radius_rho >= 0:
            raise ConfigError("sam_radius_rho must be non-negative")
        if not (self.p_exp > 1 and self.q_exp > 1) or abs(1 / self.p_exp + 1 / self.q_exp - 1) > 1e-12:
            raise ConfigError("p_exp and q_exp must be conjugate exponents (1/p + 1/q = 1)")
        if not self.learning_rate > 0 or self.steps < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be positive, steps >= 0, batch_size >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")


@dataclass
class TrainTrace:
    losses: np.ndarray
    params: np.ndarray
    snapshots: list = field(default_factory=list)
    steps_run: int = 0
    stopped_early: bool = False

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.snapshots:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def compute_epsilon(grad, rho, p=2.0, q=2.0):
    """Maximizer of ``eps . g`` over the p-norm ball of radius ``rho``.

    ``rho * sign(g) |g|^(q-1) / (|g|_q^q)^(1/p)``; zero when ``g`` or ``rho`` is zero.
    """
    g = np.asarray(grad, dtype=np.float64)
    if rho == 0:
        return np.zeros_like(g)
    top = np.max(np.abs(g)) if g.size else 0.0
    if top == 0.0:
        return np.zeros_like(g)
    if p == 2.0 and q == 2.0:
        return rho * g / np.linalg.norm(g)
    # the direction is scale invariant; normalizing first avoids overflow in |g|^q
    u = g / top
    a = np.abs(u)
    return rho * np.sign(u) * a ** (q - 1.0) / np.sum(a**q) ** (1.0 / p)


def _learning_rate(cfg: SamConfig, step):
    if cfg.lr_schedule == "cosine" and cfg.steps > 0:
        return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * step / cfg.steps))
    return cfg.learning_rate


def train(
    obj: DifferentiableObjective,
    cfg: SamConfig,
    weights: WeightVector | np.ndarray | None = None,
    mode: str = "sgd",
    init_params=None,
    monitor: Callable | None = None,
    stop_rel_change: float | None = None,
    stop_window: int = 100,
) -> TrainTrace:
    """Run ``cfg.steps`` updates of ``mode`` on ``obj``.

    Batches come from one seeded stream; perturbations for step ``t`` come from
    a generator seeded by ``(seed, t)``. ``monitor(step, params)`` is called every
    ``cfg.log_interval`` steps and its dict is stored in the trace. With
    ``stop_rel_change``, training ends once the mean loss over the last
    ``stop_window`` steps differs from the previous window by less than that
    relative amount.
    """
    cfg.validate()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    n = obj.n
    w_all = None
    if mode == "rwsam":
        if weights is None:
            raise ConfigError("rwsam needs per-example weights")
        w_all = np.asarray(weights.weights if isinstance(weights, WeightVector) else weights, dtype=np.float64)
        if w_all.shape != (n,):
            raise ConfigError(f"weights have length {w_all.shape}, dataset has {n} examples")

    batch_ss, init_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    batch_rng = np.random.default_rng(batch_ss)
    if init_params is None:
        params = obj.init_params(np.random.default_rng(init_ss))
    else:
        params = np.array(init_params, dtype=np.float64, copy=True)
    B = min(cfg.batch_size, n)

    losses = np.empty(cfg.steps)
    snapshots = []
    stopped = False
    step = 0
    for step in range(cfg.steps):
        idx = np.arange(n) if B == n else np.sort(batch_rng.choice(n, size=B, replace=False))
        lr = _learning_rate(cfg, step)

        def draws():
            return np.random.default_rng([cfg.seed, step])

        if mode == "sgd":
            loss, grad = obj.loss_and_grad(params, idx, None, draws())
        else:
            wb = None if w_all is None else w_all[idx]
            _, g_ascent = obj.loss_and_grad(params, idx, wb, draws())
            eps = compute_epsilon(g_ascent, cfg.sam_radius_rho, cfg.p_exp, cfg.q_exp)
            loss, grad = obj.loss_and_grad(params + eps, idx, None, draws())
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteError(f"non-finite loss or gradient at step {step}", step)
        params = params - lr * grad
        losses[step] = loss

        if monitor is not None and cfg.log_interval and (step + 1) % cfg.log_interval == 0:
            snapshots.append({"step": step + 1, "loss": float(loss), **monitor(step + 1, params)})
        if stop_rel_change is not None and step + 1 >= 2 * stop_window:
            cur = losses[step + 1 - stop_window : step + 1].mean()
            prev = losses[step + 1 - 2 * stop_window : step + 1 - stop_window].mean()
            if abs(cur - prev) <= stop_rel_change * max(abs(prev), 1e-300):
                stopped = True
                break
    steps_run = step + 1 if cfg.steps else 0
    return TrainTrace(losses[:steps_run], params, snapshots, steps_run, stopped)


@dataclass
class PipelineResult:
    feature_map: FeatureMap
    weights: WeightVector
    trace: TrainTrace
    stage1: TrainTrace


def run_rwsam_pipeline(
    ds: Dataset,
    stage1_cfg: SamConfig,
    kde_cfg: KdeConfig,
    stage2_cfg: SamConfig,
    m: int,
    perturb_scale: float,
    fresh_init=False,
    stage2_mode="rwsam",
    stop_rel_change=1e-5,
) -> PipelineResult:
    """Two-stage training: plain SGD, one-off KDE weights, then reweighted SAM.

    Stage 2 continues from the stage-1 parameters unless ``fresh_init``; the
    weights are computed once from stage-1 representations and never refreshed.
    """
    obj = SslObjective(ds.inputs, m, perturb_scale)
    stage1 = train(obj, stage1_cfg, mode="sgd", stop_rel_change=stop_rel_change)
    feats = obj.features(stage1.params)
    wv = compute_weights(feats, kde_cfg)
    init = None if fresh_init else stage1.params
    trace = train(obj, stage2_cfg, weights=wv, mode=stage2_mode, init_params=init)
    fm = FeatureMap(obj.unflatten(trace.params), "ssl_trained", {"stage2_mode": stage2_mode})
    return PipelineResult(fm, wv, trace, stage1)
