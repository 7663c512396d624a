"""Loss, optimizer, and the incremental layer-by-layer training schedule.

The loss for a network truncated to layers 0..l accumulates the squared
reconstruction error of every active layer's output, weighted by
w_i = ln(i + 2) so later layers count more, plus lambda * ReLU(-.) penalties
that push the step sizes (and, for the RFPI family, the shrinkage
thresholds) toward non-negative values.  The squared-error terms are the
raw ||x - estimate||^2 of each layer (reported metrics divide by n, the
loss does not); over a batch the reconstruction part is averaged, so the
batch gradient equals the mean of per-sample gradients.

Training grows the network one layer per round: round l optimizes the
encoder parameters together with layers 0..l, fresh samples every step,
carrying the learned values into round l+1.  Adam moments are reset at
each round (the objective changed); parameters carry over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .numerics import ContractViolation, RngStream
from .signals import SignalSpec, SparseSignal, mse_amplitude, mse_direction, sample_signal
from .solvers import DegenerateIterate
from .unfolded import (
    BIHT_FAMILY,
    EVAL,
    GENERALIZED,
    RFPI_FAMILY,
    VARIANTS,
    DecoderParams,
    SensingModel,
    forward,
    initialize_model,
    make_param_vars,
    record_pipeline,
)


class TrainingDiverged(RuntimeError):
    """The loss became non-finite or exceeded the divergence guard."""


@dataclass(frozen=True)
class LossConfig:
    """Penalty weight for the non-negativity terms (any positive value only
    activates on constraint violation)."""

    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractViolation(f"LossConfig: lam must be positive, got {self.lam}")


def layer_weights(count: int) -> np.ndarray:
    """Importance weights w_i = ln(i + 2), strictly increasing."""
    return np.log(np.arange(2, count + 2, dtype=np.float64))


def accumulated_loss(estimates: list, target: np.ndarray, pv: dict, variant: str,
                     lam: float) -> ad.Var:
    """Record the training loss for the active layers on the estimates' tape.

    ``estimates`` are the per-layer output Vars (layers 0..l); ``target`` is
    the source vector or (n, B) batch.  Penalties cover only the active
    layers' parameters, so inactive layers stay outside the objective.
    """
    if not estimates:
        raise ContractViolation("accumulated_loss: need at least one layer estimate")
    tape = estimates[0].tape
    target = np.asarray(target, dtype=np.float64)
    batch = target.shape[1] if target.ndim == 2 else 1
    x_c = tape.constant(target)
    w = layer_weights(len(estimates))
    total = None
    for i, est in enumerate(estimates):
        term = ad.scale(w[i] / batch, ad.reduce_sum_sq(ad.sub(x_c, est)))
        total = term if total is None else ad.add(total, term)
    ones_n = None
    for i in range(len(estimates)):
        total = ad.add(total, ad.scale(lam, ad.relu(ad.scale(-1.0, pv[f"delta[{i}]"]))))
        if variant in RFPI_FAMILY:
            if ones_n is None:
                ones_n = tape.constant(np.ones(pv[f"tau[{i}]"].value.shape[0]))
            neg_part = ad.relu(ad.scale(-1.0, pv[f"tau[{i}]"]))
            total = ad.add(total, ad.scale(lam, ad.dot(neg_part, ones_n)))
    return total


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and sampling knobs for incremental training."""

    sparsity_pool: tuple
    batch_size: int = 64
    epochs_per_round: int = 200
    steps_per_epoch: int = 32
    learning_rate: float = 1e-3
    eval_realizations: int = 128
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs_per_round, self.steps_per_epoch,
               self.eval_realizations) < 1 or not self.learning_rate > 0:
            raise ContractViolation("TrainConfig: all sizes and the learning rate must be positive")
        if not self.sparsity_pool:
            raise ContractViolation("TrainConfig: sparsity_pool must be non-empty")


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(np.asarray(p, dtype=np.float64))
        state.v[name] = np.zeros_like(state.m[name])
    return state


def adam_update(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam step, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractViolation(f"adam_update: gradient shape {g.shape} != param shape {p.shape} for {name}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1 ** t)
        v_hat = state.v[name] / (1.0 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sample_batch(n: int, pool: tuple, batch_size: int, rng: RngStream) -> list:
    """Fresh sparse signals, sparsity drawn uniformly from the pool per signal."""
    pool = tuple(int(k) for k in pool)
    out = []
    for _ in range(batch_size):
        k = pool[int(rng.integers(0, len(pool)))] if len(pool) > 1 else pool[0]
        out.append(sample_signal(SignalSpec(n, k), rng))
    return out


def _param_views(enc: SensingModel, dec: DecoderParams, layer_count: int) -> dict:
    """Writable views onto the trainable arrays of the first layer_count layers."""
    views = {"phi": enc.phi}
    if dec.variant in GENERALIZED:
        views["thresholds"] = enc.thresholds
    for i in range(layer_count):
        views[f"delta[{i}]"] = dec.delta[i:i + 1].reshape(())
        if dec.variant in RFPI_FAMILY:
            views[f"tau[{i}]"] = dec.tau[i]
    return views


def _heldout_eval(enc, dec, signals, layer_count) -> tuple:
    """Mean amplitude/direction MSE of the truncated pipeline on held-out
    signals (degenerate solves are skipped)."""
    amps, dirs = [], []
    for sig in signals:
        try:
            out = forward(enc, dec, sig, mode=EVAL, layer_count=layer_count)
        except DegenerateIterate:
            continue
        amps.append(mse_amplitude(sig.values, out.final))
        dirs.append(mse_direction(sig.values, out.final))
    if not amps:
        return float("inf"), float("inf")
    return float(np.mean(amps)), float(np.mean(dirs))


@dataclass
class TrainResult:
    encoder: SensingModel
    decoder: DecoderParams
    log: list  # (round, epoch, step, loss, eval_mse_amplitude, eval_mse_direction)


LOG_HEADER = "round,epoch,step,loss,eval_mse_amplitude,eval_mse_direction"


def write_training_log(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOG_HEADER + "\n")
        for rnd, epoch, step, loss, amp, direction in log:
            fh.write(f"{rnd},{epoch},{step},{loss!r},{amp!r},{direction!r}\n")


def train_incremental(variant: str, n: int, m: int, layers: int, cfg: TrainConfig,
                      loss_cfg: Optional[LossConfig] = None, *,
                      init_step: float, init_penalty: float) -> TrainResult:
    """Grow and train an unfolded pipeline one layer per round.

    Round l (l = 0..L-1) optimizes the encoder parameters together with
    layers 0..l against the truncated accumulated loss; layers above l stay
    at their initialization until their round arrives.  BIHT-family
    variants need a single-entry sparsity pool (the architecture's k).

    ``init_step``/``init_penalty`` are the classic-solver constants
    (typically from a grid search) the decoder starts from.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"train_incremental: unknown variant {variant!r}")
    loss_cfg = loss_cfg or LossConfig()
    sparsity = None
    if variant in BIHT_FAMILY:
        if len(set(cfg.sparsity_pool)) != 1:
            raise ContractViolation("train_incremental: BIHT-family variants train at a single sparsity")
        sparsity = int(cfg.sparsity_pool[0])

    rng = RngStream(cfg.seed)
    enc, dec = initialize_model(variant, n, m, layers, rng.child("init"),
                                init_step, init_penalty, sparsity)
    pool = tuple(int(k) for k in cfg.sparsity_pool)
    heldout_rng = rng.child("heldout")
    heldout = [sample_signal(SignalSpec(n, pool[i % len(pool)]), heldout_rng)
               for i in range(cfg.eval_realizations)]

    log = []
    global_step = 0
    for rnd in range(layers):
        active = rnd + 1
        params = _param_views(enc, dec, active)
        state = adam_init(params)
        for epoch in range(cfg.epochs_per_round):
            epoch_losses = []
            for s in range(cfg.steps_per_epoch):
                batch = sample_batch(n, pool, cfg.batch_size,
                                     rng.child(f"batch/{rnd}/{epoch}/{s}"))
                x = np.stack([sig.values for sig in batch], axis=1)
                tape = ad.Tape()
                pv = make_param_vars(tape, enc, dec, active)
                _, ests, _ = record_pipeline(tape, variant, pv, x, active,
                                             sparsity, enc.smoothness)
                loss = accumulated_loss(ests, x, pv, variant, loss_cfg.lam)
                value = float(loss.value)
                if not np.isfinite(value) or value > 1e6:
                    raise TrainingDiverged(
                        f"round {rnd}, epoch {epoch}, step {s}: loss {value}")
                grads = ad.backward(tape, loss)
                adam_update(params, grads, state, cfg.learning_rate)
                epoch_losses.append(value)
                global_step += 1
            amp, direction = _heldout_eval(enc, dec, heldout, active)
            log.append((rnd, epoch, global_step, float(np.mean(epoch_losses)),
                        amp, direction))
    return TrainResult(encoder=enc, decoder=dec, log=log)
