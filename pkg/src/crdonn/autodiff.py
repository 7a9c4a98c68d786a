"""Reverse-mode gradients for the fixed network graph, Adam, and the training loop.

Complex adjoint rules (``G_x`` denotes the Wirtinger derivative dL/d conj(x)
of the real loss ``L``):

* intensity ``I = |u|^2``:        ``G_u = (dL/dI) * u``
* propagation ``v = P u``:        ``G_u = P^H G_v``
* transmission ``v = t * u``:     ``G_u = conj(t) G_v``,  ``G_t = conj(u) G_v``
* real parameter ``a`` of ``t``:  ``dL/da = 2 Re(conj(G_t) dt/da)``

Layer logits always receive the gradient of the relaxed transmission. In
``soft`` mode the forward pass uses that same transmission, so the gradient is
exact. In ``train``/``deterministic`` mode the forward pass is hard and this is
the straight-through estimator.

The input gradient reported in :class:`GradientBundle` is ``2 G_x``:
its real part is ``dL/d Re(x)`` and its imaginary part ``dL/d Im(x)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .network import (
    ForwardTrace,
    Mode,
    NetworkModel,
    forward,
    layer_transmissions,
    mse_loss,
    normalized_score,
    one_hot,
    predict,
    predict_slots,
)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class GradientBundle:
    logits: list[np.ndarray]  # dL/dlogits per layer, batch-mean loss
    inputs: np.ndarray  # per-image dL/dRe(x) + i dL/dIm(x), shape (B, rows, cols)
    losses: np.ndarray  # per-image loss

    @property
    def loss(self) -> float:
        return float(self.losses.mean())


def loss_and_intensity_grad(model: NetworkModel, trace: ForwardTrace, target_slots: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Per-image MSE loss and dL/dI on the padded camera plane."""
    n_slots = model.num_slots
    s_hat = normalized_score(trace)
    losses = np.mean((s_hat - one_hot(target_slots, n_slots)) ** 2, axis=-1)
    dl_ds = 2.0 * (s_hat - one_hot(target_slots, n_slots)) / n_slots  # (B, slots)

    e = trace.energy
    lit = e > 0
    safe_e = np.where(lit, e, 1.0)
    B = len(e)
    mask = model.detectors.region_mask(model.grid)  # -1 outside every region
    per_region = dl_ds[:, list(model.detectors.slot_map)] / safe_e[:, None]
    # trailing zero column is what index -1 picks up
    lookup = np.concatenate([per_region, np.zeros((B, 1))], axis=1)
    dl_di = lookup[:, mask]
    # quotient rule: d(s_c / E)/dI = [pixel in c] / E - s_c / E^2
    dl_di -= (np.sum(dl_ds * trace.score, axis=-1) / safe_e ** 2)[:, None, None]
    dl_di[~lit] = 0.0
    return losses, dl_di


def backward_fields(model: NetworkModel, trace: ForwardTrace, target_slots: np.ndarray
                    ) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Propagate adjoints back to the input.

    Returns per-image losses, the batch-summed ``G_t`` for every layer, and the
    per-image input adjoint ``G_x``.
    """
    if len(trace.fields) != 2 * len(model.layers) + 1:
        raise ValueError("trace does not hold the 2K+1 field snapshots backward needs")
    losses, dl_di = loss_and_intensity_grad(model, trace, np.asarray(target_slots))
    k = model.kernel
    g = dl_di * trace.camera
    g_ts = [None] * len(model.layers)
    for li in range(len(model.layers) - 1, -1, -1):
        g = k.apply_adjoint(g)  # adjoint of the propagation into the next plane
        arriving = trace.fields[2 * li]
        g_ts[li] = np.sum(np.conj(arriving) * g, axis=0)
        g = np.conj(trace.transmissions[li]) * g
    g = k.apply_adjoint(g)
    return losses, g_ts, g


def logit_gradient(layer, g_t: np.ndarray, gumbel: np.ndarray | None) -> np.ndarray:
    """dL/dlogits from the transmission adjoint ``G_t`` via the relaxed map."""
    p = layer.probabilities(gumbel)
    T, P = layer.lut.amplitude, layer.lut.phase
    amp = p @ T
    phase = p @ P
    e = np.exp(1j * phase)
    t = amp * e
    gc = np.conj(g_t)
    # dt/dp_v = e T_v + i t Phi_v
    a = (gc * e).real
    b = (1j * gc * t).real
    dl_dp = 2.0 * (a[..., None] * T + b[..., None] * P)
    inner = np.sum(p * dl_dp, axis=-1, keepdims=True)
    return p * (dl_dp - inner) / layer.tau


def backward(model: NetworkModel, trace: ForwardTrace, target_slots) -> GradientBundle:
    """Gradients of the batch-mean loss w.r.t. every layer's logits, and of
    each image's own loss w.r.t. its input field."""
    target_slots = np.atleast_1d(np.asarray(target_slots, dtype=int))
    if len(target_slots) != len(trace.inputs):
        raise ValueError("need one target per image in the trace")
    losses, g_ts, g_x = backward_fields(model, trace, target_slots)
    B = len(losses)
    grads = [logit_gradient(layer, gt / B, g) for layer, gt, g in zip(model.layers, g_ts, trace.gumbel)]
    return GradientBundle(grads, 2.0 * g_x, losses)


def loss_of(model: NetworkModel, image, target_slots, mode: Mode | str = Mode.SOFT,
            gumbel=None) -> float:
    """Batch-mean loss of a forward pass (handy for finite-difference checks)."""
    tr = forward(model, image, mode, gumbel=gumbel)
    return float(np.mean(mse_loss(normalized_score(tr), np.atleast_1d(target_slots), model.num_slots)))


# -- optimiser ---------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 0.5, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have the same length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.5
    batch: int = 500
    tau: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = None  # optional max-norm per layer gradient
    chunk: int = 50  # images per forward/backward block (memory knob)

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.chunk < 1:
            raise ValueError("epochs, batch and chunk must be positive")
        if self.lr < 0 or self.tau <= 0:
            raise ValueError("lr must be >= 0 and tau > 0")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None
    wall_time: float
    soft_loss: float | None = None  # relaxed-forward loss on the last batch


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["epoch,loss,train_acc,test_acc,wall_time,soft_loss"]
        for r in self.records:
            test = "" if r.test_acc is None else f"{r.test_acc:.6f}"
            soft = "" if r.soft_loss is None else f"{r.soft_loss:.8g}"
            lines.append(f"{r.epoch},{r.loss:.8g},{r.train_acc:.6f},{test},{r.wall_time:.3f},{soft}")
        return "\n".join(lines) + "\n"


def train(model: NetworkModel, images: np.ndarray, labels: Sequence[int],
          config: TrainConfig = TrainConfig(), *, test: tuple[np.ndarray, Sequence[int]] | None = None,
          callback: Callable[[EpochRecord], None] | None = None) -> History:
    """Optimise the model's logits in place.

    ``images`` are padded encoded fields ``(n, rows, cols)``. One Gumbel draw
    per layer is shared by every image of a mini-batch. The batch gradient is
    the mean over its images.
    """
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=int)
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    slots = np.array([model.slot_of_label(v) for v in labels])
    for layer in model.layers:
        layer.tau = config.tau
    rng = np.random.default_rng(config.seed)
    params = [layer.logits for layer in model.layers]
    state = AdamState.zeros_like(params)
    history = History()
    t0 = time.perf_counter()
    n = len(images)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        soft_loss = None
        for b0 in range(0, n, config.batch):
            idx = order[b0:b0 + config.batch]
            ts, gs = layer_transmissions(model, Mode.TRAIN, rng)
            g_total = [np.zeros(model.grid.shape, dtype=complex) for _ in model.layers]
            for c0 in range(0, len(idx), config.chunk):
                sel = idx[c0:c0 + config.chunk]
                tr = forward(model, images[sel], Mode.TRAIN, gumbel=gs, transmissions=ts)
                losses, g_ts, _ = backward_fields(model, tr, slots[sel])
                loss_sum += float(losses.sum())
                correct += int(np.sum(predict_slots(model, tr.region_sums) == slots[sel]))
                for acc, gt in zip(g_total, g_ts):
                    acc += gt
            if not np.isfinite(loss_sum):
                raise NumericalError(f"non-finite loss in epoch {epoch}")
            grads = [logit_gradient(layer, gt / len(idx), g)
                     for layer, gt, g in zip(model.layers, g_total, gs)]
            if config.clip is not None:
                grads = [_clip(g, config.clip) for g in grads]
            if b0 + config.batch >= n:
                sel = idx[: config.chunk]
                soft_loss = loss_of(model, images[sel], slots[sel], Mode.SOFT, gumbel=gs)
            adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
        test_acc = None
        if test is not None:
            test_acc = float(np.mean(predict(model, test[0]) == np.asarray(test[1])))
        rec = EpochRecord(epoch, loss_sum / n, correct / n, test_acc, time.perf_counter() - t0, soft_loss)
        history.records.append(rec)
        log.info("epoch %d loss %.5g train %.3f test %s", epoch, rec.loss, rec.train_acc, test_acc)
        if callback is not None:
            callback(rec)
    return history


def _clip(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = np.linalg.norm(g)
    return g * (max_norm / norm) if norm > max_norm else g
