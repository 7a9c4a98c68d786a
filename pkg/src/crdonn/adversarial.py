"""Complex-valued fast gradient sign attack (C-FGSM) on binarised inputs.

The input gradient is taken in deterministic mode (no Gumbel noise, hard
forward, straight-through backward). Only its real part is used. The
applied gradient of a pixel is that real part projected on the pixel's flip
direction: ``+Re(g)`` for a featured pixel (``-1 -> 0.0316``) and
``-Re(g)`` for a background pixel (``0.0316 -> -1``). A pixel flips when
its applied gradient is strictly positive, which is a first-order loss
ascent. With feature masking on, pixels that were ``-1`` in the clean image
never change.

``AttackConfig(rule="raw")`` flips on ``Re(g) > 0`` regardless of the pixel
value instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import backward
from .network import ConfusionResult, Mode, NetworkModel, confusion, forward, layer_transmissions, predict
from .slm import BRIGHT_VALUE, DARK_VALUE, EncodedImage


@dataclass(frozen=True)
class AttackConfig:
    mask_features: bool = True
    # when set, no pixel is flipped (pass-through for report plumbing)
    disable: bool = False
    rule: str = "ascent"  # or "raw"

    def __post_init__(self):
        if self.rule not in ("ascent", "raw"):
            raise ValueError(f"unknown flip rule {self.rule!r}")


def input_gradients(model: NetworkModel, images: np.ndarray, labels: Sequence[int],
                    chunk: int = 50) -> np.ndarray:
    """``dL/dRe(x) + i dL/dIm(x)`` of each image's own loss, deterministic mode."""
    images = np.asarray(images)
    slots = np.array([model.slot_of_label(v) for v in labels])
    ts, gs = layer_transmissions(model, Mode.DETERMINISTIC)
    out = np.empty(images.shape, dtype=complex)
    for i in range(0, len(images), chunk):
        tr = forward(model, images[i:i + chunk], Mode.DETERMINISTIC, gumbel=gs, transmissions=ts)
        out[i:i + chunk] = backward(model, tr, slots[i:i + chunk]).inputs
    return out


def applied_gradient(image: EncodedImage, gradient: np.ndarray, rule: str = "ascent") -> np.ndarray:
    """Real gradient along each pixel's flip direction (``rule="raw"``: plain ``Re(g)``)."""
    g = np.real(gradient)
    if rule == "raw":
        return g.copy()
    return np.where(image.feature_mask, g, -g)


def flip_map(image: EncodedImage, gradient: np.ndarray, cfg: AttackConfig = AttackConfig()) -> np.ndarray:
    """Boolean map of pixels C-FGSM flips, restricted to the image aperture."""
    flips = np.zeros(image.grid.shape, dtype=bool)
    if cfg.disable:
        return flips
    flips[image.grid.interior] = True
    flips &= applied_gradient(image, gradient, cfg.rule) > 0
    if cfg.mask_features:
        flips &= ~image.feature_mask
    return flips


def apply_flips(image: EncodedImage, flips: np.ndarray) -> EncodedImage:
    bright = image.feature_mask ^ flips
    return EncodedImage.from_bright(image.grid, image.grid.crop(bright))


def cfgsm(model: NetworkModel, image: EncodedImage, label: int,
          cfg: AttackConfig = AttackConfig()) -> EncodedImage:
    """Adversarial version of ``image`` for a model trained on ``label``."""
    grad = input_gradients(model, image.values[None], [label])[0]
    return apply_flips(image, flip_map(image, grad, cfg))


@dataclass
class AttackReport:
    clean: ConfusionResult
    attacked: ConfusionResult
    flow: np.ndarray  # [true class, attacked prediction] counts, same layout as matrices
    flips: np.ndarray  # number of flipped pixels per image
    adversarial: list[EncodedImage]

    @property
    def accuracy_before(self) -> float:
        return self.clean.accuracy

    @property
    def accuracy_after(self) -> float:
        return self.attacked.accuracy


def attack_report(model: NetworkModel, images: Sequence[EncodedImage], labels: Sequence[int],
                  cfg: AttackConfig = AttackConfig()) -> AttackReport:
    """Attack every image and compare clean and attacked predictions."""
    if len(images) == 0:
        raise ValueError("attack report of an empty dataset")
    labels = np.asarray(labels, dtype=int)
    x = np.stack([im.values for im in images])
    grads = input_gradients(model, x, labels)
    adv = [apply_flips(im, flip_map(im, g, cfg)) for im, g in zip(images, grads)]
    before = predict(model, x)
    after = predict(model, np.stack([a.values for a in adv]))
    clean = confusion(model.labels, labels, before)
    attacked = confusion(model.labels, labels, after)
    n = max(clean.matrix.shape[1], attacked.matrix.shape[1])
    flow = np.zeros((len(model.labels), n), dtype=int)
    flow[:, : attacked.matrix.shape[1]] = attacked.matrix
    nflip = np.array([int(np.sum(a.feature_mask != im.feature_mask)) for a, im in zip(adv, images)])
    return AttackReport(clean, attacked, flow, nflip, adv)


def flip_records(clean: EncodedImage, adv: EncodedImage) -> list[tuple[int, int, float, float]]:
    """``(row, col, old, new)`` for every changed aperture pixel (unpadded coordinates)."""
    a = clean.grid.crop(clean.values).real
    b = adv.grid.crop(adv.values).real
    rows, cols = np.nonzero(a != b)
    return [(int(r), int(c), float(a[r, c]), float(b[r, c])) for r, c in zip(rows, cols)]


__all__ = [
    "AttackConfig", "AttackReport", "applied_gradient", "apply_flips", "attack_report", "cfgsm", "flip_map",
    "flip_records", "input_gradients", "BRIGHT_VALUE", "DARK_VALUE",
]
