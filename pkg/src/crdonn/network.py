"""End-to-end forward model of the cascaded SLM network.

image plane --z--> RDA 1 --z--> ... --z--> RDA K --z--> camera

Every gap uses the same distance ``z``. The camera intensity is summed over
rectangular detector regions, and each region feeds one slot of a
fixed-length score vector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .field import DTYPE, GridSpec
from .propagation import Method, PropagationKernel, build_kernel
from .slm import DeviceLUT, EncodedImage, GumbelLayer, level_transmission, relaxed_transmission

NUM_SLOTS = 10
DEFAULT_Z = 0.2794
PITCH = 36e-6
WAVELENGTH = 532e-9


class Mode(str, enum.Enum):
    TRAIN = "train"  # Gumbel noise, hard forward, straight-through backward
    DETERMINISTIC = "deterministic"  # g = 0, hard forward
    SOFT = "soft"  # relaxed forward, exact gradients (used for gradient checks)


@dataclass(frozen=True)
class DetectorLayout:
    """Readout rectangles ``(row0, col0, height, width)`` in unpadded camera pixels."""

    regions: tuple[tuple[int, int, int, int], ...]
    slot_map: tuple[int, ...]
    num_slots: int = NUM_SLOTS

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(tuple(int(v) for v in r) for r in self.regions))
        object.__setattr__(self, "slot_map", tuple(int(s) for s in self.slot_map))
        if len(self.regions) != len(self.slot_map):
            raise ValueError("slot_map needs one slot per region")
        if self.num_slots < len(self.regions):
            raise ValueError("more regions than score slots")
        if len(set(self.slot_map)) != len(self.slot_map):
            raise ValueError("slot_map entries must be distinct")
        if any(not 0 <= s < self.num_slots for s in self.slot_map):
            raise ValueError("slot index out of range")
        masks = []
        for r0, c0, h, w in self.regions:
            if h < 1 or w < 1 or r0 < 0 or c0 < 0:
                raise ValueError(f"invalid region {(r0, c0, h, w)}")
            masks.append((r0, c0, h, w))
        for i, a in enumerate(masks):
            for b in masks[i + 1:]:
                if a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]:
                    raise ValueError(f"detector regions {a} and {b} overlap")

    @classmethod
    def default(cls, grid: GridSpec, slots: Sequence[int], size: int = 10,
                num_slots: int = NUM_SLOTS) -> "DetectorLayout":
        """Regions centred vertically and spread evenly across the aperture width."""
        n = len(slots)
        row0 = (grid.ny - size) // 2
        regions = []
        for i in range(n):
            centre = grid.nx * (2 * i + 1) / (2 * n)
            col0 = int(round(centre - size / 2))
            col0 = min(max(col0, 0), grid.nx - size)
            regions.append((row0, col0, size, size))
        return cls(tuple(regions), tuple(slots), num_slots)

    def check_fits(self, grid: GridSpec) -> None:
        for r0, c0, h, w in self.regions:
            if r0 + h > grid.ny or c0 + w > grid.nx:
                raise ValueError(f"region {(r0, c0, h, w)} outside the {grid.ny}x{grid.nx} camera window")

    def region_sums(self, intensity: np.ndarray, grid: GridSpec) -> np.ndarray:
        """Sum intensity (padded, optionally batched) inside each region."""
        p = grid.pad
        return np.stack(
            [intensity[..., p + r0:p + r0 + h, p + c0:p + c0 + w].sum(axis=(-2, -1))
             for r0, c0, h, w in self.regions],
            axis=-1,
        )

    def region_mask(self, grid: GridSpec) -> np.ndarray:
        """Integer map over the padded grid: region index, or -1 outside."""
        m = np.full(grid.shape, -1, dtype=int)
        p = grid.pad
        for i, (r0, c0, h, w) in enumerate(self.regions):
            m[p + r0:p + r0 + h, p + c0:p + c0 + w] = i
        return m


@dataclass(eq=False)
class NetworkModel:
    grid: GridSpec
    layers: list[GumbelLayer]
    detectors: DetectorLayout
    z: float = DEFAULT_Z
    method: Method = Method.CONV
    labels: tuple[int, ...] = ()
    _kernel: PropagationKernel | None = field(default=None, repr=False)

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for layer in self.layers:
            if layer.grid != self.grid:
                raise ValueError("all layers must share the model grid")
            if layer.lut.k != self.layers[0].lut.k:
                raise ValueError("all layers must have the same number of levels")
        self.detectors.check_fits(self.grid)
        if not self.labels:
            self.labels = tuple(self.detectors.slot_map)
        self.labels = tuple(int(v) for v in self.labels)
        if len(self.labels) != len(self.detectors.regions):
            raise ValueError("need one class label per detector region")

    @classmethod
    def create(cls, grid: GridSpec, lut: DeviceLUT, labels: Sequence[int], *,
               n_layers: int = 3, z: float = DEFAULT_Z, method: Method | str = Method.CONV,
               tau: float = 1.0, detector_size: int = 10, seed: int = 0) -> "NetworkModel":
        """Randomly initialised model; class ``labels[i]`` reads out slot ``labels[i]``."""
        rng = np.random.default_rng(seed)
        layers = [GumbelLayer.init(grid, lut, rng, tau=tau) for _ in range(n_layers)]
        det = DetectorLayout.default(grid, labels, size=detector_size)
        return cls(grid, layers, det, z, Method.parse(method), tuple(labels))

    @property
    def kernel(self) -> PropagationKernel:
        if self._kernel is None:
            self._kernel = build_kernel(self.method, self.grid, self.z)
        return self._kernel

    @property
    def num_slots(self) -> int:
        return self.detectors.num_slots

    def slot_of_label(self, label: int) -> int:
        try:
            return self.detectors.slot_map[self.labels.index(int(label))]
        except ValueError:
            raise ValueError(f"label {label} is not one of the model classes {self.labels}") from None

    def label_of_slot(self, slot: int) -> int:
        return self.labels[self.detectors.slot_map.index(slot)]

    def deployed_levels(self) -> list[np.ndarray]:
        """Deterministic grey-level index per pixel, one array per layer."""
        return [layer.selected_levels() for layer in self.layers]


@dataclass(eq=False)
class ForwardTrace:
    """Everything ``backward`` needs, plus the camera readout.

    ``fields`` holds ``2K + 1`` arrays, in order: the field arriving at layer 1,
    the field leaving layer 1, ..., the field leaving layer K, and the camera
    field. Arrays carry a leading batch axis.
    """

    mode: Mode
    inputs: np.ndarray
    fields: list[np.ndarray]
    transmissions: list[np.ndarray]
    gumbel: list[np.ndarray | None]
    intensity: np.ndarray
    energy: np.ndarray
    region_sums: np.ndarray
    score: np.ndarray
    percentages: np.ndarray
    degenerate: np.ndarray

    @property
    def camera(self) -> np.ndarray:
        return self.fields[-1]


def _as_batch(image, grid: GridSpec) -> tuple[np.ndarray, bool]:
    if isinstance(image, EncodedImage):
        if image.grid.shape != grid.shape:
            raise ValueError(
                f"image grid {image.grid.shape} does not match model grid {grid.shape}"
            )
        return image.values[None], True
    if isinstance(image, (list, tuple)) and image and isinstance(image[0], EncodedImage):
        return np.stack([_as_batch(im, grid)[0][0] for im in image]), False
    a = np.asarray(image, dtype=DTYPE)
    if a.shape[-2:] != grid.shape:
        raise ValueError(f"input shape {a.shape[-2:]} does not match model grid {grid.shape}")
    single = a.ndim == 2
    return (a[None] if single else a), single


def layer_transmissions(model: NetworkModel, mode: Mode | str,
                        rng: np.random.Generator | None = None,
                        gumbel: Sequence[np.ndarray | None] | None = None
                        ) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Per-layer transmission maps for one forward pass, and the noise used."""
    mode = Mode(mode)
    ts, gs = [], []
    for i, layer in enumerate(model.layers):
        if gumbel is not None:
            g = gumbel[i]
        elif mode is Mode.TRAIN:
            if rng is None:
                raise ValueError("train mode needs an rng for Gumbel noise")
            g = layer.sample_gumbel(rng)
        else:
            g = None
        if mode is Mode.SOFT:
            t = relaxed_transmission(layer.probabilities(g), layer.lut)
        else:
            t = level_transmission(layer.selected_levels(g), layer.lut)
        ts.append(t)
        gs.append(g)
    return ts, gs


def forward(model: NetworkModel, image, mode: Mode | str = Mode.DETERMINISTIC, *,
            rng: np.random.Generator | None = None,
            gumbel: Sequence[np.ndarray | None] | None = None,
            transmissions: Sequence[np.ndarray] | None = None) -> ForwardTrace:
    """Run a single image or a batch through the network.

    The Gumbel noise (``train`` mode) is drawn once per call and shared by every
    image in the batch. It is kept in the trace for the backward pass.
    Precomputed ``transmissions`` skip the per-call layer evaluation.
    """
    mode = Mode(mode)
    x, _ = _as_batch(image, model.grid)
    if transmissions is None:
        ts, gs = layer_transmissions(model, mode, rng, gumbel)
    else:
        ts = list(transmissions)
        gs = list(gumbel) if gumbel is not None else [None] * len(ts)
    k = model.kernel
    fields = []
    u = x
    for t in ts:
        u = k.apply(u)
        fields.append(u)
        u = u * t
        fields.append(u)
    cam = k.apply(u)
    fields.append(cam)
    return _readout_arrays(model, mode, x, fields, ts, gs)


def _readout_arrays(model, mode, x, fields, ts, gs) -> ForwardTrace:
    cam = fields[-1]
    inten = cam.real ** 2 + cam.imag ** 2
    energy = inten.sum(axis=(-2, -1))
    sums = model.detectors.region_sums(inten, model.grid)
    score = np.zeros(sums.shape[:-1] + (model.num_slots,))
    score[..., list(model.detectors.slot_map)] = sums
    pct, degenerate = region_percentages(sums)
    return ForwardTrace(mode, x, fields, ts, gs, inten, energy, sums, score, pct, degenerate)


def region_percentages(sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Share of each region in the total over all regions, in percent.

    All-dark inputs are flagged degenerate and reported as a uniform split.
    """
    sums = np.asarray(sums, dtype=float)
    total = sums.sum(axis=-1, keepdims=True)
    degenerate = (total[..., 0] <= 0) | ~np.isfinite(total[..., 0])
    safe = np.where(total > 0, total, 1.0)
    pct = np.where(degenerate[..., None], 100.0 / sums.shape[-1], 100.0 * sums / safe)
    return pct, degenerate


@dataclass(frozen=True)
class Readout:
    label: int
    slot: int
    percentages: np.ndarray
    degenerate: bool


def predict_slots(model: NetworkModel, region_sums: np.ndarray) -> np.ndarray:
    """Argmax over regions, ties (including all-dark) going to the lowest slot."""
    slots = np.asarray(model.detectors.slot_map)
    order = np.argsort(slots, kind="stable")
    # argmax over regions sorted by slot returns the lowest slot on ties
    best = np.argmax(np.asarray(region_sums)[..., order], axis=-1)
    return slots[order][best]


def readout(model: NetworkModel, trace: ForwardTrace, index: int = 0) -> Readout:
    slot = int(predict_slots(model, trace.region_sums[index]))
    return Readout(model.label_of_slot(slot), slot, trace.percentages[index].copy(),
                   bool(trace.degenerate[index]))


def normalized_score(trace: ForwardTrace) -> np.ndarray:
    """Score vector divided by the total camera energy (0 for a dark camera)."""
    e = trace.energy[..., None]
    return np.where(e > 0, trace.score / np.where(e > 0, e, 1.0), 0.0)


def one_hot(slot, num_slots: int = NUM_SLOTS) -> np.ndarray:
    slot = np.atleast_1d(np.asarray(slot, dtype=int))
    out = np.zeros(slot.shape + (num_slots,))
    np.put_along_axis(out, slot[..., None], 1.0, axis=-1)
    return out


def mse_loss(score: np.ndarray, target_slot, num_slots: int | None = None) -> float | np.ndarray:
    """Mean squared error between a (normalised) score vector and a one-hot target.

    Accepts a single vector or a batch; returns a float or one loss per row.
    """
    score = np.asarray(score, dtype=float)
    n = score.shape[-1] if num_slots is None else num_slots
    if score.shape[-1] != n:
        raise ValueError(f"score has {score.shape[-1]} slots, expected {n}")
    target = one_hot(target_slot, n)
    if score.ndim == 1:
        target = target[0]
    loss = np.mean((score - target) ** 2, axis=-1)
    return float(loss) if np.ndim(loss) == 0 else loss


@dataclass
class ConfusionResult:
    labels: tuple[int, ...]
    matrix: np.ndarray  # rows: true class, cols: predicted class (plus "other")
    predictions: np.ndarray

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.matrix[:, : len(self.labels)]) / self.total)


def predict(model: NetworkModel, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Deterministic predicted labels for a batch of padded image arrays."""
    ts, _ = layer_transmissions(model, Mode.DETERMINISTIC)
    out = []
    for i in range(0, len(images), chunk):
        tr = forward(model, images[i:i + chunk], Mode.DETERMINISTIC, transmissions=ts)
        slots = predict_slots(model, tr.region_sums)
        out.extend(_slot_to_label(model, s) for s in slots)
    return np.asarray(out, dtype=int)


def _slot_to_label(model: NetworkModel, slot: int) -> int:
    try:
        return model.label_of_slot(int(slot))
    except ValueError:
        return -1


def confusion(labels: Sequence[int], truth: Sequence[int], predicted: Sequence[int]) -> ConfusionResult:
    """Confusion counts. Predictions outside ``labels`` land in an extra last column."""
    labels = tuple(int(v) for v in labels)
    truth = np.asarray(truth, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if len(truth) == 0:
        raise ValueError("confusion matrix of an empty dataset")
    idx = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(labels), len(labels) + 1), dtype=int)
    for t, p in zip(truth, predicted):
        if int(t) not in idx:
            raise ValueError(f"true label {t} is not a model class")
        m[idx[int(t)], idx.get(int(p), len(labels))] += 1
    if not m[:, -1].any():
        m = m[:, :-1]
    return ConfusionResult(labels, m, predicted)


def confusion_matrix(model: NetworkModel, images: np.ndarray, truth: Sequence[int]) -> ConfusionResult:
    if len(truth) == 0:
        raise ValueError("confusion matrix of an empty dataset")
    return confusion(model.labels, truth, predict(model, np.asarray(images)))
