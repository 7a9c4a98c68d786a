"""Command-line interface: ``crdonn {train,infer,attack,eval,calibrate,idx-info}``.

Run configuration is a flat ``key = value`` text file (``#`` starts a
comment); ``--set key=value`` on the command line overrides file values.
See ``CONFIG_KEYS`` for the recognised keys and their defaults.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import propagation
from .adversarial import AttackConfig, attack_report, flip_records
from .autodiff import NumericalError, TrainConfig, train
from .calibrate import phase_scan
from .checkpoint import CheckpointError, load_model, save_model
from .dataio import IDXError, LabeledImageSet, filter_labels, load_idx, read_pgm, resample_all, write_csv, write_pgm
from .field import GridSpec
from .network import Mode, NetworkModel, confusion_matrix, forward, readout
from .slm import EncodedImage, LUTError, builtin_lut, encode_image, load_lut

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("crdonn")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    labels: str = "0,1,7"
    train_samples: int = 0  # 0 = all matching samples
    test_samples: int = 0
    nx: int = 100
    pitch: float = 36e-6
    wavelength: float = 532e-9
    pad: int = 80
    levels: int = 256
    lut: str = "builtin:phase"
    layers: int = 3
    z: float = 0.2794
    method: str = "conv"
    detector_size: int = 10
    epochs: int = 100
    lr: float = 0.5
    batch: int = 500
    tau: float = 1.0
    seed: int = 0
    chunk: int = 50
    output_dir: str = "runs/default"

    def __post_init__(self):
        for f in fields(self):
            raw = getattr(self, f.name)
            try:
                value = {"int": int, "float": float}.get(f.type, str)(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {f.name!r}: cannot parse {raw!r} as {f.type}") from None
            setattr(self, f.name, value)

    @property
    def label_list(self) -> list[int]:
        try:
            out = [int(v) for v in self.labels.replace(" ", "").split(",") if v != ""]
        except ValueError:
            raise ConfigError(f"labels must be a comma-separated list of digits, got {self.labels!r}") from None
        if not out:
            raise ConfigError("labels must not be empty")
        return out

    def validate(self, need_train: bool = False, need_test: bool = False) -> None:
        for name in ("pitch", "wavelength", "z", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("nx", "layers", "epochs", "batch", "chunk", "detector_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pad < 0 or self.lr < 0:
            raise ConfigError("pad and lr must be non-negative")
        try:
            propagation.Method.parse(self.method)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.label_list
        for flag, keys in ((need_train, ("train_images", "train_labels")),
                           (need_test, ("test_images", "test_labels"))):
            if not flag:
                continue
            for key in keys:
                path = getattr(self, key)
                if not path:
                    raise ConfigError(f"config key {key!r} is required")
                if not os.path.exists(path):
                    raise DataError(f"dataset file not found: {path}")

    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.nx, self.pitch, self.wavelength, self.pad)

    def device_lut(self):
        try:
            lut = builtin_lut(self.lut.split(":", 1)[1]) if self.lut.startswith("builtin:") else load_lut(self.lut)
            return lut if self.levels >= lut.k else lut.subsample(self.levels)
        except LUTError as exc:
            raise ConfigError(f"LUT: {exc}") from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch=self.batch, tau=self.tau,
                           seed=self.seed, chunk=self.chunk)


CONFIG_KEYS = {f.name: f.default for f in fields(RunConfig)}


def read_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    values: dict[str, str] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        with open(path) as fh:
            try:
                parser.read_string("[run]\n" + fh.read())
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
        values.update(parser["run"])
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**values)
    base = Path(path).parent if path else Path.cwd()
    for key in ("train_images", "train_labels", "test_images", "test_labels", "output_dir"):
        v = getattr(cfg, key)
        if v and not os.path.isabs(v):
            setattr(cfg, key, str(base / v))
    if cfg.lut and not cfg.lut.startswith("builtin:") and not os.path.isabs(cfg.lut):
        cfg.lut = str(base / cfg.lut)
    return cfg


# -- dataset plumbing --------------------------------------------------------


def _load_split(cfg: RunConfig, which: str) -> LabeledImageSet:
    images, labels = getattr(cfg, f"{which}_images"), getattr(cfg, f"{which}_labels")
    try:
        data = load_idx(images, labels)
    except FileNotFoundError as exc:
        raise DataError(f"dataset file not found: {exc.filename}") from None
    except IDXError as exc:
        raise DataError(f"{images}: {exc}") from None
    try:
        data = filter_labels(data, cfg.label_list)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    limit = cfg.train_samples if which == "train" else cfg.test_samples
    if limit:
        offset = 0 if which == "train" else 1
        perm = np.random.default_rng(cfg.seed + offset).permutation(len(data))[:limit]
        data = data.take(np.sort(perm))
    return data


def encode_set(data: LabeledImageSet, grid: GridSpec) -> list[EncodedImage]:
    side = grid.nx
    return [encode_image(im, grid) for im in resample_all(data.images, side)]


def _ensure_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_confusion(path: Path, result) -> None:
    header = ["true\\pred"] + [str(v) for v in result.labels]
    if result.matrix.shape[1] > len(result.labels):
        header.append("other")
    write_csv(path, header, ([str(lab)] + [int(v) for v in row]
                             for lab, row in zip(result.labels, result.matrix)))


# -- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = read_config(args.config, args.set)
    cfg.validate(need_train=True)
    out = _ensure_out(cfg)
    grid = cfg.grid()
    train_set = _load_split(cfg, "train")
    test_set = _load_split(cfg, "test") if cfg.test_images else None
    x_train = np.stack([e.values for e in encode_set(train_set, grid)])
    test = None
    if test_set is not None:
        test = (np.stack([e.values for e in encode_set(test_set, grid)]), test_set.labels)
    model = NetworkModel.create(grid, cfg.device_lut(), cfg.label_list, n_layers=cfg.layers, z=cfg.z,
                                method=cfg.method, tau=cfg.tau, detector_size=cfg.detector_size,
                                seed=cfg.seed)
    history = train(model, x_train, train_set.labels, cfg.train_config(), test=test,
                    callback=lambda r: print(f"epoch {r.epoch}: loss {r.loss:.5g} "
                                             f"train {r.train_acc:.3f} test {r.test_acc}", flush=True))
    save_model(model, out / "model.crdn")
    (out / "history.csv").write_text(history.to_csv())
    eval_x, eval_y = test if test is not None else (x_train, train_set.labels)
    result = confusion_matrix(model, eval_x, eval_y)
    _write_confusion(out / "confusion.csv", result)
    print(f"accuracy {result.accuracy:.4f} on {result.total} samples; model written to {out / 'model.crdn'}")
    return EXIT_OK


def _load_checkpoint(path: str) -> NetworkModel:
    if not os.path.exists(path):
        raise DataError(f"model file not found: {path}")
    return load_model(path)


def cmd_eval(args) -> int:
    cfg = read_config(args.config, args.set)
    cfg.validate(need_test=True)
    model = _load_checkpoint(args.model)
    cfg.labels = ",".join(str(v) for v in model.labels)
    out = _ensure_out(cfg)
    data = _load_split(cfg, "test")
    x = np.stack([e.values for e in encode_set(data, model.grid)])
    result = confusion_matrix(model, x, data.labels)
    _write_confusion(out / "confusion.csv", result)
    print(f"accuracy {result.accuracy:.4f} on {result.total} samples")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = read_config(args.config, args.set)
    cfg.validate(need_test=True)
    model = _load_checkpoint(args.model)
    cfg.labels = ",".join(str(v) for v in model.labels)
    out = _ensure_out(cfg)
    data = _load_split(cfg, "test")
    images = encode_set(data, model.grid)
    rep = attack_report(model, images, data.labels, AttackConfig(mask_features=not args.no_mask, rule=args.rule))
    _write_confusion(out / "confusion_before.csv", rep.clean)
    _write_confusion(out / "confusion_after.csv", rep.attacked)
    summary = {"accuracy_before": rep.accuracy_before, "accuracy_after": rep.accuracy_after,
               "samples": rep.clean.total, "mean_flipped_pixels": float(rep.flips.mean())}
    (out / "attack_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for i in range(min(args.samples, len(images))):
        write_pgm(out / f"adv_{i:04d}.pgm", model.grid.crop(rep.adversarial[i].feature_mask).astype(float),
                  normalize=False)
        write_pgm(out / f"clean_{i:04d}.pgm", images[i].bright.astype(float), normalize=False)
        write_csv(out / f"flips_{i:04d}.csv", ["row", "col", "old", "new"],
                  flip_records(images[i], rep.adversarial[i]))
    print(f"accuracy before {rep.accuracy_before:.4f} after {rep.accuracy_after:.4f} "
          f"({rep.clean.total} samples)")
    return EXIT_OK


def _infer_image(args, grid: GridSpec) -> tuple[np.ndarray, int | None]:
    if args.pgm:
        raw = read_pgm(args.pgm) / 255.0
        label = None
    else:
        if not args.images or not args.labels:
            raise ConfigError("infer needs --pgm or --images and --labels")
        try:
            data = load_idx(args.images, args.labels)
        except FileNotFoundError as exc:
            raise DataError(f"dataset file not found: {exc.filename}") from None
        if not 0 <= args.index < len(data):
            raise DataError(f"index {args.index} outside dataset of {len(data)} images")
        raw = resample_all(data.images[args.index:args.index + 1], grid.nx)[0]
        label = int(data.labels[args.index])
    if raw.shape != (grid.ny, grid.nx):
        raise DataError(f"image is {raw.shape[0]}x{raw.shape[1]} but the model expects {grid.ny}x{grid.nx}")
    return raw, label


def cmd_infer(args) -> int:
    model = _load_checkpoint(args.model)
    raw, label = _infer_image(args, model.grid)
    image = encode_image(raw, model.grid)
    trace = forward(model, image, Mode.DETERMINISTIC)
    res = readout(model, trace)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cam = model.grid.crop(trace.intensity[0])
    scale = write_pgm(out / "camera.pgm", cam)
    (out / "camera.txt").write_text(
        f"8-bit camera intensity, 255 corresponds to {scale!r} (max-normalised)\n")
    write_csv(out / "regions.csv", ["label", "slot", "region_sum", "percentage"],
              ([lab, slot, repr(float(s)), f"{p:.4f}"] for lab, slot, s, p in
               zip(model.labels, model.detectors.slot_map, trace.region_sums[0], res.percentages)))
    shares = ", ".join(f"{lab}: {p:.1f}%" for lab, p in zip(model.labels, res.percentages))
    flag = " (degenerate: camera dark)" if res.degenerate else ""
    truth = "" if label is None else f" (true {label})"
    print(f"predicted {res.label}{truth}{flag}; {shares}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    grid = GridSpec(args.nx, args.nx, args.pitch, args.wavelength, args.pad)
    phis = np.linspace(0.0, np.pi, args.steps)
    res = phase_scan(grid, args.square, args.z, phis, method=args.method, keep_patterns=args.patterns)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "phase_scan.csv", ["phi", "center_intensity"],
              ([repr(float(p)), repr(float(c))] for p, c in zip(res.phis, res.center_intensities)))
    if res.patterns is not None:
        for i, pat in enumerate(res.patterns):
            write_pgm(out / f"scan_{i:03d}.pgm", pat)
    lo, hi = res.plateau()
    print(f"brightest centre at phi = {res.argmax_phi / np.pi:.3f} pi; "
          f"plateau (>=70% of max) {lo / np.pi:.3f} pi .. {hi / np.pi:.3f} pi")
    return EXIT_OK


def cmd_idx_info(args) -> int:
    try:
        data = load_idx(args.images, args.labels)
    except FileNotFoundError as exc:
        raise DataError(f"dataset file not found: {exc.filename}") from None
    except IDXError as exc:
        raise DataError(str(exc)) from None
    counts = np.bincount(data.labels, minlength=10)
    print(f"{len(data)} images of {data.images.shape[1]}x{data.images.shape[2]}")
    print("label counts: " + " ".join(f"{i}:{c}" for i, c in enumerate(counts)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crdonn", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for FFTs (default: all available cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", help="key = value run configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")

    sp = sub.add_parser("train", help="train a model and write checkpoint, history and confusion matrix")
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="confusion matrix of a checkpoint on the configured test set")
    sp.add_argument("model", help="checkpoint written by train")
    with_config(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("attack", help="C-FGSM attack on the configured test set")
    sp.add_argument("model", help="checkpoint written by train")
    with_config(sp)
    sp.add_argument("--samples", type=int, default=0,
                    help="export adversarial PGMs and flip maps for the first N images")
    sp.add_argument("--no-mask", action="store_true", help="allow flips of featured pixels")
    sp.add_argument("--rule", choices=("ascent", "raw"), default="ascent",
                    help="flip on the gradient along the flip direction (ascent) or on Re(g) > 0 (raw)")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("infer", help="classify one image and export the camera pattern")
    sp.add_argument("model", help="checkpoint written by train")
    sp.add_argument("--pgm", help="8-bit PGM at the model's aperture size")
    sp.add_argument("--images", help="IDX image file")
    sp.add_argument("--labels", help="IDX label file")
    sp.add_argument("--index", type=int, default=0, help="sample index in the IDX files")
    sp.add_argument("--output-dir", default="infer_out", help="directory for camera.pgm and regions.csv")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("calibrate", help="square-aperture phase scan of the image SLM")
    sp.add_argument("--nx", type=int, default=100, help="aperture side in pixels")
    sp.add_argument("--pad", type=int, default=0, help="zero border in pixels")
    sp.add_argument("--pitch", type=float, default=36e-6, help="pixel pitch [m]")
    sp.add_argument("--wavelength", type=float, default=532e-9, help="wavelength [m]")
    sp.add_argument("--square", type=int, default=6, help="side of the grey-level-255 square")
    sp.add_argument("--z", type=float, default=1.1176, help="SLM to camera distance [m]")
    sp.add_argument("--steps", type=int, default=21, help="number of phases in [0, pi]")
    sp.add_argument("--method", default="conv", help="propagation method: conv or spectral")
    sp.add_argument("--patterns", action="store_true", help="write one PGM per phase")
    sp.add_argument("--output-dir", default="calibrate_out", help="directory for phase_scan.csv")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("idx-info", help="summarise an IDX image/label file pair")
    sp.add_argument("images", help="IDX image file (raw or gzip)")
    sp.add_argument("labels", help="IDX label file (raw or gzip)")
    sp.set_defaults(func=cmd_idx_info)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    propagation.FFT_WORKERS = args.threads if args.threads else os.cpu_count()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IDXError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
