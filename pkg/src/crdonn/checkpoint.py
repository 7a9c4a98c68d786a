"""Binary model container.

Layout (all integers and floats little-endian)::

    offset  size  field
    0       8     magic b"CRDONN\\x00M"
    8       2     u16 format version (currently 1)
    10      2     u16 flags (bit 0: raw logits present)
    12      20    u32 nx, ny, pad, k, n_layers
    32      32    f64 pitch, wavelength, z, tau
    64      4     u32 length J of the JSON metadata block
    68      J     UTF-8 JSON: method, labels, detector layout, LUT vectors
    ...           per layer: u16 grey-level index, padded_ny * padded_nx values
    ...           if flag 0: per layer f64 logits, padded_ny * padded_nx * k values
    end-4   4     u32 CRC-32 of every preceding byte

The grey-level maps are the deployable artifact. Each entry indexes the
stored LUT, and ``lut.levels`` maps it back to the device grey level.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .field import GridSpec
from .network import DetectorLayout, NetworkModel
from .slm import DeviceLUT, GumbelLayer

MAGIC = b"CRDONN\x00M"
VERSION = 1
FLAG_LOGITS = 1
_FIXED = struct.Struct("<8sHH5I4dI")


class CheckpointError(ValueError):
    pass


def dumps(model: NetworkModel, include_logits: bool = True) -> bytes:
    g = model.grid
    lut = model.layers[0].lut
    meta = {
        "method": model.method.value,
        "labels": list(model.labels),
        "detectors": {
            "regions": [list(r) for r in model.detectors.regions],
            "slot_map": list(model.detectors.slot_map),
            "num_slots": model.detectors.num_slots,
        },
        "lut": {
            "amplitude": [float(v) for v in lut.amplitude],
            "phase": [float(v) for v in lut.phase],
            "levels": [int(v) for v in lut.levels],
        },
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    flags = FLAG_LOGITS if include_logits else 0
    head = _FIXED.pack(MAGIC, VERSION, flags, g.nx, g.ny, g.pad, lut.k, len(model.layers),
                       g.pitch, g.wavelength, model.z, model.layers[0].tau, len(blob))
    parts = [head, blob]
    for levels in model.deployed_levels():
        parts.append(levels.astype("<u2").tobytes())
    if include_logits:
        for layer in model.layers:
            parts.append(layer.logits.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes) -> NetworkModel:
    if len(data) < _FIXED.size + 4:
        raise CheckpointError("checkpoint truncated")
    magic, version = struct.unpack_from("<8sH", data)
    if magic != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"checkpoint version {version} is corrupt (checksum mismatch)")
    (_, _, flags, nx, ny, pad, k, n_layers, pitch, wl, z, tau, jlen) = _FIXED.unpack_from(data)
    pos = _FIXED.size
    try:
        meta = json.loads(data[pos:pos + jlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"bad metadata block: {exc}") from None
    pos += jlen
    grid = GridSpec(nx, ny, pitch, wl, pad)
    lut = DeviceLUT(np.array(meta["lut"]["amplitude"]), np.array(meta["lut"]["phase"]),
                    np.array(meta["lut"]["levels"]))
    if lut.k != k:
        raise CheckpointError("LUT length disagrees with header")
    npix = grid.padded_ny * grid.padded_nx
    need = pos + n_layers * npix * 2 + (n_layers * npix * k * 8 if flags & FLAG_LOGITS else 0) + 4
    if len(data) != need:
        raise CheckpointError(f"checkpoint size {len(data)} does not match header ({need})")
    level_maps = []
    for _ in range(n_layers):
        lv = np.frombuffer(data, "<u2", npix, pos).reshape(grid.shape).astype(int)
        if lv.max(initial=0) >= k:
            raise CheckpointError("grey-level index out of range")
        level_maps.append(lv)
        pos += npix * 2
    layers = []
    for lv in level_maps:
        if flags & FLAG_LOGITS:
            logits = np.frombuffer(data, "<f8", npix * k, pos).reshape(grid.shape + (k,)).copy()
            pos += npix * k * 8
            layers.append(GumbelLayer(grid, logits, lut, tau))
        else:
            layers.append(GumbelLayer.from_levels(grid, lut, lv, tau))
    d = meta["detectors"]
    det = DetectorLayout(tuple(tuple(r) for r in d["regions"]), tuple(d["slot_map"]), d["num_slots"])
    return NetworkModel(grid, layers, det, z, meta["method"], tuple(meta["labels"]))


def save_model(model: NetworkModel, path: str | os.PathLike, include_logits: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, include_logits))


def load_model(path: str | os.PathLike) -> NetworkModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
