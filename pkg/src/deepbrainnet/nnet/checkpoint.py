"""Flat binary checkpoints for the mini network.

Layout (all integers little-endian):

    bytes 0..7    magic b"DBNMINI\\0"
    u32           format version (1)
    u32           input size
    u32           class count
    u32           base channel count
    f32           dropout rate
    u32           number of parameter arrays
    per array:    kind code u8, ndim u8, then ndim u32 dimensions
    then          every parameter as f32, flattened C-order, in declaration order

A sidecar CSV (same path + ".layers.csv") lists layer names, kinds, parameter
names, and shapes for inspection.
"""

from __future__ import annotations

import struct

import numpy as np

from .network import Network, build_deepbrainnet_mini

MAGIC = b"DBNMINI\x00"
VERSION = 1

_KIND_CODES = {
    "conv2d": 1,
    "depthwise_conv2d": 2,
    "pointwise_conv2d": 3,
    "dense": 4,
    "ds_block": 5,
    "residual_block": 6,
    "relu": 7,
    "global_avg_pool": 8,
    "dropout": 9,
    "softmax": 10,
}


class CheckpointError(ValueError):
    pass


def _param_records(network: Network):
    """(layer name, kind, param name, array) in declaration order."""
    records = []
    for name, layer in network.named_layers():
        for pname, param in zip(layer.param_names(), layer.parameters()):
            records.append((name, layer.kind, pname, param))
    return records


def save_checkpoint(network: Network, path) -> None:
    records = _param_records(network)
    header = bytearray()
    header += MAGIC
    header += struct.pack(
        "<IIIIfI",
        VERSION,
        network.input_size,
        network.n_classes,
        network.base_channels,
        network.dropout.rate,
        len(records),
    )
    blob = bytearray()
    for _, kind, _, param in records:
        header += struct.pack("<BB", _KIND_CODES[kind], param.ndim)
        header += struct.pack(f"<{param.ndim}I", *param.shape)
        blob += param.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(bytes(blob))

    lines = ["index,layer,kind,param,shape"]
    for i, (name, kind, pname, param) in enumerate(records):
        shape = "x".join(str(d) for d in param.shape)
        lines.append(f"{i},{name},{kind},{pname},{shape}")
    with open(f"{path}.layers.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"bad magic in {path!r}")
    pos = 8
    version, input_size, n_classes, base_channels, dropout_rate, n_arrays = struct.unpack_from(
        "<IIIIfI", blob, pos
    )
    pos += struct.calcsize("<IIIIfI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    shapes = []
    for _ in range(n_arrays):
        kind_code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        shapes.append((kind_code, dims))

    network = build_deepbrainnet_mini(
        input_size, n_classes, seed=0, dropout_rate=dropout_rate, base_channels=base_channels
    )
    records = _param_records(network)
    if len(records) != n_arrays:
        raise CheckpointError(
            f"checkpoint lists {n_arrays} parameter arrays, network has {len(records)}"
        )
    for (name, kind, pname, param), (kind_code, dims) in zip(records, shapes):
        if _KIND_CODES[kind] != kind_code or tuple(param.shape) != dims:
            raise CheckpointError(
                f"layer table mismatch at {name}.{pname}: "
                f"expected {kind}{tuple(param.shape)}, found code {kind_code} dims {dims}"
            )
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        param[...] = values.astype(np.float64).reshape(dims)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes in {path!r}")
    return network
