"""Self-describing binary checkpoint format for dense networks.

Byte layout (all multi-byte integers and floats little-endian):

    offset 0   magic bytes b"MCAE"
    offset 4   format version, u32 (currently 1)
    offset 8   layer count, u32
    then per layer, in order:
        in_dim   u32
        out_dim  u32
        act      u8 (0 = identity, 1 = relu, 2 = sigmoid)
        weights  out_dim * in_dim float64, row-major
        bias     out_dim float64

Round-trips are bit-exact. Dropout eligibility is policy, not weights, so
it is not stored; loaders for specific roles (autoencoder, classifier)
reapply their eligibility rules.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .nncore import DenseLayer, Network

MAGIC = b"MCAE"
VERSION = 1

ACTIVATION_TAGS = {"identity": 0, "relu": 1, "sigmoid": 2}
TAG_ACTIVATIONS = {tag: name for name, tag in ACTIVATION_TAGS.items()}


def network_to_bytes(net: Network) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        chunks.append(
            struct.pack("<IIB", layer.in_dim, layer.out_dim, ACTIVATION_TAGS[layer.activation])
        )
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_network(path, net: Network) -> None:
    with open(path, "wb") as fh:
        fh.write(network_to_bytes(net))


def network_from_bytes(data: bytes) -> Network:
    """Parse checkpoint bytes; dropout eligibility comes back all-False."""

    def take(offset: int, count: int) -> bytes:
        if offset + count > len(data):
            raise FormatError(
                f"checkpoint truncated: wanted {count} bytes, file ends", offset=offset
            )
        return data[offset : offset + count]

    if take(0, 4) != MAGIC:
        raise FormatError(f"bad magic bytes {data[:4]!r}, expected {MAGIC!r}", offset=0)
    version, n_layers = struct.unpack("<II", take(4, 8))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    offset = 12
    layers = []
    for k in range(n_layers):
        in_dim, out_dim, tag = struct.unpack("<IIB", take(offset, 9))
        if tag not in TAG_ACTIVATIONS:
            raise FormatError(f"unknown activation tag {tag} in layer {k}", offset=offset + 8)
        offset += 9
        w_bytes = out_dim * in_dim * 8
        weights = np.frombuffer(take(offset, w_bytes), dtype="<f8").reshape(out_dim, in_dim)
        offset += w_bytes
        bias = np.frombuffer(take(offset, out_dim * 8), dtype="<f8")
        offset += out_dim * 8
        layers.append(DenseLayer(weights.copy(), bias.copy(), TAG_ACTIVATIONS[tag]))
    if offset != len(data):
        raise FormatError(
            f"{len(data) - offset} trailing bytes after last layer", offset=offset
        )
    if not layers:
        raise FormatError("checkpoint contains no layers", offset=8)
    return Network(layers)


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())
