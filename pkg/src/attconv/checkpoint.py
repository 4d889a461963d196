"""Single-file binary checkpoints.

Layout: the 8-byte magic ``ATTCONV1``, an 8-byte little-endian manifest
length, the UTF-8 JSON manifest, then one little-endian float64 blob per
tensor in manifest order. The manifest records the format version, both
configs, the vocabulary token list, the label order, and a tensor
directory of shapes and byte offsets. Save, load, save again reproduces
the file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import Vocabulary
from .errors import ConfigError, FormatError
from .model import Model, ModelConfig, TrainConfig, build_model

MAGIC = b"ATTCONV1"
FORMAT_VERSION = 1


def _manifest(model: Model, train_config: TrainConfig) -> dict:
    tensors = {}
    offset = 0
    for name, node in model.params.items():
        tensors[name] = {"shape": list(node.value.shape), "offset": offset}
        offset += node.value.size * 8
    return {
        "format-version": FORMAT_VERSION,
        "model-config": model.config.to_json(),
        "train-config": train_config.to_json(),
        "vocab": list(model.vocab.tokens),
        "labels": list(model.label_names),
        "tensors": tensors,
    }


def save_checkpoint(path: str, model: Model, train_config: TrainConfig) -> None:
    manifest = json.dumps(_manifest(model, train_config),
                          ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for node in model.params.values():
            fh.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[Model, TrainConfig]:
    """Rebuild a model from a checkpoint file.

    The network is constructed from the stored config and every tensor is
    overwritten from the blob, so the result is independent of the
    initializer. Version mismatches name both versions in the error.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an attconv checkpoint (bad magic)")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest ({exc})") from None
    version = manifest.get("format-version")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"{path}: checkpoint format version {version} is not the supported {FORMAT_VERSION}"
        )
    config = ModelConfig.from_json(manifest["model-config"])
    train_config = TrainConfig.from_json(manifest["train-config"])
    vocab = Vocabulary(tokens=list(manifest["vocab"]))
    labels = list(manifest["labels"])
    model = build_model(config, vocab, labels)
    blob = raw[16 + mlen :]
    directory = manifest["tensors"]
    if set(directory) != set(model.params):
        raise FormatError(f"{path}: tensor directory does not match the architecture")
    for name, node in model.params.items():
        entry = directory[name]
        shape = tuple(entry["shape"])
        if shape != node.value.shape:
            raise FormatError(
                f"{path}: tensor {name} has shape {shape}, expected {node.value.shape}"
            )
        start = entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        node.value[...] = arr.reshape(shape)
    return model, train_config
