"""npp-ckpt-1 container: little-endian u64 header length, UTF-8 JSON header, raw blocks.

Parameter blocks are little-endian FP64 in declaration order (per layer: weight,
bias, then ``adapter.<i>.A`` / ``adapter.<i>.B``). Quantized weights add their
codes (4-bit kinds packed two per byte, low nibble first; int8 as signed bytes)
and little-endian FP64 scales. The header carries a SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError
from .nn import AdapterPair, DenseModel, LinearLayer
from .quant import QTensor, QuantFormat

FORMAT = "npp-ckpt-1"


def pack_nibbles(codes) -> bytes:
    flat = np.asarray(codes, dtype=np.uint8).ravel()
    if flat.size and flat.max() > 15:
        raise ValueError("4-bit code above 15")
    if flat.size % 2:
        flat = np.append(flat, np.uint8(0))
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_nibbles(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    out = np.empty(b.size * 2, dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out[:count]


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_checkpoint(path, model: DenseModel, metadata=None) -> None:
    blocks = []  # (name, kind, shape, bytes)

    def add(name, kind, shape, raw):
        blocks.append((name, kind, list(shape), raw))

    layer_specs = []
    for i, layer in enumerate(model.layers):
        add(f"layers.{i}.weight", "f8", layer.weight.shape, _f8(layer.weight))
        add(f"layers.{i}.bias", "f8", layer.bias.shape, _f8(layer.bias))
        if layer.adapter is not None:
            add(f"adapter.{i}.A", "f8", layer.adapter.A.shape, _f8(layer.adapter.A))
            add(f"adapter.{i}.B", "f8", layer.adapter.B.shape, _f8(layer.adapter.B))
        q = layer.qweight
        if q is not None:
            if q.format.kind == "int8":
                add(f"qweight.{i}.codes", "i1", q.codes.shape, np.asarray(q.codes, dtype="i1").tobytes())
            else:
                add(f"qweight.{i}.codes", "u4", q.codes.shape, pack_nibbles(q.codes))
            add(f"qweight.{i}.scale", "f8", np.shape(q.scale), _f8(q.scale))
        layer_specs.append(
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "activation": model.activations[i],
                "frozen": layer.frozen,
                "quant_spec": asdict(layer.quant_spec) if layer.quant_spec is not None else None,
                "qweight_format": asdict(q.format) if q is not None else None,
                "act_scale": layer.act_scale,
            }
        )
    offset = 0
    table = []
    for name, kind, shape, raw in blocks:
        table.append({"name": name, "dtype": kind, "shape": shape, "offset": offset, "nbytes": len(raw)})
        offset += len(raw)
    payload = b"".join(raw for *_, raw in blocks)
    header = {
        "format": FORMAT,
        "surrogate_datapath": model.surrogate_datapath,
        "layers": layer_specs,
        "blocks": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(struct.pack("<Q", len(head)) + head + payload)


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _split(raw, path)
    return header


def _split(raw: bytes, path):
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header length at byte offset 0")
    (n,) = struct.unpack("<Q", raw[:8])
    if 8 + n > len(raw):
        raise FormatError(f"{path}: header length {n} runs past end of file at byte offset 0")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable JSON header at byte offset 8: {exc}") from None
    if header.get("format") != FORMAT:
        raise FormatError(f"{path}: format {header.get('format')!r} is not {FORMAT} (byte offset 8)")
    return header, raw[8 + n :]


def load_checkpoint(path) -> DenseModel:
    raw = Path(path).read_bytes()
    header, payload = _split(raw, path)
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError(f"{path}: payload checksum mismatch")
    blocks = {}
    for b in header["blocks"]:
        chunk = payload[b["offset"] : b["offset"] + b["nbytes"]]
        shape = tuple(b["shape"])
        count = int(np.prod(shape)) if shape else 1
        if b["dtype"] == "f8":
            arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        elif b["dtype"] == "i1":
            arr = np.frombuffer(chunk, dtype="i1").copy().reshape(shape)
        elif b["dtype"] == "u4":
            arr = unpack_nibbles(chunk, count).reshape(shape)
        else:
            raise FormatError(f"{path}: unknown block dtype {b['dtype']!r}")
        blocks[b["name"]] = arr
    layers, acts = [], []
    for i, spec in enumerate(header["layers"]):
        adapter = None
        if f"adapter.{i}.A" in blocks:
            adapter = AdapterPair(blocks[f"adapter.{i}.A"], blocks[f"adapter.{i}.B"])
        qweight = None
        if spec["qweight_format"] is not None:
            codes = blocks[f"qweight.{i}.codes"]
            qweight = QTensor(codes, blocks[f"qweight.{i}.scale"], QuantFormat(**spec["qweight_format"]), codes.shape)
        layers.append(
            LinearLayer(
                blocks[f"layers.{i}.weight"],
                blocks[f"layers.{i}.bias"],
                frozen=spec["frozen"],
                quant_spec=QuantFormat(**spec["quant_spec"]) if spec["quant_spec"] else None,
                adapter=adapter,
                qweight=qweight,
                act_scale=spec["act_scale"],
            )
        )
        acts.append(spec["activation"])
    return DenseModel(layers, acts, surrogate_datapath=header["surrogate_datapath"])
