"""Binary checkpoints: b"PETA", u32 version, u32 manifest length, JSON manifest, f32 blobs.

All integers and tensor values are little-endian; tensors are row-major and
stored in manifest order. The manifest is ``{"entries": [{name, shape, dtype,
trainable}, ...], "meta": {...}}``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderModel
from .heads import Head, make_head
from .peft import PeftConfig, PeftState, base_names, inject

MAGIC = b"PETA"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def write_tensors(path: str | Path, entries: list[tuple[str, np.ndarray, bool]], meta: dict) -> None:
    manifest = {
        "entries": [
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "trainable": bool(tr)}
            for name, arr, tr in entries
        ],
        "meta": meta,
    }
    blob = json.dumps(manifest, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, arr, _ in entries:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())


def read_tensors(path: str | Path) -> tuple[list[dict], dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    version, mlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
    offset = 12 + mlen
    tensors = {}
    for e in manifest["entries"]:
        if e["dtype"] != "f32":
            raise CheckpointError(f"{path}: entry {e['name']} has unsupported dtype {e['dtype']}")
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at entry {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=offset).reshape(e["shape"])
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after the last tensor")
    return manifest["entries"], tensors, manifest["meta"]


def base_digest(model: EncoderModel) -> str:
    """sha256 over the base (non-adapter) parameters as little-endian f32."""
    h = hashlib.sha256()
    for name in base_names(model):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name].data, dtype=_LE_F32).tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    model: EncoderModel,
    head: Head | None = None,
    mode: str = "full",
    meta: dict | None = None,
) -> None:
    if mode not in ("full", "adapter_only"):
        raise CheckpointError(f"unknown checkpoint mode {mode!r}")
    params = model.parameters() + (head.parameters() if head is not None else [])
    if mode == "adapter_only":
        if model.peft is None:
            raise CheckpointError("adapter_only checkpoints need a model with injected PEFT modules")
        params = [p for p in params if p.trainable]
    info = dict(meta or {})
    info.update(
        mode=mode,
        encoder=model.config.to_dict(),
        peft=model.peft.config.to_dict() if model.peft is not None else None,
        head=head.dims() if head is not None else None,
    )
    if mode == "adapter_only":
        info["base_digest"] = base_digest(model)
    write_tensors(path, [(p.name, p.data, p.trainable) for p in params], info)


def _assign(target: dict, tensors: dict[str, np.ndarray], names: list[str], path) -> None:
    bad = []
    for name in names:
        p = target.get(name)
        if p is None or p.data.shape != tensors[name].shape:
            want = None if p is None else p.data.shape
            bad.append(f"{name} (file {tensors[name].shape}, model {want})")
    if bad:
        raise CheckpointError(f"{path}: incompatible entries: " + "; ".join(bad))
    for name in names:
        p = target[name]
        p.tensor.data = np.array(tensors[name], dtype=p.data.dtype)


def load_checkpoint(
    path: str | Path,
    base: EncoderModel | None = None,
    precision: str = "f32",
    check_base: bool = True,
) -> tuple[EncoderModel, Head | None, dict]:
    """Restore (model, head, meta). Adapter-only files need the base they were trained on.

    The base is copied, never mutated.
    """
    entries, tensors, meta = read_tensors(path)
    dtype = np.float32 if precision == "f32" else np.float64
    head = make_head(meta.get("head"), dtype=dtype)
    head_names = [e["name"] for e in entries if e["name"].startswith("head.")]
    enc_entries = [e for e in entries if not e["name"].startswith("head.")]
    if meta["mode"] == "full":
        model = EncoderModel(EncoderConfig(**meta["encoder"]), precision)
        for e in enc_entries:
            model.add(e["name"], tensors[e["name"]], trainable=e.get("trainable", True))
        if meta.get("peft"):
            cfg = PeftConfig.from_dict(meta["peft"])
            extra = [e["name"] for e in enc_entries if _is_adapter(e["name"])]
            model.peft = PeftState(cfg, extra)
    else:
        if base is None:
            raise CheckpointError(f"{path}: adapter-only checkpoint needs a base model")
        if base.peft is not None:
            raise CheckpointError(f"{path}: the base model already carries adapters")
        model = base.copy()
        inject(model, PeftConfig.from_dict(meta["peft"]))
        _assign(model.params, tensors, [e["name"] for e in enc_entries], path)
        if check_base and meta.get("base_digest") and base_digest(model) != meta["base_digest"]:
            raise CheckpointError(f"{path}: adapter was trained on a different base model")
    if head is not None:
        _assign(head.params, tensors, head_names, path)
    elif head_names:
        raise CheckpointError(f"{path}: head tensors present but no head description in meta")
    return model, head, meta


def _is_adapter(name: str) -> bool:
    return any(tag in name for tag in (".lora_", ".ia3_", ".adapter."))
