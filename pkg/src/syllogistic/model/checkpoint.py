"""Named-tensor checkpoint I/O (safetensors layout) and GPT-2 weight mapping."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointError
from ..io import atomic_write
from .bundle import LayerWeights, ModelBundle, ModelConfig
from .tokenizer import BPETokenizer, default_tokenizer_paths

_DTYPES = {
    "F64": np.dtype("<f8"),
    "F32": np.dtype("<f4"),
    "F16": np.dtype("<f2"),
    "BF16": np.dtype("<u2"),
    "I64": np.dtype("<i8"),
    "I32": np.dtype("<i4"),
    "U8": np.dtype("u1"),
    "BOOL": np.dtype("?"),
}
_DTYPE_NAMES = {np.dtype("float64"): "F64", np.dtype("float32"): "F32", np.dtype("float16"): "F16"}

# Published GPT-2 sizes: (n_layers, d_model) -> n_heads.
GPT2_FAMILY_HEADS = {(12, 768): 12, (24, 1024): 16, (36, 1280): 20, (48, 1600): 25}

# Buffers some exports carry that are not weights.
_IGNORED_SUFFIXES = (".attn.bias", ".attn.masked_bias")


def read_safetensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read every tensor as a float32 (or native integer) numpy array."""
    path = Path(path)
    try:
        raw = np.memmap(path, dtype=np.uint8, mode="r")
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw.size < 8:
        raise CheckpointError(f"cannot read checkpoint {path}: file too short")
    (header_len,) = struct.unpack("<Q", bytes(raw[:8]))
    if 8 + header_len > raw.size:
        raise CheckpointError(f"cannot read checkpoint {path}: header length {header_len} exceeds file")
    try:
        header = json.loads(bytes(raw[8 : 8 + header_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: bad header ({exc})") from exc
    metadata = header.pop("__metadata__", None) or {}
    base = 8 + header_len
    tensors = {}
    for name, info in header.items():
        dtype = _DTYPES.get(info.get("dtype"))
        if dtype is None:
            raise CheckpointError(f"tensor {name}: unsupported dtype {info.get('dtype')!r}")
        start, end = info["data_offsets"]
        shape = tuple(info["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if end - start != count * dtype.itemsize or base + end > raw.size:
            raise CheckpointError(f"tensor {name}: byte range does not match shape {shape}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=base + start).reshape(shape)
        if info["dtype"] == "BF16":
            arr = (arr.astype(np.uint32) << 16).view(np.float32)
        elif arr.dtype.kind == "f":
            arr = arr.astype(np.float32)
        else:
            arr = np.array(arr)
        tensors[name] = arr
    return tensors, metadata


def write_safetensors(
    path: str | Path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None
) -> None:
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_NAMES:
            arr = arr.astype(np.float32)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        header[name] = {
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        offset += len(data)
        blobs.append(data)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    head += b" " * (-len(head) % 8)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def _strip_prefix(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for name, arr in tensors.items():
        key = name[len("transformer."):] if name.startswith("transformer.") else name
        if key.endswith(_IGNORED_SUFFIXES):
            continue
        out[key] = arr
    return out


def _config_from_sources(
    tensors: dict[str, np.ndarray], metadata: dict[str, str], config_json: dict | None
) -> ModelConfig:
    def need(name: str) -> np.ndarray:
        if name not in tensors:
            raise CheckpointError(f"missing tensor: {name}")
        return tensors[name]

    vocab, d_model = need("wte.weight").shape
    max_positions = need("wpe.weight").shape[0]
    n_layers = 0
    while f"h.{n_layers}.ln_1.weight" in tensors:
        n_layers += 1
    if n_layers == 0:
        raise CheckpointError("missing tensor: h.0.ln_1.weight")
    d_mlp = need("h.0.mlp.c_fc.weight").shape[1]

    src = dict(metadata)
    if config_json:
        src.update({k: v for k, v in config_json.items() if v is not None})
    n_heads = src.get("n_head")
    if n_heads is None:
        n_heads = GPT2_FAMILY_HEADS.get((n_layers, d_model))
    if n_heads is None:
        raise CheckpointError(
            "cannot determine head count: add config.json with n_head next to the checkpoint"
        )
    n_heads = int(n_heads)
    if d_model % n_heads:
        raise CheckpointError(f"shape mismatch: d_model {d_model} not divisible by n_head {n_heads}")
    if "n_layer" in src and int(src["n_layer"]) != n_layers:
        raise CheckpointError(f"shape mismatch: config n_layer={src['n_layer']} but checkpoint has {n_layers}")
    if "n_embd" in src and int(src["n_embd"]) != d_model:
        raise CheckpointError(f"shape mismatch: config n_embd={src['n_embd']} but wte has {d_model}")
    return ModelConfig(
        n_layers=n_layers,
        n_heads=n_heads,
        d_model=d_model,
        d_head=d_model // n_heads,
        d_mlp=d_mlp,
        vocab_size=vocab,
        max_positions=max_positions,
        ln_epsilon=float(src.get("layer_norm_epsilon", 1e-5)),
    )


def _split_layer(tensors: dict[str, np.ndarray], l: int, cfg: ModelConfig) -> LayerWeights:
    H, D, d, M = cfg.n_heads, cfg.d_model, cfg.d_head, cfg.d_mlp

    def get(name: str, shape: tuple[int, ...]) -> np.ndarray:
        key = f"h.{l}.{name}"
        if key not in tensors:
            raise CheckpointError(f"missing tensor: {key}")
        arr = tensors[key]
        if arr.shape != shape:
            raise CheckpointError(f"shape mismatch for {key}: got {arr.shape}, expected {shape}")
        return arr

    # Conv1D layout: (in, out), so x @ W already matches the row-vector convention.
    qkv = get("attn.c_attn.weight", (D, 3 * D))
    qkv_b = get("attn.c_attn.bias", (3 * D,))
    per_head = [qkv[:, i * D : (i + 1) * D].reshape(D, H, d).transpose(1, 0, 2) for i in range(3)]
    per_head_b = [qkv_b[i * D : (i + 1) * D].reshape(H, d) for i in range(3)]
    proj = get("attn.c_proj.weight", (D, D))
    return LayerWeights(
        ln1_w=get("ln_1.weight", (D,)), ln1_b=get("ln_1.bias", (D,)),
        W_Q=per_head[0], b_Q=per_head_b[0],
        W_K=per_head[1], b_K=per_head_b[1],
        W_V=per_head[2], b_V=per_head_b[2],
        W_O=proj.reshape(H, d, D), b_O=get("attn.c_proj.bias", (D,)),
        ln2_w=get("ln_2.weight", (D,)), ln2_b=get("ln_2.bias", (D,)),
        W_in=get("mlp.c_fc.weight", (D, M)), b_in=get("mlp.c_fc.bias", (M,)),
        W_out=get("mlp.c_proj.weight", (M, D)), b_out=get("mlp.c_proj.bias", (D,)),
    )


def bundle_from_tensors(
    tensors: Mapping[str, np.ndarray],
    metadata: Mapping[str, str] | None = None,
    config_json: dict | None = None,
    tokenizer: BPETokenizer | None = None,
) -> ModelBundle:
    tensors = _strip_prefix(dict(tensors))
    cfg = _config_from_sources(tensors, dict(metadata or {}), config_json)
    for name in ("ln_f.weight", "ln_f.bias"):
        if name not in tensors:
            raise CheckpointError(f"missing tensor: {name}")
    bad = [name for name, arr in tensors.items() if arr.dtype.kind == "f" and not np.isfinite(arr).all()]
    if bad:
        raise CheckpointError(f"non-finite values in tensor(s): {', '.join(sorted(bad))}")
    W_E = tensors["wte.weight"]
    if "lm_head.weight" in tensors and not np.array_equal(tensors["lm_head.weight"], W_E):
        raise CheckpointError("lm_head.weight is not tied to wte.weight")
    layers = tuple(_split_layer(tensors, l, cfg) for l in range(cfg.n_layers))
    try:
        return ModelBundle(
            config=cfg,
            W_E=W_E,
            W_pos=tensors["wpe.weight"],
            layers=layers,
            lnf_w=tensors["ln_f.weight"],
            lnf_b=tensors["ln_f.bias"],
            tokenizer=tokenizer,
        )
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(str(exc)) from exc


def load_bundle(
    checkpoint_path: str | Path,
    tokenizer_paths: tuple[str | Path, str | Path] | None = None,
) -> ModelBundle:
    """Load a GPT-2-family checkpoint.

    ``checkpoint_path`` may be the ``.safetensors`` file or a directory holding
    ``model.safetensors`` (and optionally ``config.json``, ``vocab.json``,
    ``merges.txt``). Without tokenizer files the bundled GPT-2 tables are used.
    """
    path = Path(checkpoint_path)
    folder = path if path.is_dir() else path.parent
    if path.is_dir():
        path = path / "model.safetensors"
    if not path.exists():
        raise CheckpointError(f"cannot read checkpoint {path}: no such file")
    config_json = None
    if (folder / "config.json").exists():
        try:
            config_json = json.loads((folder / "config.json").read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"bad config.json: {exc}") from exc
    if tokenizer_paths is None:
        if (folder / "vocab.json").exists() and (folder / "merges.txt").exists():
            tokenizer_paths = (folder / "vocab.json", folder / "merges.txt")
        else:
            tokenizer_paths = default_tokenizer_paths()
    try:
        tokenizer = BPETokenizer.from_files(*tokenizer_paths)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read tokenizer files: {exc}") from exc
    tensors, metadata = read_safetensors(path)
    return bundle_from_tensors(tensors, metadata, config_json, tokenizer)


def bundle_to_tensors(bundle: ModelBundle) -> dict[str, np.ndarray]:
    """Inverse of the loader mapping: GPT-2 tensor names in Conv1D layout."""
    cfg = bundle.config
    out = {
        "wte.weight": bundle.W_E,
        "wpe.weight": bundle.W_pos,
        "ln_f.weight": bundle.lnf_w,
        "ln_f.bias": bundle.lnf_b,
    }
    for l, layer in enumerate(bundle.layers):
        p = f"h.{l}."
        out[p + "ln_1.weight"] = layer.ln1_w
        out[p + "ln_1.bias"] = layer.ln1_b
        out[p + "attn.c_attn.weight"] = layer.W_QKV
        out[p + "attn.c_attn.bias"] = layer.b_QKV
        out[p + "attn.c_proj.weight"] = layer.W_O.reshape(cfg.d_model, cfg.d_model)
        out[p + "attn.c_proj.bias"] = layer.b_O
        out[p + "ln_2.weight"] = layer.ln2_w
        out[p + "ln_2.bias"] = layer.ln2_b
        out[p + "mlp.c_fc.weight"] = layer.W_in
        out[p + "mlp.c_fc.bias"] = layer.b_in
        out[p + "mlp.c_proj.weight"] = layer.W_out
        out[p + "mlp.c_proj.bias"] = layer.b_out
    return out


def save_bundle(bundle: ModelBundle, folder: str | Path) -> Path:
    """Write ``model.safetensors`` + ``config.json`` in the GPT-2 layout."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    cfg = bundle.config
    write_safetensors(folder / "model.safetensors", bundle_to_tensors(bundle), {"format": "np"})
    config_json = {
        "model_type": "gpt2",
        "n_layer": cfg.n_layers,
        "n_head": cfg.n_heads,
        "n_embd": cfg.d_model,
        "n_inner": cfg.d_mlp,
        "n_positions": cfg.max_positions,
        "vocab_size": cfg.vocab_size,
        "layer_norm_epsilon": cfg.ln_epsilon,
        "activation_function": "gelu_new",
    }
    atomic_write(folder / "config.json", json.dumps(config_json, indent=2, sort_keys=True) + "\n")
    return folder / "model.safetensors"
