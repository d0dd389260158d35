from .bundle import LayerWeights, ModelBundle, ModelConfig
from .checkpoint import (
    bundle_from_tensors,
    load_bundle,
    read_safetensors,
    save_bundle,
    write_safetensors,
)
from .forward import SITES, ActivationCache, PatchSpec, PatchTarget, forward
from .tokenizer import BPETokenizer, gpt2_tokenizer


def encode(text: str, bundle: ModelBundle | None = None) -> list[int]:
    """Encode with the bundle's tokenizer, or the bundled GPT-2 tables."""
    tok = bundle.tokenizer if bundle is not None and bundle.tokenizer is not None else gpt2_tokenizer()
    return tok.encode(text)


__all__ = [
    "ActivationCache",
    "BPETokenizer",
    "LayerWeights",
    "ModelBundle",
    "ModelConfig",
    "PatchSpec",
    "PatchTarget",
    "SITES",
    "bundle_from_tensors",
    "encode",
    "forward",
    "gpt2_tokenizer",
    "load_bundle",
    "read_safetensors",
    "save_bundle",
    "write_safetensors",
]
