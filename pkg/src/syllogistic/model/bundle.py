from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ModelError
from .tokenizer import BPETokenizer


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_head: int
    d_mlp: int
    vocab_size: int
    max_positions: int
    ln_epsilon: float = 1e-5
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_head", "d_mlp", "vocab_size", "max_positions"):
            if getattr(self, name) <= 0:
                raise ModelError(f"config field {name} must be positive, got {getattr(self, name)}")
        if self.d_model != self.n_heads * self.d_head:
            raise ModelError(
                f"d_model={self.d_model} != n_heads*d_head={self.n_heads}*{self.d_head}"
            )
        if not self.ln_epsilon > 0:
            raise ModelError("ln_epsilon must be positive")
        if self.activation != "gelu":
            raise ModelError(f"unsupported activation {self.activation!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """One transformer block. Matrices multiply row vectors from the left (``x @ W``).

    Per-head shapes: W_Q/W_K/W_V ``(H, D, d)``, biases ``(H, d)``, W_O ``(H, d, D)``.
    """

    ln1_w: np.ndarray
    ln1_b: np.ndarray
    W_Q: np.ndarray
    b_Q: np.ndarray
    W_K: np.ndarray
    b_K: np.ndarray
    W_V: np.ndarray
    b_V: np.ndarray
    W_O: np.ndarray
    b_O: np.ndarray
    ln2_w: np.ndarray
    ln2_b: np.ndarray
    W_in: np.ndarray
    b_in: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @cached_property
    def W_QKV(self) -> np.ndarray:
        """Fused ``(D, 3*H*d)`` projection used by the forward pass."""
        H, D, d = self.W_Q.shape
        parts = [w.transpose(1, 0, 2).reshape(D, H * d) for w in (self.W_Q, self.W_K, self.W_V)]
        return _frozen(np.concatenate(parts, axis=1))

    @cached_property
    def b_QKV(self) -> np.ndarray:
        return _frozen(np.concatenate([self.b_Q.ravel(), self.b_K.ravel(), self.b_V.ravel()]))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: getattr(self, name).shape for name in self.__dataclass_fields__}


def expected_layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, D, d, M = cfg.n_heads, cfg.d_model, cfg.d_head, cfg.d_mlp
    return {
        "ln1_w": (D,), "ln1_b": (D,),
        "W_Q": (H, D, d), "b_Q": (H, d),
        "W_K": (H, D, d), "b_K": (H, d),
        "W_V": (H, D, d), "b_V": (H, d),
        "W_O": (H, d, D), "b_O": (D,),
        "ln2_w": (D,), "ln2_b": (D,),
        "W_in": (D, M), "b_in": (M,),
        "W_out": (M, D), "b_out": (D,),
    }


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Config, weights and tokenizer for one GPT-2-family checkpoint. Immutable."""

    config: ModelConfig
    W_E: np.ndarray
    W_pos: np.ndarray
    layers: tuple[LayerWeights, ...]
    lnf_w: np.ndarray
    lnf_b: np.ndarray
    tokenizer: BPETokenizer | None = None

    def __post_init__(self):
        for name in ("W_E", "W_pos", "lnf_w", "lnf_b"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def W_U(self) -> np.ndarray:
        """Tied unembedding ``(D, V)``: a transposed view of the token embedding."""
        return self.W_E.T

    def validate(self) -> None:
        cfg = self.config
        checks = {
            "W_E": (self.W_E.shape, (cfg.vocab_size, cfg.d_model)),
            "W_pos": (self.W_pos.shape, (cfg.max_positions, cfg.d_model)),
            "lnf_w": (self.lnf_w.shape, (cfg.d_model,)),
            "lnf_b": (self.lnf_b.shape, (cfg.d_model,)),
        }
        for name, (got, want) in checks.items():
            if got != want:
                raise ModelError(f"shape mismatch for {name}: got {got}, expected {want}")
        if len(self.layers) != cfg.n_layers:
            raise ModelError(f"expected {cfg.n_layers} layers, got {len(self.layers)}")
        want_layer = expected_layer_shapes(cfg)
        for l, layer in enumerate(self.layers):
            for name, got in layer.shapes().items():
                if got != want_layer[name]:
                    raise ModelError(
                        f"shape mismatch for layer {l} {name}: got {got}, expected {want_layer[name]}"
                    )
        arrays = [self.W_E, self.W_pos, self.lnf_w, self.lnf_b]
        arrays += [getattr(layer, n) for layer in self.layers for n in want_layer]
        if not all(np.isfinite(a).all() for a in arrays):
            raise ModelError("non-finite values in model weights")
        if self.tokenizer is not None and self.tokenizer.vocab_size > cfg.vocab_size:
            raise ModelError(
                f"tokenizer has {self.tokenizer.vocab_size} tokens but model vocab is {cfg.vocab_size}"
            )

    def encode(self, text: str) -> list[int]:
        if self.tokenizer is None:
            raise ModelError("bundle has no tokenizer")
        return self.tokenizer.encode(text)

    def decode(self, ids) -> str:
        if self.tokenizer is None:
            raise ModelError("bundle has no tokenizer")
        return self.tokenizer.decode(ids)

    @property
    def heads(self) -> list[tuple[int, int]]:
        return [(l, h) for l in range(self.config.n_layers) for h in range(self.config.n_heads)]

    @classmethod
    def random(
        cls,
        config: ModelConfig,
        seed: int = 0,
        tokenizer: BPETokenizer | None = None,
        scale: float = 0.25,
    ) -> ModelBundle:
        """Seeded random weights, for tests and toy experiments."""
        rng = np.random.default_rng(seed)
        D, H, d, M = config.d_model, config.n_heads, config.d_head, config.d_mlp

        def n(*shape, s=scale):
            return (rng.standard_normal(shape) * s).astype(np.float32)

        layers = []
        for _ in range(config.n_layers):
            layers.append(
                LayerWeights(
                    ln1_w=1 + n(D, s=0.1), ln1_b=n(D, s=0.1),
                    W_Q=n(H, D, d), b_Q=n(H, d, s=0.1),
                    W_K=n(H, D, d), b_K=n(H, d, s=0.1),
                    W_V=n(H, D, d), b_V=n(H, d, s=0.1),
                    W_O=n(H, d, D), b_O=n(D, s=0.1),
                    ln2_w=1 + n(D, s=0.1), ln2_b=n(D, s=0.1),
                    W_in=n(D, M), b_in=n(M, s=0.1),
                    W_out=n(M, D, s=scale / 2), b_out=n(D, s=0.1),
                )
            )
        return cls(
            config=config,
            W_E=n(config.vocab_size, D),
            W_pos=n(config.max_positions, D, s=scale / 2),
            layers=tuple(layers),
            lnf_w=1 + n(D, s=0.1),
            lnf_b=n(D, s=0.1),
            tokenizer=tokenizer,
        )
