"""OV-circuit logit lens over attention heads."""

from .ov import LensMatrix, diagonal_score, ov_lens

__all__ = ["LensMatrix", "diagonal_score", "ov_lens"]
