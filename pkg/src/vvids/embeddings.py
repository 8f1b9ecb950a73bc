"""Input projection, pre-dropout, and 2D sine-cosine positional encoding.

Clip sequences are laid out on a square grid (row-major, width
``ceil(sqrt(T_max))``) and each (row, col) cell gets a fixed sin/cos code per
axis. The encodings are non-learned buffers added to the projected video and
audio tokens; memory slots and text tokens never receive one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Tensor, affine, dropout

__all__ = ["PosEncodingConfig", "grid_map", "sincos2d", "sequence_encoding",
           "project_and_drop"]


@dataclass(frozen=True)
class PosEncodingConfig:
    d_model: int
    temperature: float = 10000.0
    grid_width: int = 1

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 4 != 0:
            raise ConfigError(
                f"positional encoding width must be a positive multiple of 4, "
                f"got {self.d_model}")
        if self.temperature <= 1:
            raise ConfigError(f"temperature must exceed 1, got {self.temperature}")
        if self.grid_width < 1:
            raise ConfigError(f"grid_width must be >= 1, got {self.grid_width}")


def grid_map(t: int, grid_width: int) -> tuple[int, int]:
    """Row-major cell of clip index ``t`` on a grid of the given width."""
    return t // grid_width, t % grid_width


def grid_width_for(t_max: int) -> int:
    """Smallest square grid that holds ``t_max`` clips."""
    return max(1, math.ceil(math.sqrt(t_max)))


def sincos2d(positions, cfg: PosEncodingConfig) -> Tensor:
    """Encode (row, col) positions as [sin(r*w), cos(r*w), sin(c*w), cos(c*w)].

    Uses d_model/4 frequencies w_i = temperature**(-4i/d_model); every entry
    lies in [-1, 1] and the output is a constant (no gradient).
    """
    quarter = cfg.d_model // 4
    freqs = cfg.temperature ** (-4.0 * np.arange(quarter) / cfg.d_model)
    pos = np.asarray(list(positions), dtype=np.float64).reshape(-1, 2)
    row_ang = pos[:, :1] * freqs
    col_ang = pos[:, 1:] * freqs
    out = np.concatenate(
        [np.sin(row_ang), np.cos(row_ang), np.sin(col_ang), np.cos(col_ang)],
        axis=1)
    return Tensor(out)


def sequence_encoding(n_tokens: int, cfg: PosEncodingConfig) -> Tensor:
    """Positional codes for clip indices 0..n_tokens-1 via the grid map."""
    return sincos2d((grid_map(t, cfg.grid_width) for t in range(n_tokens)), cfg)


def project_and_drop(features: Tensor, w: Tensor, b: Tensor, rate: float,
                     training: bool, rng=None) -> Tensor:
    """Affine projection to model width, then pre-dropout when training.

    The caller adds positional encodings afterwards so dropout never zeros
    them. Rates follow the training recipe: 0.5 for visual/audio features,
    0.3 for text.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"pre-dropout rate must be in [0, 1), got {rate}")
    return dropout(affine(features, w, b), rate, training, rng)
