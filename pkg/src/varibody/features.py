"""Frozen random convolutional features.

A tiny randomly initialized two-stage conv stack, never trained, used two
ways: as the feature space for the depth loss, and as the embedding for the
diversity metric. Weights live in buffers so no optimizer can touch them;
gradients still flow to the *inputs*.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ParameterError
from .geometry import DTYPE


class FeaturePyramid(nn.Module):
    """Two stride-2 tanh conv stages with seeded, frozen weights."""

    def __init__(self, in_channels: int, channels: tuple[int, int] = (8, 16),
                 kernel: int = 5, seed: int = 0):
        super().__init__()
        if kernel % 2 != 1:
            raise ParameterError("kernel must be odd")
        self.in_channels = in_channels
        self.kernel = kernel
        self.stride = 2
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        chans = (in_channels, *channels)
        for i in range(2):
            fan_in = chans[i] * kernel * kernel
            bound = 1.0 / math.sqrt(fan_in)
            w = torch.empty(chans[i + 1], chans[i], kernel, kernel, dtype=DTYPE)
            with torch.no_grad():
                w.uniform_(-bound, bound, generator=gen)
            self.register_buffer(f"w{i}", w)
            # ones kernel of the same geometry, for receptive-field coverage
            self.register_buffer(f"ones{i}", torch.ones(1, 1, kernel, kernel, dtype=DTYPE))

    def _pad(self):
        return self.kernel // 2

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """x: (B, C, H, W) -> [stage1, stage2] feature maps."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ParameterError(
                f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        f1 = torch.tanh(nn.functional.conv2d(x, self.w0, stride=self.stride, padding=self._pad()))
        f2 = torch.tanh(nn.functional.conv2d(f1, self.w1, stride=self.stride, padding=self._pad()))
        return [f1, f2]

    def coverage(self, mask: torch.Tensor) -> list[torch.Tensor]:
        """Which feature cells see any mask pixel through their receptive field.

        mask: (B, 1, H, W) nonneg. Returns boolean maps matching forward()'s
        spatial shapes, computed by pushing the mask through ones-kernels of
        the same stride/padding geometry.
        """
        m = (mask > 0).to(DTYPE)
        c1 = nn.functional.conv2d(m, self.ones0, stride=self.stride, padding=self._pad())
        c2 = nn.functional.conv2d((c1 > 0).to(DTYPE), self.ones1, stride=self.stride, padding=self._pad())
        return [c1 > 0, c2 > 0]

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Flattened concatenation of both stages: (B, D)."""
        feats = self.forward(x)
        return torch.cat([f.reshape(f.shape[0], -1) for f in feats], dim=1)
