"""Dual-branch 2D residual network mapping light-field inputs to a volume.

The two branches take the 9-view stack and the refocused focal stack, expand
both to a shared channel width with a 1x1 conv, run a chain of
conv-BN-ReLU-conv-BN residual blocks with a branch-level skip, fuse
(concatenation by default, addition optionally), and squeeze to the output
slices with a final 3x3 conv and a sigmoid.

The expansion conv is 1x1 so that the forward path holds exactly
1 + 2*blocks + 1 conv layers while the receptive field stays at
2*(2*blocks + 1) + 1 pixels (41 px radius for the 20-block network): only
the 3x3 layers spread information.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
from torch import nn

EPS = 1e-7


@dataclass(frozen=True)
class NetworkSpec:
    view_channels: int = 9
    volume_slices: int = 24
    width: int = 48
    blocks: int = 20
    fusion: str = "concat"  # or "add"

    def __post_init__(self):
        if self.fusion not in ("concat", "add"):
            raise ValueError(f"unknown fusion {self.fusion!r}")

    @property
    def conv_layers_on_forward_path(self) -> int:
        return 1 + 2 * self.blocks + 1

    @property
    def receptive_field_px(self) -> int:
        # only the 3x3 convs spread: 2*blocks in the branch plus the final one
        return 2 * (2 * self.blocks + 1) + 1

    @property
    def receptive_radius_px(self) -> int:
        return (self.receptive_field_px - 1) // 2


PAPER_SPEC = NetworkSpec(view_channels=9, volume_slices=24, width=48, blocks=20)
DESK_SPEC = NetworkSpec(view_channels=9, volume_slices=8, width=16, blocks=8)


class ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
        )

    def forward(self, x):
        return x + self.body(x)


class Branch(nn.Module):
    def __init__(self, in_channels: int, width: int, blocks: int):
        super().__init__()
        self.expand = nn.Conv2d(in_channels, width, 1, bias=False)
        self.blocks = nn.Sequential(*[ResBlock(width) for _ in range(blocks)])

    def forward(self, x):
        expanded = self.expand(x)
        return expanded + self.blocks(expanded)


class SbrNet(nn.Module):
    def __init__(self, spec: NetworkSpec = PAPER_SPEC):
        super().__init__()
        self.spec = spec
        self.view_branch = Branch(spec.view_channels, spec.width, spec.blocks)
        self.refocus_branch = Branch(spec.volume_slices, spec.width, spec.blocks)
        fused = 2 * spec.width if spec.fusion == "concat" else spec.width
        self.squeeze = nn.Conv2d(fused, spec.volume_slices, 3, padding=1, bias=False)
        self.apply(_he_init)

    def forward(self, views: torch.Tensor, refocus: torch.Tensor) -> torch.Tensor:
        if views.shape[-2:] != refocus.shape[-2:]:
            raise ValueError(f"spatial mismatch: views {views.shape} vs refocus {refocus.shape}")
        a = self.view_branch(views)
        b = self.refocus_branch(refocus)
        fused = torch.cat([a, b], dim=1) if self.spec.fusion == "concat" else a + b
        return torch.sigmoid(self.squeeze(fused))

    def conv_layers_on_forward_path(self) -> int:
        """Count by introspection along one branch plus the squeeze layer."""
        branch = self.view_branch
        count = 1  # expansion
        for block in branch.blocks:
            count += sum(1 for m in block.body if isinstance(m, nn.Conv2d))
        return count + 1  # squeeze


def _he_init(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def cross_entropy_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy with continuous targets in [0, 1].

    Predictions outside (0, 1) are clamped to [eps, 1 - eps] with a warning;
    the sigmoid output normally keeps them inside.
    """
    if bool((pred <= 0).any() or (pred >= 1).any()):
        warnings.warn("predictions outside (0, 1); clamping", stacklevel=2)
    pred = pred.clamp(EPS, 1.0 - EPS)
    return -(target * torch.log(pred) + (1.0 - target) * torch.log(1.0 - pred)).mean()
