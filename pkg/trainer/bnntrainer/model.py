"""Reference mixed-precision BNN in torch with straight-through binarization.

Interior conv weights and their inputs are binarized to +-1 through a sign
whose gradient passes straight through on |x| <= 1; the first conv, the
linear head, batchnorms and rprelus stay real-valued. Inputs are pixels
scaled to [0, 1], matching the inference engine's dataset convention.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, torch.ones_like(x), -torch.ones_like(x))

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * (x.abs() <= 1.0).to(grad.dtype)


def sign_ste(x):
    return SignSTE.apply(x)


class BinaryConv2d(nn.Conv2d):
    """Conv over binarized latent weights; the latent master stays real."""

    def forward(self, x):
        return self._conv_forward(x, sign_ste(self.weight), None)


class RPReLU(nn.Module):
    """slope-gated activation: W*(x+B1)+B2 with W=1 above the -B1 knee."""

    def __init__(self, channels: int):
        super().__init__()
        self.slope = nn.Parameter(torch.full((channels,), 0.25))
        self.b1 = nn.Parameter(torch.zeros(channels))
        self.b2 = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        b1 = self.b1.view(1, -1, 1, 1)
        b2 = self.b2.view(1, -1, 1, 1)
        slope = self.slope.view(1, -1, 1, 1)
        t = x + b1
        return torch.where(t > 0, t, slope * t) + b2


class ToyBNN(nn.Module):
    """FirstConv -> BN -> Sign -> BinConv -> BN -> RPReLU -> Sign -> BinConv
    -> BN -> RPReLU -> MaxPool -> Flatten -> Linear, on 28x28 inputs."""

    def __init__(self, classes: int = 10):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, stride=2, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(16)
        self.bconv1 = BinaryConv2d(16, 16, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(16)
        self.rprelu1 = RPReLU(16)
        self.bconv2 = BinaryConv2d(16, 32, 3, stride=1, padding=1, bias=False)
        self.bn3 = nn.BatchNorm2d(32)
        self.rprelu2 = RPReLU(32)
        self.pool = nn.MaxPool2d(2)
        self.fc = nn.Linear(32 * 7 * 7, classes, bias=False)

    def forward(self, x):
        x = self.bn1(self.conv1(x))
        x = sign_ste(x)
        x = self.rprelu1(self.bn2(self.bconv1(x)))
        x = sign_ste(x)
        x = self.rprelu2(self.bn3(self.bconv2(x)))
        x = self.pool(x)
        return self.fc(x.flatten(1))
