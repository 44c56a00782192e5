"""Fully-connected MNIST classifiers with explicit activation capture."""

from __future__ import annotations

import torch
from torch import nn

ARCHS = {
    "300": (300,),
    "300-150": (300, 150),
    "300-150-50": (300, 150, 50),
}


class MlpClassifier(nn.Module):
    """Flatten -> (Linear -> ReLU)* -> Linear head.

    Capture points are the post-ReLU hidden activations, one per hidden
    layer; fully-connected features export as (units, 1) maps.
    """

    def __init__(self, hidden_sizes, in_features: int = 784, num_classes: int = 10):
        super().__init__()
        self.hidden_sizes = tuple(hidden_sizes)
        self.num_classes = num_classes
        layers = []
        prev = in_features
        for width in self.hidden_sizes:
            layers.append(nn.Linear(prev, width))
            prev = width
        self.hidden = nn.ModuleList(layers)
        self.head = nn.Linear(prev, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_activations(x)[0]

    def forward_with_activations(self, x: torch.Tensor):
        x = x.flatten(1)
        activations = []
        for linear in self.hidden:
            x = torch.relu(linear(x))
            activations.append(x)
        return self.head(x), activations


def build_model(arch: str) -> MlpClassifier:
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}, expected one of {sorted(ARCHS)}")
    return MlpClassifier(ARCHS[arch])
