"""Forward-pass activation export to GACT files."""

from __future__ import annotations

import torch
from torch.utils.data import DataLoader

from .gact import GactFileWriter
from .models import MlpClassifier


@torch.no_grad()
def export_activations(model: MlpClassifier, dataset, path, capture_points=None,
                       batch_size: int = 512) -> int:
    """One record per example: model argmax plus post-activation feature maps.

    ``capture_points`` selects hidden-layer indices (default: every hidden
    layer). Fully-connected activations export with one pixel per channel,
    so layer shapes are (units, 1). Returns the record count.
    """
    model.eval()
    if capture_points is None:
        capture_points = tuple(range(len(model.hidden_sizes)))
    capture_points = tuple(capture_points)
    if not capture_points:
        raise ValueError("need at least one capture point")
    for idx in capture_points:
        if not 0 <= idx < len(model.hidden_sizes):
            raise ValueError(f"capture point {idx} outside hidden layers")
    shapes = [(model.hidden_sizes[idx], 1) for idx in capture_points]
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
    with GactFileWriter(path, model.num_classes, shapes) as writer:
        for images, _ in loader:
            logits, activations = model.forward_with_activations(images)
            predicted = logits.argmax(dim=1).tolist()
            captured = [activations[idx].numpy() for idx in capture_points]
            for i, cls in enumerate(predicted):
                writer.append(cls, [act[i] for act in captured])
        return writer.count
