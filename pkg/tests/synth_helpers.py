import numpy as np

from gramdet.activations import ActivationRecord


def make_record(rng, num_classes, shapes, predicted=None, loc=2.0, scale=0.3):
    c = int(rng.integers(0, num_classes)) if predicted is None else predicted
    layers = tuple(loc + scale * rng.standard_normal(shape) for shape in shapes)
    return ActivationRecord(predicted_class=c, layers=layers)


def make_records(rng, n, num_classes, shapes, **kwargs):
    return [make_record(rng, num_classes, shapes, **kwargs) for _ in range(n)]
