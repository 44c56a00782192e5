import numpy as np
import pytest
import torch

from exporter_helpers import fake_image_dataset
from gramdet_exporter.export import export_activations
from gramdet_exporter.models import ARCHS, build_model
from gramdet_exporter.training import TrainConfig, fit_model, evaluate_accuracy

# format conformance is judged by the engine's own reader
from gramdet.activations import read_activations, read_header


def test_build_model_archs():
    assert build_model("300").hidden_sizes == (300,)
    assert build_model("300-150-50").hidden_sizes == (300, 150, 50)
    with pytest.raises(ValueError):
        build_model("512-512")


def test_cli_rejects_unknown_arch():
    from gramdet_exporter.cli import main

    with pytest.raises(SystemExit) as exc:
        main(["export", "--arch", "512", "--out", "/tmp/x"])
    assert exc.value.code == 2


def test_export_conforms_to_engine_reader(tmp_path, fake_data):
    model = build_model("300-150")
    path = tmp_path / "dump.gact"
    count = export_activations(model, fake_data, path)
    assert count == len(fake_data)
    header = read_header(path)
    assert header.record_count == count
    assert header.num_classes == 10
    assert header.layer_shapes == ((300, 1), (150, 1))
    records = list(read_activations(path))
    assert len(records) == count


def test_export_classes_match_argmax(tmp_path, fake_data):
    model = build_model("300")
    path = tmp_path / "dump.gact"
    export_activations(model, fake_data, path)
    records = list(read_activations(path))
    with torch.no_grad():
        for i in range(0, 100):
            image, _ = fake_data[i]
            logits = model(image.unsqueeze(0))
            assert records[i].predicted_class == int(logits.argmax())


def test_export_activations_match_forward_pass(tmp_path, fake_data):
    # single batch on both sides: stored values must be bit-exact copies
    model = build_model("300")
    path = tmp_path / "dump.gact"
    export_activations(model, fake_data, path, batch_size=len(fake_data))
    rec = next(iter(read_activations(path)))
    with torch.no_grad():
        images = torch.stack([fake_data[i][0] for i in range(len(fake_data))])
        _, acts = model.forward_with_activations(images)
    expected = acts[0][0].numpy().astype(np.float32).astype(np.float64).reshape(300, 1)
    assert np.array_equal(rec.layers[0], expected)


def test_export_capture_point_subset(tmp_path, fake_data):
    model = build_model("300-150-50")
    path = tmp_path / "dump.gact"
    export_activations(model, fake_data, path, capture_points=(0, 2))
    assert read_header(path).layer_shapes == ((300, 1), (50, 1))
    with pytest.raises(ValueError):
        export_activations(model, fake_data, path, capture_points=(5,))


def test_training_deterministic_given_seed(fake_data):
    config = TrainConfig(epochs=2)
    preds = []
    for _ in range(2):
        model = fit_model(build_model("300"), fake_data, seed=7, config=config)
        with torch.no_grad():
            images = torch.stack([fake_data[i][0] for i in range(64)])
            preds.append(model(images).argmax(dim=1))
    assert torch.equal(preds[0], preds[1])


def test_training_learns_separable_synthetic(fake_data):
    model = fit_model(build_model("300"), fake_data, seed=0, config=TrainConfig(epochs=3))
    assert evaluate_accuracy(model, fake_data) > 0.9
