import struct
import tracemalloc

import numpy as np
import pytest

from gramdet.activations import (
    ActivationRecord,
    BenchmarkConfig,
    DatasetRole,
    GactWriter,
    generate_synthetic_benchmark,
    open_dataset,
    read_activations,
    read_header,
    shuffled_indices,
    split_indices,
    split_validation,
    write_activations,
)
from gramdet.errors import (
    DataError,
    FormatError,
    TruncatedError,
    VersionError,
)

SHAPES = ((2, 3), (4, 1))


def f32_records(rng, n, num_classes=3, shapes=SHAPES):
    """Records whose values are exactly representable in f32 storage."""
    out = []
    for _ in range(n):
        layers = tuple(
            rng.standard_normal(s).astype(np.float32).astype(np.float64) for s in shapes
        )
        out.append(ActivationRecord(int(rng.integers(0, num_classes)), layers))
    return out


def test_round_trip_bit_exact(tmp_path, rng):
    records = f32_records(rng, 3)
    path = tmp_path / "r.gact"
    assert write_activations(path, 3, SHAPES, records) == 3
    back = list(read_activations(path))
    assert len(back) == 3
    for orig, got in zip(records, back):
        assert orig.predicted_class == got.predicted_class
        for a, b in zip(orig.layers, got.layers):
            assert np.array_equal(a, b)
            assert b.dtype == np.float64


def test_round_trip_float64_flag(tmp_path, rng):
    records = [
        ActivationRecord(0, tuple(rng.standard_normal(s) for s in SHAPES)) for _ in range(2)
    ]
    path = tmp_path / "r64.gact"
    write_activations(path, 1, SHAPES, records, float64=True)
    assert read_header(path).float64
    back = list(read_activations(path))
    for orig, got in zip(records, back):
        for a, b in zip(orig.layers, got.layers):
            assert np.array_equal(a, b)


def test_truncated_mid_record_reports_index(tmp_path, rng):
    records = f32_records(rng, 3)
    path = tmp_path / "t.gact"
    write_activations(path, 3, SHAPES, records)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(TruncatedError) as exc:
        list(read_activations(path))
    assert "record 2" in str(exc.value)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.gact"
    path.write_bytes(b"WHAT" + b"\x00" * 40)
    with pytest.raises(FormatError):
        list(read_activations(path))


def test_unsupported_version(tmp_path, rng):
    path = tmp_path / "v.gact"
    write_activations(path, 3, SHAPES, f32_records(rng, 1))
    raw = bytearray(path.read_bytes())
    struct.pack_into("<H", raw, 4, 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        list(read_activations(path))


def test_zero_layers_header_rejected(tmp_path):
    path = tmp_path / "z.gact"
    path.write_bytes(b"GACT" + struct.pack("<HHII", 1, 0, 3, 0) + struct.pack("<Q", 0))
    with pytest.raises(FormatError):
        list(read_activations(path))


def test_out_of_range_class_rejected(tmp_path, rng):
    path = tmp_path / "c.gact"
    write_activations(path, 3, SHAPES, f32_records(rng, 2))
    raw = bytearray(path.read_bytes())
    header_len = 4 + 12 + 8 * len(SHAPES) + 8
    struct.pack_into("<I", raw, header_len, 17)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError) as exc:
        list(read_activations(path))
    assert "record 0" in str(exc.value)


def test_trailing_bytes_rejected(tmp_path, rng):
    path = tmp_path / "x.gact"
    write_activations(path, 3, SHAPES, f32_records(rng, 2))
    path.write_bytes(path.read_bytes() + b"!")
    with pytest.raises(FormatError):
        list(read_activations(path))
    with pytest.raises(FormatError):
        open_dataset(path)


def test_writer_validates_records(tmp_path, rng):
    rec = f32_records(rng, 1)[0]
    with GactWriter(tmp_path / "w.gact", 3, SHAPES) as w:
        with pytest.raises(DataError):
            w.append(ActivationRecord(5, rec.layers))
        with pytest.raises(DataError):
            w.append(ActivationRecord(0, rec.layers[:1]))
        w.append(rec)
    assert read_header(tmp_path / "w.gact").record_count == 1


def test_streaming_reader_constant_memory(tmp_path, rng):
    # ~38 MB file; streaming consumption must stay far below the file size
    shapes = ((64, 100),)
    path = tmp_path / "big.gact"
    with GactWriter(path, 2, shapes) as w:
        chunk = np.ones((64, 100), dtype=np.float64)
        for i in range(1500):
            w.append(ActivationRecord(i % 2, (chunk,)))
    assert path.stat().st_size > 30_000_000
    tracemalloc.start()
    count = 0
    for record in read_activations(path):
        count += 1
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == 1500
    assert peak < 5_000_000


def test_split_indices_deterministic_and_disjoint():
    va1, rest1 = split_indices(100, 0.1, seed=7)
    va2, rest2 = split_indices(100, 0.1, seed=7)
    assert va1 == va2 and rest1 == rest2
    assert len(va1) == 10 and len(rest1) == 90
    assert sorted(va1 + rest1) == list(range(100))


def test_split_indices_floor_rule():
    va, rest = split_indices(3, 0.5, seed=0)
    assert len(va) == 1 and len(rest) == 2


def test_split_different_seeds_differ():
    for s in range(10):
        va_a, _ = split_indices(100, 0.1, seed=s)
        va_b, _ = split_indices(100, 0.1, seed=s + 1000)
        assert va_a != va_b


def test_splitmix_fisher_yates_reference():
    # frozen expectations computed with the reference C SplitMix64
    # (Vigna/Steele et al. constants), independent of this Python port
    from gramdet.activations import SplitMix64

    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(3)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
    ]
    assert shuffled_indices(6, 42) == [4, 3, 0, 2, 5, 1]


def test_split_validation_files(tmp_path, rng):
    path = tmp_path / "d.gact"
    write_activations(path, 3, SHAPES, f32_records(rng, 40))
    handle = open_dataset(path)
    va, rest = split_validation(handle, 0.10, seed=3)
    assert va.header.record_count == 4
    assert rest.header.record_count == 36
    assert va.role is DatasetRole.VALIDATION
    # disjoint cover, order preserved
    va_recs = list(read_activations(va.path))
    rest_recs = list(read_activations(rest.path))
    all_recs = list(read_activations(path))
    va_idx, rest_idx = split_indices(40, 0.10, seed=3)
    for idx, got in zip(va_idx, va_recs):
        assert np.array_equal(all_recs[idx].layers[0], got.layers[0])
    for idx, got in zip(rest_idx, rest_recs):
        assert np.array_equal(all_recs[idx].layers[0], got.layers[0])


def test_split_validation_too_small(tmp_path, rng):
    path = tmp_path / "s.gact"
    write_activations(path, 3, SHAPES, f32_records(rng, 6))
    with pytest.raises(DataError):
        split_validation(open_dataset(path), 0.10, seed=0)


def test_generator_deterministic_bytes(tmp_path):
    config = BenchmarkConfig(
        num_classes=3, layer_shapes=((4, 6),), train_per_class=5,
        test_per_class=3, ood_count=6, ood_kind="gaussian", seed=11,
    )
    a = generate_synthetic_benchmark(config, tmp_path / "a")
    b = generate_synthetic_benchmark(config, tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_generator_supports(tmp_path):
    base = dict(num_classes=2, layer_shapes=((3, 5),), train_per_class=4,
                test_per_class=2, ood_count=20, seed=5)
    rad = generate_synthetic_benchmark(
        BenchmarkConfig(ood_kind="rademacher", **base), tmp_path / "rad"
    )
    vals = np.concatenate(
        [rec.layers[0].ravel() for rec in read_activations(rad["ood_test"])]
    )
    assert set(np.unique(vals)) == {-1.0, 1.0}
    ber = generate_synthetic_benchmark(
        BenchmarkConfig(ood_kind="bernoulli", **base), tmp_path / "ber"
    )
    vals = np.concatenate(
        [rec.layers[0].ravel() for rec in read_activations(ber["ood_test"])]
    )
    assert set(np.unique(vals)) <= {0.0, 1.0}


def test_generator_rejects_unknown_kind():
    with pytest.raises(ValueError):
        BenchmarkConfig(ood_kind="blob")


def test_generator_counts_and_classes(tmp_path):
    config = BenchmarkConfig(
        num_classes=4, layer_shapes=((2, 2), (3, 3)), train_per_class=6,
        test_per_class=2, ood_count=9, ood_kind="shifted", seed=2,
    )
    paths = generate_synthetic_benchmark(config, tmp_path / "g")
    train_header = read_header(paths["train"])
    assert train_header.record_count == 24
    assert train_header.num_classes == 4
    assert train_header.layer_shapes == ((2, 2), (3, 3))
    assert read_header(paths["id_test"]).record_count == 8
    assert read_header(paths["ood_test"]).record_count == 9
