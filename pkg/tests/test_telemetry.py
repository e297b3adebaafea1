import numpy as np
import pytest

from laco.errors import ConfigError, PayloadFormatError
from laco.model import (
    EGO_LATENT,
    EGO_PREFILL,
    FOREIGN_LATENT,
    FOREIGN_PREFILL,
    AttentionTrace,
)
from laco.telemetry import (
    TelemetryWriter,
    confusion_index,
    emit,
    layer_entropy,
    read_telemetry,
    sparsity_curve,
    trace_entropy,
    trace_record_to_trace,
)
from reference import ref_layer_entropy, ref_sparsity


def dist_rows(rng, H, n):
    raw = rng.random((H, n)) + 1e-3
    return (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)


class TestEntropy:
    def test_uniform_is_log_n(self):
        rows = np.full((2, 16), 1.0 / 16, dtype=np.float32)
        prof = layer_entropy([rows, rows])
        np.testing.assert_allclose(prof.values, np.log(16.0), atol=1e-5)

    def test_one_hot_near_zero(self):
        rows = np.zeros((3, 8), dtype=np.float32)
        rows[:, 2] = 1.0
        prof = layer_entropy([rows])
        assert abs(prof.values[0]) <= 1e-6

    def test_matches_straight_line(self):
        rng = np.random.default_rng(0)
        rows_per_layer = [dist_rows(rng, 2, 8) for _ in range(3)]
        prof = layer_entropy(rows_per_layer)
        for l, rows in enumerate(rows_per_layer):
            np.testing.assert_allclose(prof.values[l], ref_layer_entropy(rows, 1e-8), atol=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for n in (1, 3, 64):
            rows = dist_rows(rng, 4, n)
            e = layer_entropy([rows]).values[0]
            assert -1e-6 <= e <= np.log(n) + 1e-6

    def test_ragged_rows_accepted(self):
        rng = np.random.default_rng(2)
        prof = layer_entropy([dist_rows(rng, 2, 9), dist_rows(rng, 2, 4)])
        assert prof.values.shape == (2,)

    def test_trace_entropy_averages_steps(self):
        trace = AttentionTrace(2, 1, 1, 4)
        trace.record(np.full((1, 1, 2), 0.5, dtype=np.float32), 2)
        trace.record(np.full((1, 1, 4), 0.25, dtype=np.float32), 4)
        prof = trace_entropy(trace)
        np.testing.assert_allclose(prof.values[0], (np.log(2) + np.log(4)) / 2, atol=1e-5)


class TestSparsity:
    def _trace_from_mass(self, mass):
        n = len(mass)
        trace = AttentionTrace(1, 1, 1, n)
        rows = np.asarray(mass, dtype=np.float64)[None, None, :] / np.sum(mass)
        trace.record(rows.astype(np.float32), n)
        return trace

    def test_uniform_fraction(self):
        curve = sparsity_curve(self._trace_from_mass([1.0] * 10))
        assert curve.fraction_for_80 == pytest.approx(0.8, abs=0.1 + 1e-9)

    def test_concentrated_mass(self):
        mass = [0.0] * 10
        mass[1] = mass[4] = mass[7] = 1.0
        curve = sparsity_curve(self._trace_from_mass(mass))
        assert curve.fraction_for_80 == pytest.approx(0.3)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(3)
        mass = rng.random(12)
        curve = sparsity_curve(self._trace_from_mass(mass))
        np.testing.assert_allclose(curve.cumulative, ref_sparsity(mass / mass.sum()), atol=1e-6)

    def test_curve_nondecreasing_ends_at_one(self):
        rng = np.random.default_rng(4)
        trace = AttentionTrace(3, 2, 2, 9)
        for t in range(3):
            n = 7 + t
            raw = rng.random((2, 2, n)) + 1e-3
            trace.record((raw / raw.sum(axis=2, keepdims=True)).astype(np.float32), n)
        curve = sparsity_curve(trace)
        assert np.all(np.diff(curve.cumulative) >= -1e-12)
        assert curve.cumulative[-1] == pytest.approx(1.0, abs=1e-6)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        mass = rng.random(10)
        a = sparsity_curve(self._trace_from_mass(mass))
        b = sparsity_curve(self._trace_from_mass(mass[::-1]))
        np.testing.assert_allclose(a.cumulative, b.cumulative, atol=1e-7)
        assert a.fraction_for_80 == b.fraction_for_80


class TestConfusion:
    def test_no_foreign_all_zero(self):
        rng = np.random.default_rng(6)
        rows = [dist_rows(rng, 2, 5) for _ in range(3)]
        tags = [np.full(5, EGO_PREFILL, dtype=np.uint8) for _ in range(3)]
        idx = confusion_index(rows, tags)
        np.testing.assert_array_equal(idx.values, 0.0)

    def test_mirror_copy_half_mass(self):
        # identical ego and foreign keys split softmax mass evenly
        rows = np.full((2, 8), 1.0 / 8, dtype=np.float32)
        tags = np.array([EGO_PREFILL] * 4 + [FOREIGN_PREFILL] * 4, dtype=np.uint8)
        idx = confusion_index([rows], [tags])
        np.testing.assert_allclose(idx.values, 0.5, atol=1e-6)

    def test_deep_layers_exactly_zero_when_ego_only(self):
        rng = np.random.default_rng(7)
        rows = [dist_rows(rng, 2, 9), dist_rows(rng, 2, 5), dist_rows(rng, 2, 5)]
        tags = [
            np.array([EGO_PREFILL] * 5 + [FOREIGN_LATENT] * 4, dtype=np.uint8),
            np.full(5, EGO_PREFILL, dtype=np.uint8),
            np.full(5, EGO_LATENT, dtype=np.uint8),
        ]
        idx = confusion_index(rows, tags)
        assert idx.values[0] > 0.0
        assert idx.values[1] == 0.0 and idx.values[2] == 0.0

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(8)
        rows = [dist_rows(rng, 3, 6)]
        tags = [np.array([EGO_PREFILL, FOREIGN_PREFILL] * 3, dtype=np.uint8)]
        idx = confusion_index(rows, tags)
        assert 0.0 <= idx.values[0] <= 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            confusion_index([np.ones((1, 3), dtype=np.float32) / 3],
                            [np.zeros(2, dtype=np.uint8)])


class TestEmit:
    def test_deterministic_bytes(self, tmp_path):
        rows = [(0, 1, 1, 1.234567891234), (0, 1, 2, 0.5)]
        spars = [(0, 1, 1, 0.5, 0.75, 0.5)]
        conf = [(0, 1, 1, 0.0)]
        emit(tmp_path / "a", rows, spars, conf, metrics={"ds": 50.0})
        emit(tmp_path / "b", rows, spars, conf, metrics={"ds": 50.0})
        for name in ("entropy.csv", "sparsity.csv", "confusion.csv", "metrics.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_rows_header_only(self, tmp_path):
        emit(tmp_path, [], [], [])
        assert (tmp_path / "entropy.csv").read_text() == "tick,agent,layer,entropy\n"

    def test_round_trip_precision(self, tmp_path):
        value = 2.718281828459045
        emit(tmp_path, [(0, 0, 1, value)], [], [])
        line = (tmp_path / "entropy.csv").read_text().splitlines()[1]
        parsed = float(line.split(",")[-1])
        assert parsed == pytest.approx(value, rel=1e-8)


class TestBinaryStream:
    def test_trace_and_decision_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        trace = AttentionTrace(2, 2, 2, 6)
        for t in range(2):
            n = 5 + t
            raw = rng.random((2, 2, n)) + 1e-3
            trace.record((raw / raw.sum(axis=2, keepdims=True)).astype(np.float32), n)
        rows = [dist_rows(rng, 2, 7), dist_rows(rng, 2, 4)]
        tags = [np.array([EGO_PREFILL] * 4 + [FOREIGN_PREFILL] * 3, dtype=np.uint8),
                np.full(4, EGO_PREFILL, dtype=np.uint8)]
        path = tmp_path / "telemetry.bin"
        with TelemetryWriter(path) as w:
            w.write_trace(3, 1, trace)
            w.write_decision(3, 1, rows, tags)
        records = read_telemetry(path)
        assert len(records) == 2
        rec_trace, rec_dec = records
        np.testing.assert_array_equal(rec_trace.lengths, trace.lengths[:2])
        np.testing.assert_array_equal(rec_trace.array, trace.array[:2])
        rebuilt = trace_record_to_trace(rec_trace)
        np.testing.assert_array_equal(rebuilt.array, trace.array[:2])
        for got, want in zip(rec_dec.rows, rows):
            np.testing.assert_array_equal(got, want)
        for got, want in zip(rec_dec.tags, tags):
            np.testing.assert_array_equal(got, want)

    def test_truncated_stream_rejected(self, tmp_path):
        path = tmp_path / "telemetry.bin"
        with TelemetryWriter(path) as w:
            w.write_decision(0, 0, [np.ones((1, 2), dtype=np.float32) / 2],
                             [np.zeros(2, dtype=np.uint8)])
        blob = path.read_bytes()
        bad = tmp_path / "bad.bin"
        bad.write_bytes(blob[:-3])
        with pytest.raises(PayloadFormatError):
            read_telemetry(bad)
