"""Tensor foundation: softmax, channel statistics, RTF serialization."""

import json
import math

import numpy as np
import pytest

from raydistill.tensor import (FeatureMap, FormatError, ScalarGrid,
                               channel_abs_mean, load_grid, load_tensor,
                               save_grid, save_tensor, softmax_flat)


class TestTypes:
    def test_feature_map_validates_shape(self):
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((0, 4, 4)))

    def test_rejects_non_finite(self):
        bad = np.zeros((1, 2, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(bad)
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            ScalarGrid(bad[0])

    def test_immutable(self):
        f = FeatureMap(np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            f.data[0, 0, 0] = 1.0


class TestSoftmaxFlat:
    def test_uniform_input_gives_uniform_output(self):
        out = softmax_flat(ScalarGrid(np.zeros((2, 2))))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-15)

    def test_zero_ln3_pair(self):
        out = softmax_flat(ScalarGrid(np.array([[0.0, math.log(3.0)]])))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-14)

    def test_shift_invariance_and_sum(self, rng):
        for _ in range(50):
            g = rng.normal(0, 5, (rng.integers(1, 9), rng.integers(1, 9)))
            a = softmax_flat(ScalarGrid(g))
            b = softmax_flat(ScalarGrid(g + rng.normal(0, 100)))
            np.testing.assert_allclose(a.data, b.data, rtol=1e-12)
            assert abs(a.data.sum() - 1.0) <= 1e-12
            assert np.all(a.data > 0)

    def test_extreme_values_stable(self):
        out = softmax_flat(ScalarGrid(np.array([[1e4, 0.0]])))
        assert np.all(np.isfinite(out.data))
        assert abs(out.data.sum() - 1.0) <= 1e-12


class TestChannelAbsMean:
    def test_single_channel_is_abs(self, rng):
        x = rng.normal(0, 1, (1, 5, 5))
        out = channel_abs_mean(FeatureMap(x))
        np.testing.assert_array_equal(out.data, np.abs(x[0]))

    def test_opposite_channels(self, rng):
        v = rng.normal(0, 1, (5, 5))
        out = channel_abs_mean(FeatureMap(np.stack([v, -v])))
        np.testing.assert_allclose(out.data, np.abs(v), rtol=1e-15)

    def test_direct_value(self):
        f = np.zeros((2, 1, 1))
        f[:, 0, 0] = [3.0, -1.0]
        assert channel_abs_mean(FeatureMap(f)).data[0, 0] == 2.0

    def test_nonnegative(self, rng):
        for _ in range(20):
            f = rng.normal(0, 3, (3, 4, 4))
            assert np.all(channel_abs_mean(FeatureMap(f)).data >= 0)


class TestRtf:
    @pytest.mark.parametrize("shape", [(4, 8, 8), (1, 1, 1), (2, 5, 3),
                                       (64, 128, 128)])
    def test_round_trip_bit_exact(self, tmp_path, rng, shape):
        values = rng.normal(0, 1, shape).astype(np.float32).astype(np.float64)
        f = FeatureMap(values)
        base = str(tmp_path / "t")
        save_tensor(f, base)
        loaded = load_tensor(base)
        np.testing.assert_array_equal(loaded.data, f.data)
        save_tensor(loaded, str(tmp_path / "t2"))
        assert (tmp_path / "t.bin").read_bytes() == (tmp_path / "t2.bin").read_bytes()
        assert (tmp_path / "t.json").read_bytes() == (tmp_path / "t2.json").read_bytes()

    def test_payload_length_mismatch(self, tmp_path):
        base = str(tmp_path / "bad")
        (tmp_path / "bad.json").write_text(
            json.dumps({"dtype": "f32le", "shape": [2, 2, 2]}))
        (tmp_path / "bad.bin").write_bytes(b"\x00" * (4 * 7))
        with pytest.raises(FormatError):
            load_tensor(base)

    def test_wrong_dtype(self, tmp_path):
        (tmp_path / "bad.json").write_text(
            json.dumps({"dtype": "f64le", "shape": [1, 1, 1]}))
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 4)
        with pytest.raises(FormatError):
            load_tensor(str(tmp_path / "bad"))

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        (tmp_path / "bad.bin").write_bytes(b"")
        with pytest.raises(FormatError):
            load_tensor(str(tmp_path / "bad"))

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_tensor(str(tmp_path / "nope"))

    def test_grid_round_trip(self, tmp_path, rng):
        g = ScalarGrid(rng.normal(0, 1, (6, 7)).astype(np.float32).astype(np.float64))
        save_grid(g, str(tmp_path / "g"))
        out = load_grid(str(tmp_path / "g"))
        np.testing.assert_array_equal(out.data, g.data)
        manifest = json.loads((tmp_path / "g.json").read_text())
        assert manifest["shape"] == [1, 6, 7]
