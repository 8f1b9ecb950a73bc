"""Positional-encoding and input-projection tests."""

import math

import numpy as np
import pytest

from vvids.embeddings import (PosEncodingConfig, grid_map, grid_width_for,
                              project_and_drop, sequence_encoding, sincos2d)
from vvids.errors import ConfigError
from vvids.numerics import Tensor, make_rng


class TestGridMap:
    def test_origin(self):
        assert grid_map(0, 7) == (0, 0)

    def test_division_identity(self):
        assert grid_map(5, 3) == (1, 2)
        assert grid_map(8, 3) == (2, 2)

    def test_grid_width_for(self):
        assert grid_width_for(1) == 1
        assert grid_width_for(16) == 4
        assert grid_width_for(17) == 5
        assert grid_width_for(20) == 5


class TestSincos2d:
    def test_origin_is_zero_sin_one_cos(self):
        cfg = PosEncodingConfig(d_model=8)
        enc = sincos2d([(0, 0)], cfg).data[0]
        # layout: [sin(row*w), cos(row*w), sin(col*w), cos(col*w)]
        np.testing.assert_array_equal(enc[0:2], 0.0)
        np.testing.assert_array_equal(enc[2:4], 1.0)
        np.testing.assert_array_equal(enc[4:6], 0.0)
        np.testing.assert_array_equal(enc[6:8], 1.0)

    def test_closed_form_first_frequency(self):
        cfg = PosEncodingConfig(d_model=8, temperature=10000.0)
        enc = sincos2d([(1, 0)], cfg).data[0]
        assert abs(enc[0] - math.sin(1.0)) < 1e-9
        assert abs(enc[0] - 0.841471) < 1e-6
        # second frequency is temperature**(-4/8)
        assert abs(enc[1] - math.sin(10000.0 ** -0.5)) < 1e-12

    def test_bounded(self):
        cfg = PosEncodingConfig(d_model=16)
        enc = sincos2d([(r, c) for r in range(9) for c in range(9)], cfg).data
        assert (enc >= -1.0).all() and (enc <= 1.0).all()

    def test_deterministic(self):
        cfg = PosEncodingConfig(d_model=12)
        a = sincos2d([(2, 3), (4, 1)], cfg).data
        b = sincos2d([(2, 3), (4, 1)], cfg).data
        np.testing.assert_array_equal(a, b)

    def test_axis_swap_symmetry(self):
        cfg = PosEncodingConfig(d_model=16)
        rc = sincos2d([(3, 5)], cfg).data[0]
        cr = sincos2d([(5, 3)], cfg).data[0]
        half = cfg.d_model // 2
        np.testing.assert_array_equal(rc[:half], cr[half:])
        np.testing.assert_array_equal(rc[half:], cr[:half])

    @pytest.mark.parametrize("width", [4, 16, 64])
    def test_injective_over_grid(self, width):
        cfg = PosEncodingConfig(d_model=8, grid_width=width)
        enc = sequence_encoding(width * width, cfg).data
        assert len(np.unique(enc, axis=0)) == width * width

    def test_d_model_not_multiple_of_four_rejected(self):
        with pytest.raises(ConfigError):
            PosEncodingConfig(d_model=6)

    def test_temperature_must_exceed_one(self):
        with pytest.raises(ConfigError):
            PosEncodingConfig(d_model=8, temperature=1.0)


class TestProjectAndDrop:
    def test_zero_weights_give_zero_output(self):
        rng = make_rng(0)
        x = Tensor(rng.normal(size=(5, 3)))
        out = project_and_drop(x, Tensor(np.zeros((3, 8))), Tensor(np.zeros(8)),
                               rate=0.5, training=True, rng=rng)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_eval_mode_dropout_is_identity(self):
        rng = make_rng(1)
        x = Tensor(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(3, 8)))
        b = Tensor(rng.normal(size=8))
        out = project_and_drop(x, w, b, rate=0.5, training=False)
        np.testing.assert_array_equal(out.data, x.data @ w.data + b.data)

    def test_invalid_rate_rejected(self):
        x = Tensor(np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            project_and_drop(x, Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)),
                             rate=1.0, training=False)
