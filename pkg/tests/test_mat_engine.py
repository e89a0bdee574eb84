import numpy as np
import pytest

from nanosoc.basecaller import default_spec
from nanosoc.mat_engine import (
    CoreConfig,
    SystolicConfig,
    conv_to_gemm_dims,
    core_gemm_cycles,
    systolic_cycles,
    systolic_gemm,
)
from nanosoc.tensor import gemm_ref

INT_CFG = SystolicConfig(numeric_mode="int8")
F32_CFG = SystolicConfig(numeric_mode="float32")


class TestCycleFormula:
    def test_4cubed(self):
        assert systolic_cycles(4, 4, 4, INT_CFG) == 26

    def test_64cubed(self):
        assert systolic_cycles(64, 64, 64, INT_CFG) == 17936

    def test_monotone_in_each_dim(self):
        base = systolic_cycles(8, 8, 8, INT_CFG)
        for m, k, n in [(9, 8, 8), (8, 9, 8), (8, 8, 9), (16, 8, 8)]:
            assert systolic_cycles(m, k, n, INT_CFG) >= base

    def test_utilization_bounded_and_asymptotic(self):
        rng = np.random.default_rng(0)
        p = 4
        for _ in range(200):
            m, k, n = (int(x) for x in rng.integers(1, 100, size=3))
            cycles = systolic_cycles(m, k, n, INT_CFG)
            assert m * k * n / (cycles * p * p) <= 1.0
        # K -> inf with M, N multiples of P drives utilization to 1
        util = 8 * 50000 * 8 / (systolic_cycles(8, 50000, 8, INT_CFG) * p * p)
        assert util > 0.99


class TestFunctional:
    def test_int_mode_matches_gemm_ref_500_shapes(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            m, k, n = (int(x) for x in rng.integers(1, 65, size=3))
            a = rng.integers(-127, 128, size=(m, k), dtype=np.int8)
            b = rng.integers(-127, 128, size=(k, n), dtype=np.int8)
            res = systolic_gemm(a, b, INT_CFG)
            assert np.array_equal(res.output, gemm_ref(a, b))
            assert res.macs == m * k * n
            assert res.cycles >= res.macs / 16

    def test_float_mode_close_to_ref(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m, k, n = (int(x) for x in rng.integers(1, 65, size=3))
            a = rng.standard_normal((m, k)).astype(np.float32)
            b = rng.standard_normal((k, n)).astype(np.float32)
            res = systolic_gemm(a, b, F32_CFG)
            ref = gemm_ref(a, b)
            assert np.allclose(res.output, ref, rtol=1e-5, atol=1e-5)

    def test_int_mode_rejects_floats(self):
        with pytest.raises(ValueError):
            systolic_gemm(np.ones((2, 2)), np.ones((2, 2)), INT_CFG)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            systolic_gemm(
                np.ones((2, 3), dtype=np.int8), np.ones((4, 2), dtype=np.int8), INT_CFG
            )


class TestConvDims:
    def test_simple_layer(self):
        layer = type("L", (), dict(c_in=1, c_out=8, kernel=3, stride=1, pad=0))
        assert conv_to_gemm_dims(layer, 10) == (8, 3, 8)

    def test_k1_keeps_k_equal_cin(self):
        layer = type("L", (), dict(c_in=7, c_out=2, kernel=1, stride=1, pad=0))
        m, k, n = conv_to_gemm_dims(layer, 5)
        assert k == 7

    def test_default_spec_mac_total_matches_layer_sum(self):
        spec = default_spec()
        t = 4000
        total = 0
        by_hand = 0
        for layer in spec.layers:
            m, k, n = conv_to_gemm_dims(layer, t)
            total += m * k * n
            t_out = (t + 2 * layer.pad - layer.kernel) // layer.stride + 1
            by_hand += layer.c_out * layer.c_in * layer.kernel * t_out
            t = t_out
        assert total == by_hand


class TestCoreBaseline:
    def test_64cubed_default(self):
        assert core_gemm_cycles(64, 64, 64) == 262144

    def test_single_mac(self):
        assert core_gemm_cycles(1, 1, 1) == 1

    def test_64cubed_speedup_band(self):
        speedup = core_gemm_cycles(64, 64, 64) / systolic_cycles(64, 64, 64, INT_CFG)
        assert 13 <= speedup <= 17

    def test_default_spec_speedup_band(self):
        spec = default_spec()
        t = 4000
        core = accel = 0
        for layer in spec.layers:
            m, k, n = conv_to_gemm_dims(layer, t)
            core += core_gemm_cycles(m, k, n)
            accel += systolic_cycles(m, k, n, INT_CFG)
            t = n
        assert 13 <= core / accel <= 17

    def test_fractional_rate(self):
        assert core_gemm_cycles(3, 3, 3, CoreConfig(macs_per_cycle=2.0)) == 14
