import numpy as np
import pytest
import torch

from pacelight import spectral as sp
from pacelight.errors import IndivisibleChannels, ShapeMismatch


def rand_c(*shape, seed=0, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    re = torch.randn(shape, generator=g, dtype=torch.float64)
    im = torch.randn(shape, generator=g, dtype=torch.float64)
    return torch.complex(re, im) * scale


def spatial_kernel_1d(weights, length):
    """Spatial circular-convolution taps equivalent to truncated 1-D spectral
    weights: place modes at their FFT bins, inverse transform over the mode
    axis."""
    g, k, ci, co = weights.shape
    idx = sp.mode_indices(k, length)
    spec = torch.zeros(g, length, ci, co, dtype=weights.dtype)
    spec[:, idx] = weights
    return torch.fft.ifft(spec, dim=1)  # (g, length, ci, co)


def circular_conv_1d(weights, x, axis):
    """Direct O(L^2) circular convolution along one axis (brute-force oracle)."""
    b, c, m, n = x.shape
    g = weights.shape[0]
    ci = c // g
    co = weights.shape[3]
    length = m if axis == sp.VERTICAL else n
    h = spatial_kernel_1d(weights, length)
    xg = x.reshape(b, g, ci, m, n)
    out = torch.zeros(b, g, co, m, n, dtype=x.dtype)
    for q in range(length):
        shifted = torch.roll(xg, shifts=q, dims=3 if axis == sp.VERTICAL else 4)
        # out[..., o, :, :] += h[q] applied over input channels
        out += torch.einsum("bgimn,gio->bgomn", shifted, h[:, q])
    return out.reshape(b, g * co, m, n)


def circular_conv_2d(weights, x):
    """Direct O((MN)^2) 2-D circular convolution oracle for the dense kernel."""
    b, c, m, n = x.shape
    kv, kh, ci, co = weights.shape
    iv = sp.mode_indices(kv, m)
    ih = sp.mode_indices(kh, n)
    spec = torch.zeros(m, n, ci, co, dtype=weights.dtype)
    gv, gh = torch.meshgrid(iv, ih, indexing="ij")
    spec[gv, gh] = weights
    h = torch.fft.ifft2(spec, dim=(0, 1))  # spatial taps (m, n, ci, co)
    out = torch.zeros(b, co, m, n, dtype=x.dtype)
    for p in range(m):
        for q in range(n):
            shifted = torch.roll(x, shifts=(p, q), dims=(2, 3))
            out += torch.einsum("bimn,io->bomn", shifted, h[p, q])
    return out


class TestModeIndices:
    def test_ordering(self):
        assert sp.mode_indices(5, 8).tolist() == [0, 1, 7, 2, 6]

    def test_full(self):
        assert sorted(sp.mode_indices(8, 8).tolist()) == list(range(8))

    def test_single(self):
        assert sp.mode_indices(1, 6).tolist() == [0]

    def test_too_many(self):
        with pytest.raises(ValueError):
            sp.mode_indices(9, 8)


class TestSpectralMultiply1D:
    @pytest.mark.parametrize("axis,g", [(sp.VERTICAL, 1), (sp.VERTICAL, 2),
                                        (sp.HORIZONTAL, 1), (sp.HORIZONTAL, 2)])
    def test_matches_circular_convolution(self, axis, g):
        b, c, m, n = 2, 4, 6, 8
        length = m if axis == sp.VERTICAL else n
        for modes in (1, 3, length):
            w = rand_c(g, modes, c // g, c // g, seed=modes, scale=0.3)
            x = rand_c(b, c, m, n, seed=7)
            y = sp.spectral_multiply_1d(sp.SpectralKernel1D(axis, w), x)
            yo = circular_conv_1d(w, x, axis)
            assert (y - yo).abs().max().item() < 1e-10

    def test_identity_kernel(self):
        c, m, n = 4, 6, 8
        w = torch.eye(c, dtype=torch.complex128).expand(1, m, c, c).clone()
        x = rand_c(1, c, m, n, seed=1)
        y = sp.spectral_multiply_1d(sp.SpectralKernel1D(sp.VERTICAL, w), x)
        assert (y - x).abs().max().item() < 1e-12

    def test_truncated_modes_are_zeroed(self):
        c, m, n = 2, 6, 8
        w = torch.eye(c, dtype=torch.complex128).expand(1, 3, c, c).clone()
        k = sp.SpectralKernel1D(sp.HORIZONTAL, w)
        # harmonic of order 3 lies outside modes {0, 1, -1}
        z = torch.exp(1j * 2 * np.pi * 3 * torch.arange(n, dtype=torch.float64) / n)
        x = z.expand(1, c, m, n).to(torch.complex128)
        assert sp.spectral_multiply_1d(k, x).abs().max().item() < 1e-12

    def test_channel_mismatch(self):
        w = rand_c(1, 3, 4, 4)
        with pytest.raises(ShapeMismatch):
            sp.spectral_multiply_1d(sp.SpectralKernel1D(sp.VERTICAL, w),
                                    rand_c(1, 6, 6, 8))

    def test_weight_validation(self):
        with pytest.raises(ShapeMismatch):
            sp.SpectralKernel1D(sp.VERTICAL, torch.randn(3, 4, 4))
        with pytest.raises(ShapeMismatch):
            sp.SpectralKernel1D(sp.VERTICAL, torch.randn(1, 3, 4, 4))
        with pytest.raises(ValueError):
            sp.SpectralKernel1D("diagonal", rand_c(1, 3, 4, 4))


class TestSingleAxisFactorized:
    def test_is_sum_of_axis_terms(self):
        c, m, n = 4, 6, 8
        wv = rand_c(1, 3, c, c, seed=2, scale=0.3)
        wh = rand_c(1, 3, c, c, seed=3, scale=0.3)
        kv = sp.SpectralKernel1D(sp.VERTICAL, wv)
        kh = sp.SpectralKernel1D(sp.HORIZONTAL, wh)
        x = rand_c(2, c, m, n, seed=4)
        y = sp.single_axis_factorized([kv, kh], x)
        yo = sp.spectral_multiply_1d(kv, x) + sp.spectral_multiply_1d(kh, x)
        assert (y - yo).abs().max().item() < 1e-12

    def test_empty_kernel_list(self):
        with pytest.raises(ShapeMismatch):
            sp.single_axis_factorized([], rand_c(1, 2, 4, 4))


class TestCrossAxis:
    def test_is_composition(self):
        c, m, n = 4, 6, 8
        wv = rand_c(2, 3, c // 2, c // 2, seed=5, scale=0.3)
        wh = rand_c(2, 3, c // 2, c // 2, seed=6, scale=0.3)
        kv = sp.SpectralKernel1D(sp.VERTICAL, wv)
        kh = sp.SpectralKernel1D(sp.HORIZONTAL, wh)
        x = rand_c(2, c, m, n, seed=8)
        y = sp.cross_axis_apply(sp.CrossAxisKernel(kv, kh), x)
        yo = sp.spectral_multiply_1d(kh, sp.spectral_multiply_1d(kv, x))
        assert (y - yo).abs().max().item() < 1e-12

    def test_matches_sequential_circular_convolutions(self):
        c, m, n = 2, 5, 7
        wv = rand_c(1, m, c, c, seed=9, scale=0.3)
        wh = rand_c(1, n, c, c, seed=10, scale=0.3)
        x = rand_c(1, c, m, n, seed=11)
        y = sp.cross_axis_apply(sp.CrossAxisKernel(
            sp.SpectralKernel1D(sp.VERTICAL, wv),
            sp.SpectralKernel1D(sp.HORIZONTAL, wh)), x)
        yo = circular_conv_1d(wh, circular_conv_1d(wv, x, sp.VERTICAL), sp.HORIZONTAL)
        assert (y - yo).abs().max().item() < 1e-10

    def test_axis_and_group_validation(self):
        kv = sp.SpectralKernel1D(sp.VERTICAL, rand_c(1, 3, 4, 4))
        kh = sp.SpectralKernel1D(sp.HORIZONTAL, rand_c(2, 3, 2, 2))
        with pytest.raises(ShapeMismatch):
            sp.CrossAxisKernel(kv, kv)
        with pytest.raises(ShapeMismatch):
            sp.CrossAxisKernel(kv, kh)  # group mismatch


class TestSpectralMultiply2D:
    def test_matches_circular_convolution(self):
        b, c, m, n = 1, 2, 5, 6
        for kv, kh in ((2, 3), (m, n)):
            w = rand_c(kv, kh, c, c, seed=kv * 10 + kh, scale=0.3)
            x = rand_c(b, c, m, n, seed=12)
            y = sp.spectral_multiply_2d(sp.SpectralKernel2D(w), x)
            yo = circular_conv_2d(w, x)
            assert (y - yo).abs().max().item() < 1e-10

    def test_channel_mismatch(self):
        w = rand_c(2, 2, 3, 3)
        with pytest.raises(ShapeMismatch):
            sp.spectral_multiply_2d(sp.SpectralKernel2D(w), rand_c(1, 4, 5, 6))


class TestGrouping:
    def test_partition_merge_roundtrip(self):
        x = rand_c(2, 8, 4, 4, seed=13)
        blocks = sp.grouped_partition(x, 4)
        assert len(blocks) == 4 and blocks[0].shape[1] == 2
        assert torch.equal(sp.grouped_merge(blocks), x)

    def test_single_group(self):
        x = rand_c(1, 4, 3, 3, seed=14)
        (block,) = sp.grouped_partition(x, 1)
        assert torch.equal(block, x)

    def test_indivisible(self):
        with pytest.raises(IndivisibleChannels):
            sp.grouped_partition(rand_c(1, 6, 3, 3), 4)


class TestParamCount:
    CASES = [
        # (variant, kh, kv, c, g, expected)
        (sp.DENSE_FNO, 4, 5, 8, 1, 4 * 5 * 8 * 8),
        (sp.DENSE_FNO, 3, 3, 16, 1, 9 * 256),
        (sp.DENSE_FNO, 1, 1, 2, 1, 4),
        (sp.SINGLE_AXIS, 4, 5, 8, 1, 9 * 64),
        (sp.SINGLE_AXIS, 3, 3, 16, 1, 6 * 256),
        (sp.SINGLE_AXIS, 8, 12, 16, 1, 20 * 256),
        (sp.GROUPED_CROSS_AXIS, 4, 5, 8, 2, 9 * 64 // 2),
        (sp.GROUPED_CROSS_AXIS, 8, 12, 16, 4, 20 * 256 // 4),
        (sp.GROUPED_CROSS_AXIS, 3, 3, 4, 2, 6 * 16 // 2),
        (sp.GROUPED_CROSS_AXIS, 2, 2, 8, 8, 4 * 64 // 8),
        (sp.GROUPED_CROSS_AXIS, 5, 7, 12, 3, 12 * 144 // 3),
        (sp.GROUPED_CROSS_AXIS, 6, 6, 6, 1, 12 * 36),
    ]

    @pytest.mark.parametrize("variant,kh,kv,c,g,expected", CASES)
    def test_formulas(self, variant, kh, kv, c, g, expected):
        assert sp.param_count(variant, kh, kv, c, c, g=g) == expected

    @pytest.mark.parametrize("variant,kh,kv,c,g,expected", CASES)
    def test_matches_actual_allocation(self, variant, kh, kv, c, g, expected):
        gen = torch.Generator().manual_seed(0)
        if variant == sp.DENSE_FNO:
            w = rand_c(kv, kh, c, c)
            actual = sp.SpectralKernel2D(w).weights.numel()
        else:
            gg = g if variant == sp.GROUPED_CROSS_AXIS else 1
            wv = sp.init_kernel_weights(kv, c, c, gg, kh + kv, gen)
            wh = sp.init_kernel_weights(kh, c, c, gg, kh + kv, gen)
            actual = wv.numel() + wh.numel()
        assert actual == expected

    def test_indivisible_groups(self):
        with pytest.raises(IndivisibleChannels):
            sp.param_count(sp.GROUPED_CROSS_AXIS, 2, 2, 6, 6, g=4)
        with pytest.raises(IndivisibleChannels):
            sp.param_count(sp.SINGLE_AXIS, 2, 2, 4, 4, g=0)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            sp.param_count("tensorized", 2, 2, 4, 4)


class TestInit:
    def test_std_and_shape(self):
        gen = torch.Generator().manual_seed(0)
        w = sp.init_kernel_weights(6, 64, 64, 4, 12, gen)
        assert w.shape == (4, 6, 16, 16)
        expected = (64 * 12 / 4) ** -0.5
        assert w.real.std().item() == pytest.approx(expected, rel=0.1)
        assert w.imag.abs().mean().item() > 0

    def test_indivisible(self):
        with pytest.raises(IndivisibleChannels):
            sp.init_kernel_weights(3, 6, 6, 4, 6)
