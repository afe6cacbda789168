"""FFT machinery and the three spectral integral kernels: dense 2-D,
single-axis factorized (additive), and grouped cross-axis (composed).

Activation tensors are complex torch tensors of shape (B, C, M, N); the
vertical axis is dim -2 (size M) and the horizontal axis dim -1 (size N).
Truncated high modes are zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import IndivisibleChannels, ShapeMismatch

VERTICAL = "vertical"
HORIZONTAL = "horizontal"

_AXIS_DIM = {VERTICAL: -2, HORIZONTAL: -1}


@dataclass(frozen=True)
class ModeSpec:
    """Retained frequency counts per axis (vertical kappa_v, horizontal kappa_h)."""

    modes_x: int  # vertical
    modes_z: int  # horizontal

    def __post_init__(self):
        if self.modes_x < 1 or self.modes_z < 1:
            raise ValueError("mode counts must be >= 1")


def mode_indices(n_modes: int, length: int) -> torch.Tensor:
    """FFT bin indices of the n_modes lowest-|frequency| modes, symmetric in
    sign: 0, 1, -1, 2, -2, ... wrapped to 0..length-1."""
    if n_modes > length:
        raise ValueError(f"cannot retain {n_modes} modes on axis of length {length}")
    freqs = [0]
    k = 1
    while len(freqs) < n_modes:
        freqs.append(k)
        if len(freqs) < n_modes:
            freqs.append(-k)
        k += 1
    return torch.tensor([f % length for f in freqs], dtype=torch.long)


def fft_axis(t: torch.Tensor, axis: str) -> torch.Tensor:
    return torch.fft.fft(t, dim=_AXIS_DIM[axis])


def ifft_axis(t: torch.Tensor, axis: str) -> torch.Tensor:
    return torch.fft.ifft(t, dim=_AXIS_DIM[axis])


class SpectralKernel1D:
    """Truncated 1-D spectral weights along one axis.

    weights: complex tensor [groups, modes, C_in/g, C_out/g].
    """

    def __init__(self, axis: str, weights: torch.Tensor):
        if axis not in _AXIS_DIM:
            raise ValueError(f"unknown axis {axis!r}")
        if weights.dim() != 4:
            raise ShapeMismatch("kernel weights must be [g, modes, C_in/g, C_out/g]")
        if not weights.is_complex():
            raise ShapeMismatch("kernel weights must be complex")
        self.axis = axis
        self.weights = weights

    @property
    def groups(self) -> int:
        return self.weights.shape[0]

    @property
    def modes(self) -> int:
        return self.weights.shape[1]

    @property
    def c_in(self) -> int:
        return self.weights.shape[0] * self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[0] * self.weights.shape[3]


class CrossAxisKernel:
    """A vertical 1-D kernel composed with a horizontal one (vertical first)."""

    def __init__(self, kernel_v: SpectralKernel1D, kernel_h: SpectralKernel1D):
        if kernel_v.axis != VERTICAL or kernel_h.axis != HORIZONTAL:
            raise ShapeMismatch("cross-axis kernel needs a vertical and a horizontal part")
        if kernel_v.groups != kernel_h.groups:
            raise ShapeMismatch("cross-axis kernels must share the group count")
        if kernel_v.c_out != kernel_h.c_in:
            raise ShapeMismatch("vertical C_out must match horizontal C_in")
        self.kernel_v = kernel_v
        self.kernel_h = kernel_h

    @property
    def groups(self) -> int:
        return self.kernel_v.groups


def init_kernel_weights(axis_modes: int, c_in: int, c_out: int, groups: int,
                        total_modes: int, generator: torch.Generator | None = None,
                        dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    """Zero-mean complex init with std 1/sqrt(C_in * total_modes / g)."""
    if c_in % groups or c_out % groups:
        raise IndivisibleChannels(f"groups={groups} must divide C_in={c_in}, C_out={c_out}")
    std = (c_in * total_modes / groups) ** -0.5
    shape = (groups, axis_modes, c_in // groups, c_out // groups)
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    re = torch.randn(shape, generator=generator, dtype=real_dtype) * std
    im = torch.randn(shape, generator=generator, dtype=real_dtype) * std
    return torch.complex(re, im)


def spectral_multiply_1d(kernel: SpectralKernel1D, t: torch.Tensor) -> torch.Tensor:
    """IFFT(W . FFT(t)) along the kernel's axis, zeroing truncated modes."""
    if t.shape[1] != kernel.c_in:
        raise ShapeMismatch(f"tensor has {t.shape[1]} channels, kernel expects {kernel.c_in}")
    b = t.shape[0]
    g = kernel.groups
    dim = _AXIS_DIM[kernel.axis]
    length = t.shape[dim]
    idx = mode_indices(kernel.modes, length).to(t.device)

    tg = t.reshape(b, g, kernel.c_in // g, *t.shape[2:])
    spec = torch.fft.fft(tg, dim=dim)
    if kernel.axis == VERTICAL:
        sel = spec.index_select(-2, idx)  # (b, g, ci, k, N)
        out_sel = torch.einsum("bgikn,gkio->bgokn", sel, kernel.weights)
        out_spec = torch.zeros(
            (b, g, kernel.c_out // g, length, t.shape[-1]),
            dtype=out_sel.dtype, device=t.device)
        out_spec.index_copy_(-2, idx, out_sel)
    else:
        sel = spec.index_select(-1, idx)  # (b, g, ci, M, k)
        out_sel = torch.einsum("bgimk,gkio->bgomk", sel, kernel.weights)
        out_spec = torch.zeros(
            (b, g, kernel.c_out // g, t.shape[-2], length),
            dtype=out_sel.dtype, device=t.device)
        out_spec.index_copy_(-1, idx, out_sel)
    out = torch.fft.ifft(out_spec, dim=dim)
    return out.reshape(b, kernel.c_out, *t.shape[2:])


def single_axis_factorized(kernels: list[SpectralKernel1D], t: torch.Tensor) -> torch.Tensor:
    """Additive factorization: sum of independent 1-D spectral multiplies."""
    out = None
    for kernel in kernels:
        y = spectral_multiply_1d(kernel, t)
        out = y if out is None else out + y
    if out is None:
        raise ShapeMismatch("need at least one kernel")
    return out


def cross_axis_apply(k: CrossAxisKernel, t: torch.Tensor) -> torch.Tensor:
    """Composed factorization: vertical multiply then horizontal multiply."""
    return spectral_multiply_1d(k.kernel_h, spectral_multiply_1d(k.kernel_v, t))


class SpectralKernel2D:
    """Dense 2-D spectral weights [modes_v, modes_h, C_in, C_out] (no grouping)."""

    def __init__(self, weights: torch.Tensor):
        if weights.dim() != 4 or not weights.is_complex():
            raise ShapeMismatch("dense kernel weights must be complex [kv, kh, C_in, C_out]")
        self.weights = weights

    @property
    def modes_v(self) -> int:
        return self.weights.shape[0]

    @property
    def modes_h(self) -> int:
        return self.weights.shape[1]

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[3]


def spectral_multiply_2d(kernel: SpectralKernel2D, t: torch.Tensor) -> torch.Tensor:
    """Dense 2-D spectral multiply: IFFT2(W . FFT2(t)) on the retained mode grid."""
    if t.shape[1] != kernel.c_in:
        raise ShapeMismatch(f"tensor has {t.shape[1]} channels, kernel expects {kernel.c_in}")
    b, _, m, n = t.shape
    iv = mode_indices(kernel.modes_v, m).to(t.device)
    ih = mode_indices(kernel.modes_h, n).to(t.device)
    spec = torch.fft.fft2(t)
    sel = spec.index_select(-2, iv).index_select(-1, ih)  # (b, ci, kv, kh)
    out_sel = torch.einsum("bivh,vhio->bovh", sel, kernel.weights)
    out_spec = torch.zeros((b, kernel.c_out, m, n), dtype=out_sel.dtype, device=t.device)
    # scatter the kv x kh block back into the full spectrum
    grid_v, grid_h = torch.meshgrid(iv, ih, indexing="ij")
    out_spec[:, :, grid_v, grid_h] = out_sel
    return torch.fft.ifft2(out_spec)


def grouped_partition(t: torch.Tensor, g: int) -> list[torch.Tensor]:
    c = t.shape[1]
    if c % g:
        raise IndivisibleChannels(f"{c} channels not divisible by {g} groups")
    return list(torch.chunk(t, g, dim=1))


def grouped_merge(blocks: list[torch.Tensor]) -> torch.Tensor:
    return torch.cat(blocks, dim=1)


DENSE_FNO = "dense_fno"
SINGLE_AXIS = "single_axis_factorized"
GROUPED_CROSS_AXIS = "grouped_cross_axis"


def param_count(variant: str, kappa_h: int, kappa_v: int,
                c_in: int, c_out: int, g: int = 1) -> int:
    """Complex weight count of one spectral kernel of the given variant."""
    if g < 1:
        raise IndivisibleChannels("group count must be >= 1")
    if variant == DENSE_FNO:
        return kappa_h * kappa_v * c_in * c_out
    if variant == SINGLE_AXIS:
        return (kappa_h + kappa_v) * c_in * c_out
    if variant == GROUPED_CROSS_AXIS:
        if c_in % g or c_out % g:
            raise IndivisibleChannels(f"groups={g} must divide C_in={c_in}, C_out={c_out}")
        return (kappa_h + kappa_v) * c_in * c_out // g
    raise ValueError(f"unknown variant {variant!r}")
