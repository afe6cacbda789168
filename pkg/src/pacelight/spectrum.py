"""Radial energy spectrum of a 2-D complex field.

The field is Fourier transformed, shifted so DC sits at the array center,
and squared coefficient magnitudes are summed into bins indexed by the
rounded Euclidean distance to the center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SpectrumReport:
    wavenumber: np.ndarray   # bin index, 0 = DC
    energy: np.ndarray       # summed |F|^2 per bin
    normalization: str = "unnormalized-fft-energy"

    @property
    def total_energy(self) -> float:
        return float(self.energy.sum())


def radial_energy_spectrum(field: np.ndarray) -> SpectrumReport:
    if field.ndim != 2:
        raise ValueError("expected a 2-D field")
    spec = np.fft.fftshift(np.fft.fft2(field))
    power = np.abs(spec) ** 2
    m, n = field.shape
    ci, cj = m // 2, n // 2
    ii, jj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    r = np.rint(np.hypot(ii - ci, jj - cj)).astype(int)
    energy = np.bincount(r.ravel(), weights=power.ravel())
    return SpectrumReport(wavenumber=np.arange(energy.size), energy=energy)
