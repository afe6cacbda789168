"""Domain geometry, device rasterization, wave priors, and model-input assembly.

Complex 2-D grids are plain numpy arrays of shape (M, N) and dtype complex128,
row index x (vertical), column index z (horizontal, propagation axis).
All lengths are in micrometers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    GridTooSmall,
    NonPositiveExtent,
    NonPositivePermittivity,
    RectangleOutOfBody,
    ShapeMismatch,
    UnknownPort,
)

EPS_SI = 12.11
EPS_OXIDE = 2.07


@dataclass(frozen=True)
class SimDomain:
    """Rectangular simulation domain of l_x by l_z micrometers on an M x N grid."""

    l_x: float
    l_z: float
    M: int
    N: int

    @property
    def dl_x(self) -> float:
        return self.l_x / self.M

    @property
    def dl_z(self) -> float:
        return self.l_z / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.N)


def build_domain(l_x: float, l_z: float, M: int, N: int) -> SimDomain:
    if l_x <= 0 or l_z <= 0:
        raise NonPositiveExtent(f"domain extents must be positive, got ({l_x}, {l_z})")
    if M < 4 or N < 4:
        raise GridTooSmall(f"grid must be at least 4x4, got ({M}, {N})")
    return SimDomain(float(l_x), float(l_z), int(M), int(N))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by center and size, in micrometers."""

    center_x: float
    center_z: float
    size_x: float
    size_z: float

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        hx, hz = self.size_x / 2, self.size_z / 2
        return (self.center_x - hx, self.center_x + hx,
                self.center_z - hz, self.center_z + hz)


@dataclass(frozen=True)
class Port:
    """A port aperture on the left (input) or right (output) domain edge."""

    center_x: float
    width: float


@dataclass(frozen=True)
class DeviceSpec:
    """Two-level permittivity device: a high-index body with etched low-index
    rectangles (etched MMI) or high-index meta-atom rectangles in cladding
    (metaline)."""

    kind: str  # "etched_mmi" | "metaline"
    body: tuple[float, float, float, float]  # (x_min, x_max, z_min, z_max)
    ports_in: tuple[Port, ...] = ()
    ports_out: tuple[Port, ...] = ()
    rects: tuple[Rect, ...] = ()
    eps_background: float = EPS_SI
    eps_etch: float = EPS_OXIDE
    eps_cladding: Optional[float] = None  # defaults to eps_etch

    def __post_init__(self):
        if self.kind not in ("etched_mmi", "metaline"):
            raise ValueError(f"unknown device kind {self.kind!r}")
        if self.eps_background <= 0 or self.eps_etch <= 0:
            raise NonPositivePermittivity("permittivity levels must be positive")
        x0, x1, z0, z1 = self.body
        for r in self.rects:
            rx0, rx1, rz0, rz1 = r.bounds
            if rx0 < x0 - 1e-12 or rx1 > x1 + 1e-12 or rz0 < z0 - 1e-12 or rz1 > z1 + 1e-12:
                raise RectangleOutOfBody(f"rectangle {r} extends past body {self.body}")

    @property
    def cladding(self) -> float:
        return self.eps_etch if self.eps_cladding is None else self.eps_cladding


@dataclass(frozen=True)
class SourceSpec:
    """Single-port continuous-wave excitation."""

    port_index: int
    wavelength: float  # micrometers
    amplitude: complex = 1.0 + 0.0j
    profile: str = "raised_cosine"  # "raised_cosine" | "gaussian"
    lambda_min: float = 1.4
    lambda_max: float = 1.7

    def __post_init__(self):
        if self.amplitude == 0:
            raise ValueError("source amplitude must be nonzero")
        if not (self.lambda_min <= self.wavelength <= self.lambda_max):
            raise ValueError(
                f"wavelength {self.wavelength} outside "
                f"[{self.lambda_min}, {self.lambda_max}]")
        if self.profile not in ("raised_cosine", "gaussian"):
            raise ValueError(f"unknown source profile {self.profile!r}")


@dataclass(frozen=True)
class PortWindow:
    """Where a port's source line lives on the grid: aperture center/width in
    micrometers plus the one-cell-wide injection column."""

    center_x: float
    width: float
    z_col: int


@dataclass
class SimulationInstance:
    """One PDE observation (eps, source field, wave priors) plus optional target."""

    domain: SimDomain
    eps: np.ndarray            # (M, N) complex128, real-valued
    source_field: np.ndarray   # (M, N) complex128
    prior_x: np.ndarray        # (M, N) complex128, unit magnitude
    prior_z: np.ndarray        # (M, N) complex128, unit magnitude
    wavelength: float
    target: Optional[np.ndarray] = None


def _cell_centers(domain: SimDomain) -> tuple[np.ndarray, np.ndarray]:
    xs = (np.arange(domain.M) + 0.5) * domain.dl_x
    zs = (np.arange(domain.N) + 0.5) * domain.dl_z
    return xs, zs


def _rect_mask(r: Rect, xs: np.ndarray, zs: np.ndarray) -> np.ndarray:
    x0, x1, z0, z1 = r.bounds
    in_x = (xs >= x0) & (xs < x1)
    in_z = (zs >= z0) & (zs < z1)
    return np.outer(in_x, in_z)


def rasterize_device(spec: DeviceSpec, domain: SimDomain) -> np.ndarray:
    """Rasterize a device onto the grid by cell-center membership."""
    xs, zs = _cell_centers(domain)
    eps = np.full(domain.shape, spec.cladding, dtype=np.float64)

    x0, x1, z0, z1 = spec.body
    body = np.outer((xs >= x0) & (xs < x1), (zs >= z0) & (zs < z1))
    if spec.kind == "etched_mmi":
        eps[body] = spec.eps_background
        # port waveguides run from the domain edges to the body
        for port in spec.ports_in:
            wg = np.outer(
                (xs >= port.center_x - port.width / 2) & (xs < port.center_x + port.width / 2),
                zs < z0)
            eps[wg] = spec.eps_background
        for port in spec.ports_out:
            wg = np.outer(
                (xs >= port.center_x - port.width / 2) & (xs < port.center_x + port.width / 2),
                zs >= z1)
            eps[wg] = spec.eps_background
        for r in spec.rects:
            eps[_rect_mask(r, xs, zs)] = spec.eps_etch
    else:  # metaline: high-index atoms in cladding, plus port waveguides
        for port in spec.ports_in:
            wg = np.outer(
                (xs >= port.center_x - port.width / 2) & (xs < port.center_x + port.width / 2),
                zs < z0)
            eps[wg] = spec.eps_background
        for port in spec.ports_out:
            wg = np.outer(
                (xs >= port.center_x - port.width / 2) & (xs < port.center_x + port.width / 2),
                zs >= z1)
            eps[wg] = spec.eps_background
        for r in spec.rects:
            eps[_rect_mask(r, xs, zs)] = spec.eps_background
    return eps.astype(np.complex128)


def wave_prior(eps: np.ndarray, wavelength: float,
               domain: SimDomain) -> tuple[np.ndarray, np.ndarray]:
    """Unit-magnitude per-cell phase-advance encodings along each axis.

    prior_z[x, z] = exp(+j 2 pi sqrt(eps_r) z dl_z / lambda), prior_x analogous.
    """
    eps_r = np.real(eps)
    if eps_r.shape != domain.shape:
        raise ShapeMismatch(f"eps shape {eps_r.shape} != domain {domain.shape}")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    if np.any(eps_r <= 0) or np.any(np.imag(eps) != 0):
        raise NonPositivePermittivity("eps must be real and positive")
    n = np.sqrt(eps_r)
    x_idx = np.arange(domain.M)[:, None]
    z_idx = np.arange(domain.N)[None, :]
    prior_x = np.exp(1j * 2 * np.pi * n / wavelength * x_idx * domain.dl_x)
    prior_z = np.exp(1j * 2 * np.pi * n / wavelength * z_idx * domain.dl_z)
    return prior_x, prior_z


def _profile(profile: str, offsets: np.ndarray, half_width: float) -> np.ndarray:
    if profile == "raised_cosine":
        return 0.5 * (1 + np.cos(np.pi * offsets / half_width))
    # truncated Gaussian, std = aperture/4
    sigma = half_width / 2
    return np.exp(-0.5 * (offsets / sigma) ** 2)


def mask_source(spec: SourceSpec, domain: SimDomain,
                port_geometry: Sequence[PortWindow]) -> np.ndarray:
    """Masked source field: nonzero only on the one-cell-wide injection column
    across the chosen port aperture, unit peak magnitude times amplitude."""
    if not (0 <= spec.port_index < len(port_geometry)):
        raise UnknownPort(f"port {spec.port_index} not in 0..{len(port_geometry) - 1}")
    window = port_geometry[spec.port_index]
    if not (0 <= window.z_col < domain.N):
        raise UnknownPort(f"source column {window.z_col} outside grid")

    xs, _ = _cell_centers(domain)
    half = window.width / 2
    offsets = xs - window.center_x
    inside = np.abs(offsets) <= half
    if not inside.any():
        raise UnknownPort(f"port aperture at x={window.center_x} covers no cells")
    values = np.zeros(domain.M)
    values[inside] = _profile(spec.profile, offsets[inside], half)
    values /= values.max()

    out = np.zeros(domain.shape, dtype=np.complex128)
    out[:, window.z_col] = values * spec.amplitude
    return out


def assemble_instance(eps: np.ndarray, source_field: np.ndarray, wavelength: float,
                      domain: SimDomain,
                      target: Optional[np.ndarray] = None) -> SimulationInstance:
    """Bundle an observation, computing the wave priors internally."""
    grids = [eps, source_field] + ([target] if target is not None else [])
    for g in grids:
        if g.shape != domain.shape:
            raise ShapeMismatch(f"grid shape {g.shape} != domain {domain.shape}")
    prior_x, prior_z = wave_prior(eps, wavelength, domain)
    return SimulationInstance(
        domain=domain,
        eps=np.asarray(eps, dtype=np.complex128),
        source_field=np.asarray(source_field, dtype=np.complex128),
        prior_x=prior_x,
        prior_z=prior_z,
        wavelength=float(wavelength),
        target=None if target is None else np.asarray(target, dtype=np.complex128),
    )
