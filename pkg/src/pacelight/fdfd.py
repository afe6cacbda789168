"""Finite-difference frequency-domain oracle for the 2-D H-polarized
curl-of-curl Maxwell equation.

The scalar H_y equation is discretized on an M x N grid with a 5-point
stencil, stretched-coordinate PML on all four sides, and harmonic averaging
of the permittivity at cell edges.  The assembled rows follow the Helmholtz
sign convention: interior row in vacuum without PML is
diag = -(2/dl_x^2 + 2/dl_z^2) + w^2 mu0 eps0, off-diagonals 1/dl^2, with
rhs = j w J_m.

Lengths arrive in micrometers and are converted to SI once at assembly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NonPositivePermittivity, ShapeMismatch, SingularSystem
from .fields import (
    DeviceSpec,
    PortWindow,
    SimDomain,
    SimulationInstance,
    SourceSpec,
    assemble_instance,
    mask_source,
    rasterize_device,
)

MU0 = 4e-7 * np.pi                  # vacuum permeability [H/m]
C0 = 299_792_458.0                  # speed of light [m/s]
EPS0 = 1.0 / (MU0 * C0 * C0)        # vacuum permittivity [F/m]
ETA0 = np.sqrt(MU0 / EPS0)          # vacuum impedance [ohm]
MICRON = 1e-6


@dataclass(frozen=True)
class PmlSpec:
    thickness_cells: int = 10
    max_conductivity_scale: float = 1.0
    polynomial_order: int = 3

    def __post_init__(self):
        if self.thickness_cells < 4:
            raise ValueError("PML must be at least 4 cells thick")
        if self.polynomial_order < 1:
            raise ValueError("PML polynomial order must be >= 1")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"          # "direct" | "iterative"
    tolerance: float = 1e-10        # direct default; iterative uses 1e-8

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class YeeSystem:
    matrix: sp.csr_matrix           # (MN, MN) complex
    rhs: np.ndarray                 # (MN,) complex
    domain: SimDomain

    @property
    def dim(self) -> int:
        return self.domain.M * self.domain.N


@dataclass
class FieldSolution:
    field: np.ndarray               # (M, N) complex
    residual_norm: float


def angular_frequency(wavelength_um: float) -> float:
    return 2 * np.pi * C0 / (wavelength_um * MICRON)


def _pml_sigma(n_cells: int, pml: Optional[PmlSpec], dl: float,
               omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Conductivity profiles at integer (centers) and half-integer (forward
    edges) positions along one axis; zero outside the PML regions."""
    centers = np.zeros(n_cells)
    edges = np.zeros(n_cells)  # edge i sits at position i + 1/2
    if pml is None:
        return centers, edges
    t = pml.thickness_cells
    L = t * dl
    R0 = 1e-16  # target round-trip reflection
    sigma_max = pml.max_conductivity_scale * \
        (pml.polynomial_order + 1) * (-np.log(R0)) / (2 * ETA0 * L)

    def profile(depth):
        return sigma_max * (np.clip(depth, 0, L) / L) ** pml.polynomial_order

    pos_c = (np.arange(n_cells) + 0.5) * dl
    pos_e = (np.arange(n_cells) + 1.0) * dl
    lo = t * dl          # interior starts here
    hi = (n_cells - t) * dl
    for pos, arr in ((pos_c, centers), (pos_e, edges)):
        arr += profile(lo - pos)      # left/bottom PML
        arr += profile(pos - hi)      # right/top PML
    return centers, edges


def _stretch(sigma: np.ndarray, omega: float) -> np.ndarray:
    # decays exp(+j k x) waves, matching the wave-prior phase convention
    return 1.0 + 1j * sigma / (omega * EPS0)


def assemble_system(eps: np.ndarray, wavelength: float, domain: SimDomain,
                    pml: Optional[PmlSpec], source_field: np.ndarray,
                    x_boundary: str = "dirichlet") -> YeeSystem:
    """Discretize the H_y curl-of-curl equation into a sparse linear system.

    x_boundary="periodic" wraps the vertical axis (no x PML applied); used by
    the 1-D dispersion oracle tests to make the field exactly x-uniform.
    """
    eps_r = np.real(eps)
    if eps_r.shape != domain.shape or source_field.shape != domain.shape:
        raise ShapeMismatch("eps/source shapes must match the domain grid")
    if np.any(eps_r <= 0):
        raise NonPositivePermittivity("relative permittivity must be positive")
    if x_boundary not in ("dirichlet", "periodic"):
        raise ValueError(f"unknown x boundary {x_boundary!r}")

    M, N = domain.shape
    dlx = domain.dl_x * MICRON
    dlz = domain.dl_z * MICRON
    omega = angular_frequency(wavelength)
    k0_sq = omega * omega * MU0 * EPS0

    inv_eps = 1.0 / eps_r
    # eps^-1 at forward edges: harmonic mean of adjacent cells
    inv_x = np.empty((M, N))
    if x_boundary == "periodic":
        inv_x[:] = 0.5 * (inv_eps + np.roll(inv_eps, -1, axis=0))
    else:
        inv_x[:-1] = 0.5 * (inv_eps[:-1] + inv_eps[1:])
        inv_x[-1] = inv_eps[-1]
    inv_z = np.empty((M, N))
    inv_z[:, :-1] = 0.5 * (inv_eps[:, :-1] + inv_eps[:, 1:])
    inv_z[:, -1] = inv_eps[:, -1]

    pml_x = None if x_boundary == "periodic" else pml
    sig_xc, sig_xe = _pml_sigma(M, pml_x, dlx, omega)
    sig_zc, sig_ze = _pml_sigma(N, pml, dlz, omega)
    sx_c, sx_e = _stretch(sig_xc, omega), _stretch(sig_xe, omega)
    sz_c, sz_e = _stretch(sig_zc, omega), _stretch(sig_ze, omega)

    # coupling coefficients: up = to row i+1, down = to row i-1, etc.
    cx_up = inv_x / (sx_c[:, None] * sx_e[:, None]) / dlx**2
    cx_down = np.zeros((M, N), dtype=complex)
    cx_down[1:] = inv_x[:-1] / (sx_c[1:, None] * sx_e[:-1, None]) / dlx**2
    if x_boundary == "periodic":
        cx_down[0] = inv_x[-1] / (sx_c[0] * sx_e[-1]) / dlx**2
    else:
        # flux toward the zero ghost cell below row 0 (stretch taken at center)
        cx_down[0] = inv_eps[0] / (sx_c[0] ** 2) / dlx**2
    cz_right = inv_z / (sz_c[None, :] * sz_e[None, :]) / dlz**2
    cz_left = np.zeros((M, N), dtype=complex)
    cz_left[:, 1:] = inv_z[:, :-1] / (sz_c[None, 1:] * sz_e[None, :-1]) / dlz**2
    cz_left[:, 0] = inv_eps[:, 0] / (sz_c[0] ** 2) / dlz**2

    # boundary rows keep the flux term toward the zero (Dirichlet) ghost cell
    diag = -(cx_up + cx_down + cz_right + cz_left) + k0_sq

    def flat(a):
        return a.ravel()

    n = M * N
    rows, cols, vals = [], [], []
    idx = np.arange(n).reshape(M, N)

    rows.append(flat(idx)); cols.append(flat(idx)); vals.append(flat(diag))
    # vertical neighbors
    if x_boundary == "periodic":
        up = np.roll(idx, -1, axis=0)
        down = np.roll(idx, 1, axis=0)
        rows.append(flat(idx)); cols.append(flat(up)); vals.append(flat(cx_up))
        rows.append(flat(idx)); cols.append(flat(down)); vals.append(flat(cx_down))
    else:
        rows.append(flat(idx[:-1])); cols.append(flat(idx[1:])); vals.append(flat(cx_up[:-1]))
        rows.append(flat(idx[1:])); cols.append(flat(idx[:-1])); vals.append(flat(cx_down[1:]))
    # horizontal neighbors
    rows.append(flat(idx[:, :-1])); cols.append(flat(idx[:, 1:])); vals.append(flat(cz_right[:, :-1]))
    rows.append(flat(idx[:, 1:])); cols.append(flat(idx[:, :-1])); vals.append(flat(cz_left[:, 1:]))

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n), dtype=complex).tocsr()
    rhs = 1j * omega * np.asarray(source_field, dtype=complex).ravel()
    return YeeSystem(matrix=matrix, rhs=rhs, domain=domain)


def residual(system: YeeSystem, field: np.ndarray) -> float:
    """Relative residual |A x - b| / |b| (or |A x| when b = 0)."""
    x = np.asarray(field, dtype=complex).ravel()
    if x.size != system.dim:
        raise ShapeMismatch("field size does not match the system")
    r = np.linalg.norm(system.matrix @ x - system.rhs)
    b = np.linalg.norm(system.rhs)
    return float(r / b) if b > 0 else float(r)


def solve(system: YeeSystem, cfg: SolverConfig = SolverConfig()) -> FieldSolution:
    M, N = system.domain.shape
    if not np.any(system.rhs):
        return FieldSolution(field=np.zeros((M, N), dtype=complex), residual_norm=0.0)

    if cfg.method == "direct":
        try:
            lu = spla.splu(system.matrix.tocsc())
            x = lu.solve(system.rhs)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystem("direct solve produced non-finite values")
        tol = cfg.tolerance
    else:
        tol = max(cfg.tolerance, 1e-8) if cfg.tolerance == SolverConfig().tolerance \
            else cfg.tolerance
        try:
            ilu = spla.spilu(system.matrix.tocsc(), drop_tol=1e-6, fill_factor=20)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        precond = spla.LinearOperator(system.matrix.shape, ilu.solve)
        x, info = spla.gmres(system.matrix, system.rhs, rtol=tol / 10,
                             M=precond, maxiter=2000)
        if info != 0:
            raise NoConvergence(f"iterative solver did not converge (info={info})")

    field = x.reshape(M, N)
    res = residual(system, field)
    if res > tol:
        if cfg.method == "direct":
            raise SingularSystem(f"direct solve residual {res:.3e} exceeds {tol:.1e}")
        raise NoConvergence(f"iterative residual {res:.3e} exceeds {tol:.1e}")
    return FieldSolution(field=field, residual_norm=res)


def port_windows(spec: DeviceSpec, domain: SimDomain, pml: PmlSpec) -> list[PortWindow]:
    """Injection windows for the device's input ports: one column just inside
    the left PML, aperture matching each port."""
    z_col = pml.thickness_cells + 1
    return [PortWindow(center_x=p.center_x, width=p.width, z_col=z_col)
            for p in spec.ports_in]


def simulate(spec: DeviceSpec, source: SourceSpec, domain: SimDomain,
             pml: PmlSpec, solver: SolverConfig = SolverConfig()) -> SimulationInstance:
    """Rasterize, inject, solve; returns an instance with the solved target."""
    eps = rasterize_device(spec, domain)
    windows = port_windows(spec, domain, pml)
    src = mask_source(source, domain, windows)
    system = assemble_system(eps, source.wavelength, domain, pml, src)
    solution = solve(system, solver)
    return assemble_instance(eps, src, source.wavelength, domain, target=solution.field)
