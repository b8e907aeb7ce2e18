"""Measurements on states: branch weights, energies, localization rates,
density mismatch, and coarse-grained reduced density matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ModelParams
from .grid import (BohmianConfiguration, GridSpec, WaveFunction, NormalizationError,
                   spectral_axis_derivative)
from .hamiltonian import (GravKernelSpec, InternalPotentialSpec, bohmian_mass_density,
                          gravitational_potentials)


class RegionSpecError(ValueError):
    """Raised for malformed branch-region specifications."""


@dataclass(frozen=True)
class BranchRegionSpec:
    """Labeled disjoint axis-aligned boxes in configuration space.

    Each region maps axis index -> (lo, hi); axes not listed span the box.
    Probability outside every region is reported under "other".
    """

    regions: tuple[tuple[str, tuple[tuple[int, tuple[float, float]], ...]], ...]

    @classmethod
    def from_dict(cls, spec: dict) -> "BranchRegionSpec":
        regs = []
        for label, bounds in spec.items():
            regs.append((str(label), tuple((int(ax), (float(lo), float(hi)))
                                           for ax, (lo, hi) in bounds.items())))
        return cls(tuple(regs))

    def labels(self) -> list[str]:
        return [label for label, _ in self.regions]

    def masks(self, grid: GridSpec) -> dict[str, np.ndarray]:
        out = {}
        for label, bounds in self.regions:
            mask = np.ones(grid.shape, dtype=bool)
            for ax, (lo, hi) in bounds:
                x = grid.axis_coords(ax)
                sel = (x >= lo) & (x < hi)
                shape = [1] * grid.dims
                shape[ax] = len(x)
                mask = mask & sel.reshape(shape)
            out[label] = mask
        labels = list(out)
        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                if np.any(out[a] & out[b]):
                    raise RegionSpecError(f"regions {a!r} and {b!r} overlap")
        return out


def _require_normalized(psi: WaveFunction) -> None:
    if not psi.is_normalized():
        raise NormalizationError(
            f"operation requires a normalized state (norm^2 = {psi.norm_squared():.6g})")


def branch_weights(psi: WaveFunction, regions: BranchRegionSpec) -> dict[str, float]:
    """Probability weight of each labeled region; remainder under "other"."""
    _require_normalized(psi)
    rho = np.abs(psi.amplitudes) ** 2 * psi.grid.cell_volume
    out = {}
    total = 0.0
    for label, mask in regions.masks(psi.grid).items():
        w = float(rho[mask].sum())
        out[label] = w
        total += w
    out["other"] = max(0.0, 1.0 - total)
    return out


def energy_expectation(psi: WaveFunction, q: BohmianConfiguration, params: ModelParams,
                       internal: InternalPotentialSpec | None = None) -> tuple[float, float]:
    """(<H_int>, <H_G0>): spectral kinetic part plus potential quadratures."""
    _require_normalized(psi)
    grid = psi.grid
    vol = grid.cell_volume
    hbar = params.units.hbar
    psik = np.fft.fftn(psi.amplitudes)
    nk = float(np.sum(np.abs(psik) ** 2))
    e_kin = 0.0
    for ax in range(grid.dims):
        m = params.particle_masses[psi.axis_to_particle[ax][0]]
        k = grid.axis_wavenumbers(ax)
        shape = [1] * grid.dims
        shape[ax] = len(k)
        t_ax = (hbar ** 2 * k ** 2 / (2.0 * m)).reshape(shape)
        e_kin += float(np.sum(t_ax * np.abs(psik) ** 2)) / nk
    rho = np.abs(psi.amplitudes) ** 2
    v_int = (internal or InternalPotentialSpec()).build(grid, psi.axis_to_particle, params)
    e_int = e_kin + float(np.sum(v_int * rho)) * vol
    v_grav, _ = gravitational_potentials(grid, psi.axis_to_particle, q, params)
    e_g0 = float(np.sum(v_grav * rho)) * vol
    return e_int, e_g0


def localization_derivative(psi: WaveFunction, q: BohmianConfiguration,
                            params: ModelParams, observable,
                            dense: bool = False) -> float:
    """Instantaneous localization-induced rate d<A>/dt of an observable.

    rate = <{W - <W>, A}> with W the localization growth-rate field
    (V_loc / hbar).  Vanishes identically when the state is an eigenstate
    of A; A = identity gives exactly zero (norm preservation).

    observable: grid-shaped array of a position-diagonal A, or (with
    dense=True) a dense matrix over the flattened grid.
    """
    _require_normalized(psi)
    _, v_loc = gravitational_potentials(psi.grid, psi.axis_to_particle, q, params)
    w_field = np.asarray(v_loc) / params.units.hbar
    vol = psi.grid.cell_volume
    amps = psi.amplitudes
    w_mean = float(np.sum(w_field * np.abs(amps) ** 2) * vol)
    if dense:
        a_psi = (np.asarray(observable) @ amps.ravel()).reshape(amps.shape)
    else:
        obs = np.asarray(observable)
        if obs.shape != amps.shape and obs.ndim != 0:
            raise ValueError("diagonal observable must match the grid shape")
        a_psi = obs * amps
    val = np.vdot(amps, (w_field - w_mean) * a_psi) * vol
    return float(2.0 * np.real(val))


def density_mismatch(psi: WaveFunction, q: BohmianConfiguration,
                     bandwidth: float | None = None) -> tuple[float, float]:
    """L2 distance between the quantum density and the smeared Bohmian density.

    The empirical density uses Gaussian clouds of the given bandwidth
    (default: quantum-density standard deviation / 4; the value actually
    used is returned alongside the mismatch).
    """
    from .grid import quantum_density, _single_particle_grid
    _require_normalized(psi)
    grid_1p, _ = _single_particle_grid(psi)
    d_phi = quantum_density(psi)
    if bandwidth is None:
        mesh = grid_1p.mesh()
        mass = d_phi.sum() * grid_1p.cell_volume
        var = 0.0
        for x in mesh:
            mean = float((x * d_phi).sum()) * grid_1p.cell_volume / mass
            var += float(((x - mean) ** 2 * d_phi).sum()) * grid_1p.cell_volume / mass
        bandwidth = 0.25 * float(np.sqrt(var))
    kernel = GravKernelSpec(softening=1.0, smear_length=bandwidth)
    ones = (1.0,) * q.num_particles
    empirical = bohmian_mass_density(q, ones, kernel, grid_1p)
    mismatch = float(np.sqrt(np.sum((d_phi - empirical) ** 2) * grid_1p.cell_volume))
    return mismatch, bandwidth


@dataclass
class ReducedDensityMatrix:
    """Coarse-grained reduced density matrix of one subsystem axis.

    `captured` is the probability weight the bin-state compression picked
    up before the final trace normalization (1 for bin-constant states).
    """

    matrix: np.ndarray
    subsystem_axis: int
    bins: int
    captured: float = 1.0

    def validate(self) -> None:
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValueError("reduced density matrix is not Hermitian")
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > 1e-10:
            raise ValueError(f"trace {tr} != 1")
        evals = np.linalg.eigvalsh(m)
        if evals.min() < -1e-10:
            raise ValueError(f"negative eigenvalue {evals.min()}")

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def trace_distance(self, other: "ReducedDensityMatrix") -> float:
        evals = np.linalg.eigvalsh(self.matrix - other.matrix)
        return 0.5 * float(np.sum(np.abs(evals)))


def reduced_density_matrix(psi: WaveFunction, subsystem_axis: int = 0,
                           bins: int = 8) -> ReducedDensityMatrix:
    """Partial trace over the other axis, compressed onto position-bin states.

    The coarse basis is the orthonormal set of flat bin states; the result
    is renormalized to unit trace, so it is a bona fide density matrix with
    the captured pre-normalization weight reported separately.  Only
    bipartite (two-axis) grids are supported.
    """
    _require_normalized(psi)
    if psi.grid.dims != 2:
        raise ValueError("reduced density matrix requires a bipartite (2-axis) grid")
    if subsystem_axis not in (0, 1):
        raise ValueError("subsystem_axis must be 0 or 1")
    n_a = psi.grid.points_per_axis[subsystem_axis]
    if n_a % bins != 0:
        raise ValueError(f"bins ({bins}) must divide the axis size ({n_a})")
    c = psi.amplitudes if subsystem_axis == 0 else psi.amplitudes.T
    rho = (c @ c.conj().T) * psi.grid.cell_volume
    group = n_a // bins
    coarse = rho.reshape(bins, group, bins, group).sum(axis=(1, 3)) / group
    captured = float(np.trace(coarse).real)
    if captured <= 0:
        raise ValueError("state has no weight in the coarse bin basis")
    return ReducedDensityMatrix(coarse / captured, subsystem_axis, bins, captured)


def dense_hamiltonian_1d(grid: GridSpec, potential: np.ndarray, mass: float,
                         hbar: float) -> np.ndarray:
    """Dense matrix of the discrete 1D Hamiltonian (spectral kinetic + diagonal V).

    Small grids only; used to produce exact discrete eigenstates and as an
    independent oracle for quadrature-based expectation values.
    """
    if grid.dims != 1:
        raise ValueError("dense Hamiltonian builder is 1D only")
    n = grid.points_per_axis[0]
    k = grid.axis_wavenumbers(0)
    f = np.fft.fft(np.eye(n), axis=0)
    t_mat = np.conj(f.T) @ (np.diag(hbar ** 2 * k ** 2 / (2.0 * mass)) @ f) / n
    return t_mat + np.diag(np.asarray(potential, dtype=float))
