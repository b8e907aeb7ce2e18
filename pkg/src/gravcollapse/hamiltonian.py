"""Internal potentials, Bohmian-sourced gravity, and the localization term.

The gravitational coupling g = 1 - i*epsilon splits the Bohmian-sourced
potential into a Hermitian attraction V_herm and a non-negative
localization potential V_loc = epsilon * |grav part| that multiplies the
wavefunction amplitude (anti-Hermitian part of the Hamiltonian).

Potentials are instantaneous: the source configuration passed in is used
as-is.  A retarded variant would supply a time-lagged source configuration
through the same argument; nothing else changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ModelParams
from .grid import AxisMap, BohmianConfiguration, GridSpec, WaveFunction, particle_axes


@dataclass(frozen=True)
class GravKernelSpec:
    """Softened inverse-distance kernel, optionally with Gaussian-smeared sources."""

    softening: float
    smear_length: float = 0.0

    def __post_init__(self) -> None:
        if self.softening <= 0:
            raise ValueError(f"softening must be > 0, got {self.softening}")
        if self.smear_length < 0:
            raise ValueError(f"smear_length must be >= 0, got {self.smear_length}")

    def value(self, s):
        """K(s) = 1/(s + a_soft): positive, decreasing, finite at s = 0.

        The 3D form is kept in reduced dimension; the collapse mechanism
        only needs a positive decreasing function of distance.
        """
        return 1.0 / (np.asarray(s) + self.softening)


@dataclass(frozen=True)
class InternalPotentialSpec:
    """Non-gravitational potential: free, harmonic, double_well, soft_coulomb,
    or pairwise_soft_coulomb."""

    kind: str = "free"
    omega: float = 0.0
    strength: float = 0.0
    softening: float = 0.0
    barrier_height: float = 0.0
    separation: float = 0.0

    _KINDS = ("free", "harmonic", "double_well", "soft_coulomb", "pairwise_soft_coulomb")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown internal potential kind {self.kind!r}")
        if self.kind == "harmonic" and self.omega <= 0:
            raise ValueError("harmonic potential requires omega > 0")
        if self.kind == "double_well" and (self.barrier_height <= 0 or self.separation <= 0):
            raise ValueError("double well requires positive barrier height and separation")
        if self.kind in ("soft_coulomb", "pairwise_soft_coulomb"):
            if self.strength <= 0 or self.softening <= 0:
                raise ValueError(f"{self.kind} requires positive strength and softening")

    def build(self, grid: GridSpec, axis_map: AxisMap, params: ModelParams):
        """Sample the potential on the configuration grid (0.0 if free)."""
        if self.kind == "free":
            return 0.0
        if self.kind == "harmonic":
            out = np.zeros(grid.shape)
            for ax in range(grid.dims):
                m = params.particle_masses[axis_map[ax][0]]
                x = grid.axis_coords(ax)
                out += _along_axis(0.5 * m * self.omega ** 2 * x ** 2, ax, grid.dims)
            return out
        if self.kind == "double_well":
            out = np.zeros(grid.shape)
            half = 0.5 * self.separation
            for ax in range(grid.dims):
                x = grid.axis_coords(ax)
                v = self.barrier_height * ((x / half) ** 2 - 1.0) ** 2
                out += _along_axis(v, ax, grid.dims)
            return out
        if self.kind == "soft_coulomb":
            out = np.zeros(grid.shape)
            n_part = 1 + max(n for n, _ in axis_map)
            for n in range(n_part):
                dist = _particle_distance_field(grid, axis_map, n, None)
                out += -self.strength / (dist + self.softening)
            return out
        # pairwise_soft_coulomb: attraction between every particle pair
        n_part = 1 + max(n for n, _ in axis_map)
        if n_part < 2:
            raise ValueError("pairwise potential needs at least two particles")
        for n in range(n_part):
            if len(particle_axes(axis_map, n)) != 1:
                raise NotImplementedError("pairwise potential supports 1D particles only")
        out = np.zeros(grid.shape)
        for i in range(n_part):
            for j in range(i + 1, n_part):
                ax_i = particle_axes(axis_map, i)[0]
                ax_j = particle_axes(axis_map, j)[0]
                xi = _along_axis(grid.axis_coords(ax_i), ax_i, grid.dims)
                xj = _along_axis(grid.axis_coords(ax_j), ax_j, grid.dims)
                dist = np.abs(grid.minimum_image(xi - xj, ax_i))
                out = out + (-self.strength / (dist + self.softening))
        return out


def _along_axis(values: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = len(values)
    return values.reshape(shape)


def _particle_distance_field(grid: GridSpec, axis_map: AxisMap, particle: int,
                             point) -> np.ndarray:
    """|r_particle - point| with per-axis minimum image, broadcast to grid shape.

    point = None measures distance from the origin.
    """
    axes = particle_axes(axis_map, particle)
    total = 0.0
    for ax in axes:
        d_idx = axis_map[ax][1]
        ref = 0.0 if point is None else point[d_idx]
        delta = grid.minimum_image(grid.axis_coords(ax) - ref, ax)
        total = total + _along_axis(delta ** 2, ax, grid.dims)
    return np.sqrt(total)


def _subspace_grid(grid: GridSpec, axes: list[int]) -> GridSpec:
    return GridSpec(tuple(grid.points_per_axis[a] for a in axes),
                    tuple(grid.box_lengths[a] for a in axes))


def gaussian_cloud(grid: GridSpec, center: np.ndarray, width: float) -> np.ndarray:
    """Normalized Gaussian e^{-|r-c|^2/width^2} on a periodic grid.

    Discretely renormalized so the grid integral is exactly 1.
    """
    if width <= 0:
        raise ValueError("gaussian cloud needs width > 0")
    expo = 0.0
    for ax in range(grid.dims):
        delta = grid.minimum_image(grid.axis_coords(ax) - center[ax], ax)
        expo = expo + _along_axis(delta ** 2, ax, grid.dims)
    g = np.exp(-expo / width ** 2)
    return g / (g.sum() * grid.cell_volume)


def bohmian_mass_density(q: BohmianConfiguration, masses, kernel: GravKernelSpec,
                         grid_1p: GridSpec) -> np.ndarray:
    """Mass density of the Bohmian sources on a single-particle grid.

    smear_length > 0: sum of normalized Gaussian clouds; smear_length = 0:
    each mass concentrated in its nearest grid cell (the delta sum has no
    grid representation; downstream potential code uses the closed-form
    kernel instead).  Either way the integral equals the total mass.
    """
    out = np.zeros(grid_1p.shape)
    for n, pos in enumerate(q.positions):
        m = masses[n]
        if kernel.smear_length > 0:
            out += m * gaussian_cloud(grid_1p, pos, kernel.smear_length)
        else:
            idx = []
            for ax in range(grid_1p.dims):
                dx = grid_1p.spacings[ax]
                u = (pos[ax] + 0.5 * grid_1p.box_lengths[ax]) / dx
                idx.append(int(np.round(u)) % grid_1p.points_per_axis[ax])
            out[tuple(idx)] += m / grid_1p.cell_volume
    return out


def _offset_kernel(grid: GridSpec, kernel: GravKernelSpec) -> np.ndarray:
    """Kernel sampled at minimum-image offsets from index 0 (for circular convolution)."""
    total = 0.0
    for ax in range(grid.dims):
        n = grid.points_per_axis[ax]
        dx = grid.spacings[ax]
        off = grid.minimum_image(dx * np.arange(n), ax)
        total = total + _along_axis(off ** 2, ax, grid.dims)
    return kernel.value(np.sqrt(total))


def smeared_kernel_field(grid: GridSpec, center: np.ndarray,
                         kernel: GravKernelSpec) -> np.ndarray:
    """Convolution of the kernel with a unit Gaussian cloud at `center`.

    Converges to kernel(|r - center|) as smear_length -> 0.
    """
    cloud = gaussian_cloud(grid, center, kernel.smear_length)
    kern = _offset_kernel(grid, kernel)
    conv = np.fft.ifftn(np.fft.fftn(kern) * np.fft.fftn(cloud)).real
    return conv * grid.cell_volume


def grav_potential_per_particle(q: BohmianConfiguration, masses,
                                kernel: GravKernelSpec, grid_1p: GridSpec,
                                grav_strength: float, target_mass: float,
                                exclude: int | None = None) -> np.ndarray:
    """Gravitational potential felt on single-particle space.

    V(r) = -gamma * m_target * sum_n m_n K(|r - q_n|), optionally excluding
    one source index (no self-attraction).
    """
    out = np.zeros(grid_1p.shape)
    for n, pos in enumerate(q.positions):
        if n == exclude:
            continue
        if kernel.smear_length > 0:
            field = smeared_kernel_field(grid_1p, pos, kernel)
        else:
            total = 0.0
            for ax in range(grid_1p.dims):
                delta = grid_1p.minimum_image(grid_1p.axis_coords(ax) - pos[ax], ax)
                total = total + _along_axis(delta ** 2, ax, grid_1p.dims)
            field = kernel.value(np.sqrt(total))
        out += masses[n] * field
    return -grav_strength * target_mass * out


@dataclass(frozen=True)
class KineticSpec:
    """Per-axis masses for the spectral kinetic operator."""

    hbar: float
    axis_masses: tuple[float, ...]


def _pair_kernel_field(grid: GridSpec, axis_map: AxisMap, target: int,
                       source_pos: np.ndarray, kernel: GravKernelSpec) -> np.ndarray:
    """K(|r_target - q_source|) broadcast over the full configuration grid."""
    axes = particle_axes(axis_map, target)
    sub = _subspace_grid(grid, axes)
    if kernel.smear_length > 0:
        field = smeared_kernel_field(sub, source_pos, kernel)
    else:
        dist = _particle_distance_field(grid, axis_map, target, source_pos)
        return kernel.value(dist)
    # broadcast the subspace field back to full dimensionality
    shape = [1] * grid.dims
    for i, ax in enumerate(axes):
        shape[ax] = grid.points_per_axis[ax]
    order = np.argsort([axis_map[a][1] for a in axes])
    field = np.transpose(field, order) if len(axes) > 1 else field
    return field.reshape(shape)


def gravitational_potentials(grid: GridSpec, axis_map: AxisMap,
                             q: BohmianConfiguration, params: ModelParams):
    """Hermitian gravitational potential and localization potential on the grid.

    Returns (V_grav_herm, V_loc).  V_loc >= 0 pointwise and carries the
    epsilon factor; it is 0.0 when epsilon or the coupling vanishes.
    """
    kernel = GravKernelSpec(params.softening, params.smear_length)
    gamma = params.grav_strength
    masses = params.particle_masses
    n_part = len(masses)
    herm_self = params.hermitian_includes_self()
    loc_w = params.loc_source_weights or (1.0,) * n_part

    v_herm = np.zeros(grid.shape)
    want_loc = params.epsilon > 0 and gamma != 0.0 and any(w != 0 for w in loc_w)
    v_loc = np.zeros(grid.shape) if want_loc else 0.0
    for target in range(n_part):
        m_t = masses[target]
        for source in range(n_part):
            self_pair = source == target
            need_herm = (not self_pair) or herm_self
            need_loc = want_loc and ((not self_pair) or params.localization_self_terms) \
                and loc_w[source] != 0.0
            if not (need_herm or need_loc):
                continue
            field = _pair_kernel_field(grid, axis_map, target,
                                       q.positions[source], kernel)
            strength = gamma * m_t * masses[source]
            if need_herm:
                v_herm = v_herm - strength * field
            if need_loc:
                v_loc = v_loc + params.epsilon * strength * loc_w[source] * field
    return v_herm, v_loc


def assemble_hamiltonian(psi: WaveFunction, q: BohmianConfiguration,
                         params: ModelParams,
                         internal: InternalPotentialSpec | None = None,
                         v_int=None):
    """Full Hamiltonian pieces for one step: (V_herm, V_loc, KineticSpec).

    V_herm = internal + Hermitian gravity; V_loc is the non-negative
    localization potential (anti-Hermitian coefficient).  Pass v_int to
    reuse a precomputed internal potential.
    """
    grid, axis_map = psi.grid, psi.axis_to_particle
    if v_int is None:
        v_int = (internal or InternalPotentialSpec()).build(grid, axis_map, params)
    v_grav, v_loc = gravitational_potentials(grid, axis_map, q, params)
    kin = KineticSpec(params.units.hbar,
                      tuple(params.particle_masses[axis_map[ax][0]]
                            for ax in range(grid.dims)))
    return v_int + v_grav, v_loc, kin
