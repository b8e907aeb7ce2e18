"""Configuration-space grid, wavefunction, and Bohmian point.

The wavefunction lives on a rectangular periodic grid with up to three
axes; each axis belongs to one particle's spatial coordinate.  Density,
current and Bohmian velocities are extracted here; all spatial derivatives
are spectral.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams


class NormalizationError(ValueError):
    """Raised when an operation requires a normalized wavefunction."""


@dataclass(frozen=True)
class GridSpec:
    """Rectangular periodic grid: per-axis point counts (powers of two) and box lengths."""

    points_per_axis: tuple[int, ...]
    box_lengths: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points_per_axis", tuple(int(n) for n in self.points_per_axis))
        object.__setattr__(self, "box_lengths", tuple(float(L) for L in self.box_lengths))
        if not (1 <= self.dims <= 3):
            raise ValueError(f"grid must have 1..3 axes, got {self.dims}")
        if len(self.box_lengths) != self.dims:
            raise ValueError("points_per_axis and box_lengths must have equal length")
        for n in self.points_per_axis:
            if n < 16 or (n & (n - 1)) != 0:
                raise ValueError(f"points per axis must be a power of two >= 16, got {n}")
        for L in self.box_lengths:
            if L <= 0:
                raise ValueError(f"box lengths must be positive, got {L}")

    @property
    def dims(self) -> int:
        return len(self.points_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.box_lengths, self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Cell-centered coordinates, box centered on the origin."""
        n = self.points_per_axis[axis]
        dx = self.spacings[axis]
        return -0.5 * self.box_lengths[axis] + dx * np.arange(n)

    def axis_wavenumbers(self, axis: int) -> np.ndarray:
        n = self.points_per_axis[axis]
        dx = self.spacings[axis]
        return 2.0 * np.pi * np.fft.fftfreq(n, d=dx)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_coords(i) for i in range(self.dims)], indexing="ij")

    def minimum_image(self, delta: np.ndarray, axis: int) -> np.ndarray:
        """Wrap a coordinate difference into (-L/2, L/2]."""
        L = self.box_lengths[axis]
        return (delta + 0.5 * L) % L - 0.5 * L

    def wrap(self, coords: np.ndarray) -> np.ndarray:
        """Wrap flat configuration-space coordinates into the box."""
        out = np.array(coords, dtype=float)
        for ax in range(self.dims):
            L = self.box_lengths[ax]
            out[..., ax] = (out[..., ax] + 0.5 * L) % L - 0.5 * L
        return out


# axis_to_particle maps each grid axis to (particle index, spatial dimension)
AxisMap = tuple[tuple[int, int], ...]


def particle_axes(axis_map: AxisMap, particle: int) -> list[int]:
    return [ax for ax, (n, _) in enumerate(axis_map) if n == particle]


def num_particles(axis_map: AxisMap) -> int:
    return 1 + max(n for n, _ in axis_map)


@dataclass
class WaveFunction:
    """Complex amplitudes on the configuration-space grid.

    log_norm accumulates the log of the norm factors removed by
    normalize(), so the unnormalized flow's norm history survives
    renormalization.
    """

    grid: GridSpec
    amplitudes: np.ndarray
    axis_to_particle: AxisMap
    log_norm: float = 0.0

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != self.grid.shape:
            raise ValueError(
                f"amplitude shape {self.amplitudes.shape} != grid shape {self.grid.shape}")
        self.axis_to_particle = tuple((int(n), int(d)) for n, d in self.axis_to_particle)
        if len(self.axis_to_particle) != self.grid.dims:
            raise ValueError("axis_to_particle must assign every grid axis")

    @property
    def num_particles(self) -> int:
        return num_particles(self.axis_to_particle)

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2)) * self.grid.cell_volume

    def norm(self) -> float:
        return float(np.sqrt(self.norm_squared()))

    def is_normalized(self, tol: float = 1e-8) -> bool:
        return abs(self.norm_squared() - 1.0) <= tol

    def normalize(self) -> float:
        """Rescale to unit norm; returns the removed norm and logs it."""
        n = self.norm()
        if not np.isfinite(n) or n == 0.0:
            raise FloatingPointError(f"cannot normalize state with norm {n}")
        self.amplitudes /= n
        self.log_norm += float(np.log(n))
        return n

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes.copy(),
                            self.axis_to_particle, self.log_norm)


@dataclass
class BohmianConfiguration:
    """The configuration-space point Q: one continuous position per particle."""

    positions: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        self.positions = tuple(np.atleast_1d(np.asarray(p, dtype=float))
                               for p in self.positions)

    @property
    def num_particles(self) -> int:
        return len(self.positions)

    def flat(self, axis_map: AxisMap) -> np.ndarray:
        """Coordinates ordered by grid axis."""
        return np.array([self.positions[n][d] for n, d in axis_map])

    @classmethod
    def from_flat(cls, coords: np.ndarray, axis_map: AxisMap) -> "BohmianConfiguration":
        coords = np.asarray(coords, dtype=float)
        n_part = num_particles(axis_map)
        pos = []
        for n in range(n_part):
            dims = [d for (p, d) in axis_map if p == n]
            vec = np.zeros(len(dims))
            for ax, (p, d) in enumerate(axis_map):
                if p == n:
                    vec[d] = coords[ax]
            pos.append(vec)
        return cls(tuple(pos))

    def wrapped(self, grid: GridSpec, axis_map: AxisMap) -> "BohmianConfiguration":
        return BohmianConfiguration.from_flat(grid.wrap(self.flat(axis_map)), axis_map)

    def copy(self) -> "BohmianConfiguration":
        return BohmianConfiguration(tuple(p.copy() for p in self.positions))


# ---------------------------------------------------------------------------
# spectral derivatives and interpolation

def spectral_axis_derivative(values: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """d/dx along one axis via FFT; exact for band-limited periodic data."""
    k = grid.axis_wavenumbers(axis)
    shape = [1] * values.ndim
    shape[axis] = len(k)
    vk = np.fft.fft(values, axis=axis)
    return np.fft.ifft(1j * k.reshape(shape) * vk, axis=axis)


def interp_periodic(values: np.ndarray, grid: GridSpec, coords: np.ndarray) -> np.ndarray:
    """Multilinear interpolation with periodic wrap.

    coords has shape (..., D); returns interpolated values with shape (...).
    """
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 1
    pts = np.atleast_2d(coords)
    D = grid.dims
    idx0 = []
    frac = []
    for ax in range(D):
        n = grid.points_per_axis[ax]
        dx = grid.spacings[ax]
        # position in cell units relative to the first cell center
        u = (pts[:, ax] + 0.5 * grid.box_lengths[ax]) / dx
        base = np.floor(u).astype(np.int64)
        frac.append(u - base)
        idx0.append(np.mod(base, n))
    out = np.zeros(pts.shape[0], dtype=values.dtype)
    for corner in range(1 << D):
        w = np.ones(pts.shape[0])
        ix = []
        for ax in range(D):
            hi = (corner >> ax) & 1
            w = w * (frac[ax] if hi else 1.0 - frac[ax])
            ix.append(np.mod(idx0[ax] + hi, grid.points_per_axis[ax]))
        out = out + w * values[tuple(ix)]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# densities, currents, velocities

def _require_normalized(psi: WaveFunction) -> None:
    if not psi.is_normalized():
        raise NormalizationError(
            f"operation requires a normalized state (norm^2 = {psi.norm_squared():.6g})")


def _single_particle_grid(psi: WaveFunction) -> tuple[GridSpec, list[list[int]]]:
    """Common single-particle grid and each particle's axis list.

    All particles must live on compatible axes (same point count and box
    per spatial dimension) for one-particle-space fields to be summable.
    """
    groups = [particle_axes(psi.axis_to_particle, n) for n in range(psi.num_particles)]
    ref = groups[0]
    for axes in groups[1:]:
        if len(axes) != len(ref):
            raise ValueError("particles have different spatial dimensionality")
        for a, b in zip(axes, ref):
            if (psi.grid.points_per_axis[a] != psi.grid.points_per_axis[b]
                    or psi.grid.box_lengths[a] != psi.grid.box_lengths[b]):
                raise ValueError("particle axes are not grid-compatible")
    spec = GridSpec(tuple(psi.grid.points_per_axis[a] for a in ref),
                    tuple(psi.grid.box_lengths[a] for a in ref))
    return spec, groups


def quantum_density(psi: WaveFunction) -> np.ndarray:
    """One-particle-space number density: sum of per-particle marginals.

    Integrates to the particle number N.
    """
    _require_normalized(psi)
    grid_1p, groups = _single_particle_grid(psi)
    rho_full = np.abs(psi.amplitudes) ** 2
    vol = psi.grid.cell_volume
    out = np.zeros(grid_1p.shape)
    for axes in groups:
        others = tuple(ax for ax in range(psi.grid.dims) if ax not in axes)
        marg = rho_full.sum(axis=others) if others else rho_full
        # put the particle's axes in spatial-dimension order
        order = np.argsort([psi.axis_to_particle[a][1] for a in axes])
        marg = np.transpose(marg, order) if len(axes) > 1 else marg
        cell_1p = grid_1p.cell_volume
        out += marg * (vol / cell_1p)
    return out


def probability_current(psi: WaveFunction, params: ModelParams) -> np.ndarray:
    """One-particle-space current, shape (d_space, *grid_1p).

    j = (hbar/m) Im(psi* grad psi), marginalized per particle and summed.
    Vanishes identically for real wavefunctions.
    """
    _require_normalized(psi)
    grid_1p, groups = _single_particle_grid(psi)
    hbar = params.units.hbar
    vol = psi.grid.cell_volume
    cell_1p = grid_1p.cell_volume
    d_space = len(groups[0])
    out = np.zeros((d_space,) + grid_1p.shape)
    for n, axes in enumerate(groups):
        m = params.particle_masses[n]
        others = tuple(ax for ax in range(psi.grid.dims) if ax not in axes)
        order = np.argsort([psi.axis_to_particle[a][1] for a in axes])
        for ax in axes:
            d_idx = psi.axis_to_particle[ax][1]
            grad = spectral_axis_derivative(psi.amplitudes, psi.grid, ax)
            dens_flux = (hbar / m) * np.imag(np.conj(psi.amplitudes) * grad)
            marg = dens_flux.sum(axis=others) if others else dens_flux
            marg = np.transpose(marg, order) if len(axes) > 1 else marg
            out[d_idx] += marg * (vol / cell_1p)
    return out


@dataclass
class VelocityField:
    """Configuration-space density and per-axis velocity numerators.

    velocity_axis = (hbar/m_axis) Im(psi* d_axis psi) / |psi|^2; the
    numerators and density are interpolated separately so the division
    happens at the evaluation point.
    """

    grid: GridSpec
    density: np.ndarray
    numerators: np.ndarray  # shape (D, *grid.shape)
    density_floor: float
    v_max: np.ndarray       # per-axis clamp

    def evaluate(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocities at flat configuration points.

        coords (..., D) -> (velocities (..., D), stalled flags (...)).
        Below the density floor the velocity is clamped per axis.
        """
        coords = np.asarray(coords, dtype=float)
        single = coords.ndim == 1
        pts = np.atleast_2d(coords)
        rho = interp_periodic(self.density, self.grid, pts).real
        stalled = rho < self.density_floor
        rho_safe = np.where(stalled, self.density_floor, rho)
        vel = np.empty_like(pts)
        for ax in range(self.grid.dims):
            num = interp_periodic(self.numerators[ax], self.grid, pts).real
            v = num / rho_safe
            vel[:, ax] = np.where(stalled, np.clip(v, -self.v_max[ax], self.v_max[ax]), v)
        if single:
            return vel[0], bool(stalled[0])
        return vel, stalled


def velocity_field(psi: WaveFunction, params: ModelParams,
                   density_floor_rel: float = 1e-12) -> VelocityField:
    """Precompute the guidance field of a (normalized) state."""
    _require_normalized(psi)
    hbar = params.units.hbar
    rho = np.abs(psi.amplitudes) ** 2
    D = psi.grid.dims
    nums = np.empty((D,) + psi.grid.shape)
    for ax in range(D):
        m = params.particle_masses[psi.axis_to_particle[ax][0]]
        grad = spectral_axis_derivative(psi.amplitudes, psi.grid, ax)
        nums[ax] = (hbar / m) * np.imag(np.conj(psi.amplitudes) * grad)
    floor = density_floor_rel * float(rho.max())
    v_max = np.array([L / (10.0 * params.dt) for L in psi.grid.box_lengths])
    return VelocityField(psi.grid, rho, nums, floor, v_max)


def bohmian_velocity(psi: WaveFunction, q: BohmianConfiguration,
                     params: ModelParams) -> tuple[list[np.ndarray], bool]:
    """Bohmian velocities of all particles at Q.

    Returns one velocity vector per particle plus a stalled flag that is
    set when the configuration-space density at Q is below the floor.
    """
    fld = velocity_field(psi, params)
    flat_v, stalled = fld.evaluate(q.flat(psi.axis_to_particle))
    vels: list[np.ndarray] = []
    for n in range(psi.num_particles):
        axes = particle_axes(psi.axis_to_particle, n)
        vec = np.zeros(len(axes))
        for ax in axes:
            vec[psi.axis_to_particle[ax][1]] = flat_v[ax]
        vels.append(vec)
    return vels, bool(stalled)


# ---------------------------------------------------------------------------
# binary checkpoints

_MAGIC = b"GCHK"


def save_checkpoint(path, psi: WaveFunction, t: float = 0.0) -> None:
    """Binary checkpoint: magic, JSON header, raw little-endian complex128 array."""
    header = {
        "version": 1,
        "points_per_axis": list(psi.grid.points_per_axis),
        "box_lengths": list(psi.grid.box_lengths),
        "axis_to_particle": [list(p) for p in psi.axis_to_particle],
        "t": float(t),
        "log_norm": float(psi.log_norm),
        "dtype": "complex128",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    data = np.ascontiguousarray(psi.amplitudes, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[WaveFunction, float]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        grid = GridSpec(tuple(header["points_per_axis"]), tuple(header["box_lengths"]))
        count = int(np.prod(grid.shape))
        raw = np.frombuffer(fh.read(count * 16), dtype="<c16").astype(np.complex128)
    psi = WaveFunction(grid, raw.reshape(grid.shape),
                       tuple(tuple(p) for p in header["axis_to_particle"]),
                       log_norm=float(header["log_norm"]))
    return psi, float(header["t"])
