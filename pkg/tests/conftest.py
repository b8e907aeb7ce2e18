"""Shared state builders for the test suite."""

import numpy as np
import pytest

from gravcollapse.grid import GridSpec, WaveFunction


def gaussian_profile(x, center, sigma, k=0.0):
    """Normalized 1D Gaussian amplitude with optional plane-wave factor."""
    amp = (2.0 * np.pi * sigma ** 2) ** -0.25
    return amp * np.exp(-((x - center) ** 2) / (4.0 * sigma ** 2) + 1j * k * x)


def wavefunction_1d(amps_fn, n=1024, box=32.0, normalize=True):
    grid = GridSpec((n,), (box,))
    x = grid.axis_coords(0)
    psi = WaveFunction(grid, amps_fn(x).astype(np.complex128), ((0, 0),))
    if normalize:
        psi.amplitudes /= psi.norm()
    return psi


def wavefunction_2d(amps_fn, n=(64, 64), box=(16.0, 16.0),
                    axis_map=((0, 0), (1, 0)), normalize=True):
    grid = GridSpec(tuple(n), tuple(box))
    xs = np.meshgrid(grid.axis_coords(0), grid.axis_coords(1), indexing="ij")
    psi = WaveFunction(grid, amps_fn(*xs).astype(np.complex128), axis_map)
    if normalize:
        psi.amplitudes /= psi.norm()
    return psi


def grid_wavenumber(grid, axis, mode):
    """Exact periodic wavenumber 2*pi*mode/L for plane-wave states."""
    return 2.0 * np.pi * mode / grid.box_lengths[axis]


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
