"""Shared fixtures: small toy traps for unit tests, full-size solutions for
acceptance, all solved once per session."""

from __future__ import annotations

import numpy as np
import pytest

import atomlaser as al


@pytest.fixture(scope="session")
def toy_ideal():
    """Ideal gas, small grid: exact oscillator reference."""
    setup = al.build_setup(
        al.PhysicalParams(n_atoms=2000, interaction_tt=0.0,
                          interaction_tf=0.0, temperature=0.0),
        al.SpatialGrid(extent=20.0, n_points=256),
        al.OutputModeGrid(omega_max=80.0, n_omega=1024))
    return al.self_consistent_solve(setup.params, setup, e_cut=25.0)


@pytest.fixture(scope="session")
def toy_warm():
    """Interacting gas at T = 5 on a small grid: cheap but fully featured."""
    setup = al.build_setup(
        al.PhysicalParams(n_atoms=2000, temperature=5.0),
        al.SpatialGrid(extent=20.0, n_points=256),
        al.OutputModeGrid(omega_max=80.0, n_omega=1024))
    return al.self_consistent_solve(setup.params, setup)


@pytest.fixture(scope="session")
def toy_cold():
    """Interacting gas at T = 0 on a small grid (quantum depletion only)."""
    setup = al.build_setup(
        al.PhysicalParams(n_atoms=2000, temperature=0.0),
        al.SpatialGrid(extent=20.0, n_points=256),
        al.OutputModeGrid(omega_max=80.0, n_omega=1024))
    return al.self_consistent_solve(setup.params, setup)


def _full_setup(temperature: float) -> al.SimSetup:
    return al.build_setup(
        al.PhysicalParams(n_atoms=2000, temperature=temperature),
        al.SpatialGrid(extent=40.0, n_points=1024),
        al.OutputModeGrid(omega_max=64.0, n_omega=2048))


@pytest.fixture(scope="session")
def solve_timings():
    """Wall-clock seconds of the full-size solves, keyed by temperature."""
    return {}


@pytest.fixture(scope="session")
def trap_t10(solve_timings):
    import time
    setup = _full_setup(10.0)
    t0 = time.perf_counter()
    solution = al.self_consistent_solve(setup.params, setup)
    solve_timings[10.0] = time.perf_counter() - t0
    return solution


@pytest.fixture(scope="session")
def trap_t150(solve_timings):
    import time
    setup = _full_setup(150.0)
    t0 = time.perf_counter()
    solution = al.self_consistent_solve(setup.params, setup)
    solve_timings[150.0] = time.perf_counter() - t0
    return solution


@pytest.fixture()
def rng():
    return np.random.default_rng(20260810)
