"""Self-consistent HFB-Popov solver for the trapped gas.

Solves the generalized Gross-Pitaevskii equation and the condensate-orthogonal
Bogoliubov-de Gennes eigenproblem at fixed total atom number and temperature,
iterating the non-condensate density to a fixed point.  The anomalous average
is excluded from the self-consistency (Popov prescription).

Conventions: psi0 is unit-normalized, real and nonnegative (gauge fixed);
excitation pairs (u_j, v_j) carry the indefinite normalization
integral(|u|^2 - |v|^2) = 1 and are orthogonal to the condensate in both
components.  The mean number of condensate atoms N0 and the chemical
potential mu close the number equation N0 + integral(nbar) = N_t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from .config import (OutputModeGrid, PhysicalParams, SimSetup, SpatialGrid,
                     build_setup)


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its residual target."""

    def __init__(self, message: str, residual: float | None = None,
                 trace: list | None = None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace or []


class AnomalousModeError(RuntimeError):
    """The BdG operator produced a complex/imaginary-energy mode."""


def thermal_occupation(energy, temperature: float):
    """Bose-Einstein occupation 1/(exp(E/T) - 1); zero at T = 0.

    Raises ValueError for any E <= 0 (occupation would diverge or turn
    negative).
    """
    energy = np.asarray(energy, dtype=float)
    if np.any(energy <= 0):
        raise ValueError("thermal_occupation requires E > 0")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        return np.zeros_like(energy) if energy.ndim else 0.0
    arg = energy / temperature
    out = np.where(arg < 700, 1.0 / np.expm1(np.minimum(arg, 700)), 0.0)
    return out if energy.ndim else float(out)


@dataclass
class CondensateState:
    """Converged condensate: wave function, chemical potential, mean number."""

    psi0: np.ndarray            # real, unit-normalized, nodeless
    mu: float
    n0: float                   # mean condensate number N0
    residual: float             # stationary-equation residual in the grid norm

    def global_phase(self, t: float) -> float:
        """Accumulated phase integral of mu (steady state: mu * t)."""
        return self.mu * t


@dataclass
class ExcitationMode:
    """One quasiparticle: amplitudes (u, v), energy E > 0, occupation n."""

    u: np.ndarray
    v: np.ndarray
    energy: float
    occupation: float = 0.0

    def norm_integral(self, dx: float) -> float:
        return float(dx * np.sum(self.u**2 - self.v**2))

    def v_weight(self, dx: float) -> float:
        return float(dx * np.sum(self.v**2))

    def u_weight(self, dx: float) -> float:
        return float(dx * np.sum(self.u**2))


@dataclass
class HfbSolution:
    """Converged trap state shared by all downstream modules."""

    setup: SimSetup
    condensate: CondensateState
    modes: list[ExcitationMode]
    nbar: np.ndarray
    temperature: float
    e_cut: float
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def mu(self) -> float:
        return self.condensate.mu

    @property
    def n0(self) -> float:
        return self.condensate.n0

    @property
    def n_thermal(self) -> float:
        return float(self.setup.integrate(self.nbar))

    @property
    def noncondensate_fraction(self) -> float:
        total = self.n0 + self.n_thermal
        return self.n_thermal / total

    def population(self, j: int, sign: int) -> float:
        """Channel population: N0 for (0, .), n_j for +, n_j + 1 for -."""
        if j == 0:
            return self.n0
        n = self.modes[j - 1].occupation
        return n if sign > 0 else n + 1.0


# ---------------------------------------------------------------------------
# Generalized Gross-Pitaevskii ground state
# ---------------------------------------------------------------------------

def gpe_residual(setup: SimSetup, psi: np.ndarray, mu: float, g_n0: float,
                 nbar: np.ndarray, g: float) -> float:
    h_psi = setup.apply_kinetic(psi) + (
        setup.potential + g_n0 * psi**2 + 2.0 * g * nbar) * psi
    return setup.norm(h_psi - mu * psi)


def solve_gpe(setup: SimSetup, params: PhysicalParams, nbar: np.ndarray,
              n0_target: float, *, psi_start: np.ndarray | None = None,
              dtau: float = 1e-3, tol: float = 1e-8,
              max_steps: int = 40_000) -> CondensateState:
    """Ground state of the generalized stationary GPE at fixed N0.

    Imaginary-time propagation (Strang-split sine-transform steps, renormalized
    each step) drives any positive start toward the nodeless ground state; a
    Newton finisher then pushes the stationary residual below ``tol`` (the
    split-step fixed point alone stalls near 1e-4).
    """
    nbar = np.asarray(nbar, dtype=float)
    if np.any(nbar < -1e-12):
        raise ValueError("nbar must be nonnegative")
    if n0_target < 0:
        raise ValueError("n0_target must be >= 0")
    g = params.g_tt
    g_n0 = g * n0_target
    v_th = setup.potential + 2.0 * g * nbar

    psi = psi_start if psi_start is not None else np.exp(-setup.x**2 / 2.0)
    psi = np.abs(psi.astype(float))
    psi /= setup.norm(psi)

    half_kin = setup.sine_step_factors(0.5 * dtau)
    check_every = 200
    mu = 0.0
    for step in range(1, max_steps + 1):
        psi = setup.propagate_kinetic(psi, half_kin)
        psi *= np.exp(-dtau * (v_th + g_n0 * psi**2))
        psi = setup.propagate_kinetic(psi, half_kin)
        psi /= setup.norm(psi)
        if step % check_every == 0:
            h_psi = setup.apply_kinetic(psi) + (v_th + g_n0 * psi**2) * psi
            mu = float(setup.integrate(psi * h_psi))
            res = setup.norm(h_psi - mu * psi)
            if res < max(tol, 5e-5):
                break

    # Newton on the discrete stationary equation with the norm constraint.
    m = setup.n_interior
    kin = setup.kinetic_matrix()
    res = np.inf
    for _ in range(40):
        h_psi = kin @ psi + (v_th + g_n0 * psi**2) * psi
        mu = float(setup.integrate(psi * h_psi))
        f_vec = h_psi - mu * psi
        res = setup.norm(f_vec)
        if res < tol * 1e-2 or res < 1e-13:
            break
        jac = kin + np.diag(v_th + 3.0 * g_n0 * psi**2 - mu)
        bordered = np.zeros((m + 1, m + 1))
        bordered[:m, :m] = jac
        bordered[:m, m] = -psi
        bordered[m, :m] = psi * setup.dx
        rhs = np.concatenate([-f_vec, [0.0]])
        delta = np.linalg.solve(bordered, rhs)
        psi = psi + delta[:m]
        psi /= setup.norm(psi)

    if res > tol:
        raise ConvergenceError(
            f"GPE solver stalled at residual {res:.3e} (target {tol:.1e})",
            residual=res)
    psi = np.abs(psi) * np.sign(np.sum(psi))  # gauge: real, nonnegative
    psi /= setup.norm(psi)
    h_psi = kin @ psi + (v_th + g_n0 * psi**2) * psi
    mu = float(setup.integrate(psi * h_psi))
    res = setup.norm(h_psi - mu * psi)
    return CondensateState(psi0=psi, mu=mu, n0=n0_target, residual=res)


# ---------------------------------------------------------------------------
# Projected Bogoliubov-de Gennes eigenproblem
# ---------------------------------------------------------------------------

def assemble_bdg_operator(setup: SimSetup, params: PhysicalParams,
                          cond: CondensateState, nbar: np.ndarray) -> np.ndarray:
    """Dense 2M x 2M BdG operator on the (u, v) grid space.

    Includes the rank-one orthogonality term that couples (u, v) back to the
    condensate direction, and restricts both components to the subspace
    orthogonal to psi0 (on which that term is what keeps the eigenproblem
    consistent with condensate-orthogonal excitations).
    """
    g = params.g_tt
    psi = cond.psi0
    dx = setup.dx
    m = setup.n_interior
    c = g * cond.n0
    diag = setup.potential - cond.mu + 2.0 * c * psi**2 + 2.0 * g * nbar
    a_block = setup.kinetic_matrix() + np.diag(diag)
    b_block = np.diag(c * psi**2)
    big = np.zeros((2 * m, 2 * m))
    big[:m, :m] = a_block
    big[:m, m:] = b_block
    big[m:, :m] = -b_block
    big[m:, m:] = -a_block
    # rank-one orthogonality term: -c |psi (x) psi| <psi^3|(u+v)>
    left = np.concatenate([psi, psi])
    right = np.concatenate([psi**3, psi**3]) * dx
    big -= c * np.outer(left, right)
    # restrict both components orthogonal to the condensate
    q = np.eye(m) - dx * np.outer(psi, psi)
    q2 = np.zeros((2 * m, 2 * m))
    q2[:m, :m] = q
    q2[m:, m:] = q
    return q2 @ big @ q2


def solve_bdg(setup: SimSetup, params: PhysicalParams, cond: CondensateState,
              nbar: np.ndarray, e_cut: float) -> list[ExcitationMode]:
    """All positive-norm excitations with 0 < E <= e_cut.

    Uses the symmetric reduction of the condensate-orthogonal problem:
    with L- = L_GP and L+ = L_GP + 2 g N0 psi0^2 (both projected), solve
    W L- W h = E^2 h, W = sqrt(L+), and recover u = (f+g)/2, v = (f-g)/2.
    Eigenvectors come out sigma3-orthonormal; signs are canonicalized for
    reproducibility.
    """
    g = params.g_tt
    psi = cond.psi0
    dx = setup.dx
    c = g * cond.n0
    diag_gp = setup.potential - cond.mu + c * psi**2 + 2.0 * g * nbar
    l_minus = setup.kinetic_matrix() + np.diag(diag_gp)
    l_plus = l_minus + np.diag(2.0 * c * psi**2)
    q = np.eye(setup.n_interior) - dx * np.outer(psi, psi)
    l_minus = q @ l_minus @ q
    l_plus = q @ l_plus @ q

    w_vals, w_vecs = eigh(l_plus)
    w_vals = np.clip(w_vals, 0.0, None)
    w_half = (w_vecs * np.sqrt(w_vals)) @ w_vecs.T
    kmat = w_half @ l_minus @ w_half
    e2, hvecs = eigh(kmat)

    scale = max(1.0, float(np.max(np.abs(e2))))
    bad = np.nonzero(e2 < -1e-8 * scale)[0]
    if bad.size:
        raise AnomalousModeError(
            f"anomalous (imaginary-energy) modes at indices {bad.tolist()}, "
            f"E^2 down to {e2[bad].min():.3e}")
    keep = np.nonzero((e2 > 1e-9 * scale) & (np.sqrt(np.abs(e2)) <= e_cut))[0]
    energies = np.sqrt(e2[keep])
    order = np.argsort(energies)
    energies = energies[order]
    hsel = hvecs[:, keep[order]]

    g_vecs = w_half @ hsel
    f_vecs = (l_minus @ g_vecs) / energies
    norms = dx * np.sum(f_vecs * g_vecs, axis=0)   # = integral(u^2 - v^2)
    f_vecs /= np.sqrt(norms)
    g_vecs /= np.sqrt(norms)
    u = 0.5 * (f_vecs + g_vecs)
    v = 0.5 * (f_vecs - g_vecs)
    # canonical sign: largest-|u| component positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u *= signs
    v *= signs
    return [ExcitationMode(u=u[:, j].copy(), v=v[:, j].copy(),
                           energy=float(energies[j]))
            for j in range(len(energies))]


def noncondensate_density(setup: SimSetup,
                          modes: list[ExcitationMode]) -> np.ndarray:
    """nbar(x) = sum_j { n_j (|u_j|^2 + |v_j|^2) + |v_j|^2 }."""
    nbar = np.zeros(setup.n_interior)
    for mode in modes:
        nbar += mode.occupation * (mode.u**2 + mode.v**2) + mode.v**2
    return nbar


def default_e_cut(temperature: float) -> float:
    """Excitation cutoff: Bose weight beyond 5T is negligible."""
    return max(10.0, 5.0 * temperature)


def self_consistent_solve(params: PhysicalParams, setup: SimSetup, *,
                          e_cut: float | None = None, mixing: float = 0.3,
                          tol_mu: float = 1e-6, tol_nbar: float = 1e-6,
                          max_iter: int = 200) -> HfbSolution:
    """Fixed point of {GPE -> BdG -> occupations -> nbar -> adjust N0, mu}.

    The number equation fixes N0 = N_t - integral(nbar) exactly at each outer
    iteration; the new nbar is under-relaxed with the given mixing fraction
    (plain iteration oscillates at high temperature).
    """
    if e_cut is None:
        e_cut = default_e_cut(params.temperature)
    temp = params.temperature
    nbar = np.zeros(setup.n_interior)
    psi_start = None
    mu_prev: float | None = None
    trace: list[tuple[int, float, float, float]] = []

    for iteration in range(1, max_iter + 1):
        n0 = params.n_atoms - float(setup.integrate(nbar))
        if n0 <= 0:
            raise ConvergenceError(
                "non-condensate density exceeded the total atom number",
                trace=trace)
        cond = solve_gpe(setup, params, nbar, n0, psi_start=psi_start)
        psi_start = cond.psi0
        modes = solve_bdg(setup, params, cond, nbar, e_cut)
        if temp > 0:
            for mode in modes:
                mode.occupation = float(thermal_occupation(mode.energy, temp))
        nbar_new = noncondensate_density(setup, modes)
        # relative change with an absolute floor so nbar ~ 0 (ideal gas,
        # T = 0) converges immediately instead of comparing round-off noise
        denom = max(float(np.linalg.norm(nbar_new)), 1e-12 * params.n_atoms)
        dn = float(np.linalg.norm(nbar_new - nbar)) / denom
        if not np.all(np.isfinite(nbar_new)):
            raise ConvergenceError("nbar diverged", trace=trace)
        dmu = 0.0 if mu_prev is None else abs(cond.mu - mu_prev)
        trace.append((iteration, cond.mu, n0, dn))
        converged = dn < tol_nbar and (mu_prev is None or dmu < tol_mu)
        mu_prev = cond.mu
        nbar = (1.0 - mixing) * nbar + mixing * nbar_new
        if converged:
            nbar = nbar_new  # report the self-consistent density itself
            return HfbSolution(setup=setup, condensate=cond, modes=modes,
                               nbar=nbar, temperature=temp, e_cut=e_cut,
                               iterations=iteration, trace=trace)

    tail = ", ".join(f"it{i}: mu={mu:.6f}, dn={dn:.2e}"
                     for i, mu, _, dn in trace[-5:])
    raise ConvergenceError(
        f"self-consistency loop did not converge in {max_iter} iterations "
        f"(last iterates: {tail})", trace=trace)


# ---------------------------------------------------------------------------
# Serialization (self-describing container for converged solutions)
# ---------------------------------------------------------------------------

def save_solution(path: str | Path, solution: HfbSolution,
                  tolerances: dict | None = None) -> None:
    """Write a converged solution plus a JSON header to a single .npz file."""
    setup = solution.setup
    header = {
        "format": "atomlaser-hfb-v1",
        "params": {
            "n_atoms": setup.params.n_atoms,
            "interaction_tt": setup.params.interaction_tt,
            "interaction_tf": setup.params.interaction_tf,
            "temperature": solution.temperature,
        },
        "grid": {"extent": setup.grid.extent, "n_points": setup.grid.n_points},
        "modes": {"omega_max": setup.modes.omega_max,
                  "n_omega": setup.modes.n_omega},
        "e_cut": solution.e_cut,
        "mu": solution.mu,
        "n0": solution.n0,
        "iterations": solution.iterations,
        "tolerances": tolerances or {"tol_mu": 1e-6, "tol_nbar": 1e-6,
                                     "gpe_residual": 1e-8},
        "display_length_unit": setup.display_length,
    }
    u = np.stack([m.u for m in solution.modes]) if solution.modes else np.zeros((0, setup.n_interior))
    v = np.stack([m.v for m in solution.modes]) if solution.modes else np.zeros((0, setup.n_interior))
    energies = np.array([m.energy for m in solution.modes])
    occupations = np.array([m.occupation for m in solution.modes])
    np.savez_compressed(
        Path(path), header=json.dumps(header, sort_keys=True),
        x=setup.x, psi0=solution.condensate.psi0, nbar=solution.nbar,
        energies=energies, occupations=occupations, u=u, v=v,
        residual=np.array([solution.condensate.residual]))


def load_solution(path: str | Path) -> HfbSolution:
    """Reload a solution written by :func:`save_solution`."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "atomlaser-hfb-v1":
            raise ValueError(f"not an atomlaser HFB file: {path}")
        params = PhysicalParams(
            n_atoms=int(header["params"]["n_atoms"]),
            interaction_tt=float(header["params"]["interaction_tt"]),
            interaction_tf=float(header["params"]["interaction_tf"]),
            temperature=float(header["params"]["temperature"]),
        )
        grid = SpatialGrid(extent=float(header["grid"]["extent"]),
                           n_points=int(header["grid"]["n_points"]))
        mode_grid = OutputModeGrid(omega_max=float(header["modes"]["omega_max"]),
                                   n_omega=int(header["modes"]["n_omega"]))
        setup = build_setup(params, grid, mode_grid)
        cond = CondensateState(psi0=data["psi0"].copy(), mu=float(header["mu"]),
                               n0=float(header["n0"]),
                               residual=float(data["residual"][0]))
        modes = [ExcitationMode(u=data["u"][j].copy(), v=data["v"][j].copy(),
                                energy=float(data["energies"][j]),
                                occupation=float(data["occupations"][j]))
                 for j in range(len(data["energies"]))]
        return HfbSolution(setup=setup, condensate=cond, modes=modes,
                           nbar=data["nbar"].copy(),
                           temperature=params.temperature,
                           e_cut=float(header["e_cut"]),
                           iterations=int(header["iterations"]))
