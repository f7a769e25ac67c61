"""Trapped-gas population dynamics under output coupling.

Adiabatic (Markovian) limit: every channel decays or grows at its golden-rule
rate with the trap wave functions frozen at t = 0; quasiparticle equations
    dn_j/dt = -2 gamma_(j+) n_j - 2 gamma_(j-) (n_j + 1)
are corrected into the condensate equation so that the total particle ledger
closes exactly: each stimulated-evaporation event returns 2*integral|v_j|^2
particles to the condensate, each pair-breaking event removes
2*(1 + integral|v_j|^2).

The perturbative (short-time) solution keeps the full time-energy kernels and
is exact to second order in the coupling; trap losses then equal output counts
channel by channel as an algebraic identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .hfb import ExcitationMode, HfbSolution
from .outcoupling import (MatrixElementTable, OutputModeGrid, d2_kernel,
                          d_kernel_sq)


@dataclass
class DecayRates:
    """Per-channel golden-rule decay/growth rates and level shifts.

    gamma_plus[j] >= 0 (stimulated evaporation drains n_j), gamma_minus[j] <= 0
    (pair breaking feeds it); gamma0 is the condensate's own decay rate.
    Level shifts are the principal-value parts of the channel self-energies;
    they are reported but not fed back into the resonances by default.
    """

    gamma0: float
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    level_shift: np.ndarray
    energies: np.ndarray          # E_j of the retained modes
    v_weights: np.ndarray         # integral |v_j|^2
    u_weights: np.ndarray         # integral |u_j|^2 = 1 + v_weight
    occupations: np.ndarray       # n_j at t = 0
    mu: float
    weak_coupling: bool = False

    @property
    def gamma_total(self) -> np.ndarray:
        return self.gamma_plus + self.gamma_minus


def _pv_self_energy(table: MatrixElementTable, label: str, omega_out: float,
                    n_nodes: int = 4001) -> float:
    """-PV integral (1/2) sum_br |lambda(omega)|^2 / (omega - omega_out)."""
    omega_max = table.modes.omega_max
    if n_nodes % 2 == 0:
        n_nodes += 1
    w = np.linspace(0.0, omega_max, n_nodes)
    h = w[1] - w[0]
    simpson = np.ones(n_nodes)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    simpson *= h / 3.0
    k = OutputModeGrid.wavenumber(w)
    lam = table.fourier([label], np.concatenate([+k, -k]))[0]
    f = 0.5 * (np.abs(lam[:n_nodes]) ** 2 + np.abs(lam[n_nodes:]) ** 2)
    if omega_out <= 0 or omega_out >= omega_max:
        return float(-(f / (w - omega_out)) @ simpson)
    kr = np.sqrt(2.0 * omega_out)
    lam0 = table.fourier([label], np.array([+kr, -kr]))[0]
    f0 = 0.5 * (abs(lam0[0]) ** 2 + abs(lam0[1]) ** 2)
    denom = w - omega_out
    safe = np.where(np.abs(denom) < 1e-13, 1.0, denom)
    sub = (f - f0) / safe
    sub[np.abs(denom) < 1e-13] = 0.0
    pv = sub @ simpson + f0 * np.log((omega_max - omega_out) / omega_out)
    return float(-pv)


def decay_rates(table: MatrixElementTable, *,
                with_level_shifts: bool = True) -> DecayRates:
    """Golden-rule rates for every channel of the trap state.

    gamma0 and gamma_(j+/-) are pi * rho * sum_br (1/2)|lambda_res|^2 with the
    pair-breaking sign negative; closed channels contribute exactly zero.
    """
    trap = table.trap
    rates = {ch.label: 0.0 for ch in table.channels}
    for ch in table.channels:
        if not table.is_open(ch):
            continue
        lp, lm = table.resonant_elements(ch)
        coef = np.pi * 0.5 * (abs(lp) ** 2 + abs(lm) ** 2)
        rates[ch.label] = coef if ch.sign >= 0 else -coef

    n_modes = len(trap.modes)
    gamma_plus = np.array([rates[f"{j}+"] for j in range(1, n_modes + 1)])
    gamma_minus = np.array([rates[f"{j}-"] for j in range(1, n_modes + 1)])
    shifts = np.zeros(n_modes)
    if with_level_shifts:
        for j in range(1, n_modes + 1):
            for sign in ("+", "-"):
                label = f"{j}{sign}"
                ch = table.channel(label)
                shifts[j - 1] += _pv_self_energy(table, label,
                                                 table.omega_out(ch))
    dx = table.setup.dx
    v_w = np.array([m.v_weight(dx) for m in trap.modes])
    u_w = np.array([m.u_weight(dx) for m in trap.modes])
    from .outcoupling import spectral_width_estimates
    bandwidth = spectral_width_estimates(trap, table.coupling)[0]
    return DecayRates(
        gamma0=rates["0"], gamma_plus=gamma_plus, gamma_minus=gamma_minus,
        level_shift=shifts,
        energies=np.array([m.energy for m in trap.modes]),
        v_weights=v_w, u_weights=u_w,
        occupations=np.array([m.occupation for m in trap.modes]),
        mu=trap.mu,
        weak_coupling=table.coupling.is_weak(table.setup, bandwidth))


@dataclass
class PopulationTrajectory:
    """Time series of trap populations, energy, and per-process output."""

    t: np.ndarray
    n0: np.ndarray
    n_modes: np.ndarray           # (n_times, n_modes) quasiparticle numbers
    n_trap: np.ndarray            # total particle number in the trap
    e_trap: np.ndarray            # trap energy relative to t = 0
    n_out_coherent: np.ndarray
    n_out_sqe: np.ndarray
    n_out_pb: np.ndarray
    clip_events: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def n_out_total(self) -> np.ndarray:
        return self.n_out_coherent + self.n_out_sqe + self.n_out_pb

    def closure_error(self) -> float:
        """max_t |N_trap + N_out - N_trap(0)| / N_trap(0)."""
        total = self.n_trap + self.n_out_total
        return float(np.max(np.abs(total - self.n_trap[0])) / self.n_trap[0])


def trap_number(n0: float, n_modes: np.ndarray, rates: DecayRates) -> float:
    """N_trap = N0 + sum_j { n_j (u_w + v_w) + v_w }."""
    return float(n0 + np.sum(n_modes * (rates.u_weights + rates.v_weights)
                             + rates.v_weights))


def evolve_adiabatic(rates: DecayRates, trap: HfbSolution,
                     t_grid: np.ndarray, *, rtol: float = 1e-9,
                     atol: float = 1e-10,
                     clip_tolerance: float = 1e-6) -> PopulationTrajectory:
    """Integrate the Markovian rate equations on frozen trap wave functions.

    State: [N0, n_j..., N_out^coh, N_out^sqe, N_out^pb, E_trap].  The
    right-hand side satisfies d/dt (N_trap + N_out) = 0 identically, so the
    particle ledger closes to integrator round-off.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_modes = rates.energies.size
    gp, gm = rates.gamma_plus, rates.gamma_minus
    u_w, v_w = rates.u_weights, rates.v_weights
    e_j = rates.energies
    mu = rates.mu

    def rhs(_t, y):
        n0 = y[0]
        nj = y[1:1 + n_modes]
        dn_sqe = -2.0 * gp * nj
        dn_pb = -2.0 * gm * (nj + 1.0)
        dnj = dn_sqe + dn_pb
        dn0 = -2.0 * rates.gamma0 * n0 \
            - 2.0 * np.sum(v_w * dn_sqe) - 2.0 * np.sum(u_w * dn_pb)
        d_coh = 2.0 * rates.gamma0 * n0
        d_sqe = -np.sum(dn_sqe)
        d_pb = np.sum(dn_pb)
        dn_trap = dn0 + np.sum((u_w + v_w) * dnj)
        de = mu * dn_trap + np.sum(e_j * dnj)
        return np.concatenate([[dn0], dnj, [d_coh, d_sqe, d_pb, de]])

    y0 = np.concatenate([[trap.n0], rates.occupations, [0.0, 0.0, 0.0, 0.0]])
    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), y0, t_eval=t_grid,
                    method="RK45", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"trajectory integration failed: {sol.message}")
    y = sol.y.T
    n0 = y[:, 0]
    nj = y[:, 1:1 + n_modes]
    undershoot = min(float(n0.min(initial=0.0)), float(nj.min(initial=0.0)))
    notes = []
    clip_events = int(np.sum(n0 < 0) + np.sum(nj < 0))
    if undershoot < -clip_tolerance * max(trap.n0, 1.0):
        raise RuntimeError(
            f"population undershoot {undershoot:.3e} beyond the clip tolerance")
    if clip_events:
        notes.append(f"clipped {clip_events} slightly negative samples "
                     f"(worst {undershoot:.2e})")
        n0 = np.clip(n0, 0.0, None)
        nj = np.clip(nj, 0.0, None)
    n_trap = n0 + nj @ (u_w + v_w) + np.sum(v_w)
    return PopulationTrajectory(
        t=t_grid.copy(), n0=n0, n_modes=nj, n_trap=n_trap,
        e_trap=y[:, -1], n_out_coherent=y[:, 1 + n_modes],
        n_out_sqe=y[:, 2 + n_modes], n_out_pb=y[:, 3 + n_modes],
        clip_events=clip_events, notes=notes)


@dataclass
class PerturbativeResult:
    """Second-order short-time populations and their validity diagnostic."""

    t: float
    n0: float
    n_modes: np.ndarray
    condensate_loss: float        # N0(0) - N0(t)
    sqe_losses: np.ndarray        # per-mode quasiparticle loss via SQE
    pb_gains: np.ndarray          # per-mode quasiparticle gain via PB
    max_relative_change: float
    valid: bool
    warning: str | None = None


def _channel_kernel_sum(table: MatrixElementTable, label: str, t: float,
                        omega: np.ndarray, weights: np.ndarray) -> float:
    """sum_k |lambda_(k,eta)|^2 |D_(k,eta)(t)|^2 on the shared energy grid."""
    ch = table.channel(label)
    k = OutputModeGrid.wavenumber(omega)
    lam = table.fourier([label], np.concatenate([+k, -k]))[0]
    f = 0.5 * (np.abs(lam[:omega.size]) ** 2 + np.abs(lam[omega.size:]) ** 2)
    kern = d_kernel_sq(omega, table.omega_out(ch), t)
    return float(np.sum(f * kern * weights))


def perturbative_grid(table: MatrixElementTable, t: float,
                      points_per_lobe: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Uniform energy grid resolving the sinc lobes of every kernel at time t."""
    t_eff = max(t, 1e-3)
    n = int(np.ceil(table.modes.omega_max * t_eff / np.pi * points_per_lobe))
    n = max(n, table.modes.n_omega)
    w = np.linspace(0.0, table.modes.omega_max, n + 1)
    wts = np.full(n + 1, w[1] - w[0])
    wts[0] = wts[-1] = 0.5 * (w[1] - w[0])
    return w, wts


def evolve_perturbative(table: MatrixElementTable, t: float, *,
                        validity_threshold: float = 0.1) -> PerturbativeResult:
    """Second-order populations: trap losses equal output counts exactly.

    N0(t) = N0(0) [1 - sum_k |lambda_k0|^2 |D_k0|^2]; each n_j loses its
    stimulated-evaporation output and gains one quasiparticle per
    pair-breaking output atom.
    """
    trap = table.trap
    omega, wts = perturbative_grid(table, t)
    s0 = _channel_kernel_sum(table, "0", t, omega, wts)
    n0 = trap.n0 * (1.0 - s0)
    n_modes = len(trap.modes)
    sqe_losses = np.zeros(n_modes)
    pb_gains = np.zeros(n_modes)
    nj_new = np.zeros(n_modes)
    for j, mode in enumerate(trap.modes, start=1):
        s_plus = _channel_kernel_sum(table, f"{j}+", t, omega, wts)
        s_minus = _channel_kernel_sum(table, f"{j}-", t, omega, wts)
        nj0 = mode.occupation
        sqe_losses[j - 1] = nj0 * s_plus
        pb_gains[j - 1] = (nj0 + 1.0) * s_minus
        nj_new[j - 1] = nj0 * (1.0 - s_plus + s_minus) + s_minus
    rel = [s0]
    occ = np.array([m.occupation for m in trap.modes])
    nonzero = occ > 0
    if np.any(nonzero):
        rel.append(float(np.max(np.abs(nj_new[nonzero] - occ[nonzero])
                                / occ[nonzero])))
    max_rel = float(np.max(rel))
    valid = max_rel < validity_threshold
    warning = None if valid else (
        f"population change {max_rel:.2%} exceeds the perturbative validity "
        f"threshold {validity_threshold:.0%}")
    return PerturbativeResult(
        t=t, n0=n0, n_modes=nj_new, condensate_loss=trap.n0 * s0,
        sqe_losses=sqe_losses, pb_gains=pb_gains,
        max_relative_change=max_rel, valid=valid, warning=warning)


def second_order_kernel_diagonal(omega_k, omega_out, t):
    """Diagonal second-order kernel; 2 Re of it equals |D|^2 identically."""
    return d2_kernel(omega_k, omega_out, t)


def bookkeeping_deltas(mode: ExcitationMode, dx: float) -> tuple[float, float,
                                                                 float, float]:
    """Per-event particle deltas (dN_j^SQE, dN_0^SQE, dN_j^PB, dN_0^PB).

    Each stimulated-evaporation event removes one quasiparticle worth
    1 + 2*integral|v|^2 particles and returns 2*integral|v|^2 to the
    condensate; each pair-breaking event does the reverse with the condensate
    paying 2*integral|u|^2.  Either way exactly one atom leaves the trap.
    """
    v_w = mode.v_weight(dx)
    return (-1.0 - 2.0 * v_w, +2.0 * v_w, +1.0 + 2.0 * v_w,
            -2.0 * (1.0 + v_w))


def energy_rate(mu: float, energies: np.ndarray, dn_trap_dt: float,
                dn_modes_dt: np.ndarray) -> float:
    """dE_trap/dt = mu dN_trap/dt + sum_j E_j dn_j/dt."""
    return float(mu * dn_trap_dt + np.sum(energies * dn_modes_dt))
