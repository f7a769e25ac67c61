"""Quasi-steady-state output observables.

The trapped gas is frozen in its converged HFB-Popov state; the coupler
transfers atoms into free modes +-k(omega), k = sqrt(2*omega).  Energy
bookkeeping uses a constant density of states rho(omega) = 1 in total, split
1/2 per propagation branch, which keeps golden-rule rates finite at channel
thresholds.  Output channels are eta = 0 (condensate), j+ (stimulated quantum
evaporation of a thermal quasiparticle) and j- (pair breaking).

Mode normalization.  Rates and mode-occupation spectra use unit-amplitude
plane waves with the rho = 1 measure ("dos" convention), matching
    rate_eta = 2*pi * rho * (1/2) * sum_branches |lambda_(k_res,eta)|^2 * n_eta.
Real-space fields are synthesized by default with modes orthonormal under that
measure, phi_k = exp(+-ikx)/sqrt(pi*k), equivalent to the physical continuum
measure dk/(2*pi) ("continuum" convention); only then do completeness-based
properties (short-time shape, Parseval) hold.  Pass normalization="dos" to
force the bookkeeping measure into the field synthesis as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .config import OutputModeGrid, SimSetup
from .hfb import HfbSolution


class CoverageError(ValueError):
    """The output-mode grid does not cover all open channel resonances."""


def raman_effective_coupling(rabi_ti, rabi_fi, detuning_i):
    """Two-photon effective amplitude conj(Omega_ti)*Omega_fi/Delta_i.

    Raises on a resonant intermediate level (Delta_i = 0), which is outside
    the adiabatic-elimination validity.
    """
    if np.any(np.asarray(detuning_i) == 0):
        raise ValueError("intermediate-level detuning must be nonzero")
    return np.conjugate(rabi_ti) * np.asarray(rabi_fi) / detuning_i


@dataclass(frozen=True)
class CouplingSpec:
    """Output-coupler parameters: amplitude profile, detuning, momentum kick.

    ``amplitude`` is either a scalar (spatially uniform over the box) or a
    real profile sampled on the trap grid; the switch-on at t = 0 is sudden.
    """

    amplitude: float | tuple | np.ndarray = 0.5
    detuning: float = 0.0
    kick: float = 0.0

    def profile(self, setup: SimSetup) -> np.ndarray:
        lam = np.asarray(self.amplitude, dtype=float)
        if lam.ndim == 0:
            return np.full(setup.n_interior, float(lam))
        if lam.shape != (setup.n_interior,):
            raise ValueError("amplitude profile must match the interior grid")
        return lam

    def strength(self, setup: SimSetup) -> float:
        """Lambda = sqrt(integral |lambda|^2 dx)."""
        lam = self.profile(setup)
        return float(np.sqrt(setup.integrate(lam**2)))

    def amplitude_at_center(self, setup: SimSetup) -> float:
        lam = self.profile(setup)
        return float(lam[np.argmin(np.abs(setup.x))])

    def is_weak(self, setup: SimSetup, bandwidth: float,
                margin: float = 0.1) -> bool:
        """Record whether Lambda << bandwidth (factor ``margin``)."""
        return self.strength(setup) <= margin * bandwidth


@dataclass
class Channel:
    """One output channel: trapped wave, population weight, energy offset."""

    label: str
    j: int                      # 0 for the condensate
    sign: int                   # +1 SQE, -1 PB, 0 condensate
    wave: np.ndarray            # psi0, u_j, or conj(v_j)
    population: float           # N0, n_j, or n_j + 1
    energy_offset: float        # 0, +E_j, or -E_j

    @property
    def kind(self) -> str:
        return {0: "condensate", +1: "sqe", -1: "pb"}[self.sign]


def build_channels(trap: HfbSolution) -> list[Channel]:
    """All channels of the trap state in canonical order (0, 1+, 1-, 2+, ...)."""
    channels = [Channel("0", 0, 0, trap.condensate.psi0.astype(float),
                        trap.n0, 0.0)]
    for j, mode in enumerate(trap.modes, start=1):
        channels.append(Channel(f"{j}+", j, +1, mode.u, mode.occupation,
                                +mode.energy))
        channels.append(Channel(f"{j}-", j, -1, mode.v, mode.occupation + 1.0,
                                -mode.energy))
    return channels


class MatrixElementTable:
    """Coupling matrix elements lambda_(k,eta) on demand and on the mode grid.

    lambda_(k,eta) = integral exp(-i(k - k_em) x) lambda(x) psi_eta(x) dx,
    with psi_eta = psi0, u_j, or conj(v_j), evaluated by grid quadrature.  The
    two propagation branches correspond to signed wavenumbers +-k(omega).
    """

    def __init__(self, coupling: CouplingSpec, trap: HfbSolution,
                 modes: OutputModeGrid | None = None):
        self.coupling = coupling
        self.trap = trap
        self.setup = trap.setup
        self.modes = modes if modes is not None else trap.setup.modes
        self.channels = build_channels(trap)
        self.mu = trap.mu
        lam = coupling.profile(self.setup)
        # rows: channel sources lambda(x)*psi_eta(x)
        self._sources = np.stack([lam * ch.wave for ch in self.channels])
        self._index = {ch.label: i for i, ch in enumerate(self.channels)}
        self._grid_cache: dict[int, np.ndarray] = {}

    # -- channel bookkeeping -------------------------------------------------

    def omega_out(self, ch: Channel) -> float:
        return self.mu + self.coupling.detuning + ch.energy_offset

    def is_open(self, ch: Channel) -> bool:
        return self.omega_out(ch) > 0.0

    def resonant_wavenumber(self, ch: Channel) -> float:
        w = self.omega_out(ch)
        if w <= 0:
            raise ValueError(f"channel {ch.label} is closed (omega_out <= 0)")
        return float(np.sqrt(2.0 * w))

    def channel(self, label: str) -> Channel:
        return self.channels[self._index[label]]

    def open_channels(self) -> list[Channel]:
        return [ch for ch in self.channels if self.is_open(ch)]

    def validate_coverage(self) -> None:
        uncovered = [ch.label for ch in self.channels
                     if self.is_open(ch)
                     and self.omega_out(ch) > self.modes.omega_max]
        if uncovered:
            raise CoverageError(
                f"output-mode grid (omega_max={self.modes.omega_max}) does "
                f"not cover open resonances of channels {uncovered}")

    # -- matrix elements ------------------------------------------------------

    def fourier(self, labels_or_all, k_signed) -> np.ndarray:
        """lambda_(k,eta) for signed wavenumbers; rows follow the label list.

        ``labels_or_all`` is None (all channels) or a list of labels.
        """
        k = np.atleast_1d(np.asarray(k_signed, dtype=float))
        if labels_or_all is None:
            src = self._sources
        else:
            rows = [self._index[lab] for lab in labels_or_all]
            src = self._sources[rows]
        x = self.setup.x
        out = np.empty((src.shape[0], k.size), dtype=complex)
        block = 4096
        for start in range(0, k.size, block):
            kb = k[start:start + block]
            phase = np.exp(-1j * np.outer(kb - self.coupling.kick, x))
            out[:, start:start + block] = (phase @ src.T).T * self.setup.dx
        return out

    def element(self, label: str, k_signed: float) -> complex:
        return complex(self.fourier([label], np.array([k_signed]))[0, 0])

    def resonant_elements(self, ch: Channel) -> tuple[complex, complex]:
        """(lambda at +k_res, lambda at -k_res) for an open channel."""
        k = self.resonant_wavenumber(ch)
        vals = self.fourier([ch.label], np.array([+k, -k]))[0]
        return complex(vals[0]), complex(vals[1])

    def on_grid(self, omega: np.ndarray | None = None) -> np.ndarray:
        """Array (n_channels, n_omega, 2): branches +k, -k on the energy grid."""
        if omega is None:
            omega = self.modes.energies()
        key = hash(omega.tobytes())
        if key not in self._grid_cache:
            self.validate_coverage()
            k = OutputModeGrid.wavenumber(omega)
            both = self.fourier(None, np.concatenate([+k, -k]))
            n = omega.size
            self._grid_cache[key] = np.stack([both[:, :n], both[:, n:]], axis=2)
        return self._grid_cache[key]


def matrix_elements(coupling: CouplingSpec, trap: HfbSolution,
                    modes: OutputModeGrid | None = None) -> MatrixElementTable:
    """Build the coupling matrix-element table for a converged trap state.

    Resonant elements are evaluated exactly at any requested wavenumber;
    grid materialization (``on_grid``) raises CoverageError when an open
    resonance falls outside the energy grid.
    """
    return MatrixElementTable(coupling, trap, modes)


# ---------------------------------------------------------------------------
# Time-energy kernels
# ---------------------------------------------------------------------------

def d_kernel(omega_k, omega_out, t):
    """Transition kernel i*(exp(-i(w_out - w_k)t) - 1)/(w_out - w_k).

    Continuous at resonance with limit value t.
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    d = np.asarray(omega_out - np.asarray(omega_k, dtype=float))
    return t * np.exp(-0.5j * d * t) * np.sinc(d * t / (2.0 * np.pi))


def d_kernel_sq(omega_k, omega_out, t):
    """|D|^2 in explicit sinc^2 form, [sin(d t/2)/(d/2)]^2, d = w_k - w_out."""
    d = np.asarray(omega_k, dtype=float) - omega_out
    return (t * np.sinc(d * t / (2.0 * np.pi))) ** 2


def d2_kernel(omega_k, omega_out, t):
    """Second-order diagonal kernel (1 - i x t - exp(-i x t))/x^2, x = w_k - w_out.

    Satisfies |D|^2 = 2 Re D2 identically.
    """
    x = np.asarray(np.asarray(omega_k, dtype=float) - omega_out)
    xt = x * t
    small = np.abs(xt) < 1e-6
    xs = np.where(small, 1.0, x)
    main = (1.0 - 1j * xt - np.exp(-1j * xt)) / xs**2
    series = 0.5 * t**2 - 1j * (x * t**3) / 6.0
    out = np.where(small, series, main)
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# Spectrum and golden-rule rates (bookkeeping measure)
# ---------------------------------------------------------------------------

@dataclass
class SpectrumResult:
    """Mode-occupation spectrum n_k^eta(t) on an energy grid."""

    omega: np.ndarray
    labels: list[str]
    per_channel: np.ndarray     # (n_channels, n_omega, 2 branches)
    populations: np.ndarray
    t: float

    @property
    def total(self) -> np.ndarray:
        """Channel-summed spectrum per (omega, branch)."""
        return self.per_channel.sum(axis=0)

    def channel_numbers(self) -> np.ndarray:
        """Per-channel atom number: integral dw (1/2) sum_branches n_k."""
        dw = np.gradient(self.omega)
        return 0.5 * np.einsum("cwb,w->c", self.per_channel, dw)


def output_spectrum(table: MatrixElementTable, t: float,
                    omega: np.ndarray | None = None) -> SpectrumResult:
    """n_k^eta(t) = |lambda_(k,eta)|^2 |D_(k,eta)(t)|^2 n_eta per channel."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if omega is None:
        omega = table.modes.energies()
    lam = table.on_grid(omega)
    pops = np.array([ch.population for ch in table.channels])
    w_out = np.array([table.omega_out(ch) for ch in table.channels])
    kern = d_kernel_sq(omega[None, :], w_out[:, None], t)
    per_channel = np.abs(lam) ** 2 * kern[:, :, None] * pops[:, None, None]
    return SpectrumResult(omega=omega.copy(),
                          labels=[ch.label for ch in table.channels],
                          per_channel=per_channel, populations=pops, t=t)


@dataclass
class GoldenRuleRates:
    """Long-time output rates per channel and their process aggregates."""

    labels: list[str]
    rates: np.ndarray             # dn_f^eta/dt per channel
    coefficients: np.ndarray      # pi*(1/2)*sum_br |lambda_res|^2 (no population)
    omega_out: np.ndarray
    condensate: float
    sqe: float
    pb: float
    weak_coupling: bool

    @property
    def total(self) -> float:
        return float(self.rates.sum())


def golden_rule_rates(table: MatrixElementTable) -> GoldenRuleRates:
    """Fermi-golden-rule rates with rho = 1 split equally between branches.

    Closed channels (omega_out <= 0) contribute exactly zero.  Returns the
    three aggregates: condensate output, stimulated quantum evaporation, and
    pair breaking.
    """
    labels, rates, coefs, w_outs = [], [], [], []
    for ch in table.channels:
        w = table.omega_out(ch)
        labels.append(ch.label)
        w_outs.append(w)
        if w <= 0:
            rates.append(0.0)
            coefs.append(0.0)
            continue
        lp, lm = table.resonant_elements(ch)
        coef = np.pi * 0.5 * (abs(lp) ** 2 + abs(lm) ** 2)
        coefs.append(coef)
        rates.append(2.0 * coef * ch.population)
    rates = np.array(rates)
    kinds = np.array([ch.sign for ch in table.channels])
    bandwidth = spectral_width_estimates(table.trap, table.coupling)[0]
    return GoldenRuleRates(
        labels=labels, rates=rates, coefficients=np.array(coefs),
        omega_out=np.array(w_outs),
        condensate=float(rates[kinds == 0].sum()),
        sqe=float(rates[kinds == +1].sum()),
        pb=float(rates[kinds == -1].sum()),
        weak_coupling=table.coupling.is_weak(table.setup, bandwidth))


# ---------------------------------------------------------------------------
# Real-space output fields
# ---------------------------------------------------------------------------

def select_field_channels(table: MatrixElementTable,
                          weight_floor: float = 1e-8) -> list[Channel]:
    """Channels retained in field sums, by relative resonant weight.

    Both partners (j+, j-) of a mode are kept whenever either passes, so the
    anomalous pair sum stays complete.  The condensate channel is always kept.
    """
    weights = {}
    for ch in table.channels:
        if table.is_open(ch):
            lp, lm = table.resonant_elements(ch)
            w = ch.population * max(abs(lp) ** 2, abs(lm) ** 2)
        else:
            # closed channel: off-resonant (bound) weight only
            k0 = np.sqrt(2.0 * abs(table.omega_out(ch)) + 1e-12)
            lam = table.fourier([ch.label], np.array([k0, -k0, 0.0]))[0]
            w = ch.population * float(np.max(np.abs(lam)) ** 2) * 1e-2
        weights[ch.label] = w
    wmax = max(weights.values()) if weights else 0.0
    keep_j = {0}
    for ch in table.channels:
        if wmax == 0 or weights[ch.label] >= weight_floor * wmax:
            keep_j.add(ch.j)
    return [ch for ch in table.channels if ch.j in keep_j]


def _kernel_window(omega_res: float, t: float) -> float:
    """Half-width of the energy window that must surround a resonance.

    At long times the transition kernel concentrates within ~20*pi/t; at
    short times it is broad and the matrix-element bandwidth (of order the
    resonance energy itself, floored at 10) takes over.
    """
    return min(20.0 * np.pi / max(t, 1e-3), max(10.0, omega_res))


def _composite_wavenumber_grid(table: MatrixElementTable, t: float,
                               x_max: float, channels: list[Channel],
                               n_background: int,
                               omega_eff: float) -> np.ndarray:
    """Shared k-grid: phase-adapted background + per-resonance refinement.

    Background spacing tracks the local phase rate |x|_max + k t of
    exp(i(kx - w t)); each open resonance gets a geometric cluster spanning
    its kernel window with core spacing below pi/(50 t), so the transition
    kernel is resolved much finer than its pi/t scale.
    """
    k_max = OutputModeGrid.wavenumber(omega_eff)
    t_eff = max(t, 1e-3)
    total_phase = x_max * k_max + 0.5 * t_eff * k_max**2
    step_phase = max(min(total_phase / max(n_background, 16), 0.5), 1e-9)
    nodes = [0.0]
    while nodes[-1] < k_max:
        nodes.append(nodes[-1] + step_phase / (x_max + nodes[-1] * t_eff + 1.0))
    grid = np.array(nodes[:-1] + [k_max])
    pieces = [grid]
    core = np.pi / (50.0 * t_eff)
    for ch in channels:
        w0 = table.omega_out(ch)
        if w0 <= 0:
            continue
        span = _kernel_window(w0, t)
        offsets = np.concatenate([np.linspace(0.0, core, 8)[1:],
                                  np.geomspace(core, max(span, 2 * core), 48)[1:]])
        w_nodes = np.concatenate([[w0], w0 + offsets, w0 - offsets])
        w_nodes = w_nodes[(w_nodes > 0) & (w_nodes <= omega_eff)]
        pieces.append(OutputModeGrid.wavenumber(w_nodes))
    grid = np.unique(np.concatenate(pieces))
    return grid[(grid >= 0) & (grid <= k_max)]


@dataclass
class OutputFieldSet:
    """Per-channel output wave functions at one time, plus bookkeeping.

    Fields are per source particle; physical densities weight each channel by
    its population (N0, n_j, n_j + 1).
    """

    x: np.ndarray
    t: float
    labels: list[str]
    fields: np.ndarray              # (n_channels, n_x) complex
    populations: np.ndarray
    signs: np.ndarray               # +1, -1, 0 per channel
    js: np.ndarray
    omega_out: np.ndarray
    rates: np.ndarray
    spectral_numbers: np.ndarray    # same-measure mode-summed atom numbers
    normalization: str
    dx: float | None = None         # spacing if x is uniform

    def _pairs(self):
        plus = {int(j): i for i, (j, s) in enumerate(zip(self.js, self.signs))
                if s == +1}
        minus = {int(j): i for i, (j, s) in enumerate(zip(self.js, self.signs))
                 if s == -1}
        return [(plus[j], minus[j]) for j in sorted(plus) if j in minus]

    def condensate_density(self) -> np.ndarray:
        if "0" not in self.labels:
            return np.zeros(self.x.size)
        i0 = self.labels.index("0")
        return self.populations[i0] * np.abs(self.fields[i0]) ** 2

    def thermal_density(self) -> np.ndarray:
        """ntilde(x): SQE and pair-breaking contributions."""
        out = np.zeros(self.x.size)
        for i, s in enumerate(self.signs):
            if s != 0:
                out += self.populations[i] * np.abs(self.fields[i]) ** 2
        return out

    def pair_density(self) -> np.ndarray:
        """mtilde(x) = sum_j (2 n_j + 1) Psi_(j+) Psi_(j-)."""
        out = np.zeros(self.x.size, dtype=complex)
        for ip, im in self._pairs():
            n_j = self.populations[ip]
            out += (2.0 * n_j + 1.0) * self.fields[ip] * self.fields[im]
        return out

    def condensate_amplitude(self) -> np.ndarray:
        """sqrt(N0) * Psi_f^0, the coherent-part amplitude."""
        if "0" not in self.labels:
            return np.zeros(self.x.size, dtype=complex)
        i0 = self.labels.index("0")
        return np.sqrt(self.populations[i0]) * self.fields[i0]

    def density(self) -> np.ndarray:
        return self.condensate_density() + self.thermal_density()

    def channel_density(self, label: str) -> np.ndarray:
        i = self.labels.index(label)
        return self.populations[i] * np.abs(self.fields[i]) ** 2

    def channel_numbers(self) -> np.ndarray:
        """Spatially integrated per-channel atom numbers (uniform x only)."""
        if self.dx is None:
            raise ValueError("channel_numbers requires a uniform x grid")
        return self.populations * self.dx * np.sum(
            np.abs(self.fields) ** 2, axis=1)


def output_field(table: MatrixElementTable, t: float,
                 x: np.ndarray | None = None, *,
                 normalization: Literal["continuum", "dos"] = "continuum",
                 weight_floor: float = 1e-8,
                 channels: list[Channel] | None = None) -> OutputFieldSet:
    """Synthesize Psi_f^eta(x, t) by branch-summed wavenumber quadrature.

    Every open resonance must fit inside the mode grid together with its
    +-20*pi/t kernel window; otherwise the required grid is reported.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    setup = table.setup
    if x is None:
        x = setup.x
        dx = setup.dx
    else:
        x = np.asarray(x, dtype=float)
        steps = np.diff(x)
        dx = float(steps[0]) if steps.size and np.allclose(steps, steps[0]) \
            else None
    if channels is None:
        channels = select_field_channels(table, weight_floor)
    t_eff = max(t, 1e-3)
    needed = max((table.omega_out(ch) + _kernel_window(table.omega_out(ch), t)
                  for ch in channels if table.is_open(ch)), default=10.0)
    if needed > table.modes.omega_max:
        n_req = int(np.ceil(needed * t_eff / np.pi))
        raise CoverageError(
            f"mode grid too small for t={t}: need omega_max >= {needed:.2f} "
            f"(about n_omega >= {n_req} uniform samples)")
    # retained channels set the effective band; high closed/negligible
    # resonances outside it cannot contribute real-space weight
    omega_eff = min(table.modes.omega_max, needed + 5.0)

    k = _composite_wavenumber_grid(table, t, float(np.max(np.abs(x))),
                                   channels, table.modes.n_omega, omega_eff)
    omega = 0.5 * k**2
    wts = np.zeros_like(k)
    dk = np.diff(k)
    wts[:-1] += 0.5 * dk
    wts[1:] += 0.5 * dk
    if normalization == "continuum":
        measure = wts / (2.0 * np.pi)          # dk/(2 pi) per branch
    elif normalization == "dos":
        measure = wts * k * 0.5                # (1/2) domega per branch
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    labels = [ch.label for ch in channels]
    lam_p = table.fourier(labels, +k)
    lam_m = table.fourier(labels, -k)
    w_out = np.array([table.omega_out(ch) for ch in channels])
    kern = d_kernel(omega[None, :], w_out[:, None], t) * \
        np.exp(-1j * omega * t)[None, :]
    coef_p = lam_p * kern * measure[None, :]
    coef_m = lam_m * kern * measure[None, :]

    fields = np.zeros((len(channels), x.size), dtype=complex)
    block = 2048
    for start in range(0, k.size, block):
        sl = slice(start, start + block)
        phase = np.exp(1j * np.outer(x, k[sl]))
        fields += (phase @ coef_p[:, sl].T).T
        fields += (np.conj(phase) @ coef_m[:, sl].T).T

    spectral = (np.abs(lam_p) ** 2 + np.abs(lam_m) ** 2) * \
        np.abs(d_kernel(omega[None, :], w_out[:, None], t)) ** 2 * \
        measure[None, :]
    pops = np.array([ch.population for ch in channels])
    spectral_numbers = pops * spectral.sum(axis=1)

    coefs = np.zeros(len(channels))
    for i, ch in enumerate(channels):
        if table.is_open(ch):
            lp, lm = table.resonant_elements(ch)
            coefs[i] = np.pi * 0.5 * (abs(lp) ** 2 + abs(lm) ** 2)
    return OutputFieldSet(
        x=x.copy(), t=t, labels=labels, fields=fields, populations=pops,
        signs=np.array([ch.sign for ch in channels]),
        js=np.array([ch.j for ch in channels]),
        omega_out=w_out, rates=2.0 * coefs * pops,
        spectral_numbers=spectral_numbers, normalization=normalization, dx=dx)


def steady_field(table: MatrixElementTable, t: float,
                 x: np.ndarray | None = None, *,
                 labels: list[str] | None = None,
                 normalization: Literal["continuum", "dos"] = "continuum") -> OutputFieldSet:
    """Quasi-monochromatic beam component of each channel at long times.

    The long-time output emerges in the two resonant branch modes with equal
    weight (their matrix-element magnitudes coincide for symmetric traps
    without a kick), so each open channel contributes a standing wave whose
    density oscillates with spatial period pi/k_res.  This is the on-shell
    part of the field; the switch-on precursor is dropped and the
    non-propagating remainder lives in :func:`bound_component`.  Closed
    channels carry zero beam.
    """
    setup = table.setup
    if x is None:
        x = setup.x
        dx = setup.dx
    else:
        x = np.asarray(x, dtype=float)
        steps = np.diff(x)
        dx = float(steps[0]) if steps.size and np.allclose(steps, steps[0]) \
            else None
    if labels is None:
        labels = [ch.label for ch in select_field_channels(table)]
    fields = np.zeros((len(labels), x.size), dtype=complex)
    for i, label in enumerate(labels):
        ch = table.channel(label)
        w_out = table.omega_out(ch)
        if w_out <= 0:
            continue
        k0 = np.sqrt(2.0 * w_out)
        lam = table.fourier([label], np.array([+k0, -k0]))[0]
        if normalization == "continuum":
            onshell_weight = 1.0 / (2.0 * k0)
        else:
            onshell_weight = 0.5 * np.pi
        fields[i] = onshell_weight * np.exp(-1j * w_out * t) * (
            lam[0] * np.exp(1j * k0 * x) + lam[1] * np.exp(-1j * k0 * x))
    chans = [table.channel(lab) for lab in labels]
    pops = np.array([c.population for c in chans])
    coefs = np.zeros(len(chans))
    for i, ch in enumerate(chans):
        if table.is_open(ch):
            lp, lm = table.resonant_elements(ch)
            coefs[i] = np.pi * 0.5 * (abs(lp) ** 2 + abs(lm) ** 2)
    return OutputFieldSet(
        x=x.copy(), t=t, labels=list(labels), fields=fields,
        populations=pops, signs=np.array([c.sign for c in chans]),
        js=np.array([c.j for c in chans]),
        omega_out=np.array([table.omega_out(c) for c in chans]),
        rates=2.0 * coefs * pops,
        spectral_numbers=np.full(len(chans), np.nan),
        normalization=normalization, dx=dx)


# ---------------------------------------------------------------------------
# Non-propagating (bound) component
# ---------------------------------------------------------------------------

def bound_component(table: MatrixElementTable, labels: list[str] | None = None,
                    x: np.ndarray | None = None, *,
                    normalization: Literal["continuum", "dos"] = "continuum",
                    n_nodes: int = 8001) -> dict:
    """Static principal-value part of the output field per channel.

    Evaluated by integrand subtraction at the resonance pole plus the analytic
    log remainder (Simpson quadrature for the smooth remainder).  Returns the
    per-channel bound fields, the bound atom number of the condensate channel,
    and its closed-form estimate 2 N0 (lambda(0)/omega_out^0)^2.
    """
    setup = table.setup
    if x is None:
        x = setup.x
    x = np.asarray(x, dtype=float)
    if labels is None:
        labels = ["0"]
    if n_nodes % 2 == 0:
        n_nodes += 1
    k_max = OutputModeGrid.wavenumber(table.modes.omega_max)
    k = np.linspace(0.0, k_max, n_nodes)
    h = k[1] - k[0]
    simpson = np.ones(n_nodes)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    simpson *= h / 3.0
    if normalization == "continuum":
        measure = np.full(n_nodes, 1.0 / (2.0 * np.pi))
    else:
        measure = 0.5 * k

    lam_p = table.fourier(labels, +k)
    lam_m = table.fourier(labels, -k)
    out: dict = {"fields": {}, "x": x.copy()}
    for row, label in enumerate(labels):
        ch = table.channel(label)
        w_out = table.omega_out(ch)
        if w_out == 0:
            raise ValueError(f"channel {label}: resonance at threshold, "
                             "principal value undefined")
        # branch-summed amplitude F(k, x), regular in k
        ep = np.exp(1j * np.outer(x, k))
        amp = ep * (lam_p[row] * measure) + np.conj(ep) * (lam_m[row] * measure)
        if w_out < 0:
            field = amp @ (simpson / (0.5 * k**2 - w_out))
        else:
            k0 = float(np.sqrt(2.0 * w_out))
            # 1/(w_k - w_out) = G(k)/(k - k0), G = 2/(k + k0)
            g_of_k = 2.0 / (k + k0)
            lam0 = table.fourier([label], np.array([+k0, -k0]))[0]
            if normalization == "continuum":
                m0 = 1.0 / (2.0 * np.pi)
            else:
                m0 = 0.5 * k0
            amp0 = (np.exp(1j * x * k0) * lam0[0] +
                    np.exp(-1j * x * k0) * lam0[1]) * m0
            g0 = 1.0 / k0
            denom = k - k0
            safe = np.where(np.abs(denom) < 1e-13, 1.0, denom)
            sub = (amp * g_of_k - np.outer(amp0, np.full(n_nodes, g0))) / safe
            sub[:, np.abs(denom) < 1e-13] = 0.0
            field = sub @ simpson + amp0 * g0 * np.log((k_max - k0) / k0)
        out["fields"][label] = field

    if "0" in labels:
        ch0 = table.channel("0")
        w0 = table.omega_out(ch0)
        psi_b = out["fields"]["0"]
        if x.size > 1 and np.allclose(np.diff(x), x[1] - x[0]):
            dxq = float(x[1] - x[0])
            out["condensate_bound_number"] = float(
                ch0.population * dxq * np.sum(np.abs(psi_b) ** 2))
        lam_center = table.coupling.amplitude_at_center(setup)
        out["condensate_estimate"] = \
            2.0 * ch0.population * (lam_center / w0) ** 2
    return out


# ---------------------------------------------------------------------------
# Spectral-width estimates
# ---------------------------------------------------------------------------

def spectral_width_estimates(trap: HfbSolution,
                             coupling: CouplingSpec) -> tuple[float, float]:
    """(Delta_omega_0, delta_omega_0) for the condensate channel.

    Without a momentum kick both scales are 1/(2 r0^2) with r0 the rms width
    of |psi0|^2; a kick narrows the resonance width to |k_em|/(2 r0), shorter
    by the factor 1/(|k_em| r0).
    """
    setup = trap.setup
    psi = trap.condensate.psi0
    r0 = float(np.sqrt(setup.integrate(setup.x**2 * psi**2)))
    bandwidth = 1.0 / (2.0 * r0**2)
    if coupling.kick == 0:
        return bandwidth, bandwidth
    return bandwidth, abs(coupling.kick) / (2.0 * r0)
