"""Units, physical parameters, grids, and scenario validation.

Everything downstream works in trap natural units: hbar = m = omega = k_B = 1.
Lengths are *displayed* (CSV output, figures) in units of 2*sqrt(hbar/m/omega),
i.e. display_x = x / 2.

Interaction strengths are quoted in the conventional form U0 = 10*hbar*omega*
sqrt(2*hbar/m/omega) = 10*sqrt(2) for the N_t = 2000 reference system.  The
mean-field coupling that enters the generalized Gross-Pitaevskii and
Bogoliubov-de Gennes equations is g = U0 / (2 N_t) per pair; this normalization
is fixed by the reference thermodynamics of that system (mu ~ 2.5 at T = 10,
mu ~ 2.3 and 44% non-condensate at T = 150) and is asserted by the acceptance
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dst

#: display length unit, 2*sqrt(hbar/m/omega), expressed in natural lengths
DISPLAY_LENGTH = 2.0

#: default trap-trap interaction, 10*hbar*omega*sqrt(2*hbar/m/omega)
DEFAULT_U0 = 10.0 * np.sqrt(2.0)


class ConfigError(ValueError):
    """A scenario parameter violates its contract; message names the field."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class PhysicalParams:
    """Global physical parameters of the trapped gas.

    n_atoms        total atom number N_t
    interaction_tt trapped-trapped interaction strength U0 (energy x length)
    interaction_tf trapped-free interaction strength U1 (energy x length)
    temperature    T in units of hbar*omega/k_B
    trap_frequency fixed at 1 (natural units)
    """

    n_atoms: int = 2000
    interaction_tt: float = DEFAULT_U0
    interaction_tf: float = DEFAULT_U0
    temperature: float = 0.0
    trap_frequency: float = 1.0

    def __post_init__(self) -> None:
        _require(self.n_atoms >= 1, "n_atoms must be >= 1")
        _require(self.interaction_tt >= 0, "interaction_tt must be >= 0 (repulsive)")
        _require(self.interaction_tf >= 0, "interaction_tf must be >= 0 (repulsive)")
        _require(self.temperature >= 0, "temperature must be >= 0")
        _require(self.trap_frequency == 1.0, "trap_frequency is fixed at 1 (natural units)")

    @property
    def g_tt(self) -> float:
        """Mean-field coupling per pair entering the GPE/BdG equations."""
        return self.interaction_tt / (2.0 * self.n_atoms)

    @property
    def g_tf(self) -> float:
        """Trapped-free mean-field coupling per pair (output-mode shift)."""
        return self.interaction_tf / (2.0 * self.n_atoms)


@dataclass(frozen=True)
class SpatialGrid:
    """Hard-wall box [-L/2, L/2] discretized on N_x - 1 interior nodes.

    The walls sit at +-extent/2; node spacing is extent/n_points, and the node
    set is exactly symmetric about x = 0 (x = 0 itself is a node for even
    n_points).  Trapped wave functions vanish at the walls.
    """

    extent: float = 40.0
    n_points: int = 1024

    def __post_init__(self) -> None:
        _require(self.extent > 0, "extent must be positive")
        _require(self.n_points >= 16, "n_points must be >= 16")
        _require(self.n_points % 2 == 0, "n_points must be even (grid symmetric about 0)")

    @property
    def spacing(self) -> float:
        return self.extent / self.n_points

    def coordinates(self) -> np.ndarray:
        """Interior node coordinates; x[m-1-i] == -x[i] exactly."""
        n = self.n_points
        return self.spacing * (np.arange(1, n) - n // 2)


@dataclass(frozen=True)
class OutputModeGrid:
    """Free output modes: two branches +-k(omega), k = sqrt(2*omega).

    The density of momentum states per unit energy is fixed at rho(omega) = 1
    in total, split 1/2 per branch, so each energy sample carries exactly two
    branch modes of combined weight 1.
    """

    omega_max: float = 64.0
    n_omega: int = 2048

    #: total density of states per unit energy (both branches)
    density_of_states: float = field(default=1.0, init=False)
    branches: tuple[int, int] = field(default=(+1, -1), init=False)

    def __post_init__(self) -> None:
        _require(self.omega_max > 0, "omega_max must be positive")
        _require(self.n_omega >= 16, "n_omega must be >= 16")

    @staticmethod
    def wavenumber(omega):
        return np.sqrt(2.0 * np.asarray(omega, dtype=float))

    def energies(self) -> np.ndarray:
        """Uniform background energy samples (open interval, no omega = 0)."""
        step = self.omega_max / self.n_omega
        return step * (np.arange(self.n_omega) + 0.5)


class SimSetup:
    """Validated, immutable bundle of grids and precomputed operators.

    Holds the interior coordinates, the trap potential x^2/2, the exact
    hard-wall (sine-basis) kinetic matrix, and unit conversions.  Safe to
    share read-only across workers.
    """

    def __init__(self, params: PhysicalParams, grid: SpatialGrid,
                 modes: OutputModeGrid):
        self.params = params
        self.grid = grid
        self.modes = modes
        self.x = grid.coordinates()
        self.dx = grid.spacing
        self.potential = 0.5 * self.x**2
        n = grid.n_points
        # sine-basis wavenumbers k_m = pi*m/L, m = 1..N_x-1; kinetic energies
        self._k_sine = np.pi * np.arange(1, n) / grid.extent
        self.kinetic_eigenvalues = 0.5 * self._k_sine**2
        self._kinetic_dense: np.ndarray | None = None
        self.display_length = DISPLAY_LENGTH

    # -- operators ---------------------------------------------------------

    @property
    def n_interior(self) -> int:
        return self.grid.n_points - 1

    def kinetic_matrix(self) -> np.ndarray:
        """Dense -(1/2) d^2/dx^2 with hard walls, exact on the sine basis."""
        if self._kinetic_dense is None:
            n = self.grid.n_points
            i = np.arange(1, n)
            s = np.sqrt(2.0 / n) * np.sin(np.pi * np.outer(i, i) / n)
            self._kinetic_dense = (s * self.kinetic_eigenvalues) @ s.T
        return self._kinetic_dense

    def apply_kinetic(self, psi: np.ndarray) -> np.ndarray:
        """Fast kinetic application via the orthogonal sine transform."""
        c = dst(psi, type=1) / (2.0 * self.grid.n_points)
        return dst(c * self.kinetic_eigenvalues, type=1)

    def sine_step_factors(self, dtau: float) -> np.ndarray:
        """exp(-dtau * kinetic) multipliers in the sine basis."""
        return np.exp(-dtau * self.kinetic_eigenvalues)

    def propagate_kinetic(self, psi: np.ndarray, factors: np.ndarray) -> np.ndarray:
        c = dst(psi, type=1) / (2.0 * self.grid.n_points)
        return dst(c * factors, type=1)

    # -- quadrature and units ----------------------------------------------

    def integrate(self, f: np.ndarray) -> complex | float:
        """Grid quadrature; exact trapezoid given hard-wall zero boundaries."""
        return self.dx * np.sum(f, axis=-1)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.dx * np.sum(np.abs(f) ** 2)))

    def to_display_length(self, x_natural):
        return np.asarray(x_natural) / DISPLAY_LENGTH

    def from_display_length(self, x_display):
        return np.asarray(x_display) * DISPLAY_LENGTH


def build_setup(params: PhysicalParams, grid: SpatialGrid | None = None,
                modes: OutputModeGrid | None = None) -> SimSetup:
    """Validate a scenario and precompute its grids and stencils."""
    if grid is None:
        grid = SpatialGrid()
    if modes is None:
        modes = OutputModeGrid()
    return SimSetup(params, grid, modes)


# ---------------------------------------------------------------------------
# Flat key=value configuration files
# ---------------------------------------------------------------------------

#: key -> (python type, default, description).  Symbols follow the standard
#: notation: N_t, U0, U1, T, L, N_x, lambda, Delta_em, k_em.
CONFIG_KEYS: dict[str, tuple[type, object, str]] = {
    "n_atoms": (int, 2000, "total atom number N_t"),
    "interaction_tt": (float, DEFAULT_U0, "trapped-trapped strength U0 [hw*sqrt(2 hbar/m w)]"),
    "interaction_tf": (float, DEFAULT_U0, "trapped-free strength U1 (= U0 by default)"),
    "temperature": (float, 0.0, "temperature T [hbar*omega/k_B]"),
    "extent": (float, 40.0, "box length L, natural lengths"),
    "n_points": (int, 1024, "grid subdivisions N_x (N_x - 1 interior nodes)"),
    "omega_max": (float, 64.0, "output-mode energy cutoff"),
    "n_omega": (int, 2048, "background energy samples for output quadratures"),
    "coupling_amplitude": (float, 0.5, "uniform coupling amplitude lambda [omega]"),
    "detuning": (float, 0.0, "electromagnetic detuning Delta_em [omega]"),
    "kick": (float, 0.0, "momentum kick k_em [1/length]"),
    "e_cut": (float, 0.0, "excitation cutoff; 0 -> max(10, 5T) default"),
    "mixing": (float, 0.3, "self-consistency damping for nbar"),
    "time": (float, 100.0, "observation time for fields/coherence"),
    "t_max": (float, 200.0, "final time for population trajectories"),
    "n_times": (int, 201, "trajectory sample count"),
    "x1": (float, 0.0, "reference point x_1 for the two-point coherence"),
    "channel_weight_floor": (float, 1e-8, "relative channel-weight cut for field sums"),
}


def parse_config(path: str | Path) -> dict:
    """Read a flat key=value file; unknown keys are an error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    values: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = CONFIG_KEYS[key][0]
        try:
            values[key] = typ(text.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def apply_overrides(values: dict, overrides: list[str]) -> dict:
    """Apply repeatable KEY=VALUE command-line overrides."""
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be KEY=VALUE, got {item!r}")
        key, _, text = item.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = CONFIG_KEYS[key][0](text.strip())
    return out


def config_defaults() -> dict:
    return {key: default for key, (_, default, _) in CONFIG_KEYS.items()}


def setup_from_config(values: dict) -> SimSetup:
    merged = config_defaults()
    merged.update(values)
    params = PhysicalParams(
        n_atoms=merged["n_atoms"],
        interaction_tt=merged["interaction_tt"],
        interaction_tf=merged["interaction_tf"],
        temperature=merged["temperature"],
    )
    grid = SpatialGrid(extent=merged["extent"], n_points=merged["n_points"])
    modes = OutputModeGrid(omega_max=merged["omega_max"], n_omega=merged["n_omega"])
    return build_setup(params, grid, modes)
