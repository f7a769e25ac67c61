"""First- and second-order coherence of the output beam.

Both correlators are assembled from the per-channel output fields weighted by
the channel populations N_eta (N0, n_j, n_j + 1).  Points where the output
density vanishes carry no phase information; they are reported as NaN "nodes",
never interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hfb import HfbSolution
from .outcoupling import OutputFieldSet

#: relative density floor below which a point counts as a node
NODE_FLOOR = 1e-300


class CoherenceViolation(AssertionError):
    """A numerically evaluated coherence bound was violated."""


def _cross_term(fields: OutputFieldSet, i1: int, i2: int) -> complex:
    """sum_eta N_eta conj(Psi_eta(x1)) Psi_eta(x2) at grid indices."""
    f = fields.fields
    return complex(np.sum(fields.populations * np.conj(f[:, i1]) * f[:, i2]))


def g1(fields: OutputFieldSet, x1: float, x2: float,
       t2: float | None = None) -> complex:
    """Normalized first-order coherence between two points at equal time.

    Returns NaN when the density vanishes at either point (node).  The
    unequal-time variant is reserved but not implemented.
    """
    if t2 is not None and t2 != fields.t:
        raise NotImplementedError("unequal-time g1 is not implemented")
    i1 = int(np.argmin(np.abs(fields.x - x1)))
    i2 = int(np.argmin(np.abs(fields.x - x2)))
    dens = fields.density()
    n1, n2 = dens[i1], dens[i2]
    if n1 <= NODE_FLOOR or n2 <= NODE_FLOOR:
        return complex(np.nan, np.nan)
    num = _cross_term(fields, i1, i2)
    # Cauchy-Schwarz bound, asserted wherever g1 is evaluated
    if abs(num) ** 2 > n1 * n2 * (1.0 + 1e-9):
        raise CoherenceViolation(
            f"|sum N Psi* Psi|^2 = {abs(num)**2:.6e} exceeds "
            f"n(x1) n(x2) = {n1 * n2:.6e}")
    return complex(num / np.sqrt(n1 * n2))


def g1_profile(fields: OutputFieldSet, x1: float) -> np.ndarray:
    """g1(x1, x) over the whole field grid; nodes are NaN."""
    i1 = int(np.argmin(np.abs(fields.x - x1)))
    dens = fields.density()
    f = fields.fields
    num = np.tensordot(fields.populations, np.conj(f[:, i1])[:, None] * f,
                       axes=(0, 0))
    bound = dens[i1] * dens
    if np.any(np.abs(num) ** 2 > bound * (1.0 + 1e-9) + 1e-300):
        worst = float(np.max(np.abs(num) ** 2 - bound))
        raise CoherenceViolation(
            f"Cauchy-Schwarz violated by {worst:.3e} on the g1 profile")
    ok = (dens > NODE_FLOOR) & (dens[i1] > NODE_FLOOR)
    out = np.full(fields.x.size, np.nan + 0j, dtype=complex)
    out[ok] = num[ok] / np.sqrt(dens[i1] * dens[ok])
    return out


def g2(fields: OutputFieldSet, x: float) -> float:
    """Equal-time, equal-point second-order coherence.

    g2 = 1 + [2 Re(n0 ntilde + conj(Psi_out^0)^2 mtilde) + ntilde^2
              + |mtilde|^2] / n_out^2,
    with Psi_out^0 the population-weighted condensate amplitude.  Nodes are
    NaN.
    """
    i = int(np.argmin(np.abs(fields.x - x)))
    return float(g2_profile(fields)[i])


def g2_profile(fields: OutputFieldSet) -> np.ndarray:
    """g2(x) over the whole field grid; nodes are NaN."""
    n0 = fields.condensate_density()
    ntil = fields.thermal_density()
    mtil = fields.pair_density()
    psi0 = fields.condensate_amplitude()
    n_out = n0 + ntil
    fluct = (2.0 * np.real(n0 * ntil + np.conj(psi0) ** 2 * mtil)
             + ntil**2 + np.abs(mtil) ** 2)
    out = np.full(fields.x.size, np.nan)
    ok = n_out > NODE_FLOOR
    out[ok] = 1.0 + fluct[ok] / n_out[ok] ** 2
    return out


@dataclass
class CoherenceResult:
    """g1 against a reference point and g2 on the grid, with node masks."""

    x: np.ndarray
    x1: float
    g1_values: np.ndarray
    g2_values: np.ndarray
    n_out: np.ndarray
    n_out_condensate: np.ndarray
    n_out_thermal: np.ndarray
    m_out_pair: np.ndarray
    t: float

    @property
    def g1_nodes(self) -> np.ndarray:
        return ~np.isfinite(self.g1_values.real)

    @property
    def g2_nodes(self) -> np.ndarray:
        return ~np.isfinite(self.g2_values)


def coherence_result(fields: OutputFieldSet, x1: float = 0.0) -> CoherenceResult:
    """Bundle g1(x1, .), g2(.) and the component densities at one time."""
    vals1 = g1_profile(fields, x1)
    vals2 = g2_profile(fields)
    return CoherenceResult(
        x=fields.x.copy(), x1=x1, g1_values=vals1, g2_values=vals2,
        n_out=fields.density(), n_out_condensate=fields.condensate_density(),
        n_out_thermal=fields.thermal_density(),
        m_out_pair=fields.pair_density(), t=fields.t)
