"""Scenario runner: every module exposed as a deterministic command.

Commands write CSV data files plus a JSON run manifest into the output
directory.  Converged trap solutions are cached on disk keyed by a parameter
hash, so figure commands after the first `hfb` run are cheap.  Identical
scenario + config produce byte-identical CSV output (fixed summation orders,
no wall-clock content in the data files).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (CONFIG_KEYS, ConfigError, apply_overrides,
                     config_defaults, parse_config, setup_from_config)
from .hfb import (ConvergenceError, HfbSolution, default_e_cut, load_solution,
                  save_solution, self_consistent_solve)
from .outcoupling import (CouplingSpec, CoverageError, build_channels,
                          golden_rule_rates, matrix_elements, output_field,
                          spectral_width_estimates)
from .coherence import coherence_result
from .dynamics import decay_rates, evolve_adiabatic
from .oracle import (fit_decay_rate, integrate_coupled_modes,
                     truncated_system_from_table)

#: coupling amplitude used for each figure detuning
DETUNING_COUPLING = {-5.0: 0.5, 0.0: 0.2, 8.0: 2.0}

#: (temperature, detuning) cases for the coherence and evolution figures
FIGURE_CASES = [(10.0, 0.0), (150.0, 0.0), (150.0, -5.0), (150.0, 8.0)]


def _fmt(value) -> str:
    """Shortest round-trip decimal; empty field for missing values."""
    if value is None:
        return ""
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(out_dir: Path, command: str, config: dict, derived: dict,
                   results: dict, timings: dict) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": config,
        "derived_defaults": derived,
        "results": results,
        "timings_seconds": timings,
        "units": {
            "internal": "natural trap units (hbar = m = omega = k_B = 1)",
            "display_length_unit": 2.0,
            "note": "CSV lengths are natural; divide by 2 for display units",
        },
    }
    (out_dir / f"{command}_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Cached trap solutions
# ---------------------------------------------------------------------------

def _solution_key(cfg: dict, temperature: float) -> str:
    payload = {
        "n_atoms": cfg["n_atoms"],
        "interaction_tt": cfg["interaction_tt"],
        "interaction_tf": cfg["interaction_tf"],
        "temperature": temperature,
        "extent": cfg["extent"],
        "n_points": cfg["n_points"],
        "e_cut": cfg["e_cut"] or default_e_cut(temperature),
        "mixing": cfg["mixing"],
        "tolerances": {"mu": 1e-6, "nbar": 1e-6, "gpe": 1e-8},
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def ensure_solution(cfg: dict, temperature: float,
                    out_dir: Path) -> tuple[HfbSolution, dict]:
    """Load the cached solution for these parameters or solve and cache it."""
    cache_dir = out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = _solution_key(cfg, temperature)
    path = cache_dir / f"hfb_{key}.npz"
    if path.exists():
        return load_solution(path), {"cache": "hit", "key": key}
    local = dict(cfg)
    local["temperature"] = temperature
    local["omega_max"] = cfg["omega_max"]
    setup = setup_from_config(local)
    e_cut = cfg["e_cut"] or None
    solution = self_consistent_solve(setup.params, setup, e_cut=e_cut,
                                     mixing=cfg["mixing"])
    save_solution(path, solution)
    return solution, {"cache": "miss", "key": key}


def _coupling(cfg: dict, detuning: float, amplitude: float | None = None) -> CouplingSpec:
    lam = amplitude if amplitude is not None else cfg["coupling_amplitude"]
    return CouplingSpec(amplitude=lam, detuning=detuning, kick=cfg["kick"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_hfb(cfg: dict, out_dir: Path) -> dict:
    t0 = time.perf_counter()
    solution, cache = ensure_solution(cfg, cfg["temperature"], out_dir)
    elapsed = time.perf_counter() - t0
    setup = solution.setup
    write_csv(out_dir / "hfb_modes.csv",
              ["j", "energy", "occupation", "v_weight"],
              [(str(j + 1), m.energy, m.occupation, m.v_weight(setup.dx))
               for j, m in enumerate(solution.modes)])
    write_csv(out_dir / "hfb_density.csv",
              ["x", "condensate_density", "nbar"],
              zip(setup.x, solution.n0 * solution.condensate.psi0**2,
                  solution.nbar))
    results = {
        "mu": solution.mu,
        "n0": solution.n0,
        "noncondensate_fraction": solution.noncondensate_fraction,
        "n_modes": len(solution.modes),
        "iterations": solution.iterations,
        **cache,
    }
    return {"results": results, "timings": {"solve": elapsed},
            "derived": {"e_cut": solution.e_cut}}


def cmd_spectrum(cfg: dict, out_dir: Path) -> dict:
    """Golden-rule output-rate scan over detuning at both temperatures."""
    detunings = np.round(np.arange(-10.0, 12.0 + 1e-9, 0.25), 6)
    timings, results = {}, {}
    for temp in (10.0, 150.0):
        t0 = time.perf_counter()
        trap, cache = ensure_solution(cfg, temp, out_dir)
        rows = []
        for delta in detunings:
            coupling = _coupling(cfg, float(delta))
            table = matrix_elements(coupling, trap)
            rates = golden_rule_rates(table)
            rows.append((float(delta), rates.condensate, rates.sqe, rates.pb,
                         rates.total))
        name = f"spectrum_T{int(temp)}.csv"
        write_csv(out_dir / name,
                  ["delta_em", "rate_condensate", "rate_sqe", "rate_pb",
                   "rate_total"], rows)
        timings[f"T{int(temp)}"] = time.perf_counter() - t0
        results[f"T{int(temp)}"] = {"mu": trap.mu, "file": name, **cache}
    return {"results": results, "timings": timings,
            "derived": {"detuning_step": 0.25,
                        "coupling_amplitude": cfg["coupling_amplitude"]}}


def cmd_density(cfg: dict, out_dir: Path) -> dict:
    """Output density profiles for the three reference coupling cases."""
    timings, results = {}, {}
    trap, cache = ensure_solution(cfg, 150.0, out_dir)
    t_obs = cfg["time"]
    for delta, lam in sorted(DETUNING_COUPLING.items()):
        t0 = time.perf_counter()
        coupling = _coupling(cfg, delta, lam)
        table = matrix_elements(coupling, trap)
        fields = output_field(table, t_obs,
                              weight_floor=cfg["channel_weight_floor"])
        name = f"density_delta{delta:+g}.csv"
        write_csv(out_dir / name,
                  ["x", "n_coherent", "n_thermal", "n_total"],
                  zip(fields.x, fields.condensate_density(),
                      fields.thermal_density(), fields.density()))
        timings[f"delta{delta:+g}"] = time.perf_counter() - t0
        results[f"delta{delta:+g}"] = {
            "file": name, "coupling_amplitude": lam, "time": t_obs,
            "n_channels_kept": len(fields.labels)}
    results.update(cache)
    return {"results": results, "timings": timings,
            "derived": {"weight_floor": cfg["channel_weight_floor"],
                        "field_normalization": "continuum"}}


def _coherence_cases(cfg: dict, out_dir: Path, which: str) -> dict:
    timings, results = {}, {}
    for temp, delta in FIGURE_CASES:
        t0 = time.perf_counter()
        trap, cache = ensure_solution(cfg, temp, out_dir)
        lam = DETUNING_COUPLING[delta]
        coupling = _coupling(cfg, delta, lam)
        table = matrix_elements(coupling, trap)
        fields = output_field(table, cfg["time"],
                              weight_floor=cfg["channel_weight_floor"])
        coh = coherence_result(fields, x1=cfg["x1"])
        tag = f"T{int(temp)}_delta{delta:+g}"
        if which == "g1":
            name = f"g1_{tag}.csv"
            g1v = coh.g1_values
            write_csv(out_dir / name, ["x2", "re_g1", "im_g1", "abs_g1"],
                      [(x, np.nan if node else v.real,
                        np.nan if node else v.imag,
                        np.nan if node else abs(v))
                       for x, v, node in zip(coh.x, g1v, coh.g1_nodes)])
        else:
            name = f"g2_{tag}.csv"
            write_csv(out_dir / name, ["x", "g2"],
                      [(x, np.nan if node else v)
                       for x, v, node in zip(coh.x, coh.g2_values,
                                             coh.g2_nodes)])
        timings[tag] = time.perf_counter() - t0
        results[tag] = {"file": name, "coupling_amplitude": lam, **cache}
    return {"results": results, "timings": timings,
            "derived": {"time": cfg["time"], "x1": cfg["x1"],
                        "field_normalization": "continuum"}}


def cmd_g1(cfg: dict, out_dir: Path) -> dict:
    return _coherence_cases(cfg, out_dir, "g1")


def cmd_g2(cfg: dict, out_dir: Path) -> dict:
    return _coherence_cases(cfg, out_dir, "g2")


def cmd_evolve(cfg: dict, out_dir: Path) -> dict:
    """Adiabatic population trajectories for the four reference cases."""
    timings, results = {}, {}
    t_grid = np.linspace(0.0, cfg["t_max"], cfg["n_times"])
    for temp, delta in FIGURE_CASES:
        t0 = time.perf_counter()
        trap, cache = ensure_solution(cfg, temp, out_dir)
        lam = DETUNING_COUPLING[delta]
        table = matrix_elements(_coupling(cfg, delta, lam), trap)
        rates = decay_rates(table, with_level_shifts=False)
        traj = evolve_adiabatic(rates, trap, t_grid)
        tag = f"T{int(temp)}_delta{delta:+g}"
        name = f"evolve_{tag}.csv"
        excited = traj.n_modes @ (rates.u_weights + rates.v_weights) \
            + np.sum(rates.v_weights)
        write_csv(out_dir / name,
                  ["t", "n0", "n_excited_particles", "n_trap", "e_trap",
                   "n_out_coherent", "n_out_sqe", "n_out_pb"],
                  zip(traj.t, traj.n0, excited, traj.n_trap, traj.e_trap,
                      traj.n_out_coherent, traj.n_out_sqe, traj.n_out_pb))
        timings[tag] = time.perf_counter() - t0
        results[tag] = {"file": name, "coupling_amplitude": lam,
                        "closure_error": traj.closure_error(), **cache}
    return {"results": results, "timings": timings,
            "derived": {"t_max": cfg["t_max"], "n_times": cfg["n_times"],
                        "odes": "RK45 rtol=1e-9"}}


def cmd_oracle_check(cfg: dict, out_dir: Path) -> dict:
    """Desk-scale validation against the exact coupled-mode dynamics."""
    from .config import OutputModeGrid, PhysicalParams, SpatialGrid, build_setup

    t0 = time.perf_counter()
    params = PhysicalParams(n_atoms=2000, interaction_tt=0.0,
                            interaction_tf=0.0, temperature=0.0)
    setup = build_setup(params, SpatialGrid(extent=20.0, n_points=256),
                        OutputModeGrid(omega_max=32.0, n_omega=1024))
    trap = self_consistent_solve(params, setup)
    amp = 0.01 / np.sqrt(setup.grid.extent)     # Lambda = 0.01
    coupling = CouplingSpec(amplitude=amp, detuning=1.0 - trap.mu)
    table = matrix_elements(coupling, trap)
    rates = golden_rule_rates(table)
    gamma0 = 0.5 * rates.rates[0] / trap.n0

    total = 2.0 * gamma0                     # population decay rate
    system = truncated_system_from_table(table, ["0"])
    times = np.linspace(0.0, 10.0 / total, 101)
    reference = integrate_coupled_modes(system, times)
    fitted = fit_decay_rate(times, reference.channel_populations[:, 0],
                            (5.0 / total, 10.0 / total))
    write_csv(out_dir / "oracle_decay.csv",
              ["t", "n0", "n_excited_particles", "n_trap", "e_trap",
               "n_out_coherent", "n_out_sqe", "n_out_pb"],
              [(t, n, 0.0, n, (n - trap.n0) * trap.mu, trap.n0 - n, 0.0, 0.0)
               for t, n in zip(times, reference.channel_populations[:, 0])])
    decay_error = abs(fitted - total) / total

    results = {
        "gamma0_golden_rule": gamma0,
        "fitted_decay_rate": fitted,
        "expected_decay_rate": total,
        "relative_error": decay_error,
        "sigma_norm_drift": reference.sigma_norm_drift,
        "weak_coupling": bool(rates.weak_coupling),
        "pass_5pc": bool(decay_error < 0.05),
    }
    (out_dir / "oracle_report.json").write_text(
        json.dumps(results, indent=2, sort_keys=True) + "\n")
    return {"results": results,
            "timings": {"total": time.perf_counter() - t0},
            "derived": {"bath": "comb width 40*gamma, spacing gamma/10"}}


COMMANDS = {
    "hfb": cmd_hfb,
    "spectrum": cmd_spectrum,
    "density": cmd_density,
    "g1": cmd_g1,
    "g2": cmd_g2,
    "evolve": cmd_evolve,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomlaser",
        description="Weak output coupling from a trapped finite-temperature "
                    "Bose gas: trap states, spectra, coherence, dynamics.")
    parser.add_argument("command", choices=sorted(COMMANDS),
                        help="scenario to run")
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key=value configuration file")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (created if missing)")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (best effort, recorded)")
    parser.add_argument("--list-keys", action="store_true",
                        help="print the configuration keys and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.list_keys:
        for key, (typ, default, doc) in CONFIG_KEYS.items():
            print(f"{key:24s} {typ.__name__:6s} default={default!r:12} {doc}")
        return 0
    try:
        cfg = config_defaults()
        if args.config is not None:
            cfg.update(parse_config(args.config))
        cfg = apply_overrides(cfg, args.overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.threads is not None:
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            pass

    out_dir = args.out
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 1

    try:
        t0 = time.perf_counter()
        payload = COMMANDS[args.command](cfg, out_dir)
        payload.setdefault("timings", {})["wall_total"] = \
            time.perf_counter() - t0
        derived = payload.get("derived", {})
        derived.setdefault("threads_requested", args.threads)
        write_manifest(out_dir, args.command.replace("-", "_"), cfg, derived,
                       payload.get("results", {}), payload["timings"])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, CoverageError, RuntimeError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
