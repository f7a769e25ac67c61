import numpy as np
import pytest
from scipy.integrate import quad

import atomlaser as al
from atomlaser.outcoupling import (CouplingSpec, _kernel_window,
                                   bound_component, d2_kernel, d_kernel,
                                   d_kernel_sq, golden_rule_rates,
                                   matrix_elements, output_field,
                                   output_spectrum, raman_effective_coupling,
                                   select_field_channels,
                                   spectral_width_estimates, steady_field)


# ---------------------------------------------------------------------------
# Effective two-photon coupling
# ---------------------------------------------------------------------------

def test_raman_direct_value():
    assert raman_effective_coupling(1.0, 1.0, 10.0) == pytest.approx(0.1)


def test_raman_vanishing_drive_and_linearity():
    assert raman_effective_coupling(0.0, 1.0, 10.0) == 0.0
    one = raman_effective_coupling(0.3, 0.7, 5.0)
    two = raman_effective_coupling(0.3, 1.4, 5.0)
    assert two == pytest.approx(2.0 * one)


def test_raman_conjugates_first_argument():
    val = raman_effective_coupling(1j, 1.0, 2.0)
    assert val == pytest.approx(-0.5j)


def test_raman_resonant_intermediate_rejected():
    with pytest.raises(ValueError):
        raman_effective_coupling(1.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# Matrix elements
# ---------------------------------------------------------------------------

def test_matrix_element_zero_momentum_is_plain_overlap(toy_warm):
    setup = toy_warm.setup
    coup = CouplingSpec(amplitude=0.3, detuning=0.0)
    table = matrix_elements(coup, toy_warm)
    lam00 = table.element("0", 0.0)
    want = 0.3 * float(setup.integrate(toy_warm.condensate.psi0))
    assert lam00 == pytest.approx(want, rel=1e-12)


def test_matrix_element_parity_selection(toy_warm):
    """Odd trapped function, k = 0, no kick: element vanishes."""
    table = matrix_elements(CouplingSpec(amplitude=1.0), toy_warm)
    dipole = toy_warm.modes[0].u                      # odd mode
    assert abs(np.sum(dipole)) < 1e-8 * np.max(np.abs(dipole))
    assert abs(table.element("1+", 0.0)) < 1e-10


def test_matrix_element_branch_symmetry_even_function(toy_warm):
    table = matrix_elements(CouplingSpec(amplitude=0.5), toy_warm)
    for label in ("0", "2+", "1-"):
        lam = table.fourier([label], np.array([1.3, -1.3]))[0]
        assert abs(lam[0]) == pytest.approx(abs(lam[1]), rel=1e-10)


def test_matrix_element_against_adaptive_quadrature_oracle():
    """Grid quadrature vs scipy.integrate.quad on an analytic integrand."""
    setup = al.build_setup(al.PhysicalParams(interaction_tt=0.0, n_atoms=100),
                           al.SpatialGrid(extent=20.0, n_points=256))
    params = setup.params
    cond = al.solve_gpe(setup, params, np.zeros(setup.n_interior), 100.0)
    sol = al.HfbSolution(setup=setup, condensate=cond, modes=[],
                         nbar=np.zeros(setup.n_interior), temperature=0.0,
                         e_cut=1.0)
    k_em = 0.7
    table = matrix_elements(CouplingSpec(amplitude=0.4, kick=k_em), sol)
    rng = np.random.default_rng(11)
    for k in rng.uniform(-4.0, 4.0, 5):
        got = table.element("0", float(k))
        psi = lambda x: np.pi**-0.25 * np.exp(-x**2 / 2.0)
        re = quad(lambda x: 0.4 * psi(x) * np.cos((k - k_em) * x),
                  -10.0, 10.0, epsabs=1e-12, limit=400)[0]
        im = quad(lambda x: -0.4 * psi(x) * np.sin((k - k_em) * x),
                  -10.0, 10.0, epsabs=1e-12, limit=400)[0]
        assert got == pytest.approx(re + 1j * im, abs=1e-8)


def test_coverage_error_lists_uncovered_channels(toy_warm):
    small = al.OutputModeGrid(omega_max=3.0, n_omega=64)
    table = matrix_elements(CouplingSpec(amplitude=0.1, detuning=0.0),
                            toy_warm, small)
    with pytest.raises(al.CoverageError, match=r"\d\+"):
        table.on_grid()


# ---------------------------------------------------------------------------
# Time-energy kernels
# ---------------------------------------------------------------------------

def test_kernel_resonant_limit():
    assert d_kernel(2.0, 2.0, 7.5) == pytest.approx(7.5)
    assert abs(d_kernel(2.0, 2.0 + 1e-12, 7.5) - 7.5) < 1e-10


def test_kernel_square_at_resonance():
    assert d_kernel_sq(3.0, 3.0, 11.0) == pytest.approx(121.0)


def test_kernel_integral_2pi_t():
    """integral |D|^2 domega over the line = 2 pi t, checked to 0.1%."""
    t = 13.0
    w = np.linspace(-400.0, 400.0, 2_000_001)
    val = np.trapezoid(d_kernel_sq(w, 0.0, t), w)
    assert val == pytest.approx(2.0 * np.pi * t, rel=1e-3)


def test_kernel_identity_explicit_sinc_form(rng):
    w = rng.uniform(-50.0, 50.0, 10_000)
    w0 = rng.uniform(-5.0, 5.0, 10_000)
    t = rng.uniform(0.0, 50.0, 10_000)
    direct = np.abs(d_kernel(w, w0, t)) ** 2
    explicit = d_kernel_sq(w, w0, t)
    d = w - w0
    reference = np.where(
        np.abs(d) > 1e-12,
        (np.sin(d * t / 2.0) / (d / 2.0 + (np.abs(d) <= 1e-12))) ** 2,
        t**2)
    np.testing.assert_allclose(direct, explicit, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(explicit, reference, rtol=1e-9, atol=1e-9)


def test_kernel_second_order_identity(rng):
    w = rng.uniform(-40.0, 40.0, 5000)
    w0 = rng.uniform(-5.0, 5.0, 5000)
    t = rng.uniform(0.0, 30.0, 5000)
    lhs = np.abs(d_kernel(w, w0, t)) ** 2
    rhs = 2.0 * np.real(d2_kernel(w, w0, t))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_kernel_rejects_negative_time():
    with pytest.raises(ValueError):
        d_kernel(1.0, 1.0, -0.1)


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def warm_table(toy_warm):
    return matrix_elements(CouplingSpec(amplitude=0.05, detuning=0.0),
                           toy_warm)


def test_spectrum_zero_at_t0(warm_table):
    spec = output_spectrum(warm_table, 0.0)
    assert float(np.max(spec.total)) == 0.0


def test_spectrum_resonance_bin_single_channel(warm_table):
    t = 4.0
    ch = warm_table.channel("0")
    w_res = warm_table.omega_out(ch)
    spec = output_spectrum(warm_table, t, omega=np.array([w_res]))
    i = spec.labels.index("0")
    lp, lm = warm_table.resonant_elements(ch)
    want = abs(lp) ** 2 * t**2 * ch.population
    assert spec.per_channel[i, 0, 0] == pytest.approx(want, rel=1e-12)


def test_spectrum_branch_symmetry_and_total(warm_table):
    spec = output_spectrum(warm_table, 3.0)
    np.testing.assert_allclose(spec.per_channel[:, :, 0],
                               spec.per_channel[:, :, 1], rtol=1e-9,
                               atol=1e-300)
    np.testing.assert_array_equal(spec.total,
                                  spec.per_channel.sum(axis=0))


def test_spectrum_long_time_matches_golden_rule(toy_warm):
    """(1/t) sum_k n_k^eta approaches the channel rate within 2% at t=200.

    Each channel is probed with its resonance inside its own matrix-element
    band (the constant-rate regime presumes that).
    """
    modes = al.OutputModeGrid(omega_max=16.0, n_omega=512)
    t = 200.0
    n = int(np.ceil(16.0 * t / np.pi * 10))
    omega = np.linspace(1e-9, 16.0, n)
    k = al.OutputModeGrid.wavenumber(omega)
    for label, e_off in (("0", 0.0), ("1+", toy_warm.modes[0].energy),
                         ("2+", toy_warm.modes[1].energy)):
        coup = CouplingSpec(amplitude=0.05,
                            detuning=0.4 - toy_warm.mu - e_off)
        table = matrix_elements(coup, toy_warm, modes)
        rates = golden_rule_rates(table)
        ch = table.channel(label)
        lam = table.fourier([label], np.concatenate([k, -k]))[0]
        f = 0.5 * (np.abs(lam[:n]) ** 2 + np.abs(lam[n:]) ** 2)
        kern = d_kernel_sq(omega, table.omega_out(ch), t)
        total = np.trapezoid(f * kern, omega) * ch.population
        i = rates.labels.index(label)
        assert total / t == pytest.approx(rates.rates[i], rel=0.02)


# ---------------------------------------------------------------------------
# Golden-rule rates
# ---------------------------------------------------------------------------

def test_rates_condensate_threshold(toy_warm):
    mu = toy_warm.mu
    below = golden_rule_rates(matrix_elements(
        CouplingSpec(amplitude=0.1, detuning=-mu - 0.05), toy_warm))
    above = golden_rule_rates(matrix_elements(
        CouplingSpec(amplitude=0.1, detuning=-mu + 0.05), toy_warm))
    assert below.condensate == 0.0
    assert above.condensate > 0.0


def test_rates_closed_channels_all_zero(toy_warm):
    """Very negative detuning: condensate and pair-breaking all closed."""
    e_max = toy_warm.modes[-1].energy
    delta = -toy_warm.mu - e_max - 1.0
    rates = golden_rule_rates(matrix_elements(
        CouplingSpec(amplitude=0.1, detuning=delta), toy_warm))
    assert rates.condensate == 0.0
    assert rates.pb == 0.0
    assert rates.sqe == 0.0        # every SQE resonance below zero too


def test_rates_aggregates_sum(toy_warm):
    rates = golden_rule_rates(matrix_elements(
        CouplingSpec(amplitude=0.1, detuning=0.0), toy_warm))
    assert rates.total == pytest.approx(
        rates.condensate + rates.sqe + rates.pb, rel=1e-12)
    assert np.all(rates.rates >= 0.0)


def test_weak_coupling_flag(toy_warm):
    bw = spectral_width_estimates(toy_warm, CouplingSpec(amplitude=1.0))[0]
    strong = CouplingSpec(amplitude=1.0)
    weak = CouplingSpec(amplitude=1e-4)
    assert not strong.is_weak(toy_warm.setup, bw)
    assert weak.is_weak(toy_warm.setup, bw)


# ---------------------------------------------------------------------------
# Output fields
# ---------------------------------------------------------------------------

def test_field_short_time_shape(toy_warm):
    """n_out^eta(x) tracks |lambda psi_eta t|^2 pointwise at short times."""
    coup = CouplingSpec(amplitude=0.05, detuning=0.0)
    table = matrix_elements(coup, toy_warm)
    bandwidth = spectral_width_estimates(toy_warm, coup)[0]
    t = 0.02 / bandwidth
    fields = output_field(table, t)
    lam = coup.profile(toy_warm.setup)
    for label, wave in [("0", toy_warm.condensate.psi0),
                        ("1+", toy_warm.modes[0].u)]:
        i = fields.labels.index(label)
        got = np.abs(fields.fields[i]) ** 2
        want = np.abs(lam * wave * t) ** 2
        assert float(np.max(np.abs(got - want))) < 0.01 * float(np.max(want))


def test_field_quadratic_then_linear_growth(toy_warm):
    """Total output grows as t^2 early, then linearly at the channel rate."""
    coup = CouplingSpec(amplitude=0.01, detuning=0.0)
    table = matrix_elements(coup, toy_warm)
    rates = golden_rule_rates(table)
    i0 = rates.labels.index("0")
    bandwidth = spectral_width_estimates(toy_warm, coup)[0]
    modes = al.OutputModeGrid(omega_max=16.0, n_omega=512)
    table16 = matrix_elements(coup, toy_warm, modes)

    def total_number(t):
        n = int(np.ceil(16.0 * max(t, 1.0) * 8 / np.pi))
        omega = np.linspace(1e-9, 16.0, n)
        k = al.OutputModeGrid.wavenumber(omega)
        lam = table16.fourier(["0"], np.concatenate([k, -k]))[0]
        f = 0.5 * (np.abs(lam[:omega.size]) ** 2 + np.abs(lam[omega.size:]) ** 2)
        kern = d_kernel_sq(omega, table16.omega_out(table16.channel("0")), t)
        return float(np.trapezoid(f * kern, omega) * table16.channel("0").population)

    t_short = 0.01 / bandwidth
    ratio = total_number(2 * t_short) / total_number(t_short)
    assert ratio == pytest.approx(4.0, rel=0.02)        # quadratic regime
    t_long = 150.0
    slope = (total_number(t_long + 25.0) - total_number(t_long)) / 25.0
    assert slope == pytest.approx(rates.rates[i0], rel=0.05)


def test_field_parseval_against_spectral_weights(toy_warm):
    coup = CouplingSpec(amplitude=0.05, detuning=0.0)
    table = matrix_elements(coup, toy_warm)
    t = 20.0
    k_res = np.sqrt(2.0 * table.omega_out(table.channel("0")))
    x = np.linspace(-1.6 * k_res * t - 40.0, 1.6 * k_res * t + 40.0, 4001)
    fields = output_field(table, t, x=x)
    nums = fields.channel_numbers()
    for label in ("0", "1+", "2+"):
        i = fields.labels.index(label)
        assert nums[i] == pytest.approx(fields.spectral_numbers[i], rel=0.01)


def test_field_density_decomposition(toy_warm):
    table = matrix_elements(CouplingSpec(amplitude=0.05, detuning=0.0),
                            toy_warm)
    fields = output_field(table, 10.0)
    total = fields.density()
    np.testing.assert_allclose(
        total, fields.condensate_density() + fields.thermal_density(),
        rtol=1e-12, atol=1e-300)
    assert np.all(total >= 0.0)


def test_steady_field_standing_wave_period(toy_warm):
    table = matrix_elements(CouplingSpec(amplitude=0.05, detuning=0.0),
                            toy_warm)
    k_res = table.resonant_wavenumber(table.channel("0"))
    x = np.linspace(4.0, 16.0, 6000)
    beam = steady_field(table, 100.0, x=x, labels=["0"])
    dens = np.abs(beam.fields[0]) ** 2
    d = dens - dens.mean()
    crossings = np.nonzero(np.diff(np.sign(d)))[0]
    period = 2.0 * float(np.mean(np.diff(x[crossings])))
    assert period == pytest.approx(np.pi / k_res, rel=0.02)


def test_field_coverage_error_reports_requirement(toy_warm):
    small = al.OutputModeGrid(omega_max=2.0, n_omega=64)
    table = matrix_elements(CouplingSpec(amplitude=0.05, detuning=0.0),
                            toy_warm, small)
    with pytest.raises(al.CoverageError, match="n_omega"):
        output_field(table, 50.0)


def test_kernel_window_caps():
    assert _kernel_window(2.0, 1000.0) == pytest.approx(20.0 * np.pi / 1000.0)
    assert _kernel_window(2.0, 1e-6) == 10.0
    assert _kernel_window(25.0, 1e-6) == 25.0


# ---------------------------------------------------------------------------
# Bound component
# ---------------------------------------------------------------------------

def test_bound_component_linearity(toy_warm):
    xq = np.array([0.0, 0.8])
    small = bound_component(matrix_elements(
        CouplingSpec(amplitude=0.01, detuning=0.0), toy_warm), ["0"], xq)
    double = bound_component(matrix_elements(
        CouplingSpec(amplitude=0.02, detuning=0.0), toy_warm), ["0"], xq)
    np.testing.assert_allclose(double["fields"]["0"],
                               2.0 * small["fields"]["0"], rtol=1e-10)


def test_bound_component_pv_against_epsilon_oracle(toy_warm):
    """Subtracted quadrature vs epsilon-regularized limit, within 1e-4."""
    coup = CouplingSpec(amplitude=0.05, detuning=0.0)
    table = matrix_elements(coup, toy_warm)
    xq = np.array([0.0, 0.5, 1.3])
    got = bound_component(table, ["0"], xq)["fields"]["0"]
    w0 = table.omega_out(table.channel("0"))
    kk = np.linspace(0.0, np.sqrt(2.0 * table.modes.omega_max), 300001)
    lamp = table.fourier(["0"], +kk)[0]
    lamm = table.fourier(["0"], -kk)[0]
    f = (np.exp(1j * np.outer(xq, kk)) * lamp
         + np.exp(-1j * np.outer(xq, kk)) * lamm) / (2.0 * np.pi)
    den = 0.5 * kk**2 - w0
    vals = []
    for eps in (0.02, 0.01, 0.005):
        vals.append(np.trapezoid(f * den / (den**2 + eps**2), kk, axis=1))
    r1 = (4.0 * vals[1] - vals[0]) / 3.0
    r2 = (4.0 * vals[2] - vals[1]) / 3.0
    oracle = (16.0 * r2 - r1) / 15.0
    assert float(np.max(np.abs(got - oracle))) < 1e-4


def test_bound_number_matches_estimate_within_factor_two(toy_warm):
    table = matrix_elements(CouplingSpec(amplitude=0.05, detuning=0.0),
                            toy_warm)
    out = bound_component(table, ["0"])
    ratio = out["condensate_bound_number"] / out["condensate_estimate"]
    assert 0.5 <= ratio <= 2.0


def test_bound_component_threshold_rejected(toy_warm):
    table = matrix_elements(
        CouplingSpec(amplitude=0.05, detuning=-toy_warm.mu), toy_warm)
    with pytest.raises(ValueError, match="threshold"):
        bound_component(table, ["0"])


# ---------------------------------------------------------------------------
# Spectral-width estimates
# ---------------------------------------------------------------------------

def test_width_case1_values(toy_ideal):
    # ideal-gas psi0 is the unit gaussian: r0 = 1/sqrt(2)
    both = spectral_width_estimates(toy_ideal, CouplingSpec(amplitude=1.0))
    assert both[0] == pytest.approx(1.0, rel=1e-6)
    assert both[1] == both[0]


def test_width_case2_kick(toy_ideal):
    r0 = 1.0 / np.sqrt(2.0)
    _, fine = spectral_width_estimates(
        toy_ideal, CouplingSpec(amplitude=1.0, kick=10.0))
    assert fine == pytest.approx(10.0 / (2.0 * r0), rel=1e-6)
    # narrower resonance than bandwidth by the factor |k_em| r0
    broad, _ = spectral_width_estimates(
        toy_ideal, CouplingSpec(amplitude=1.0, kick=10.0))
    assert fine / broad == pytest.approx(10.0 * r0, rel=1e-6)


def test_width_broad_condensate_limit(toy_warm):
    # wider condensate -> smaller widths; scale r0 via the formula directly
    setup = toy_warm.setup
    psi = toy_warm.condensate.psi0
    r0 = float(np.sqrt(setup.integrate(setup.x**2 * psi**2)))
    got = spectral_width_estimates(toy_warm, CouplingSpec(amplitude=1.0))[0]
    assert got == pytest.approx(1.0 / (2.0 * r0**2), rel=1e-12)
    assert got < 1.0          # interacting cloud broader than the ideal one
