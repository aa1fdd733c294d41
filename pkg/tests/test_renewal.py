import numpy as np
import pytest
import scipy.integrate
import scipy.stats
import sympy as sp

from memkernel import renewal as rn
from memkernel.quadrature import TimeGrid, cumulative


def test_exponential_values():
    w = rn.Exponential(1.0)
    assert abs(rn.density(w, 1.0) - np.exp(-1)) < 1e-15
    assert abs(rn.survival(w, 1.0) - np.exp(-1)) < 1e-15
    f_hat, g_hat = rn.laplace(w, 2.0)
    assert abs(f_hat - 1 / 3) < 1e-15 and abs(g_hat - 1 / 3) < 1e-15


def test_erlang2_against_symbolic_integration():
    lam = 1.7
    t, s = sp.symbols("t s", positive=True)
    f = lam**2 * s * sp.exp(-lam * s)
    g = 1 - sp.integrate(f, (s, 0, t))
    w = rn.erlang(2, lam)
    for tv in (0.0, 0.3, 1.0, 4.2):
        assert abs(w.density(tv) - float(f.subs(s, tv))) < 1e-14
        assert abs(w.survival(tv) - float(g.subs(t, tv))) < 1e-14
        assert abs(w.survival(tv) - (1 + lam * tv) * np.exp(-lam * tv)) < 1e-14


def test_uniform_tabulated_survival():
    w = rn.uniform(0.0, 1.0)
    assert abs(w.survival(0.25) - 0.75) < 1e-15
    assert w.survival(2.0) == 0.0
    assert abs(w.mean - 0.5) < 1e-15


def test_phase_type_laplace_against_quadrature():
    alpha = [0.6, 0.4]
    a = [[-2.0, 1.0], [0.5, -1.5]]
    w = rn.PhaseType(alpha, a)
    for u in (0.5, 1.0 + 2.0j, 3.0 - 1.0j):
        re = scipy.integrate.quad(lambda x: w.density(x) * np.exp(-u * x).real, 0, np.inf)[0]
        im = scipy.integrate.quad(lambda x: w.density(x) * np.exp(-u * x).imag, 0, np.inf)[0]
        f_hat, g_hat = w.laplace(u)
        assert abs(f_hat - (re + 1j * im)) < 1e-9
        assert abs(g_hat - (1 - f_hat) / u) < 1e-12


def test_tabulated_laplace_matches_phase_type():
    ph = rn.erlang(2, 1.5)
    x = np.linspace(0, 40, 20001)
    tab = rn.Tabulated(x, ph.density(x))
    for u in (0.3, 1.0 + 1.0j, 4.0):
        assert abs(tab.laplace(u)[0] - ph.laplace(u)[0]) < 1e-6


def test_laplace_identity_random_points():
    rng = np.random.default_rng(5)
    u = rng.uniform(0.05, 5, 8) + 1j * rng.uniform(-5, 5, 8)
    for w in (rn.Exponential(0.7), rn.erlang(3, 2.0), rn.hyperexponential([0.2, 0.8], [4.0, 0.5]), rn.uniform(0, 2)):
        f_hat, g_hat = w.laplace(u)
        assert np.abs(g_hat - (1 - f_hat) / u).max() < 1e-9


def test_laplace_rejects_left_half_plane():
    with pytest.raises(ValueError):
        rn.laplace(rn.Exponential(1.0), -0.1)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        rn.density(rn.Exponential(1.0), -1.0)


def test_survival_derivative_is_minus_density():
    t = np.linspace(0.01, 5, 400)
    d = 1e-6
    for w in (rn.erlang(2, 1.0), rn.hyperexponential([0.3, 0.7], [3.0, 0.5]), rn.uniform(0, 1.3)):
        dg = (w.survival(t + d) - w.survival(t - d)) / (2 * d)
        keep = np.abs(t - 1.3) > 10 * d
        assert np.abs(dg + w.density(t))[keep].max() < 1e-6


def test_tabulated_mass_defect_reported():
    w = rn.Tabulated([0.0, 1.0], [0.8, 0.8])
    assert abs(w.mass_defect - 0.2) < 1e-15
    assert np.isinf(w.mean)


@pytest.mark.parametrize(
    "law",
    [rn.Exponential(1.3), rn.erlang(2, 2.0), rn.uniform(0.0, 1.0), rn.hyperexponential([0.4, 0.6], [3.0, 0.7])],
    ids=["exp", "erlang2", "uniform", "hyperexp"],
)
def test_sampling_ks(law):
    rng = np.random.default_rng(42)
    x = law.sample(rng, 100000)
    stat = scipy.stats.kstest(x, lambda t: 1 - law.survival(np.asarray(t))).statistic
    assert stat < 1.63 / np.sqrt(x.size)  # 1% critical value


def test_erlang_sample_mean_is_sum_of_stages():
    rng = np.random.default_rng(1)
    x = rn.erlang(2, 2.0).sample(rng, 200000)
    assert abs(x.mean() - 1.0) < 4 * x.std() / np.sqrt(x.size)


def test_scalar_kernel_exponential_is_pure_delta():
    k = rn.scalar_kernel(rn.Exponential(2.5))
    assert abs(k.delta_weight - 2.5) < 1e-12
    assert np.abs(k.smooth(np.linspace(0, 3, 7))).max() < 1e-12


def test_scalar_kernel_erlang2():
    lam = 1.3
    k = rn.scalar_kernel(rn.erlang(2, lam))
    t = np.linspace(0, 4, 41)
    assert abs(k.delta_weight) < 1e-10
    assert np.abs(k.smooth(t) - lam**2 * np.exp(-2 * lam * t)).max() < 1e-8
    assert k.laplace_residual < 1e-9


def test_scalar_kernel_hyperexponential_against_sympy():
    p1, l1, l2 = sp.Rational(3, 10), 3, sp.Rational(1, 2)
    u = sp.symbols("u")
    f_hat = p1 * l1 / (u + l1) + (1 - p1) * l2 / (u + l2)
    k_hat = sp.apart(sp.cancel(u * f_hat / (1 - f_hat)), u)
    const = float(sp.limit(k_hat, u, sp.oo))
    terms = [t for t in sp.Add.make_args(k_hat) if t.has(u)]
    k = rn.scalar_kernel(rn.hyperexponential([0.3, 0.7], [3.0, 0.5]))
    assert abs(k.delta_weight - const) < 1e-9
    assert len(terms) == len(k.poles) == 1
    num, den = sp.fraction(sp.together(terms[0]))
    pole = float(sp.solve(den, u)[0])
    coeff = float(num / sp.diff(den, u))
    assert abs(k.poles[0].real - pole) < 1e-9
    assert abs(k.coeffs[0][0].real - coeff) < 1e-9


def test_scalar_kernel_erlang4_repeated_poles():
    w = rn.erlang(4, 1.0)
    k = rn.scalar_kernel(w)
    u = np.array([0.3, 1.0 + 2.0j, 5.0])
    f_hat, g_hat = w.laplace(u)
    assert np.abs(k.laplace(u) - f_hat / g_hat).max() < 1e-9


def test_scalar_kernel_first_stationary_erlang():
    lam = 2.0
    spec = rn.RenewalSpec(rn.erlang(2, lam), stationary=True)
    k1 = rn.scalar_kernel_first(spec)
    u = np.array([0.5, 1 + 1j, 3.0, 0.2 - 2j])
    f1, _ = spec.first.laplace(u)
    _, g = spec.base.laplace(u)
    assert np.abs(k1.laplace(u) - f1 / g).max() < 1e-9


def test_scalar_kernel_tabulated_unsupported():
    with pytest.raises(rn.UnsupportedLawError):
        rn.scalar_kernel(rn.uniform(0, 1))


def test_sprinkling_exponential_constant():
    s = rn.sprinkling(rn.Exponential(1.7), TimeGrid(5.0, 1000))
    assert np.abs(s.density - 1.7).max() < 1e-8
    assert s.residual < 1e-8


def test_sprinkling_erlang2_closed_form():
    lam = 1.0
    grid = TimeGrid(2.0, 400)
    s = rn.sprinkling(rn.erlang(2, lam), grid)
    exact = lam / 2 * (1 - np.exp(-2 * lam * grid.times))
    assert np.abs(s.density - exact).max() < 1e-8


@pytest.mark.parametrize("law", [rn.erlang(3, 2.0), rn.uniform(0.0, 1.0), rn.hyperexponential([0.5, 0.5], [2.0, 1.0])])
def test_sprinkling_approaches_inverse_mean(law):
    mean = law.mean
    s = rn.sprinkling(law, TimeGrid(20 * mean, 2000))
    assert abs(s.density[-1] - 1 / mean) < 1e-3


def test_sprinkling_modified_stationary_is_flat():
    spec = rn.RenewalSpec(rn.erlang(2, 1.0), stationary=True)
    s = rn.sprinkling(spec, TimeGrid(2.0, 400))
    assert np.abs(s.first - 0.5).max() < 1e-8


def test_stationary_first_laws():
    assert rn.stationary_first(rn.Exponential(3.0)).rate == 3.0
    lam = 1.5
    f1 = rn.stationary_first(rn.erlang(2, lam))
    t = np.linspace(0, 5, 11)
    assert np.abs(f1.density(t) - lam / 2 * (1 + lam * t) * np.exp(-lam * t)).max() < 1e-12
    u1 = rn.stationary_first(rn.uniform(0, 1))
    t = np.linspace(0.05, 0.95, 10)
    assert np.abs(u1.density(t) - 2 * (1 - t)).max() < 1e-3
    assert abs(u1.survival(1.0)) < 1e-6


def test_stationary_needs_finite_mean():
    with pytest.raises(ValueError):
        rn.RenewalSpec(rn.Tabulated([0.0, 1.0], [0.5, 0.5]), stationary=True)


def test_discrete_survival_is_exact_complement():
    w = rn.erlang(2, 1.0)
    grid = TimeGrid(3.0, 60)
    g = rn.discrete_survival(w, grid.times, grid.h, "gregory")
    q = cumulative(w.density(grid.times), grid.h, "gregory")
    assert np.abs(g + q - 1).max() < 1e-15
    assert np.abs(g - w.survival(grid.times))[2:].max() < 1e-6


def test_discrete_survival_uses_left_limit_at_jump():
    w = rn.uniform(0.0, 1.0)
    grid = TimeGrid(2.0, 40)
    g = rn.discrete_survival(w, grid.times, grid.h, "trapezoid")
    assert abs(g[20]) < 1e-14  # t = 1 sits on the jump of the density
    assert np.abs(g - w.survival(grid.times)).max() < 1e-14
