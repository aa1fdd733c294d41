import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from memkernel import kernels
from memkernel import liouville as lv
from memkernel import renewal as rn
from memkernel.quadrature import TimeGrid, weight_row
from memkernel.series import EvolutionConfig, propagate

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2**32 - 1)
rates = st.floats(0.2, 5.0)


def random_kraus_channel(d, n_ops, rng):
    # isometry V: C^d -> C^(n d), Kraus operators are its blocks
    a = rng.normal(size=(n_ops * d, d)) + 1j * rng.normal(size=(n_ops * d, d))
    v, _ = np.linalg.qr(a)
    return sum(lv.sandwich(v[k * d : (k + 1) * d], v[k * d : (k + 1) * d]) for k in range(n_ops))


def random_generator(d, rng):
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    jumps = [(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)), float(rng.uniform(0, 0.5))) for _ in range(2)]
    return lv.lindblad_generator(lv.LindbladSpec((h + h.conj().T) / 2, jumps))


laws = st.one_of(
    rates.map(rn.Exponential),
    st.tuples(st.integers(1, 4), rates).map(lambda kr: rn.erlang(*kr)),
    st.tuples(st.floats(0.05, 0.95), rates, rates).map(lambda p: rn.hyperexponential([p[0], 1 - p[0]], [p[1], p[2]])),
    st.floats(0.3, 2.0).map(lambda b: rn.uniform(0.0, b)),
)


@SETTINGS
@given(seed=seeds, d=st.integers(2, 4), n_ops=st.integers(1, 4))
def test_random_kraus_channels_are_cptp(seed, d, n_ops):
    ch = random_kraus_channel(d, n_ops, np.random.default_rng(seed))
    rep = lv.is_cptp(ch)
    assert rep.cp and rep.tp
    assert abs(lv.choi_of(ch).trace() - d) < 1e-10


@SETTINGS
@given(seed=seeds, d=st.integers(2, 3), t=st.floats(0.0, 5.0))
def test_lindblad_semigroup_is_cptp(seed, d, t):
    gen = random_generator(d, np.random.default_rng(seed))
    m = lv.expm(gen, t)
    assert lv.choi_spectrum_min(m[None])[0] > -1e-9
    assert lv.trace_defect(m[None])[0] < 1e-9


@SETTINGS
@given(law=laws, t=st.floats(0.0, 10.0))
def test_survival_is_monotone_complement(law, t):
    g = law.survival(np.array([t, t + 0.1]))
    assert 0.0 <= g[1] <= g[0] <= 1.0 + 1e-15


@SETTINGS
@given(law=laws, re=st.floats(0.05, 5.0), im=st.floats(-5.0, 5.0))
def test_laplace_identity(law, re, im):
    u = complex(re, im)
    f_hat, g_hat = law.laplace(u)
    assert abs(f_hat) <= 1 + 1e-9
    assert abs(g_hat - (1 - f_hat) / u) < 1e-8


@SETTINGS
@given(seed=seeds, n=st.integers(1, 25), scheme=st.sampled_from(["trapezoid", "gregory"]))
def test_scalar_convolution_commutes(seed, n, scheme):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n + 1, 1, 1))
    b = rng.normal(size=(n + 1, 1, 1))
    assert np.allclose(kernels.conv(a, b, 0.1, scheme), kernels.conv(b, a, 0.1, scheme), atol=1e-12)


@SETTINGS
@given(n=st.integers(1, 60), scheme=st.sampled_from(["trapezoid", "gregory"]))
def test_weight_rows_integrate_constants(n, scheme):
    assert abs(weight_row(n, scheme).sum() - n) < 1e-12


@settings(max_examples=8, deadline=None)
@given(seed=seeds, law=laws, ordering=st.sampled_from(["R", "L"]))
def test_random_scenarios_give_cptp_propagators(seed, law, ordering):
    rng = np.random.default_rng(seed)
    gen = random_generator(2, rng)
    chan = random_kraus_channel(2, 2, rng)
    cfg = EvolutionConfig.semigroup(gen, chan, law, TimeGrid(2.0, 200), ordering=ordering)
    res = propagate(cfg, richardson=False)
    assert res.min_choi_eig.min() > -1e-7
    assert res.trace_defect.max() < 1e-6
    assert res.hermiticity_defect.max() < 1e-10
