import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwres.lattice import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    CoinField,
    WalkOperator,
    WalkState,
    apply_walk,
    random_coin_field,
)
from qwres.translation import (
    OutgoingState,
    apply_T_theta,
    apply_U_theta,
    verify_outgoing,
)

FREE = WalkOperator(CoinField(0, {}))

complex_theta = st.builds(
    complex,
    st.floats(-3.0, 3.0, allow_nan=False),
    st.floats(-1.5, 1.5, allow_nan=False),
)


def random_state(seed, n_sites=4, span=5):
    rng = np.random.default_rng(seed)
    amp = {}
    for _ in range(n_sites):
        site = (int(rng.integers(-span, span + 1)), int(rng.integers(-span, span + 1)))
        amp[site] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return WalkState(amp)


def test_translation_weight_example():
    # A left mover at (2, 0) is weighted by e^{i theta x1}; theta = -i gives e^2.
    u = WalkState.delta((2, 0), LEFT)
    v = apply_T_theta(-1j, u)
    assert v.component((2, 0), LEFT) == pytest.approx(np.exp(2.0))


@settings(max_examples=50, deadline=None)
@given(theta=complex_theta, seed=st.integers(0, 2**31))
def test_translation_inverts(theta, seed):
    u = random_state(seed)
    v = apply_T_theta(-theta, apply_T_theta(theta, u))
    assert v.allclose(u, tol=1e-9 * max(1.0, np.exp(3 * abs(theta.imag) * 6)))


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-3.0, 3.0, allow_nan=False), seed=st.integers(0, 2**31))
def test_real_translation_is_unitary(theta, seed):
    u = random_state(seed)
    assert apply_T_theta(theta, u).norm() == pytest.approx(u.norm(), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(theta=complex_theta, seed=st.integers(0, 2**31))
def test_free_walk_conjugation_is_a_global_phase(theta, seed):
    u = random_state(seed)
    lhs = apply_U_theta(FREE, theta, u)
    rhs = apply_walk(FREE, u).scaled(np.exp(-1j * theta))
    assert lhs.allclose(rhs, tol=1e-8 * max(1.0, np.exp(abs(theta.imag) * 8)))


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-3.0, 3.0, allow_nan=False), seed=st.integers(0, 2**31))
def test_conjugated_perturbed_walk_is_unitary_for_real_theta(theta, seed):
    op = WalkOperator(random_coin_field(2, seed=seed % 1000))
    u = random_state(seed, n_sites=5, span=3)
    v = apply_U_theta(op, theta, u)
    assert v.norm() == pytest.approx(u.norm(), rel=1e-11)


def one_corner_coins(eps):
    """Rectangular loop with corners (0,0), (1,0), (1,1), (0,1); the corner at
    the origin leaks amplitude downward with weight eps."""
    s = np.sqrt(1.0 - eps**2)

    def cols(columns):
        m = np.zeros((4, 4), dtype=complex)
        for j, col in enumerate(columns):
            m[:, j] = col
        return m

    e = np.eye(4)
    leak = cols([s * e[UP] + eps * e[DOWN], e[LEFT], e[RIGHT], -eps * e[UP] + s * e[DOWN]])
    return {
        (0, 0): leak,
        (1, 0): cols([e[RIGHT], e[UP], e[LEFT], e[DOWN]]),
        (1, 1): cols([e[RIGHT], e[DOWN], e[UP], e[LEFT]]),
        (0, 1): cols([e[DOWN], e[LEFT], e[UP], e[RIGHT]]),
    }


def corner_resonant_state(eps, k):
    """Hand-built resonant state of the leaky 2x2 loop: amplitude circulates
    left -> up -> right -> down with one factor sqrt(1-eps^2) per circuit and
    a single downward tail of weight eps from the origin."""
    s = np.sqrt(1.0 - eps**2)
    kappa = 2 * np.pi * k / 4 + 1j * np.log(s) / 4
    ph = np.exp(1j * kappa)
    amp = {}

    def put(site, j, value):
        v = amp.setdefault(site, np.zeros(4, dtype=complex))
        v[j] = value

    put((0, 0), LEFT, 1.0)
    put((0, 1), UP, ph * s)
    put((1, 1), RIGHT, ph**2 * s)
    put((1, 0), DOWN, ph**3 * s)
    put((0, -1), DOWN, eps * ph)
    put((0, -2), DOWN, eps * ph**2)
    core = WalkState(amp)
    return OutgoingState(kappa, 1, core, tail_down={0: eps})


@pytest.mark.parametrize("eps,k", [(0.6, 0), (0.6, 1), (0.3, 2), (0.9, 3)])
def test_corner_resonant_state_satisfies_walk_equation(eps, k):
    op = WalkOperator(CoinField(1, one_corner_coins(eps)))
    state = corner_resonant_state(eps, k)
    report = verify_outgoing(op, state, window=6)
    assert not report.trivial
    assert report.residual <= 1e-12 * max(1.0, report.scale)


def test_corner_resonant_state_summability_threshold():
    state = corner_resonant_state(0.6, 0)
    im = state.kappa.imag
    assert state.is_summable_after(1j * (im - 0.1))
    assert not state.is_summable_after(1j * (im + 0.1))
    assert not state.is_summable_after(0.0)


def test_wrong_kappa_leaves_a_residual():
    op = WalkOperator(CoinField(1, one_corner_coins(0.6)))
    good = corner_resonant_state(0.6, 1)
    bad = OutgoingState(good.kappa + 0.01, 1, good.core, tail_down={0: 0.6})
    report = verify_outgoing(op, bad, window=5)
    assert report.residual > 1e-3


def test_mismatched_tail_coefficient_is_detected():
    op = WalkOperator(CoinField(1, one_corner_coins(0.6)))
    good = corner_resonant_state(0.6, 1)
    bad = OutgoingState(good.kappa, 1, good.core, tail_down={0: 0.61})
    report = verify_outgoing(op, bad, window=5)
    assert report.residual > 1e-3


def test_incoming_exponential_is_rejected():
    # A full plane-wave line along x2 = 0 has an incoming half and therefore
    # cannot be written as a purely outgoing state: truncating it to the
    # outgoing convention leaves a seam the walk equation sees.
    kappa = 1.0 - 0.2j
    core = WalkState(
        {(x1, 0): np.eye(4, dtype=complex)[LEFT] * np.exp(-1j * kappa * x1) for x1 in range(-2, 3)}
    )
    state = OutgoingState(kappa, 1, core, tail_left={0: 1.0})
    report = verify_outgoing(FREE_BOX1, state, window=5)
    assert report.residual > 1e-2


FREE_BOX1 = WalkOperator(CoinField(1, {}))


def test_outgoing_state_requires_decaying_eigenvalue():
    with pytest.raises(ValueError, match="Im kappa"):
        OutgoingState(1.0 + 0.1j, 1, WalkState({}))
    with pytest.raises(ValueError, match="Im kappa"):
        OutgoingState(1.0, 1, WalkState({}))


def test_verify_outgoing_window_floor():
    state = corner_resonant_state(0.5, 0)
    op = WalkOperator(CoinField(1, one_corner_coins(0.5)))
    with pytest.raises(ValueError, match="window"):
        verify_outgoing(op, state, window=2)


def test_trivial_state_is_flagged():
    report = verify_outgoing(FREE_BOX1, OutgoingState(-0.5j, 1, WalkState({})), window=4)
    assert report.trivial
