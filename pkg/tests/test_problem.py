"""Problem validation and the exponential time transform."""
import numpy as np
import pytest

from helpers import reset_to_origin, scalar_problem
from impulse_qvi import toys
from impulse_qvi.exceptions import EmptyTransactionSetError, ProblemError
from impulse_qvi.problem import Domain, Elliptic, Parabolic, sample_cloud, to_elliptic, to_parabolic, validate


def brownian():
    # mu = 0, sigma = 1, f = 1, g = 0, K = -1, Gamma = zeta, Z = {0}, B = {0}
    return scalar_problem(impulse=reset_to_origin(1.0))


def test_brownian_problem_passes_every_check():
    rep = validate(brownian())
    assert rep.passed
    assert all(c.status in ("pass", "unverifiable") for c in rep.checks)
    assert all(v == 0.0 for v in rep.lipschitz.values())


def test_empty_transaction_set_is_a_hard_error():
    p = brownian()
    Z0 = p.Z

    def Z(t, x):
        return [] if x[0] > 0 else Z0(t, x)

    from dataclasses import replace
    with pytest.raises(EmptyTransactionSetError, match="empty transaction set"):
        validate(replace(p, Z=Z))


def test_square_root_drift_fails_lipschitz():
    def mu(t, x, beta):
        return np.sqrt(np.abs(x))

    p = scalar_problem(mu=mu, impulse=reset_to_origin(1.0))
    rep = validate(p)
    chk = rep["V3/Lipschitz mu, sigma"]
    assert chk.status == "fail"
    assert chk.point is not None and abs(chk.point[0]) < 0.1
    assert not rep.passed


def test_sample_cloud_contains_center():
    pts = sample_cloud(Domain.whole(-1, 1), 64, seed=0)
    assert np.any(np.all(pts == 0.0, axis=1))


def test_empty_control_set_rejected():
    p = scalar_problem(B=np.zeros((0, 1)))
    with pytest.raises(ProblemError, match="empty"):
        validate(p)


def test_degenerate_box_rejected():
    p = scalar_problem(S=Domain.whole(1.0, 1.0))
    with pytest.raises(ProblemError, match="degenerate"):
        validate(p)


def test_fixed_cost_violation_reported():
    from impulse_qvi import catalogue as cat
    imp = cat.impulse_reset([0.0], 0.5, 0.0)
    p = scalar_problem(impulse=(imp[0], imp[1], imp[2], 1.0))  # declares k0 = 1 > 0.5
    assert validate(p)["L2 fixed transaction cost"].status == "fail"


def test_validate_is_deterministic():
    p = toys.exchange_rate_band(jumps=True)
    a = validate(*p, n_samples=512)
    b = validate(*p, n_samples=512)
    assert [(c.name, c.status, c.detail) for c in a.checks] == \
        [(c.name, c.status, c.detail) for c in b.checks]
    assert a.lipschitz == b.lipschitz


def test_to_elliptic_strips_discount():
    def f(t, x, beta):
        return np.exp(-t) * x[:, 0] ** 2

    def g(t, x):
        return np.exp(-t) * np.ones(len(x))

    Z, Gamma, K, k0 = reset_to_origin(1.0)

    def K_disc(t, x, zeta):
        return np.exp(-t) * K(t, x, zeta)

    p = scalar_problem(horizon=Parabolic(2.0), f=f, g=g, impulse=(Z, Gamma, K_disc, k0))
    e = to_elliptic(p, rho=1.0)
    assert not e.parabolic and e.rho == 1.0
    x = np.linspace(-1, 1, 9)[:, None]
    beta = np.zeros((9, 1))
    assert np.array_equal(e.f(0.7, x, beta), x[:, 0] ** 2)


def test_to_elliptic_rejects_zero_rho():
    p = scalar_problem(horizon=Parabolic(1.0))
    with pytest.raises(ProblemError, match="positive discount"):
        to_elliptic(p, rho=0.0)


def test_to_elliptic_rejects_time_dependent_data():
    def f(t, x, beta):
        return t * np.ones(len(x))

    with pytest.raises(ProblemError, match="time-dependent"):
        to_elliptic(scalar_problem(f=f), rho=1.0)


def test_elliptic_round_trip_reproduces_data():
    p, _ = toys.fixed_cost_diffusion()
    back = to_elliptic(to_parabolic(p, 5.0))
    assert back.rho == p.rho
    x = sample_cloud(p.S, 64, 3)
    for b in range(p.B.shape[0]):
        beta = p.beta_rows(b, len(x))
        for name in ("mu", "sigma", "f"):
            a = getattr(p, name)(0.0, x, beta)
            c = getattr(back, name)(1.3, x, beta)
            assert np.max(np.abs(np.asarray(a) - np.asarray(c))) <= 1e-12
    assert np.max(np.abs(p.g(0.0, x) - back.g(2.0, x))) <= 1e-12
    z = np.repeat(p.candidates(0.0, x[0])[:1], len(x), axis=0)
    assert np.max(np.abs(p.K(0.0, x, z) - back.K(4.0, x, z))) <= 1e-12


def test_parabolic_horizon_must_be_positive():
    with pytest.raises(ProblemError):
        Parabolic(0.0)
    with pytest.raises(ProblemError):
        Elliptic(-1.0)
