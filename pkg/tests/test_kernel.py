import numpy as np
import pytest

from riesz_kinetics import RieszParams, grad, hessian, potential


def test_potential_unit_sphere():
    p = RieszParams(alpha=0.5, lam=1.0)
    assert potential(p, [1.0, 0.0, 0.0]) == pytest.approx(1.0, abs=0)
    assert potential(p, [4.0, 0.0, 0.0]) == pytest.approx(0.5, rel=1e-15)


def test_potential_sign_of_lambda():
    p = RieszParams(alpha=0.75, lam=-1.0)
    x = np.array([0.0, 1.0, 0.0])
    assert potential(p, x) == pytest.approx(-1.0, rel=1e-15)


def test_domain_error_at_coincidence():
    p = RieszParams(alpha=0.5, lam=1.0, eps=0.0)
    for fn in (potential, grad, hessian):
        with pytest.raises(ValueError):
            fn(p, [0.0, 0.0, 0.0])


def test_softened_kernel_finite_at_zero():
    p = RieszParams(alpha=0.5, lam=1.0, eps=0.3)
    assert potential(p, [0.0, 0.0, 0.0]) == pytest.approx(0.3 ** -0.5, rel=1e-15)
    assert np.all(grad(p, [0.0, 0.0, 0.0]) == 0.0)


def test_grad_closed_form_on_unit_sphere():
    for alpha in (0.3, 0.75, 0.9):
        p = RieszParams(alpha=alpha, lam=1.0)
        g = grad(p, [1.0, 0.0, 0.0])
        assert np.allclose(g, [-alpha, 0.0, 0.0], rtol=1e-15, atol=0)


def test_grad_oddness_exact():
    p = RieszParams(alpha=0.75, lam=-1.0, eps=0.1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 3))
    assert np.all(grad(p, x) == -grad(p, -x))


@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_grad_homogeneity(s):
    p = RieszParams(alpha=0.75, lam=1.0, eps=0.0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=3)
        lhs = np.linalg.norm(grad(p, s * x)) * s ** (1.0 + p.alpha)
        rhs = np.linalg.norm(grad(p, x))
        assert abs(lhs - rhs) <= 1e-12 * rhs


def test_grad_matches_fd_of_potential():
    p = RieszParams(alpha=0.75, lam=1.0)
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(10):
        x = rng.normal(size=3)
        x *= rng.uniform(0.5, 4.0) / np.linalg.norm(x)
        g = grad(p, x)
        fd = np.empty(3)
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            fd[d] = (potential(p, x + e) - potential(p, x - e)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_hessian_vlasov_poisson_case():
    # second derivatives of 1/|x| at (1,0,0): diag(2,-1,-1)
    p = RieszParams(alpha=1.0, lam=1.0)
    assert np.allclose(hessian(p, [1.0, 0.0, 0.0]), np.diag([2.0, -1.0, -1.0]),
                       rtol=1e-14, atol=1e-14)


def test_hessian_symmetry():
    p = RieszParams(alpha=0.6, lam=-1.0, eps=0.2)
    rng = np.random.default_rng(3)
    hess = hessian(p, rng.normal(size=(10, 3)))
    assert np.all(hess == np.swapaxes(hess, -1, -2))


def test_hessian_matches_fd_of_grad():
    p = RieszParams(alpha=0.75, lam=1.0)
    rng = np.random.default_rng(4)
    h = 1e-5
    x = rng.normal(size=3)
    x /= np.linalg.norm(x)
    hess = hessian(p, x)
    fd = np.empty((3, 3))
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd[d] = (grad(p, x + e) - grad(p, x - e)) / (2 * h)
    assert np.abs(fd - hess).max() <= 1e-6 * np.abs(hess).max()


def test_hessian_trace_is_softened_laplacian():
    # Laplacian of lam (r^2+eps^2)^(-a/2):
    #   -a lam [3 u^(-(a+2)/2) - (a+2) r^2 u^(-(a+4)/2)],  u = r^2 + eps^2
    p = RieszParams(alpha=0.75, lam=1.0, eps=0.3)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.normal(size=3)
        r2 = float(x @ x)
        u = r2 + p.eps2
        lap = -p.alpha * p.lam * (3.0 * u ** (-0.5 * (p.alpha + 2))
                                  - (p.alpha + 2) * r2 * u ** (-0.5 * (p.alpha + 4)))
        assert np.trace(hessian(p, x)) == pytest.approx(lap, rel=1e-13)


def test_param_validation():
    with pytest.raises(ValueError):
        RieszParams(alpha=0.0)
    with pytest.raises(ValueError):
        RieszParams(alpha=3.5)
    with pytest.raises(ValueError):
        RieszParams(alpha=0.5, lam=2.0)
    with pytest.raises(ValueError):
        RieszParams(alpha=0.5, eps=-1.0)
