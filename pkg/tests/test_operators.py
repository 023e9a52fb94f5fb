import numpy as np
import pytest

from fpunroll.errors import ShapeError
from fpunroll.fixpoint import (
    BoundInputs,
    contraction_bound,
    estimate_contraction,
    iterate,
    random_probes,
)
from fpunroll.operators import (
    AffineOperator,
    EnergyGradOperator,
    PerturbedOperator,
    neumann_laplacian,
)


def grid_laplacian_matrix(h, w):
    """Dense reflective-boundary Laplacian built from 1-D path graphs."""

    def path(n):
        L = np.zeros((n, n))
        for i in range(n - 1):
            L[i, i] += 1
            L[i + 1, i + 1] += 1
            L[i, i + 1] -= 1
            L[i + 1, i] -= 1
        return L

    return np.kron(path(h), np.eye(w)) + np.kron(np.eye(h), path(w))


def test_affine_examples():
    b = np.array([1.0, 1.0])
    np.testing.assert_array_equal(AffineOperator(np.zeros((2, 2)), b)([5.0, -3.0]), b)
    op = AffineOperator(np.diag([0.9, 0.5]), b)
    np.testing.assert_array_equal(op(np.zeros(2)), [1.0, 1.0])
    np.testing.assert_allclose(op(np.array([10.0, 2.0])), [10.0, 2.0], rtol=0, atol=1e-15)
    assert op.spectral_radius == pytest.approx(0.9)


def test_affine_dimension_mismatch():
    op = AffineOperator(np.eye(2) * 0.5, [0.0, 0.0])
    with pytest.raises(ShapeError):
        op(np.zeros(3))
    with pytest.raises(ShapeError):
        AffineOperator(np.eye(2), [1.0, 2.0, 3.0])


def test_random_affine_radius():
    op = AffineOperator.random(20, 0.99, np.random.default_rng(0))
    assert op.spectral_radius == pytest.approx(0.99)
    assert op.lipschitz == pytest.approx(0.99)


def test_laplacian_matches_matrix():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((5, 7))
    L = grid_laplacian_matrix(5, 7)
    np.testing.assert_allclose(neumann_laplacian(u).ravel(), L @ u.ravel(), atol=1e-12)
    ev = np.linalg.eigvalsh(grid_laplacian_matrix(8, 8))
    assert ev.min() > -1e-12 and ev.max() < 8


def test_laplacian_batched_layout():
    rng = np.random.default_rng(1)
    u = rng.standard_normal((2, 4, 5, 3))
    out = neumann_laplacian(u, axes=(1, 2))
    for b in range(2):
        for c in range(3):
            np.testing.assert_allclose(out[b, :, :, c], neumann_laplacian(u[b, :, :, c]), atol=1e-12)


def test_energy_examples():
    rng = np.random.default_rng(2)
    f = rng.uniform(size=(6, 6))
    u = rng.uniform(size=(6, 6))
    sigma = 0.2
    op = EnergyGradOperator(f, sigma, lam=0.0, tau=sigma**2)
    np.testing.assert_allclose(op(u), f, atol=1e-15)
    np.testing.assert_array_equal(EnergyGradOperator(f, sigma, lam=0.0)(f), f)
    c = np.full((6, 6), 0.3)
    op = EnergyGradOperator(f, sigma, lam=4.0)
    np.testing.assert_allclose(op(c), c - op.tau * (c - f) / sigma**2, atol=1e-14)


def test_energy_shape_mismatch():
    op = EnergyGradOperator(np.zeros((4, 4)), 1.0)
    with pytest.raises(ShapeError):
        op(np.zeros((3, 4)))
    # flat vectors of the right size are accepted
    assert op(np.zeros(16)).shape == (16,)


@pytest.mark.parametrize("lam", [0.0, 0.5, 5.0])
def test_energy_contraction_rule(lam):
    rng = np.random.default_rng(3)
    sigma = 0.1
    op = EnergyGradOperator(rng.uniform(size=(8, 8)), sigma, lam)
    rho_hat = estimate_contraction(op, random_probes((8, 8), 100, rng))
    assert rho_hat <= 1.0
    assert rho_hat <= op.contraction_factor + 1e-12
    if lam == 0.0:
        tau = 0.5 * sigma**2
        op2 = EnergyGradOperator(op.f, sigma, 0.0, tau=tau)
        assert estimate_contraction(op2, random_probes((8, 8), 20, rng)) == pytest.approx(abs(1 - tau / sigma**2))


def test_energy_lambda_zero_converges_to_f():
    rng = np.random.default_rng(4)
    f = rng.uniform(size=(8, 8))
    tr = iterate(EnergyGradOperator(f, 0.5), rng.standard_normal((8, 8)), eps=1e-13, T=500)
    assert tr.converged
    np.testing.assert_allclose(tr.solution, f, atol=1e-12)


def test_energy_minimiser_matches_direct_solve():
    rng = np.random.default_rng(5)
    f = rng.uniform(size=(16, 16))
    sigma, lam = 0.1, 5.0
    L = grid_laplacian_matrix(16, 16)
    direct = np.linalg.solve(np.eye(256) / sigma**2 + lam * L, f.ravel() / sigma**2).reshape(16, 16)
    tr = iterate(EnergyGradOperator(f, sigma, lam), np.zeros((16, 16)), eps=1e-12, T=20000)
    assert tr.converged
    assert np.max(np.abs(tr.solution - direct)) <= 1e-8


def test_perturbed_examples():
    rng = np.random.default_rng(6)
    z = rng.standard_normal(5)
    inner = AffineOperator.scaling(0.5, 5)
    np.testing.assert_array_equal(PerturbedOperator(inner, 0.0, 3)(z), inner(z))
    op = PerturbedOperator(lambda v: v, 0.1, 3)
    for k in range(50):
        assert np.linalg.norm(op.apply(z, k) - z) <= 0.1
    np.testing.assert_array_equal(op.apply(z, 17), op.apply(z, 17))
    np.testing.assert_array_equal(op(z), op(z.copy()))
    assert not np.array_equal(op.apply(z, 1), op.apply(z, 2))


def test_perturbed_replays_bound_proof_step():
    # one-step inequality ||z_{t+1} - z*|| <= delta + rho ||z_t - z*||
    rng = np.random.default_rng(8)
    inner = AffineOperator.random(6, 0.7, rng)
    zstar = inner.fixed_point()
    op = PerturbedOperator(inner, 0.05, 1)
    z0 = rng.standard_normal(6) * 5
    tr = iterate(op, z0, eps=1e-300, T=40)
    rho = inner.lipschitz
    for a, b in zip(tr.states[:-1], tr.states[1:]):
        assert np.linalg.norm(b - zstar) <= 0.05 + rho * np.linalg.norm(a - zstar) + 1e-12
    d0 = np.linalg.norm(z0 - zstar)
    for T, s in enumerate(tr.states):
        assert np.linalg.norm(s - zstar) <= contraction_bound(BoundInputs(rho, 0.05, d0, T)) + 1e-12
