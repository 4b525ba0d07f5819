import math

import numpy as np
import pytest

from bhquench import fockspace as fs


def test_dimer_basis_enumeration():
    basis = fs.build_basis(2, 3)
    assert basis.dim == 4
    assert [tuple(s) for s in basis.states] == [(3, 0), (2, 1), (1, 2), (0, 3)]


def test_trimer_basis_count():
    basis = fs.build_basis(3, 300)
    assert basis.dim == math.comb(302, 2) == 45451


def test_large_dimer_basis_count():
    basis = fs.build_basis(2, 10**5)
    assert basis.dim == 10**5 + 1


def test_basis_roundtrip_bijection():
    basis = fs.build_basis(3, 7)
    for i, s in enumerate(basis.states):
        assert basis.state_index(s) == i
    assert all(s.sum() == 7 for s in basis.states)


def test_dimension_cap():
    with pytest.raises(fs.SizingError, match="45451"):
        fs.build_basis(3, 300, dim_cap=10_000)


def test_single_particle_spectrum():
    basis = fs.build_basis(2, 1)
    H = fs.build_hamiltonian(basis, J=1.0, U=5.0)
    evals = np.linalg.eigvalsh(H.as_scipy().toarray())
    assert np.allclose(evals, [-1.0, 1.0], atol=1e-14)


def test_two_free_particles_spectrum():
    basis = fs.build_basis(2, 2)
    H = fs.build_hamiltonian(basis, J=1.0, U=0.0)
    evals = np.linalg.eigvalsh(H.as_scipy().toarray())
    assert np.allclose(evals, [-2.0, 0.0, 2.0], atol=1e-13)


def test_trimer_ground_energy_against_dense_oracle():
    basis = fs.build_basis(3, 3)
    H = fs.build_hamiltonian(basis, J=1.0, U=-1.0, periodic=True)
    assert basis.dim == 10
    dense = H.as_scipy().toarray()
    e_dense = np.linalg.eigvalsh(dense)[0]
    from bhquench.propagator import lowest_eigenpairs

    energies, _ = lowest_eigenpairs(H, 1)
    assert abs(energies[0] - e_dense) < 1e-12


def test_hamiltonian_exactly_symmetric():
    basis = fs.build_basis(3, 5)
    H = fs.build_hamiltonian(basis, J=0.7, U=-0.3, periodic=True)
    assert H.hermiticity_defect() == 0.0


def test_dimer_hamiltonian_tridiagonal():
    basis = fs.build_basis(2, 40)
    H = fs.build_hamiltonian(basis, J=1.0, U=-0.05)
    assert H.tridiagonal_parts() is not None


def test_particle_number_conserved_exactly():
    basis = fs.build_basis(3, 4)
    total = sum(fs.site_number_operator(basis, j).diagonal() for j in (1, 2, 3))
    assert np.array_equal(total, np.full(basis.dim, 4.0))


def test_z_operator_values():
    N = 9
    basis = fs.build_basis(2, N)
    z = fs.z_operator(basis).diagonal()
    assert z[basis.state_index((N, 0))] == N / (2 * (N + 1))
    for k in range(N + 1):
        assert z[basis.state_index((k, N - k))] == pytest.approx(
            (2 * k - N) / (2 * (N + 1)), abs=1e-16)
    # exchange symmetry
    assert np.allclose(np.sort(z), -np.sort(z)[::-1], atol=1e-16)


def test_z_operator_requires_dimer():
    basis = fs.build_basis(3, 2)
    with pytest.raises(fs.UnsupportedGeometryError):
        fs.z_operator(basis)


def test_site_number_operator():
    basis = fs.build_basis(2, 3)
    n1 = fs.site_number_operator(basis, 1).diagonal()
    assert n1[basis.state_index((3, 0))] == 3.0
    n2s = fs.site_number_operator(basis, 2, scaled=True).diagonal()
    assert n2s[basis.state_index((1, 2))] == pytest.approx(2.0 / 3.0)
    with pytest.raises(ValueError):
        fs.site_number_operator(basis, 3)


def test_operator_polynomial():
    N = 5
    basis = fs.build_basis(2, N)
    z = fs.z_operator(basis).diagonal()
    a = fs.operator_polynomial(basis, "z+z^2").diagonal()
    assert np.allclose(a, z + z * z, atol=1e-15)
    zval = N / (2 * (N + 1))
    assert a[basis.state_index((N, 0))] == pytest.approx(zval + zval**2, abs=1e-15)
    one = fs.operator_polynomial(basis, "1").diagonal()
    assert np.array_equal(one, np.ones(basis.dim))
    z2 = fs.operator_polynomial(basis, "z^2").diagonal()
    assert np.allclose(z2, z**2, atol=1e-15)
    with pytest.raises(ValueError, match="unknown generator"):
        fs.operator_polynomial(basis, "q+z")


def test_shift_commutes_with_periodic_hamiltonian():
    for N in (3, 7, 10):
        basis = fs.build_basis(3, N)
        H = fs.build_hamiltonian(basis, J=1.0, U=-0.7, periodic=True).as_scipy()
        T = fs.shift_operator(basis).as_scipy()
        comm = (H @ T - T @ H)
        assert abs(comm).max() < 1e-12


def test_prequench_dimer_harmonic_spacing():
    # lowest levels of the noninteracting dimer are spaced by 2J up to 1/N
    basis = fs.build_basis(2, 10**5)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=21)
    gaps = np.diff(pre.energies)
    assert np.all(np.abs(gaps / 2.0 - 1.0) < 0.01)
    assert pre.labels == list(range(21))


def test_prequench_orthonormal():
    basis = fs.build_basis(3, 30)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=10)
    gram = pre.states.conj().T @ pre.states
    assert np.abs(gram - np.eye(10)).max() < 1e-12


def test_prequench_trimer_multiplets():
    basis = fs.build_basis(3, 30)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=6)
    # first excited multiplet: one quantum in a finite-momentum mode, 3J up
    assert pre.energies[1] - pre.energies[0] == pytest.approx(3.0, rel=1e-12)
    assert pre.energies[2] - pre.energies[0] == pytest.approx(3.0, rel=1e-12)
    assert pre.labels[0] == (0, 0)
    assert sorted(pre.labels[1:3]) == [(0, 1), (1, 0)]
    assert sorted(pre.labels[3:6]) == [(0, 2), (1, 1), (2, 0)]
    # multiplet members carry sharp quasi-momentum: k1 - k2 mod 3
    T = fs.shift_operator(basis)
    for idx, (k1, k2) in enumerate(pre.labels):
        tv = np.vdot(pre.states[:, idx], T.apply(pre.states[:, idx]))
        expected = np.exp(1j * 2 * np.pi * (k1 - k2) / 3.0)
        assert abs(tv - expected) < 1e-9


def test_prequench_ground_state_only():
    basis = fs.build_basis(2, 12)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=1)
    assert len(pre.labels) == 1
    assert pre.energies.shape == (1,)


def test_sparse_operator_drop_tolerance():
    basis = fs.build_basis(2, 6)
    H = fs.build_hamiltonian(basis, J=1e-14, U=1.0)
    pruned = fs.SparseOperator(H.dim, H.data, H.indices, H.indptr,
                               drop_tolerance=1e-10)
    assert len(pruned.data) < len(H.data)
    # default keeps all structural entries
    assert len(H.data) == len(fs.build_hamiltonian(basis, J=1e-14, U=1.0).data)
