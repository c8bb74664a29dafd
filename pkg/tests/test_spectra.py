import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elliptic_laplacian.ensemble import EnsembleConfig, make_gaussian_atoms, sample_elliptic
from elliptic_laplacian.spectra import (EmpiricalMeasure1D, EmpiricalMeasure2D, eigenvalues, hermitize,
                                        read_spectrum_csv, singular_values, stieltjes_of_empirical, symmetrize,
                                        write_spectrum_csv)


def sample(n, mu=0.5, gamma=0.3, seed=0):
    return sample_elliptic(EnsembleConfig(n, make_gaussian_atoms(mu, gamma), seed=seed))


def test_zero_matrix_eigenvalues():
    assert np.array_equal(eigenvalues(np.zeros((3, 3))).points, np.zeros(3))


def test_cubic_roots_oracle():
    X = np.array([[0.0, 1.0, -0.5], [2.0, 0.0, 0.3], [-1.0, 0.7, 0.0]])
    L = X - np.diag(X.sum(axis=1))
    # characteristic polynomial from trace, principal minors and determinant
    c2 = -np.trace(L)
    c1 = sum(L[i, i] * L[j, j] - L[i, j] * L[j, i] for i in range(3) for j in range(i + 1, 3))
    c0 = -np.linalg.det(L)
    roots = np.sort_complex(np.roots([1.0, c2, c1, c0]))
    ev = np.sort_complex(eigenvalues(L).points)
    np.testing.assert_allclose(ev, roots, atol=1e-10)
    assert np.abs(ev).min() < 1e-10


def test_laplacian_has_kernel_eigenvalue():
    S = sample(150)
    assert np.abs(eigenvalues(S.M).points).min() <= 1e-8 * np.linalg.norm(S.M, 2)


def test_trace_identity():
    S = sample(200, seed=4)
    ev = eigenvalues(S.M).points
    assert abs(ev.sum() - np.trace(S.M)) <= 1e-8 * 200 * np.linalg.norm(S.M, 2)


def test_eigenvalues_reject_nonfinite():
    A = np.eye(3)
    A[0, 1] = np.nan
    with pytest.raises(ValueError):
        eigenvalues(A)


def test_hermitize_blocks():
    M = np.array([[1.0, 2.0j], [3.0, 4.0]])
    z = 0.5 - 1j
    H = hermitize(M, z)
    B = M - z * np.eye(2)
    expect = np.block([[np.zeros((2, 2)), B], [B.conj().T, np.zeros((2, 2))]])
    np.testing.assert_array_equal(H, expect)
    assert np.array_equal(H, H.conj().T)
    assert not np.any(hermitize(np.eye(2) * z, z))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 2**32), zr=st.floats(-2, 2), zi=st.floats(-2, 2))
def test_hermitization_pairing(n, seed, zr, zi):
    S = sample(n, seed=seed)
    z = complex(zr, zi)
    h = np.sort(np.linalg.eigvalsh(hermitize(S.M, z)))
    s = singular_values(S.M, z).points
    np.testing.assert_allclose(h, np.sort(np.concatenate([-s, s])), atol=1e-8)


def test_singular_value_examples():
    np.testing.assert_array_equal(singular_values(np.zeros((2, 2))).points, [0.0, 0.0])
    np.testing.assert_allclose(singular_values(np.diag([3.0, 4.0])).points, [3.0, 4.0])


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 80), seed=st.integers(0, 2**32), zr=st.floats(-2, 2), zi=st.floats(-2, 2),
       method=st.sampled_from(["svd", "gram"]))
def test_frobenius_and_weyl(n, seed, zr, zi, method):
    S = sample(n, seed=seed)
    z = complex(zr, zi)
    s = singular_values(S.M, z, method=method).points
    fro = np.linalg.norm(S.M - z * np.eye(n)) ** 2
    assert abs((s**2).sum() - fro) <= 1e-10 * fro
    assert np.all(s >= 0)
    assert s[-1] <= singular_values(S.M).points[-1] + abs(z) + 1e-9


def test_frobenius_n50():
    S = sample(50, seed=8)
    s = singular_values(S.M, 1 - 0.5j).points
    fro = np.linalg.norm(S.M - (1 - 0.5j) * np.eye(50)) ** 2
    assert abs((s**2).sum() - fro) / fro <= 1e-10


def test_unknown_sv_method():
    with pytest.raises(ValueError):
        singular_values(np.eye(2), method="qr")


def test_symmetrize_examples():
    sym = symmetrize(EmpiricalMeasure1D([1.0, 2.0]))
    np.testing.assert_array_equal(sym.points, [-2.0, -1.0, 1.0, 2.0])
    zero = symmetrize(EmpiricalMeasure1D([0.0]))
    assert zero.n == 2 and zero.cdf(0.0) == 1.0 and zero.cdf(0.0, left=True) == 0.0
    with pytest.raises(ValueError):
        symmetrize(EmpiricalMeasure1D([-0.1, 1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(-120, 120))
def test_symmetrized_cdf_is_even(points, t):
    sym = symmetrize(EmpiricalMeasure1D(points))
    assert sym.median() == 0.0
    assert abs(sym.cdf(-t) - (1.0 - sym.cdf(t, left=True))) < 1e-12


def test_stieltjes_point_mass():
    assert stieltjes_of_empirical(EmpiricalMeasure1D([0.0]), 1j) == pytest.approx(1j)
    with pytest.raises(ValueError):
        stieltjes_of_empirical(EmpiricalMeasure1D([0.0]), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-10, 10), st.floats(1e-3, 10))
def test_stieltjes_herglotz(points, x, y):
    assert stieltjes_of_empirical(EmpiricalMeasure1D(points), complex(x, y)).imag > 0


def test_stieltjes_matches_resolvent_trace():
    S = sample(20, seed=2)
    z, eta = 0.4 + 0.1j, 0.3 + 0.2j
    sym = symmetrize(singular_values(S.M, z))
    H = hermitize(S.M, z)
    direct = np.trace(np.linalg.inv(H - eta * np.eye(40))) / 40
    assert abs(stieltjes_of_empirical(sym, eta) - direct) <= 1e-10


def test_cdf_step_exact():
    m = EmpiricalMeasure1D([3.0, 1.0, 2.0, 2.0])
    assert list(m.points) == [1.0, 2.0, 2.0, 3.0]
    assert m.cdf(2.0) == 0.75 and m.cdf(2.0, left=True) == 0.25 and m.cdf(0.5) == 0.0


def test_pooled_2d():
    a = EmpiricalMeasure2D([1, 2j])
    b = EmpiricalMeasure2D([3])
    assert EmpiricalMeasure2D.pooled([a, b]).n == 3


def test_spectrum_csv_roundtrip(tmp_path):
    S = sample(30, seed=3)
    ev = eigenvalues(S.M, S.seed)
    write_spectrum_csv(tmp_path / "e.csv", ev, seed=S.seed, gamma=0.3, mu=0.5)
    back = read_spectrum_csv(tmp_path / "e.csv")
    np.testing.assert_array_equal(back.points, ev.points)
    assert back.meta["n"] == "30" and back.meta["gamma"] == "0.3"
    sv = singular_values(S.M, 1.0)
    write_spectrum_csv(tmp_path / "s.csv", sv, z="1+0i")
    np.testing.assert_array_equal(read_spectrum_csv(tmp_path / "s.csv").points, sv.points)
