import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elliptic_laplacian.ensemble import (AtomFamily, EnsembleConfig, make_gaussian_atoms, make_rademacher_atoms,
                                         read_matrix_binary, read_matrix_csv, row_sum_check, sample_elliptic,
                                         validate_family, write_matrix_binary, write_matrix_csv)
from elliptic_laplacian.spectra import eigenvalues


def pairs(atoms, n, seed=0):
    return atoms.sample_pairs(np.random.default_rng(seed), n)


def within(emp, target, se, k=3.0):
    return abs(emp - target) <= k * se


# --- atoms ------------------------------------------------------------------


def test_gaussian_mu1_gamma0_is_real_and_uncorrelated():
    x1, x2 = pairs(make_gaussian_atoms(1.0, 0.0), 200_000)
    assert not np.any(x1.imag) and not np.any(x2.imag)
    r = np.mean(x1.real * x2.real)
    assert within(r, 0.0, 1 / np.sqrt(len(x1)))


@pytest.mark.parametrize("gamma", [-0.7, 0.3, 0.9])
def test_gaussian_real_pair_correlation(gamma):
    x1, x2 = pairs(make_gaussian_atoms(1.0, gamma), 400_000, seed=1)
    prod = (x1 * x2).real
    assert within(prod.mean(), gamma, prod.std() / np.sqrt(len(prod)))


def test_gaussian_half_half_moments():
    x1, x2 = pairs(make_gaussian_atoms(0.5, 0.5), 10**6, seed=2)
    a = x1.real**2
    b = x1.imag * x2.imag
    assert within(a.mean(), 0.5, a.std() / 1e3)
    assert within(b.mean(), -0.25, b.std() / 1e3)


def test_gaussian_parameter_range():
    with pytest.raises(ValueError):
        make_gaussian_atoms(1.2, 0.0)
    with pytest.raises(ValueError):
        make_gaussian_atoms(0.5, 1.5)
    # |gamma| = 1 is allowed for the Wigner end of the family but carries no anti-concentration
    assert make_gaussian_atoms(1.0, 1.0).anticonc is None
    assert make_gaussian_atoms(1.0, 0.5).anticonc is not None


def test_rademacher_independent_signs():
    x1, x2 = pairs(make_rademacher_atoms(0.0), 10**6, seed=3)
    assert set(np.unique(x1.real)) == {-1.0, 1.0}
    assert within(np.mean(x1.real * x2.real), 0.0, 1e-3)


def test_rademacher_rejects_boundary():
    with pytest.raises(ValueError):
        make_rademacher_atoms(1 - 1e-9)
    with pytest.raises(ValueError):
        make_rademacher_atoms(-1.0)


def test_rademacher_equal_frequency():
    x1, x2 = pairs(make_rademacher_atoms(0.5), 10**6, seed=4)
    p = np.mean(x1 == x2)
    assert within(p, 0.75, np.sqrt(0.75 * 0.25 / 1e6))
    atoms = make_rademacher_atoms(0.5)
    assert atoms.anticonc == (0.5, 0.25)


@pytest.mark.parametrize("atoms", [make_gaussian_atoms(1.0, 0.5), make_rademacher_atoms(0.5)], ids=["gauss", "rad"])
def test_validate_family_passes(atoms):
    rep = validate_family(atoms, 10**6, 4.0, seed=5)
    assert rep.passed, "\n".join(rep.lines())


def test_validate_family_catches_planted_variance():
    good = make_gaussian_atoms(1.0, 0.5)

    def doubled(rng, size):
        x1, x2 = good.sample_pairs(rng, size)
        return np.sqrt(2) * x1, np.sqrt(2) * x2

    rep = validate_family(good, 10**5, 4.0, seed=6, sampler=doubled)
    assert not rep.passed
    failed = [c.name for c in rep.checks if not c.passed]
    assert any("|xi1|^2" in name for name in failed)


def test_validate_family_needs_enough_samples():
    with pytest.raises(ValueError):
        validate_family(make_gaussian_atoms(1.0, 0.5), 100)


# --- matrices ----------------------------------------------------------------


def test_n1_is_zero():
    S = sample_elliptic(EnsembleConfig(1, make_gaussian_atoms(1.0, 0.5), "iid-standard", seed=3))
    assert S.L[0, 0] == 0 and S.M[0, 0] == 0
    assert row_sum_check(S) == 0.0


def test_n0_rejected():
    with pytest.raises(ValueError):
        EnsembleConfig(0, make_gaussian_atoms(1.0, 0.5))


def test_mean_shift_needs_recenter():
    with pytest.raises(ValueError):
        EnsembleConfig(10, make_gaussian_atoms(1.0, 0.5, mean_shift=0.3))


def test_determinism_bitwise():
    cfg = EnsembleConfig(500, make_gaussian_atoms(0.5, 0.5), seed=11)
    a, b = sample_elliptic(cfg), sample_elliptic(cfg)
    assert a.M.tobytes() == b.M.tobytes()
    c = sample_elliptic(EnsembleConfig(500, make_gaussian_atoms(0.5, 0.5), seed=12))
    assert not np.array_equal(a.M, c.M)


def test_sample_immutable():
    S = sample_elliptic(EnsembleConfig(5, make_gaussian_atoms(1.0, 0.5), seed=1))
    with pytest.raises(ValueError):
        S.M[0, 0] = 1.0


def test_mirror_pair_correlation_n500():
    S = sample_elliptic(EnsembleConfig(500, make_gaussian_atoms(1.0, 0.5), seed=13))
    iu = np.triu_indices(500, 1)
    a, b = S.X[iu].real, S.X.T[iu].real
    r = np.corrcoef(a, b)[0, 1]
    se = (1 - 0.25) / np.sqrt(len(a))  # large-sample s.e. of Pearson r
    assert within(r, 0.5, se)


@pytest.mark.parametrize("n,mu,gamma", [(200, 1.0, 0.5), (1000, 0.5, -0.5)])
def test_row_sum_bound(n, mu, gamma):
    S = sample_elliptic(EnsembleConfig(n, make_gaussian_atoms(mu, gamma), seed=n))
    direct = max(abs(sum(S.L[i, j] for j in range(n))) for i in range(0, n, max(1, n // 50)))
    assert direct <= S.row_sum_bound()
    assert row_sum_check(S) <= S.row_sum_bound()


def test_diagonal_is_row_sum_and_M_scaling():
    S = sample_elliptic(EnsembleConfig(40, make_gaussian_atoms(0.5, 0.2), "iid-standard", seed=2))
    assert np.array_equal(np.diag(S.D), S.X.sum(axis=1))
    np.testing.assert_array_equal(S.M, S.L / np.sqrt(40))


def test_recentering():
    m = 0.4 - 0.1j
    n = 30
    S = sample_elliptic(EnsembleConfig(n, make_gaussian_atoms(1.0, 0.5, mean_shift=m), seed=3, recenter=True))
    np.testing.assert_allclose(S.M, (S.L + (n - 1) * m * np.eye(n)) / np.sqrt(n), rtol=0, atol=1e-14)
    off = S.X[~np.eye(n, dtype=bool)]
    assert abs(off.mean() - m) < 4 / np.sqrt(off.size)


def test_kernel_vector_eigenvalue():
    S = sample_elliptic(EnsembleConfig(300, make_gaussian_atoms(0.5, 0.3), seed=9))
    ev = eigenvalues(S.M).points
    assert np.abs(ev).min() <= 1e-8 * np.linalg.norm(S.M, 2)
    assert np.linalg.norm(S.M @ np.ones(300)) <= 300**1.5 * np.finfo(float).eps * np.abs(S.X).max()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**64 - 1), mu=st.floats(0, 1), gamma=st.floats(-0.99, 0.99),
       diag=st.sampled_from(["zero", "iid-standard"]))
def test_row_sums_property(n, seed, mu, gamma, diag):
    S = sample_elliptic(EnsembleConfig(n, make_gaussian_atoms(mu, gamma), diag, seed))
    assert row_sum_check(S) <= S.row_sum_bound()
    assert np.linalg.norm(S.M @ np.ones(n)) <= n**1.5 * np.finfo(float).eps * max(np.abs(S.X).max(), 1e-300)


def test_rows_do_not_depend_on_n_prefix():
    # counter-based streams: row i's upper entries depend only on (seed, i)
    a = sample_elliptic(EnsembleConfig(20, make_rademacher_atoms(0.3), seed=5))
    b = sample_elliptic(EnsembleConfig(20, make_rademacher_atoms(0.3), seed=5))
    assert np.array_equal(a.X, b.X)


def test_atom_kind_checked():
    with pytest.raises(ValueError):
        AtomFamily("cauchy", 1.0, 0.0).sample_pairs(np.random.default_rng(0), 3)


def test_matrix_io_roundtrip(tmp_path):
    S = sample_elliptic(EnsembleConfig(7, make_gaussian_atoms(0.5, 0.5), seed=1))
    write_matrix_csv(tmp_path / "m.csv", S.M)
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), S.M)
    write_matrix_binary(tmp_path / "m.bin", S.M)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:5] == b"ELSP1"
    assert len(raw) == 5 + 8 + 16 * 49
    np.testing.assert_array_equal(read_matrix_binary(tmp_path / "m.bin"), S.M)


def test_binary_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE1" + b"\0" * 8)
    with pytest.raises(ValueError):
        read_matrix_binary(tmp_path / "x.bin")
