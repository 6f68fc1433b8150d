import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from excirec.eigen import diagonalize
from excirec.errors import InvalidConfigError, SingularityError
from excirec.exciton import (AggregateGeometry, DisorderSpec, array2d, build_hamiltonian, chain,
                             sample_disorder)
from excirec.nearfield import (Spectrum, TipScan, absorption_strength, add_noise, build_scan,
                               field_projections, frequency_map, grid_scan, hertz_field, line_scan,
                               read_spectrum_csv, scan_spectra, scan_spectrum, write_spectrum_csv)

SIZES = [2, 5, 20, 50]


def single(mu=(1, 0, 0)):
    return AggregateGeometry([[0, 0, 0]], [mu])


def test_field_scaling():
    r = np.array([0.3, -0.4, 1.1])
    e1 = hertz_field(r, [0, 0, 0])
    e2 = hertz_field(2 * r, [0, 0, 0])
    assert np.allclose(e2, e1 / 8, rtol=1e-14)


def test_field_on_axis():
    # directly below a z dipole: E = 2 d / h^3
    assert np.allclose(hertz_field([0, 0, 0], [0, 0, 2.0]), [0, 0, 2 / 8], atol=1e-15)


def test_field_singular():
    with pytest.raises(SingularityError):
        hertz_field([1, 2, 3], [1, 2, 3])


def test_in_plane_dipole_under_tip_is_dark():
    assert absorption_strength([1.0], single(), [0, 0, 2]) == 0.0


@given(st.floats(-10, 10), st.floats(0.5, 5))
def test_single_molecule_two_lobes(x, h):
    r2 = x * x + h * h
    expected = (3 * x * h / r2**2.5) ** 2
    got = absorption_strength([1.0], single(), [x, 0, h])
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-300)
    assert got == pytest.approx(absorption_strength([1.0], single(), [-x, 0, h]), rel=1e-12, abs=1e-300)


def test_quadratic_in_tip_moment():
    g = chain(5)
    c = np.random.default_rng(0).standard_normal(5)
    r = [0.7, 0.2, 2.0]
    a1 = absorption_strength(c, g, r, [0, 0, 1])
    a2 = absorption_strength(c, g, r, [0, 0, 2])
    assert a2 == pytest.approx(4 * a1, rel=1e-12)


def test_scan_defaults():
    s = build_scan(chain(20))
    assert s.n_tip == 512 and s.z_dip == 2.0
    assert s.positions[0, 0] == pytest.approx(9.5 - 20) and s.positions[-1, 0] == pytest.approx(29.5)
    gs = build_scan(array2d(10, 5), {"nx": 16, "ny": 8})
    assert gs.grid_shape == (8, 16)
    assert gs.positions[1, 0] > gs.positions[0, 0] and gs.positions[1, 1] == gs.positions[0, 1]
    with pytest.raises(InvalidConfigError):
        build_scan(chain(3), {"kind": "spiral"})
    with pytest.raises(InvalidConfigError):
        TipScan([[0, 0, 1.0]], 2.0)


@pytest.mark.parametrize("n", SIZES)
def test_completeness_sum_rule(n):
    g = chain(n)
    h = build_hamiltonian(g, sample_disorder(DisorderSpec(0.2, 0.1, n), g))
    es = diagonalize(h)
    scan = line_scan(g, 200)
    total = scan_spectra(es.coefficients, g, scan).sum(axis=0)
    # direct evaluation: sum over sites of (mu_m . E(R_m))^2, one loop per tip
    direct = np.array([sum(float(np.dot(g.dipoles[m], hertz_field(g.positions[m], r))) ** 2
                           for m in range(n)) for r in scan.positions])
    assert np.abs(total - direct).max() / direct.max() < 1e-10


def test_completeness_sum_rule_2d():
    g = array2d(4, 3)
    es = diagonalize(build_hamiltonian(g))
    scan = grid_scan(g, 12, 10)
    total = scan_spectra(es.coefficients, g, scan).sum(axis=0)
    direct = (field_projections(g, scan) ** 2).sum(axis=1)
    assert np.abs(total - direct).max() / direct.max() < 1e-10


@pytest.mark.parametrize("n", SIZES)
def test_mirror_symmetry_clean_chain(n):
    g = chain(n)
    es = diagonalize(build_hamiltonian(g))
    spec = scan_spectra(es.coefficients, g, line_scan(g))
    err = np.abs(spec - spec[:, ::-1]).max(axis=1) / spec.max(axis=1)
    assert err.max() < 1e-10


def test_sign_invariance_and_nonnegative():
    g = chain(7)
    c = np.random.default_rng(3).standard_normal(7)
    s = line_scan(g, 64)
    a, b = scan_spectrum(c, g, s), scan_spectrum(-c, g, s)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values >= 0)


def test_scan_spectra_matches_pointwise():
    g = chain(4)
    c = np.random.default_rng(1).standard_normal(4)
    s = line_scan(g, 17, span=10)
    vec = scan_spectra(c, g, s)[0]
    point = [absorption_strength(c, g, r) for r in s.positions]
    assert np.allclose(vec, point, rtol=1e-13, atol=0)


def test_noise_identity_and_statistics():
    g = chain(3)
    s = line_scan(g, 100)
    spec = Spectrum(np.ones(100), s)
    assert add_noise(spec, 0, 1) is spec
    diffs = np.concatenate([add_noise(spec, 0.1, k).values - 1 for k in range(1000)])
    assert diffs.size == 100_000
    assert abs(diffs.std(ddof=1) / 0.1 - 1) < 0.02
    assert add_noise(spec, 0.1, 5).values.tolist() == add_noise(spec, 0.1, 5).values.tolist()
    with pytest.raises(InvalidConfigError):
        add_noise(spec, -1, 0)


def test_frequency_map_small_gamma():
    g = chain(6)
    es = diagonalize(build_hamiltonian(g))
    s = line_scan(g, 50)
    # dim states pick up leakage from bright neighbours, so stay well inside the 10 gamma regime
    gamma = min(np.diff(es.energies)) / 50
    fmap = frequency_map(es, g, s, gamma, omega=es.energies)
    spectra = scan_spectra(es.coefficients, g, s)
    for l in range(6):
        ref = spectra[l] / (np.pi * gamma)
        assert np.abs(fmap.values[l] - ref).max() < 0.01 * ref.max()
        # the leakage is exactly the Lorentzian tails of the other states
        tails = sum(spectra[k] * (gamma / np.pi) / ((es.energies[l] - es.energies[k]) ** 2 + gamma**2)
                    for k in range(6) if k != l)
        assert np.allclose(np.abs(fmap.values[l] - ref), tails, rtol=1e-6, atol=1e-12 * ref.max())


def test_frequency_map_single_ridge():
    g = single()
    es = diagonalize(build_hamiltonian(g))
    s = line_scan(g, 21, span=4)
    fmap = frequency_map(es, g, s, 0.1, n_omega=101)
    assert fmap.values.shape == (101, 21)
    assert np.argmax(fmap.values[:, 3]) == 50
    lor = (0.1 / np.pi) / (fmap.omega**2 + 0.01)
    ridge = np.outer(lor, scan_spectra([1.0], g, s)[0])
    assert np.allclose(fmap.values, ridge, rtol=1e-12, atol=0)


def test_spectrum_csv_roundtrip(tmp_path):
    g = chain(5)
    es = diagonalize(build_hamiltonian(g))
    sp = scan_spectrum(es.coefficients[2], g, line_scan(g, 32))
    write_spectrum_csv(tmp_path / "s.csv", sp)
    assert np.array_equal(read_spectrum_csv(tmp_path / "s.csv"), sp.values)
