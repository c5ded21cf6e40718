import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crvae.datagen import (Dataset, NormalizationError, ParseError, denormalize, gen_henon,
                           gen_lorenz96, gen_var, henon_step, load_adjacency, load_csv,
                           lorenz96_derivative, lorenz96_truth, save_adjacency, save_csv,
                           simulate_henon, simulate_var, companion_radius)
from crvae.numcore import Rng
from crvae.datagen import normalize_minmax


# -- VAR ---------------------------------------------------------------------------------


def test_zero_coefficients_give_pure_noise():
    noise = Rng(0).normal((50, 3))
    x = simulate_var([np.zeros((3, 3))] * 3, 50, noise)
    np.testing.assert_array_equal(x, noise)


def test_var_matches_hand_recursion():
    rng = Rng(1)
    coefs = [0.2 * rng.normal((2, 2)) for _ in range(2)]
    noise = rng.normal((6, 2))
    x = simulate_var(coefs, 6, noise)
    hist = [np.zeros(2), np.zeros(2)]
    for t in range(6):
        nxt = noise[t] + coefs[0] @ hist[-1] + coefs[1] @ hist[-2]
        np.testing.assert_allclose(x[t], nxt, rtol=1e-14, atol=1e-15)
        hist.append(nxt)


def test_var_defaults_and_truth():
    ds = gen_var(rng=Rng(0))
    assert ds.observations.shape == (2048, 10) and ds.known_lag == 3
    assert np.array_equal(ds.truth, (np.abs(sum(ds.coefs)) > 0).astype(int))
    assert np.all(np.diag(ds.truth) == 1)
    assert companion_radius(ds.coefs) < 0.95
    assert np.all(np.isfinite(ds.observations)) and np.abs(ds.observations).max() < 100


def test_generators_are_deterministic():
    for gen in (gen_var, gen_henon, gen_lorenz96):
        a, b = gen(T=200, rng=Rng(4)), gen(T=200, rng=Rng(4))
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.truth, b.truth)


def test_var_rejects_small_problems():
    with pytest.raises(ValueError):
        gen_var(m=1)
    with pytest.raises(ValueError):
        gen_var(T=50)


# -- Hénon -------------------------------------------------------------------------------


def test_henon_hand_substitution():
    traj = simulate_henon(np.zeros(1), np.zeros(1), 2)
    assert traj[2, 0] == pytest.approx(1.4, abs=1e-15)
    assert traj[3, 0] == pytest.approx(-0.56, abs=1e-15)


def test_henon_coupling_term():
    prev, cur = np.array([0.1, 0.2]), np.array([0.5, -0.3])
    out = henon_step(prev, cur, 0.3)
    assert out[1] == pytest.approx(1.4 - (0.3 * 0.5 + 0.7 * -0.3) ** 2 + 0.3 * 0.2, abs=1e-15)


def test_henon_truth_has_eleven_edges():
    ds = gen_henon(rng=Rng(0))
    assert ds.observations.shape == (2048, 6)
    assert ds.truth.sum() == 11
    for p in range(6):
        assert ds.truth[p, p] == 1
        if p:
            assert ds.truth[p, p - 1] == 1


# -- Lorenz-96 ---------------------------------------------------------------------------


def test_lorenz_fixed_point():
    np.testing.assert_array_equal(lorenz96_derivative(np.full(7, 10.0), 10.0), np.zeros(7))


def test_lorenz_hand_derivative():
    d = lorenz96_derivative(np.arange(1.0, 6.0), 10.0)
    assert d[0] == -1.0


def test_lorenz_truth_matches_vector_field():
    truth = lorenz96_truth(10)
    assert truth.sum() == 40
    # perturbing x_j changes dx_i/dt exactly when truth[i, j] = 1
    x = Rng(0).normal((10,)) + 3.0
    base = lorenz96_derivative(x, 10.0)
    for j in range(10):
        moved = x.copy()
        moved[j] += 0.37
        changed = lorenz96_derivative(moved, 10.0) != base
        assert np.array_equal(changed, truth[:, j].astype(bool))


def test_lorenz_defaults():
    ds = gen_lorenz96(rng=Rng(0))
    assert ds.observations.shape == (2048, 10) and ds.truth.sum() == 40
    assert np.all(np.isfinite(ds.observations))


# -- CSV -------------------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    x = np.array([[0.1, 2.0], [1e-300, -3.5], [7.0, 1 / 3]])
    save_csv(tmp_path / "x.csv", x)
    np.testing.assert_array_equal(load_csv(tmp_path / "x.csv").observations, x)
    save_csv(tmp_path / "h.csv", x, header=["a", "b"])
    np.testing.assert_array_equal(load_csv(tmp_path / "h.csv", has_header=True).observations, x)


def test_csv_with_truth(tmp_path):
    save_csv(tmp_path / "x.csv", np.ones((4, 2)) * [1, 2])
    save_adjacency(tmp_path / "t.csv", np.eye(2))
    ds = load_csv(tmp_path / "x.csv", truth_path=tmp_path / "t.csv")
    assert np.array_equal(ds.truth, np.eye(2)) and ds.known_lag is None
    assert np.array_equal(load_adjacency(tmp_path / "t.csv"), np.eye(2))


def test_csv_parse_error_location(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,4\n5,6\n7,8\n9,x\n")
    with pytest.raises(ParseError, match="row 5, column 2"):
        load_csv(p)


def test_csv_ragged_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(ParseError, match="row 2"):
        load_csv(p)


# -- normalization ----------------------------------------------------------------------------


def test_minmax_examples():
    ds = normalize_minmax(Dataset(np.array([[0.0, 0.0], [5.0, 0.5], [10.0, 1.0]])))
    np.testing.assert_array_equal(ds.observations[:, 0], [0, 0.5, 1])
    np.testing.assert_array_equal(ds.observations[:, 1], [0, 0.5, 1])


def test_constant_column_is_named():
    with pytest.raises(NormalizationError, match="column 2"):
        normalize_minmax(Dataset(np.array([[0.0, 3.0], [1.0, 3.0]])))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_minmax_round_trip(x):
    x[0], x[1] = -1e3 - 1, 1e3 + 1   # guarantee a non-constant column
    ds = normalize_minmax(Dataset(x))
    assert ds.observations.min() >= 0 and ds.observations.max() <= 1
    np.testing.assert_allclose(denormalize(ds).observations, x, rtol=0, atol=1e-12 * 2e3)
