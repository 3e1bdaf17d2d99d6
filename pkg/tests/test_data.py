import numpy as np
import pandas as pd
import pytest

from robust_mte.data import (CellStats, Dataset, cell_stats, covariance_estimates, load_csv,
                             n_distinct_propensities, split_by_covariate)
from robust_mte.errors import ConfigError, DataError, OverlapError
from robust_mte.montecarlo import DgpSpec, dgp_sample

from conftest import make_stats


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_small_file(tmp_path):
    path = _write(tmp_path, "y,d,z\n1,0,a\n2,1,a\n3,0,b\n4,1,b\n5,1,a\n6,0,b\n")
    ds = load_csv(path)
    assert ds.n == 6
    assert ds.instrument_levels == ("a", "b")
    np.testing.assert_array_equal(ds.z, [0, 0, 1, 1, 0, 1])


def test_load_explicit_order_and_schema(tmp_path):
    path = _write(tmp_path, "out,treat,inst,grp\n1,0,a,x\n2,1,b,y\n3,0,b,x\n4,1,a,y\n")
    ds = load_csv(path, {"y": "out", "d": "treat", "z": "inst", "w": "grp"},
                  instrument_levels=["b", "a"])
    assert ds.instrument_levels == ("b", "a")
    assert ds.covariate_levels == ("x", "y")
    np.testing.assert_array_equal(ds.w, [0, 1, 0, 1])


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="invalid treatment value"):
        load_csv(_write(tmp_path, "y,d,z\n1,2,a\n"))
    with pytest.raises(ConfigError, match="missing column"):
        load_csv(_write(tmp_path, "y,d\n1,1\n"))
    with pytest.raises(DataError, match="empty file"):
        load_csv(_write(tmp_path, ""))
    with pytest.raises(DataError, match="empty file"):
        load_csv(_write(tmp_path, "y,d,z\n"))


def test_constant_outcome():
    z = np.repeat([0, 1, 2], 20)
    d = np.tile([0, 1], 30)
    ds = Dataset(y=np.full(60, 3.0), d=d, z=z, instrument_levels=("a", "b", "c"))
    st = cell_stats(ds)
    np.testing.assert_allclose(st.beta1_hat, 3.0)
    np.testing.assert_allclose(st.beta0_hat, 3.0)
    assert np.all(st.sigma2 == 0)
    cov = covariance_estimates(st)
    assert np.all(cov.sigma_beta == 0)


def test_cell_stats_group_by_oracle():
    ds = dgp_sample(DgpSpec.quadratic((0.5, 0.3, 0.7), n=3000, seed=2))
    st = cell_stats(ds)
    frame = pd.DataFrame({"y": ds.y, "d": ds.d, "z": ds.z})
    g = frame.groupby(["d", "z"])["y"]
    for (d, z), mean in g.mean().items():
        target = st.beta1_hat if d == 1 else st.beta0_hat
        # pandas sums in a different order, so equality is up to rounding
        assert target[z] == pytest.approx(mean, rel=1e-13)
    var = g.var(ddof=0)
    for (d, z), v in var.items():
        assert st.sigma2[d, z] == pytest.approx(v, rel=1e-12)
    np.testing.assert_allclose(st.q_hat, frame.groupby("z").size() / len(frame))
    np.testing.assert_allclose(st.p_hat, frame.groupby("z")["d"].mean())
    assert st.q_hat.sum() == pytest.approx(1.0, abs=1e-12)


def test_quadratic_design_treated_mean():
    ds = dgp_sample(DgpSpec.quadratic((0.5, 0.3, 0.7), n=200_000, seed=3))
    st = cell_stats(ds)
    assert st.beta1_hat[0] == pytest.approx(2.5, abs=0.02)


def test_overlap_error_names_cell():
    ds = Dataset(y=np.arange(4.0), d=[1, 1, 0, 1], z=[0, 0, 1, 1], instrument_levels=("z0", "z1"))
    with pytest.raises(OverlapError, match=r"overlap violated at \(d=0, z='z0'\)"):
        cell_stats(ds)


def test_thin_cell_warning():
    ds = Dataset(y=np.arange(5.0), d=[1, 0, 1, 0, 0], z=[0, 0, 1, 1, 1], instrument_levels=("a", "b"))
    with pytest.warns(RuntimeWarning):
        st = cell_stats(ds)
    assert st.thin_cells


def test_dataset_validation():
    with pytest.raises(DataError, match="invalid treatment value"):
        Dataset(y=[1.0], d=[3], z=[0], instrument_levels=("a",))
    with pytest.raises(DataError):
        Dataset(y=[], d=[], z=[], instrument_levels=("a",))
    with pytest.raises(DataError):
        Dataset(y=[1.0], d=[1], z=[2], instrument_levels=("a",))


def test_covariance_formulas():
    st = make_stats([0.5, 0.5], q=[0.5, 0.5])
    cov = covariance_estimates(st)
    np.testing.assert_allclose(cov.sigma_p, np.diag([0.5, 0.5]))


@pytest.mark.parametrize("seed", range(5))
def test_covariance_invariants(seed):
    rng = np.random.default_rng(seed)
    k1 = rng.integers(2, 6)
    q = rng.dirichlet(np.ones(k1))
    st = make_stats(rng.uniform(0.1, 0.9, k1), q=q)
    cov = covariance_estimates(st)
    for mat in (cov.sigma_p, cov.sigma_q, cov.sigma_beta1, cov.sigma_beta0):
        np.testing.assert_allclose(mat, mat.T)
    np.testing.assert_allclose(cov.sigma_q.sum(axis=1), 0, atol=1e-10)
    assert np.linalg.eigvalsh(cov.sigma_q).min() > -1e-12
    assert np.all(np.diag(cov.sigma_p) > 0)
    assert np.all(np.diag(cov.sigma_beta1) > 0)


def test_propensity_rate():
    errs = []
    for n in (2000, 20000, 200000):
        reps = [np.max(np.abs(cell_stats(dgp_sample(DgpSpec.linear((0.3, 0.6), n=n, seed=s))).p_hat
                              - [0.3, 0.6])) for s in range(8)]
        errs.append(np.mean(reps))
    for small, big in zip(errs, errs[1:]):
        ratio = small / big
        assert np.sqrt(10) / 3 < ratio < 3 * np.sqrt(10)


def test_json_round_trip():
    st = cell_stats(dgp_sample(DgpSpec.linear((0.3, 0.6), n=500, seed=1)))
    back = CellStats.from_json(st.to_json())
    for name in ("q_hat", "p_hat", "beta1_hat", "beta0_hat", "sigma2", "counts"):
        np.testing.assert_array_equal(getattr(back, name), getattr(st, name))
    assert back.n == st.n and back.instrument_levels == st.instrument_levels


def test_split_by_covariate():
    ds = Dataset.from_labels(y=np.arange(8.0), d=[0, 1] * 4, z=list("aabbaabb"),
                             w=list("xxxxyyyy"))
    parts = split_by_covariate(ds)
    assert set(parts) == {"x", "y"}
    assert parts["x"].instrument_levels == ("a", "b")
    bad = Dataset.from_labels(y=np.arange(6.0), d=[0, 1] * 3, z=list("aabbaa"), w=list("xxxxyy"))
    with pytest.raises(DataError, match="same instrument level set"):
        split_by_covariate(bad)


def test_distinct_propensities():
    assert n_distinct_propensities(make_stats([0.5, 0.5 + 1e-10, 0.7])) == 2
    assert n_distinct_propensities(make_stats([0.2, 0.5, 0.7])) == 3
