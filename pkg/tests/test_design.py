import math
import warnings

import mpmath
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from skillscale.dataset import ModelRecord, ScoreTable
from skillscale.design import Layout, Standardizer, build_design, compute_features, feature_vector, flops
from skillscale.errors import DomainError, RankDeficientWarning


def recs(spec):
    return ScoreTable(tuple(ModelRecord(m, f, s, t) for m, f, s, t in spec), ())


def test_feature_vector_units():
    assert tuple(feature_vector(1, 1).as_array()) == (0.0, 0.0, 0.0)
    fv = feature_vector(math.e, math.e ** 2)
    assert fv.log_s == pytest.approx(1.0, abs=1e-15)
    assert fv.log_t == pytest.approx(2.0, abs=1e-15)
    assert fv.interaction == fv.log_s * fv.log_t


def test_feature_vector_high_precision():
    mpmath.mp.dps = 50
    fv = feature_vector(7e9, 2e12)
    ls, lt = mpmath.log(mpmath.mpf(7e9)), mpmath.log(mpmath.mpf(2e12))
    for got, want in ((fv.log_s, ls), (fv.log_t, lt), (fv.interaction, ls * lt)):
        assert abs(got - float(want)) <= 1e-12 * abs(float(want))


@pytest.mark.parametrize("s,t", [(0, 1), (1, 0), (-1, 5)])
def test_feature_vector_domain(s, t):
    with pytest.raises(DomainError):
        feature_vector(s, t)
    with pytest.raises(DomainError):
        flops(s, t)


def test_flops_budgets():
    assert flops(1, 1) == 6
    # 0.16B params on 1.04T tokens is the 100 x 1e19 budget row
    assert flops(0.16e9, 1.04e12) == pytest.approx(9.984e20, rel=1e-12)
    assert flops(0.16e9, 1.04e12) / 1e19 == pytest.approx(100, rel=0.01)
    assert flops(72e9, 15e12) == pytest.approx(6.48e24, rel=1e-12)
    assert flops(72e9, 15e12) / 1e19 == pytest.approx(648000, rel=1e-12)


@given(st.floats(1.0, 1e12), st.floats(1.0, 1e12), st.floats(1.001, 10.0))
def test_flops_increasing_and_symmetric(s, t, k):
    assert flops(s * k, t) > flops(s, t)
    assert flops(s, t * k) > flops(s, t)
    assert flops(s, t) == pytest.approx(flops(t, s), rel=1e-15)


def test_two_models_two_families():
    with pytest.warns(RankDeficientWarning):
        X = build_design(recs([("a", "f", 1e9, 1e12), ("b", "g", 2e9, 2e12)]))
    assert X.shape == (2, 5)
    assert np.array_equal(X.matrix[:, 3:].sum(axis=1), [1, 1])


def test_single_family_constant_column():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        X = build_design(recs([("a", "f", 1e9, 1e12), ("b", "f", 2e9, 3e12), ("c", "f", 4e9, 2e12)]))
    assert X.shape == (3, 4)
    assert np.all(X.matrix[:, 3] == 1.0)


def test_rank_against_pivoted_qr(rng):
    spec = []
    for f in range(3):
        for k in range(4 if f < 2 else 2):
            spec.append((f"{f}-{k}", f"fam{f}", float(10 ** rng.uniform(8, 11)), float(10 ** rng.uniform(11, 13))))
    X = build_design(recs(spec))
    assert X.shape == (10, 6)
    # rank-revealing QR as an independent route to the rank
    _, R, _ = scipy.linalg.qr(X.matrix, pivoting=True)
    diag = np.abs(np.diag(R))
    assert int(np.sum(diag > 1e-9 * diag[0])) == 6
    assert X.rank == 6


def test_rank_deficient_warns():
    # every model has the same size and tokens: compute columns are constant
    spec = [(f"m{k}", "f" if k < 2 else "g", 1e9, 1e12) for k in range(4)]
    with pytest.warns(RankDeficientWarning, match="rank 2"):
        build_design(recs(spec))


def test_row_reproduces_translog(rng):
    spec = [("a", "f", 3e9, 1e12), ("b", "g", 7e10, 4e12), ("c", "f", 1e8, 2e11)]
    X = build_design(recs(spec), warn_rank=False)
    B = rng.normal(size=(5, 2))
    theta = X.matrix @ B
    for row, (_, fam, s, t) in enumerate(spec):
        x = feature_vector(s, t).as_array()
        alpha = B[X.family_index[fam]]
        assert np.allclose(theta[row], alpha + x @ B[:3], atol=1e-12)


def test_permutation_permutes_rows(rng):
    spec = [(f"m{k}", f"f{k % 3}", float(1e9 * (k + 1)), float(1e12 * (k + 2))) for k in range(9)]
    X = build_design(recs(spec))
    perm = rng.permutation(9)
    Xp = build_design(recs([spec[i] for i in perm]), families=X.families)
    assert np.array_equal(Xp.matrix, X.matrix[perm])


def test_empty_table_rejected():
    with pytest.raises(Exception):
        build_design(recs([]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([Layout(), Layout(intercepts="shared"),
                                               Layout("log_flops", family_slopes=True)]))
def test_raw_from_std_maps_coefficients(seed, layout):
    rng = np.random.default_rng(seed)
    m, n = 3, 12
    records = [ModelRecord(f"m{k}", "x", float(10 ** rng.uniform(8, 11)), float(10 ** rng.uniform(11, 13)))
               for k in range(n)]
    feats = compute_features(records, layout.features)
    fam = rng.integers(0, m, size=n)
    std = Standardizer.fit(feats)
    Xs = layout.matrix(std.apply(feats), fam, m)
    Xr = layout.matrix(feats, fam, m)
    Bs = rng.normal(size=(layout.n_cols(m), 2))
    Br = layout.raw_from_std(std, m) @ Bs
    assert np.allclose(Xr @ Br, Xs @ Bs, atol=1e-9)
