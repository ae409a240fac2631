import numpy as np
import pytest

from skillscale.design import build_design
from skillscale.downstream import (SkillRegression, fit_item_models, fit_task_regression, hypothetical_skills,
                                   load_task_data, predict_items, predict_pass_at_k, predict_task)
from skillscale.errors import ConfigError, DataError, DimensionError
from skillscale.identify import interpret_pipeline, transform
from skillscale.model import sigmoid, skills


def _skills(rng, n=12, d=3):
    return rng.normal(size=(n, d))


def test_constant_half():
    reg = fit_task_regression(np.random.default_rng(0).normal(size=(8, 3)), np.full(8, 0.5))
    assert reg.degenerate
    assert np.allclose(reg.weights, 0) and abs(reg.intercept) < 1e-12


def test_recovers_generator(rng):
    S = _skills(rng)
    w, w0 = np.array([0.8, -0.5, 0.3]), 0.2
    y = sigmoid(S @ w + w0)
    reg = fit_task_regression(S, y, lam=0.0)
    assert np.max(np.abs(predict_task(reg, S) - y)) < 1e-4
    new = rng.normal(size=3) * 0.5
    assert abs(predict_task(reg, new) - float(sigmoid(new @ w + w0))) < 2e-3


def test_ridge_shrinks_monotonically(rng):
    S = _skills(rng)
    y = sigmoid(S @ np.array([1.0, -1.0, 0.5]))
    norms = [np.linalg.norm(fit_task_regression(S, y, lam=lam).weights) for lam in (0.0, 0.01, 0.1, 1, 10, 100, 1e4)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-2


def test_predict_task_basics(rng):
    zero = SkillRegression(np.zeros(3), 0.0, 0.0)
    assert predict_task(zero, rng.normal(size=3)) == 0.5
    reg = SkillRegression(np.array([0.7, -0.2, 0.0]), 0.1, 0.0)
    grid = np.zeros((50, 3))
    grid[:, 0] = np.linspace(-5, 5, 50)
    assert np.all(np.diff(predict_task(reg, grid)) > 0)
    with pytest.raises(DataError):
        predict_task(reg, [np.nan, 0, 0])


def test_separable_item_finite(rng):
    S = np.linspace(-2, 2, 7)[:, None]
    y = (S[:, 0] > 0).astype(float)
    (reg,) = fit_item_models(S, y[:, None], lam=0.1)
    assert np.all(np.isfinite(reg.weights)) and reg.weights[0] > 0
    p = predict_task(reg, S)
    assert np.all(np.diff(p) > 0)


def test_item_models_heldout(rng):
    S = rng.normal(size=(8, 3))
    W = rng.normal(size=(20, 3))
    w0 = rng.normal(size=20)
    P = sigmoid(S @ W.T + w0)
    held = int(np.argmin(np.linalg.norm(S - S.mean(axis=0), axis=1)))
    train = [i for i in range(8) if i != held]
    regs = fit_item_models(S[train], P[train], lam=0.01)
    pred = predict_items(regs, S[held])
    assert np.mean(np.abs(pred - P[held])) < 0.05


def test_item_permutation(rng):
    S = rng.normal(size=(10, 2))
    P = sigmoid(S @ rng.normal(size=(2, 6)) + rng.normal(size=6))
    perm = rng.permutation(6)
    a = fit_item_models(S, P)
    b = fit_item_models(S, P[:, perm])
    for k, j in enumerate(perm):
        # batch sums run in a different order, so agreement is to rounding
        assert np.allclose(b[k].weights, a[j].weights, atol=1e-8)
        assert b[k].intercept == pytest.approx(a[j].intercept, abs=1e-8)


def test_degenerate_item():
    S = np.random.default_rng(1).normal(size=(5, 2))
    regs = fit_item_models(S, np.column_stack([np.ones(5), np.linspace(0, 1, 5)]))
    assert regs[0].degenerate and not regs[1].degenerate
    assert np.all(regs[0].weights == 0)


def test_input_errors():
    with pytest.raises(DimensionError):
        fit_task_regression(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(DataError), pytest.warns(UserWarning):
        fit_task_regression(np.zeros((3, 2)), np.array([0.1, 0.2, 1.5]))
    with pytest.raises(ConfigError):
        fit_task_regression(np.random.default_rng(0).normal(size=(5, 2)), np.linspace(0.1, 0.9, 5), lam=-1)


# ------------------------------------------------------------------ pass@k


def test_passk_examples():
    assert np.array_equal(predict_pass_at_k(np.ones(5), [1, 10, 100]), [1.0, 1.0, 1.0])
    assert predict_pass_at_k([0.5], [2])[0] == 0.75


def test_passk_monte_carlo(rng):
    p = rng.uniform(0, 0.3, size=25)
    p[:3] = 0.0
    ks = [1, 10, 100, 1000]
    got = predict_pass_at_k(p, ks)
    sims = 1_000_000
    mc_rng = np.random.default_rng(2024)
    q = mc_rng.integers(0, len(p), size=sims)
    for k, g in zip(ks, got):
        # a run of k attempts fails entirely with probability (1 - p)^k
        success = mc_rng.uniform(size=sims) >= (1.0 - p[q]) ** k
        assert abs(success.mean() - g) < 2e-3


def test_passk_properties(rng):
    p = rng.uniform(size=40)
    p[::7] = 0.0
    ks = np.arange(1, 2000, 37)
    vals = predict_pass_at_k(p, ks)
    assert predict_pass_at_k(p, [1])[0] == np.mean(p)
    assert np.all(np.diff(vals) >= 0)
    assert predict_pass_at_k(p, [10 ** 6])[0] == pytest.approx(np.mean(p > 0), abs=1e-12)


def test_passk_errors():
    with pytest.raises(DimensionError):
        predict_pass_at_k([], [1])
    with pytest.raises(ConfigError):
        predict_pass_at_k([0.5], [0])
    with pytest.raises(DataError):
        predict_pass_at_k([1.5], [1])


# ------------------------------------------------------------------ loader


def test_loader_modes(tmp_path):
    t = tmp_path / "task.csv"
    t.write_text("model,score\na,0.5\nb,0.25\n")
    ds = load_task_data(t)
    assert ds.mode == "task" and ds.model_ids == ("a", "b") and ds.encoding == "rates"
    i = tmp_path / "items.csv"
    i.write_text("model,q1,q2\na,1,0\nb,0,1\n")
    ds = load_task_data(i)
    assert ds.mode == "item" and ds.questions == ("q1", "q2") and ds.encoding == "binary"
    bad = tmp_path / "bad.csv"
    bad.write_text("model,score\na,1.5\n")
    with pytest.raises(DataError) as exc:
        load_task_data(bad)
    assert exc.value.row == 2


# ------------------------------------------------------------- composition


def test_regression_survives_reidentification(synth_default, rng):
    truth = synth_default.truth
    X = build_design(synth_default.table)
    a, _ = interpret_pipeline(truth, X)
    M = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    b, _ = interpret_pipeline(transform(truth, M), X)
    Sa, Sb = skills(a, X).values, skills(b, X).values
    y = sigmoid(Sa @ np.array([0.6, -0.4, 0.2]) - 0.3)
    pa = predict_task(fit_task_regression(Sa, y), Sa)
    pb = predict_task(fit_task_regression(Sb, y), Sb)
    assert np.max(np.abs(pa - pb)) < 1e-3


def test_hypothetical_skills(synth_default):
    truth = synth_default.truth
    rec = synth_default.table.records[7]
    h = hypothetical_skills(truth, rec.family_id, rec.size_s, rec.tokens_t)
    X = build_design(synth_default.table)
    assert np.allclose(h, skills(truth, X).values[7], atol=1e-12)
