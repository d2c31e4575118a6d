import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import qp_svm_dual, rbf
from stnmkl.errors import ConfigError, DimensionMismatch, NonConvergence, SingleClassInput
from stnmkl.kernel_svm import (
    LINEAR,
    POLY,
    RBF,
    KernelSpec,
    SvmModel,
    argmax_lowest,
    gram,
    is_psd,
    kernel,
    solve_svm_dual,
    train_multiclass,
)


def blobs(rng, n_per, centres, scale=0.3):
    X = np.vstack([rng.normal(c, scale, (n_per, len(c))) for c in centres])
    labels = np.repeat(np.arange(len(centres)), n_per)
    return X, labels


def two_class(rng, n=20, sep=2.5, dim=2):
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.standard_normal((n, dim)) + sep / 2 * y[:, None]
    return X, y


# -- kernels -----------------------------------------------------------------------


def test_kernel_examples(rng):
    x = rng.standard_normal((5, 3))
    K = gram(x, KernelSpec(RBF, gamma=0.7)).values
    np.testing.assert_array_equal(np.diag(K), 1.0)
    np.testing.assert_allclose(K, rbf(x, 0.7), rtol=1e-12)
    assert kernel([1, 2], [3, 4], KernelSpec(LINEAR, offset=0.0))[0, 0] == 11.0
    assert kernel([1, 0], [1, 0], KernelSpec(POLY, offset=1.0, degree=2))[0, 0] == 4.0


def test_rbf_uses_negative_exponent():
    k = kernel([[0.0]], [[3.0]], KernelSpec(RBF, gamma=1.0))[0, 0]
    assert k == pytest.approx(np.exp(-9.0))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    family=st.sampled_from([RBF, LINEAR, POLY]),
    degree=st.integers(1, 4),
    offset=st.floats(0, 3),
)
def test_gram_is_symmetric_psd(seed, family, degree, offset):
    X = np.random.default_rng(seed).standard_normal((15, 4))
    K = gram(X, KernelSpec(family, offset=offset, degree=degree).resolve(X)).values
    assert np.abs(K - K.T).max() <= 1e-10
    assert is_psd(K)
    ev = np.linalg.eigvalsh(K)
    assert ev.min() >= -1e-8 * np.trace(K) / K.shape[0]


def test_gamma_resolution(rng):
    X = rng.standard_normal((10, 4)) * 3
    s = KernelSpec(RBF).resolve(X)
    assert s.gamma == pytest.approx(1.0 / (4 * X.var()))
    with pytest.raises(ConfigError):
        kernel(X, X, KernelSpec(RBF))


@pytest.mark.parametrize("kw", [{"family": "sigmoid"}, {"gamma": -1.0}, {"offset": -0.5}, {"degree": 0}, {"degree": 1.5}])
def test_invalid_spec(kw):
    with pytest.raises(ConfigError):
        KernelSpec(**kw)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kernel(np.zeros((2, 3)), np.zeros((2, 4)), KernelSpec(LINEAR))
    with pytest.raises(DimensionMismatch):
        gram([np.zeros(3), np.zeros(4)], KernelSpec(LINEAR))


# -- dual solver ----------------------------------------------------------------------


def two_point_model():
    X = np.array([[1.0], [-1.0]])
    K = kernel(X, X, KernelSpec(LINEAR, offset=0.0))
    return solve_svm_dual(K, [1, -1], C=10.0), X


def test_hand_solved_two_point_problem():
    m, X = two_point_model()
    np.testing.assert_allclose(m.alpha, [0.5, 0.5], atol=1e-8)
    assert abs(m.bias) <= 1e-8
    probe = np.array([[0.0], [1.0], [-1.0], [2.5]])
    f = m.decision(kernel(probe, X, KernelSpec(LINEAR, offset=0.0)))
    np.testing.assert_allclose(f, probe[:, 0], atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("C", [0.5, 10.0])
def test_matches_dense_qp_oracle(seed, C):
    r = np.random.default_rng(seed)
    X, y = two_class(r, 20)
    spec = KernelSpec(RBF, gamma=0.5)
    K = gram(X, spec).values
    m = solve_svm_dual(K, y, C)
    a_ref, b_ref = qp_svm_dual(K, y, C)
    probe = r.standard_normal((50, 2)) * 2
    Kp = kernel(probe, X, spec)
    f = m.decision(np.vstack([K, Kp]))
    f_ref = np.vstack([K, Kp]) @ (a_ref * y) + b_ref
    assert np.abs(f - f_ref).max() <= 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_kkt_and_feasibility(seed):
    r = np.random.default_rng(seed)
    X, y = two_class(r, 40, sep=1.0)
    C = 2.0
    K = gram(X, KernelSpec(RBF, gamma=1.0)).values
    m = solve_svm_dual(K, y, C, trace=True)
    assert abs(m.alpha @ y) <= 1e-8 * C * y.size
    assert np.all((m.alpha >= 0) & (m.alpha <= C))
    assert m.kkt_violation <= 1e-5
    assert m.gap <= 1e-6 * max(1.0, abs(m.dual_objective(K)))
    # monotone dual ascent
    assert np.all(np.diff(m.objective_trace) >= -1e-12)
    # free support vectors sit on the margin
    f = m.decision(K)
    assert m.free.size > 0
    np.testing.assert_allclose(np.abs(f[m.free]), 1.0, atol=1e-4)


def test_duplicated_separable_dataset_gives_same_function(rng):
    X, y = two_class(rng, 16, sep=6.0)
    spec = KernelSpec(LINEAR, offset=1.0)
    m1 = solve_svm_dual(gram(X, spec).values, y, 100.0)
    assert np.all(m1.alpha < 100.0)  # hard-margin regime: no bounded multipliers
    X2, y2 = np.vstack([X, X]), np.concatenate([y, y])
    m2 = solve_svm_dual(gram(X2, spec).values, y2, 100.0)
    probe = rng.standard_normal((30, 2)) * 4
    f1 = m1.decision(kernel(probe, X, spec))
    f2 = m2.decision(kernel(probe, X2, spec))
    np.testing.assert_allclose(f1, f2, atol=1e-6)


def test_duplicate_point_equals_doubled_bound(rng):
    X, y = two_class(rng, 20, sep=0.5)
    spec = KernelSpec(RBF, gamma=0.5)
    C = 1.0
    dup = 3
    Xd, yd = np.vstack([X, X[dup]]), np.append(y, y[dup])
    m = solve_svm_dual(gram(Xd, spec).values, yd, C)
    Cvec = np.full(20, C)
    Cvec[dup] = 2 * C
    a_ref, b_ref = qp_svm_dual(gram(X, spec).values, y, Cvec)
    probe = rng.standard_normal((40, 2)) * 2
    f = m.decision(kernel(probe, Xd, spec))
    f_ref = kernel(probe, X, spec) @ (a_ref * y) + b_ref
    np.testing.assert_allclose(f, f_ref, atol=1e-5)


@pytest.mark.parametrize("s", [0.01, 3.0, 250.0])
def test_kernel_scaling_keeps_signs(rng, s):
    X, y = two_class(rng, 30, sep=1.0)
    K = gram(X, KernelSpec(RBF, gamma=1.0)).values
    a = solve_svm_dual(K, y, 1.0)
    b = solve_svm_dual(s * K, y, 1.0 / s)
    np.testing.assert_array_equal(np.sign(a.decision(K)), np.sign(b.decision(s * K)))
    np.testing.assert_allclose(b.alpha, a.alpha / s, atol=1e-5 / s)


def test_single_class_and_bad_labels():
    K = np.eye(3)
    with pytest.raises(SingleClassInput):
        solve_svm_dual(K, [1, 1, 1])
    with pytest.raises(ConfigError):
        solve_svm_dual(K, [1, 0, -1])
    with pytest.raises(DimensionMismatch):
        solve_svm_dual(np.eye(4), [1, -1, 1])


def test_iteration_cap_reports_gap(rng):
    X, y = two_class(rng, 30, sep=0.5)
    K = gram(X, KernelSpec(RBF, gamma=1.0)).values
    with pytest.raises(NonConvergence) as exc:
        solve_svm_dual(K, y, 1.0, max_iter=2)
    assert exc.value.gap > 0


def test_decision_checks_row_length():
    m, _ = two_point_model()
    with pytest.raises(DimensionMismatch):
        m.decision(np.zeros((1, 3)))


def test_model_json_round_trip():
    m, X = two_point_model()
    m.spec = KernelSpec(LINEAR, offset=0.0)
    d = json.loads(m.to_json(support_vectors=X))
    assert d["support_vectors"] == [[1.0], [-1.0]]
    back = SvmModel.from_dict(d)
    np.testing.assert_array_equal(back.alpha, m.alpha)
    assert back.bias == m.bias and back.C == m.C and back.spec == m.spec


# -- multiclass ----------------------------------------------------------------------------


def test_two_class_matches_binary_sign(rng):
    X, y = two_class(rng, 30, sep=1.0)
    labels = np.where(y > 0, "a", "b")
    spec = KernelSpec(RBF, gamma=1.0)
    ens = train_multiclass(X, labels, spec, 1.0)
    binary = solve_svm_dual(gram(X, spec).values, y, 1.0)
    probe = rng.standard_normal((40, 2)) * 2
    pred = ens.predict(probe)
    expect = np.where(binary.decision(kernel(probe, X, spec)) >= 0, "a", "b")
    np.testing.assert_array_equal(pred, expect)


def test_three_blobs_fit_perfectly(rng):
    X, labels = blobs(rng, 15, [(0, 0), (6, 0), (0, 6)])
    ens = train_multiclass(X, labels, KernelSpec(RBF, gamma=0.5), 10.0)
    assert len(ens.models) == 3
    assert np.mean(ens.predict(X) == labels) == 1.0


def test_ties_go_to_lowest_class():
    assert argmax_lowest(np.zeros((3, 4))).tolist() == [0, 0, 0]
    assert argmax_lowest([[1.0, 3.0, 3.0]]).tolist() == [1]


def test_multiclass_needs_two_samples_per_class(rng):
    X = rng.standard_normal((5, 2))
    with pytest.raises(SingleClassInput):
        train_multiclass(X, ["a", "a", "b", "b", "c"], KernelSpec(LINEAR), classes=("a", "b", "c"))
