import numpy as np
import pytest
from hypothesis import given, strategies as st

from gprfuse.oneclass import (REJECT, ClassBank, ConvergenceError, cohesive_group, cv_margin,
                              dual_objective, gaussian_kernel, load_bank, median_gamma, pca3,
                              save_bank, svdd_train)

from oracles import svdd_grid_dual


def test_single_point():
    m = svdd_train(np.array([[1.0, 2.0]]), C=1.0, gamma=0.5)
    assert m.alphas.tolist() == [1.0] and m.r_squared == 0.0
    assert m.distance2(np.array([1.0, 2.0])) == 0.0
    assert m.accepts(np.array([1.0, 2.0]))


def test_two_points_symmetric():
    m = svdd_train(np.array([[0.0, 0.0], [1.0, 1.0]]), C=1.0, gamma=1.0)
    np.testing.assert_allclose(m.alphas, [0.5, 0.5], atol=1e-8)


def test_matches_grid_oracle(rng):
    x = rng.normal(size=(5, 2))
    m = svdd_train(x, C=0.6, gamma=1.0)
    best, _ = svdd_grid_dual(x, 0.6, 1.0)
    assert abs(dual_objective(gaussian_kernel(x, x, 1.0), m.alphas) - best) <= 1e-4


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 1.0), st.floats(0.1, 5.0))
def test_feasibility_and_kkt(seed, C, gamma):
    x = np.random.default_rng(seed).normal(size=(12, 3))
    C = max(C, 1 / 12)
    m = svdd_train(x, C=C, gamma=gamma)
    assert abs(m.alphas.sum() - 1) <= 1e-8
    assert m.alphas.min() >= 0 and m.alphas.max() <= C
    free = (m.alphas > 1e-12) & (m.alphas < C - 1e-12)
    d2 = m.distance2(x)
    assert np.all(np.abs(d2[free] - m.r_squared) <= 1e-6)
    assert np.all(d2 >= 0)


def test_far_point_limit(rng):
    x = rng.normal(size=(6, 2))
    m = svdd_train(x, C=1.0, gamma=1.0)
    assert m.distance2(np.array([1e6, 1e6])) == pytest.approx(1 + m.center_term, abs=1e-12)


def test_c1_accepts_training_set(rng):
    x = rng.normal(size=(40, 4))
    m = svdd_train(x, C=1.0)
    assert np.all(m.accepts(x))


def test_monotone_in_c(rng):
    x = rng.normal(size=(30, 2))
    prev = -1
    for C in (1.0, 0.5, 0.2, 0.1, 0.05):
        m = svdd_train(x, C=C, gamma=0.5)
        out = int(np.sum(m.distance2(x) >= m.r_squared - 1e-6))
        assert out >= prev
        prev = out


def test_errors(rng):
    x = rng.normal(size=(4, 2))
    with pytest.raises(ValueError):
        svdd_train(x, C=0.1)
    with pytest.raises(ValueError):
        svdd_train(x, gamma=-1.0, C=1.0)
    with pytest.raises(ConvergenceError) as e:
        svdd_train(rng.normal(size=(50, 2)), C=0.05, gamma=1.0, max_iter=1)
    assert e.value.violation > 0


def test_median_gamma():
    x = np.array([[0.0], [1.0], [3.0]])
    assert median_gamma(x) == pytest.approx(1 / (2 * 2.0 ** 2))


def test_cv_margin_non_negative(rng):
    x = rng.normal(size=(100, 3))
    g = median_gamma(x)
    assert cv_margin(x, 1.0, g, folds=5, guard=5) >= 0
    with pytest.raises(ValueError):
        cv_margin(x, 1.0, g, folds=1)


def _bank(rng):
    normal = svdd_train(rng.normal(0, 0.1, size=(30, 2)), C=1.0)
    return ClassBank([normal], spawn_threshold=8, cohesion_radius=1.0, spawn_gamma=normal.gamma,
                     spawn_min_radius=0.5)


def test_classify_first_accept(rng):
    bank = _bank(rng)
    assert bank.classify(np.zeros(2)) == 0
    assert bank.classify(np.array([5.0, 5.0])) == REJECT
    bank.classifiers.append(svdd_train(rng.normal(0, 0.1, size=(10, 2)), C=1.0))
    assert bank.classify(np.zeros(2)) == 0


def test_spawning(rng):
    bank = _bank(rng)
    a = rng.normal([5, 5], 0.1, size=(10, 2))
    b = rng.normal([-5, 5], 0.1, size=(10, 2))
    events = [bank.absorb(x, tag=i) for i, x in enumerate(a[:7])]
    assert events == [None] * 7 and bank.n_classes == 1
    ev = bank.absorb(a[7], tag=7)
    assert ev is not None and ev.class_id == 1 and ev.members == list(range(8))
    assert bank.buffer == []
    assert bank.classify(a[9]) == 1
    for x in b[:8]:
        bank.absorb(x)
    assert bank.n_classes == 3
    assert bank.classify(b[9]) == 2


def test_bimodal_buffer_kept(rng):
    bank = _bank(rng)
    pts = np.vstack([rng.normal([5, 5], 0.1, size=(4, 2)), rng.normal([-5, 5], 0.1, size=(4, 2))])
    for x in pts:
        assert bank.absorb(x) is None
    assert len(bank.buffer) == 8 and bank.n_classes == 1


def test_excess_gate_drops_near_normal_rejects(rng):
    bank = _bank(rng)
    near, far = np.array([0.25, 0.0]), np.array([5.0, 5.0])
    lo, hi = bank.scores(near)[0], bank.scores(far)[0]
    assert 0 < lo < hi
    bank.spawn_min_excess = (lo + hi) / 2
    assert bank.absorb(near) is None and bank.buffer == []
    assert bank.absorb(far) is None and len(bank.buffer) == 1


def test_merge_extends_existing_class(rng):
    bank = _bank(rng)
    bank.merge_radius = 1.5
    for x in rng.normal([5, 5], 0.1, size=(8, 2)):
        first = bank.absorb(x)
    assert first.class_id == 1 and not first.extended
    events = [bank.absorb(x) for x in rng.normal([5, 6], 0.1, size=(8, 2))]
    assert events[-1].class_id == 1 and events[-1].extended
    assert bank.n_classes == 2 and len(bank.members[1]) == 16
    assert bank.classify(np.array([5.0, 6.0])) == 1
    for x in rng.normal([-5, 5], 0.1, size=(8, 2)):
        last = bank.absorb(x)
    assert last.class_id == 2 and not last.extended and bank.n_classes == 3


def test_direction_space_groups_by_bearing(rng):
    bank = _bank(rng)
    bank.origin, bank.cohesion_radius = np.zeros(2), 0.2
    # one bearing, strengths 3-10: raw spread is far beyond the chord radius
    ray = np.outer(np.linspace(3, 10, 8), [1.0, 1.0]) + rng.normal(0, 0.01, size=(8, 2))
    events = [bank.absorb(x) for x in ray]
    assert events[-1] is not None and events[-1].class_id == 1 and events[-1].members == [None] * 8


def test_cohesive_group_gate():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [3.0, 3.0]])
    assert cohesive_group(pts, 0.5).tolist() == [3]  # newest point is alone
    spread = np.array([[0.0, 0.0], [0.9, 0.0], [0.0, 0.9], [0.45, 0.45]])
    assert cohesive_group(spread, 1.0, quantile=1.0).tolist() == []
    assert cohesive_group(pts[:3], 0.5).tolist() == [0, 1, 2]


def test_bank_round_trip(tmp_path, rng):
    bank = _bank(rng)
    bank.normal_margin = 0.01
    bank.origin = np.array([0.5, -0.5])
    for x in rng.normal([5, 5], 0.1, size=(8, 2)):
        bank.absorb(x, tag=["s", 1])
    bank.absorb(np.array([9.0, -9.0]), tag=["s", 2])
    save_bank(bank, tmp_path)
    back = load_bank(tmp_path)
    assert back.n_classes == 2 and back.normal_margin == 0.01
    np.testing.assert_array_equal(back.members[1], bank.members[1])
    np.testing.assert_array_equal(back.origin, bank.origin)
    assert back.buffer_tags == [["s", 2]]
    q = rng.normal(size=(20, 2)) * 4
    for x in q:
        assert back.classify(x) == bank.classify(x)
        np.testing.assert_allclose(back.scores(x), bank.scores(x))


def test_pca3_diagonal(rng):
    z = rng.normal(size=(4000, 3)) * np.sqrt([1.0, 3.0, 2.0])
    p = pca3(z)
    order = [int(np.argmax(np.abs(c))) for c in p.components]
    assert order == [1, 2, 0]
    var = p.points.var(axis=0)
    assert var[0] >= var[1] >= var[2]
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(3), atol=1e-10)


def test_pca3_reconstruction_error(rng):
    x = rng.normal(size=(200, 128)) * rng.uniform(0.1, 3, size=128)
    p = pca3(x)
    xc = x - p.mean
    resid = xc - p.points @ p.components
    err = (resid ** 2).sum() / (len(x) - 1)
    assert err == pytest.approx(p.eigenvalues[3:].sum(), abs=1e-8)


def test_pca3_padding_and_duplicates(rng):
    x = np.outer(rng.normal(size=10), [1.0, 2.0, 0.0, 0.0])
    p = pca3(x)
    assert p.padded and not p.components[1:].any()
    y = rng.normal(size=(10, 5))
    np.testing.assert_array_equal(pca3(np.vstack([y, y])).points[:10], pca3(np.vstack([y, y])).points[10:])
    with pytest.raises(ValueError):
        pca3(y[:2])
