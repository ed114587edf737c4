import math

import numpy as np
import pytest

from nsdg import datagen
from nsdg.datagen import (GroundTruthMap, LabeledDataset, ParameterError, SplitSpec,
                          apply_ground_truth_map, circle_hard_angles, gen_circle,
                          gen_circle_hard, gen_rotating_gaussian,
                          read_domain_sequence, rotation2d, split,
                          write_domain_sequence)


@pytest.fixture(scope="module")
def circle():
    return gen_circle(seed=0)


@pytest.fixture(scope="module")
def circle_hard():
    return gen_circle_hard(seed=0)


def test_circle_default_totals(circle):
    assert circle.n_domains == 30
    assert sum(d.n for d in circle.domains) == 30000


def test_circle_map_entries(circle):
    c, s = math.cos(math.pi / 30), math.sin(math.pi / 30)
    for m in circle.mappings:
        assert np.allclose(m.matrix, [[c, -s], [s, c]], atol=1e-15)


def test_origin_is_labeled_positive():
    ds = LabeledDataset(np.array([[0.0, 0.0], [5.0, 5.0]]), np.array([1, 0]), 1)
    # the generator's rule: squared distance from origin <= radius
    assert ((ds.features ** 2).sum(axis=1) <= 1.0).astype(int).tolist() == [1, 0]


def test_circle_label_rule_matches_geometry(circle):
    for dom in circle.domains[:3]:
        expected = ((dom.features ** 2).sum(axis=1) <= 1.0).astype(np.int64)
        assert np.array_equal(dom.labels, expected)


def test_circle_label_balance(circle):
    for dom in circle.domains:
        rate = dom.labels.mean()
        assert 0.40 <= rate <= 0.60, "domain %d rate %.3f" % (dom.domain_index, rate)


def test_maps_are_proper_rotations(circle, circle_hard):
    for seq in (circle, circle_hard):
        for m in seq.mappings:
            assert np.abs(m.matrix @ m.matrix.T - np.eye(2)).max() <= 1e-12
            assert abs(np.linalg.det(m.matrix) - 1.0) <= 1e-12


def test_circle_hard_angle_recurrence():
    angles = circle_hard_angles(30)
    assert angles[0] == 0.0
    assert np.isclose(angles[1], math.pi / 180, atol=1e-15)
    assert np.isclose(angles[3], math.pi / 30, atol=1e-15)  # pi*(1+2+3)/180


def test_circle_hard_map_m3(circle_hard):
    ang = math.pi * 3 / 180
    m3 = circle_hard.mappings[2].matrix
    assert np.allclose(m3, [[math.cos(ang), -math.sin(ang)],
                            [math.sin(ang), math.cos(ang)]], atol=1e-15)


def test_circle_hard_domain_means_follow_recurrence(circle_hard):
    angles = circle_hard_angles(30)
    for t in (0, 14, 29):
        mean = circle_hard.domains[t].features.mean(axis=0)
        target = np.array([math.cos(angles[t]), math.sin(angles[t])])
        assert np.linalg.norm(mean - target) < 4 * 0.2 / math.sqrt(1000) * 2


def test_push_forward_mean_consistency(circle):
    # pushing domain t through m_t lands on domain t+1's distribution
    sigma, n = 0.2, 1000
    for t in (0, 10, 27):
        pushed = apply_ground_truth_map(circle.domains[t], circle.mappings[t])
        gap = pushed.features.mean(axis=0) - circle.domains[t + 1].features.mean(axis=0)
        assert np.linalg.norm(gap) < 4 * sigma / math.sqrt(n)


def test_push_forward_per_class_mean_consistency(circle):
    sigma, n = 0.2, 1000
    for t in (0, 14):
        pushed = apply_ground_truth_map(circle.domains[t], circle.mappings[t])
        nxt = circle.domains[t + 1]
        for y in (0, 1):
            a = pushed.features[pushed.labels == y].mean(axis=0)
            b = nxt.features[nxt.labels == y].mean(axis=0)
            assert np.linalg.norm(a - b) < 4 * sigma / math.sqrt(n) * 2


def test_apply_map_rotates_and_keeps_labels():
    ds = LabeledDataset(np.array([[1.0, 0.0]]), np.array([1]), 1)
    out = apply_ground_truth_map(ds, rotation2d(math.pi / 2))
    assert np.allclose(out.features, [[0.0, 1.0]], atol=1e-15)
    assert np.array_equal(out.labels, ds.labels)


def test_apply_identity_map_is_noop(circle):
    ds = circle.domains[0]
    out = apply_ground_truth_map(ds, rotation2d(0.0))
    assert np.array_equal(out.features, ds.features)


def test_apply_map_dimension_mismatch():
    ds = LabeledDataset(np.ones((3, 4)), np.zeros(3, dtype=int), 1)
    with pytest.raises(ParameterError):
        apply_ground_truth_map(ds, rotation2d(0.1))


def test_generator_parameter_errors():
    with pytest.raises(ParameterError):
        gen_circle(radius=-1.0)
    with pytest.raises(ParameterError):
        gen_circle_hard(noise_sigma=0.0)
    with pytest.raises(ParameterError):
        gen_rotating_gaussian([[0, 0]], [np.zeros((2, 2))], lambda t: 0.0, 3, 10)


def test_split_sizes_and_partition(circle):
    ds = circle.domains[0]
    train, val, idtest = split(ds, SplitSpec(), seed=5)
    assert (train.n, val.n, idtest.n) == (810, 90, 100)
    # deterministic
    train2, val2, idtest2 = split(ds, SplitSpec(), seed=5)
    assert np.array_equal(train.features, train2.features)
    assert np.array_equal(idtest.labels, idtest2.labels)
    # disjoint and exhaustive: row multiset matches
    allrows = np.vstack([train.features, val.features, idtest.features])
    assert allrows.shape == ds.features.shape
    a = np.sort(allrows.view([("x", np.float64), ("y", np.float64)]), axis=0)
    b = np.sort(ds.features.view([("x", np.float64), ("y", np.float64)]), axis=0)
    assert np.array_equal(a, b)


def test_split_rejects_empty_part():
    ds = LabeledDataset(np.ones((5, 2)), np.zeros(5, dtype=int), 1)
    with pytest.raises(ParameterError):
        split(ds, SplitSpec(), seed=0)


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ParameterError):
        SplitSpec(0.5, 0.4, 0.2)


def test_rotating_gaussian_zero_step_is_stationary():
    seq = gen_rotating_gaussian([[2.0, 0.0], [-2.0, 0.0]],
                                [np.eye(2) * 0.04, np.eye(2) * 0.04],
                                lambda t: 0.0, T_total=4, n_per_domain=500, seed=1)
    for m in seq.mappings:
        assert np.allclose(m.matrix, np.eye(2), atol=1e-15)
    means = [d.features[d.labels == 0].mean(axis=0) for d in seq.domains]
    for m in means[1:]:
        assert np.linalg.norm(m - means[0]) < 4 * 0.2 / math.sqrt(250) * 2


def test_rotating_gaussian_mirrors_circle_steps():
    # one class placed at the circle-family start, stepping pi/30 per domain
    seq = gen_rotating_gaussian([[1.0, 0.0]], [np.eye(2) * 0.04],
                                lambda t: math.pi / 30, T_total=5,
                                n_per_domain=800, seed=3)
    for t, dom in enumerate(seq.domains):
        ang = t * math.pi / 30
        target = np.array([math.cos(ang), math.sin(ang)])
        assert np.linalg.norm(dom.features.mean(axis=0) - target) < 4 * 0.2 / math.sqrt(800)


def test_single_domain_has_no_mappings():
    seq = gen_rotating_gaussian([[0.0, 0.0]], [np.eye(2)], lambda t: 0.5,
                                T_total=1, n_per_domain=10, seed=0)
    assert seq.mappings == []


def test_round_trip_is_bit_exact(tmp_path, circle_hard):
    base = tmp_path / "ch"
    write_domain_sequence(circle_hard, base)
    again = read_domain_sequence(base)
    assert again.T_source == circle_hard.T_source
    assert again.metadata == circle_hard.metadata
    for a, b in zip(again.domains, circle_hard.domains):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
    for a, b in zip(again.mappings, circle_hard.mappings):
        assert np.array_equal(a.matrix, b.matrix)
    # and the written files are stable across rewrites
    base2 = tmp_path / "ch2"
    write_domain_sequence(circle_hard, base2)
    assert (tmp_path / "ch.csv").read_bytes() == (tmp_path / "ch2.csv").read_bytes()


def test_read_missing_files_is_clear_error(tmp_path):
    with pytest.raises(datagen.DataFormatError):
        read_domain_sequence(tmp_path / "nope")


def test_rmnist_lite_missing_archive(tmp_path):
    with pytest.raises(datagen.DataFormatError, match="archive"):
        datagen.load_rmnist_lite(tmp_path)


def test_rmnist_lite_from_synthetic_idx(tmp_path):
    # tiny fake IDX pair: 40 images of 28x28
    rng = np.random.default_rng(0)
    n, side = 40, 28
    images = (rng.random((n, side, side)) * 255).astype(np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    (tmp_path / "train-images-idx3-ubyte").write_bytes(
        (2051).to_bytes(4, "big") + n.to_bytes(4, "big")
        + side.to_bytes(4, "big") + side.to_bytes(4, "big") + images.tobytes())
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(
        (2049).to_bytes(4, "big") + n.to_bytes(4, "big") + labels.tobytes())

    seq = datagen.load_rmnist_lite(tmp_path, T_total=30, step_deg=6.0,
                                   downsample_to=7, n_per_domain=20, seed=0)
    assert seq.n_domains == 30
    assert seq.domains[0].feature_dim == 49
    # angles cover 0..174 in 6-degree steps; domain 1 is unrotated
    assert (30 - 1) * 6.0 == 174.0


def test_rotation_by_zero_is_pixel_identical():
    rng = np.random.default_rng(1)
    imgs = rng.random((3, 28, 28))
    assert np.array_equal(datagen.rotate_images(imgs, 0.0), imgs)


def test_rotation_by_180_twice_recenters():
    rng = np.random.default_rng(2)
    imgs = rng.random((2, 28, 28))
    once = datagen.rotate_images(imgs, 180.0)
    twice = datagen.rotate_images(once, 180.0)
    # 180+180 returns to start up to interpolation at the border
    assert np.abs(twice - imgs).mean() < 0.05


def test_domain_indices_and_t_source_validation():
    d1 = LabeledDataset(np.ones((2, 1)), np.zeros(2, dtype=int), 1)
    d2 = LabeledDataset(np.ones((2, 1)), np.zeros(2, dtype=int), 2)
    with pytest.raises(ParameterError):
        datagen.DomainSequence([d1, d2], 2, None, {"n_classes": 2})
    seq = datagen.DomainSequence([d1, d2], 1, None, {"n_classes": 2})
    assert seq.with_t_source(1).T_source == 1
    with pytest.raises(ParameterError):
        seq.with_t_source(2)
