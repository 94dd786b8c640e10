import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from harmonidiff import harmonize as hz
from harmonidiff.baselines import copy_paste
from harmonidiff.errors import ContractError
from harmonidiff.imagecore import dilate, erode
from harmonidiff.metrics import HarmonyScorer
from harmonidiff.synthetic import random_task
from harmonidiff.tasks import CompositionTask

UNTRAINED = HarmonyScorer.untrained()
IDENTITY = {"kind": "identity"}


def test_channel_means():
    np.testing.assert_array_equal(hz.channel_means(np.full((3, 4, 4), 0.7)), [0.7] * 3)
    assert hz.channel_means(np.array([[[1.0, 2.0], [3.0, 6.0]]]))[0] == 3.0
    z = np.random.default_rng(0).random((2, 5, 5))
    perm = np.random.default_rng(1).permutation(25)
    shuffled = z.reshape(2, 25)[:, perm].reshape(2, 5, 5)
    np.testing.assert_allclose(hz.channel_means(shuffled), hz.channel_means(z), rtol=1e-14)


def test_mean_shift_examples():
    src = np.zeros((1, 3, 3))
    src[0, :2, :2] = [[1, 2], [2, 3]]
    tar = np.full((1, 3, 3), 5.0)
    omega = np.zeros((3, 3), bool)
    omega[:2, :2] = True
    out = hz.latent_mean_shift(src, tar, omega)
    np.testing.assert_array_equal(out[0, :2, :2], [[4, 5], [5, 6]])
    np.testing.assert_array_equal(out[0][~omega], 5.0)
    np.testing.assert_array_equal(hz.latent_mean_shift(src, tar, np.zeros((3, 3), bool)), tar)


def test_mean_shift_self_is_identity():
    rng = np.random.default_rng(2)
    z = rng.random((3, 6, 6))
    omega = rng.random((6, 6)) > 0.5
    # footprint statistics: the pasted values already carry the target's mean there
    np.testing.assert_allclose(hz.latent_mean_shift(z, z, omega, target_region=omega), z, atol=1e-15)
    # scene statistics: identity once the footprint mean equals the scene mean
    tile = rng.random((3, 2, 2))
    z = np.tile(tile, (1, 3, 3))
    omega = np.zeros((6, 6), bool)
    omega[2:6, 0:4] = True
    np.testing.assert_allclose(hz.latent_mean_shift(z, z, omega), z, atol=1e-15)


@st.composite
def triples(draw):
    h, w, c = draw(st.integers(1, 8)), draw(st.integers(1, 8)), draw(st.sampled_from([1, 3, 4]))
    src = draw(arrays(np.float64, (c, h, w), elements=st.floats(-10, 10)))
    tar = draw(arrays(np.float64, (c, h, w), elements=st.floats(-10, 10)))
    omega = draw(arrays(bool, (h, w)))
    return src, tar, omega


@given(triples(), st.booleans())
def test_mean_shift_exact_and_local(triple, footprint):
    src, tar, omega = triple
    region = omega if footprint and omega.any() else None
    out = hz.latent_mean_shift(src, tar, omega, region)
    assert np.array_equal(out[:, ~omega], tar[:, ~omega])
    if omega.any():
        mu_tar = tar[:, region].mean(axis=1) if region is not None else tar.mean(axis=(1, 2))
        np.testing.assert_allclose(out[:, omega].mean(axis=1), mu_tar, atol=1e-12)


def test_mean_shift_shape_contract():
    with pytest.raises(ContractError):
        hz.latent_mean_shift(np.zeros((1, 2, 2)), np.zeros((1, 3, 3)), np.ones((2, 2), bool))
    with pytest.raises(ContractError):
        hz.latent_mean_shift(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.ones((3, 3), bool))


def test_edge_width_examples():
    assert hz.edge_width(40, 60) == 4
    assert hz.edge_width(5, 5) == 1
    assert hz.edge_width(100, 100, 64) == hz.edge_width(100, 100, 4096) == 10
    assert hz.edge_width(25, 90) == 3  # 2.5 rounds half up
    with pytest.raises(ContractError):
        hz.edge_width(0, 5)


def test_edge_mask_examples():
    m = np.zeros((7, 7), bool)
    m[3, 3] = True
    ring = hz.edge_mask(m, 1)
    assert ring.sum() == 9 and ring[2:5, 2:5].all()
    assert not hz.edge_mask(m, 0).any()
    sq = np.zeros((20, 20), bool)
    sq[5:15, 5:15] = True
    assert hz.edge_mask(sq, 1).sum() == 12 * 12 - 8 * 8 == 80


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.integers(0, 4))
def test_edge_mask_containment(omega, w):
    ring = hz.edge_mask(omega, w)
    assert np.all(ring <= dilate(omega, w))
    assert not (ring & erode(omega, w)).any()


def test_fuse_examples():
    a, b = np.full((2, 4, 4), 2.0), np.full((2, 4, 4), 7.0)
    np.testing.assert_array_equal(hz.fuse_step(a, b, np.ones((4, 4), bool)), a)
    np.testing.assert_array_equal(hz.fuse_step(a, b, np.zeros((4, 4), bool)), b)
    left = np.zeros((4, 4), bool)
    left[:, :2] = True
    out = hz.fuse_step(a, b, left)
    assert np.all(out[:, :, :2] == 2) and np.all(out[:, :, 2:] == 7)


def test_fuse_exhaustive_6x6():
    rng = np.random.default_rng(7)
    for _ in range(50):
        mask = rng.random((6, 6)) < rng.random()
        a = rng.normal(size=(3, 6, 6))
        b = rng.normal(size=(3, 6, 6))
        out = hz.fuse_step(a, b, mask)
        for c, i, j in itertools.product(range(3), range(6), range(6)):
            assert out[c, i, j] == (a if mask[i, j] else b)[c, i, j]


def test_select_best():
    cands = [hz.Candidate(d, np.full((1, 1, 1), d), s) for d, s in zip((7, 8, 9), (0.1, 0.9, 0.3))]
    assert hz.select_best(cands)[0] == 8
    tied = [hz.Candidate(d, np.zeros((1, 1, 1)), 0.5) for d in (11, 9, 14)]
    assert hz.select_best(tied)[0] == 9
    assert hz.select_best(cands[:1])[0] == 7
    with pytest.raises(ContractError):
        hz.select_best([])


def periodic_target(rng, size=64, period=8):
    tile = rng.random((period, period, 3))
    return np.tile(tile, (size // period, size // period, 1))


@pytest.mark.parametrize("predictor", [{"kind": "zero"}, {"kind": "constant", "value": 0.3}])
def test_self_paste_reproduces_target(predictor):
    rng = np.random.default_rng(11)
    target = periodic_target(rng)
    task = CompositionTask(source=target[24:40, 16:40], target=target, paste_origin=(16, 24))
    cfg = hz.HarmonizeConfig(codec=IDENTITY, predictor=predictor)
    cands = hz.compose(task, cfg, UNTRAINED)
    for c in cands:
        assert np.linalg.norm(c.image - target) / np.linalg.norm(target) < 1e-4


def test_self_paste_footprint_stats_any_scene():
    rng = np.random.default_rng(12)
    target = rng.random((32, 32, 3))
    task = CompositionTask(source=target[5:20, 9:27], target=target, paste_origin=(9, 5))
    cfg = hz.HarmonizeConfig(codec=IDENTITY, predictor={"kind": "zero"}, target_stats="footprint")
    for c in hz.compose(task, cfg, UNTRAINED):
        assert np.linalg.norm(c.image - target) / np.linalg.norm(target) < 1e-4


def test_default_depths_give_nine_candidates():
    task = random_task(np.random.default_rng(0), size=32, min_patch=8, max_patch=12, margin=4)
    cands = hz.compose(task, hz.HarmonizeConfig(codec=IDENTITY), UNTRAINED)
    assert cands.depths == list(range(7, 16))
    assert all(0 < s < 1 for s in cands.scores)


@pytest.mark.parametrize("codec", [IDENTITY, {"kind": "patch_average", "factor": 4}])
def test_gray_on_white_takes_target_mean(codec):
    task = CompositionTask(source=np.full((16, 16, 3), 0.5), target=np.ones((48, 48, 3)),
                           paste_origin=(16, 16))
    cfg = hz.HarmonizeConfig(codec=codec, predictor={"kind": "zero"})
    for c in hz.compose(task, cfg, UNTRAINED):
        np.testing.assert_allclose(c.image[16:32, 16:32].mean(axis=(0, 1)), 1.0, atol=1e-12)


def test_identity_preservation_monotone():
    rng = np.random.default_rng(2024)
    cfg = hz.HarmonizeConfig(codec=IDENTITY)
    for _ in range(6):
        task = random_task(rng)
        ref = copy_paste(task)
        cands = sorted(hz.compose(task, cfg, UNTRAINED), key=lambda c: c.depth)
        dist = [np.linalg.norm(c.image - ref) for c in cands]
        assert all(a <= b for a, b in zip(dist, dist[1:])), dist


def test_compose_deterministic_and_parallel_safe():
    task = random_task(np.random.default_rng(5), size=32, min_patch=8, max_patch=12, margin=4)
    serial = hz.compose(task, hz.HarmonizeConfig(), UNTRAINED)
    again = hz.compose(task, hz.HarmonizeConfig(), UNTRAINED)
    parallel = hz.compose(task, hz.HarmonizeConfig(workers=4), UNTRAINED)
    for a, b, c in zip(serial, again, parallel):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.image, c.image)


def test_fusion_keeps_interior_anchor():
    # far from the edge ring the output is the mean-shifted source trajectory at depth 0
    task = random_task(np.random.default_rng(8))
    cfg = hz.HarmonizeConfig(codec=IDENTITY)
    p = hz._prepare(task, cfg)
    anchor = hz.latent_mean_shift(p.src_traj[0], p.tar_traj[0], p.omega)
    z = hz._run_depth(p, 9, cfg, hz.conditioning_for(task))
    keep = ~p.m_edge
    assert np.array_equal(z[:, keep], anchor[:, keep])


@pytest.mark.parametrize("kwargs", [
    {"harmonious_depths": ()},
    {"harmonious_depths": (7, 7)},
    {"preservation_depth": 9},
    {"harmonious_depths": (7, 25)},
    {"edge_width_fraction": 0.0},
    {"target_stats": "ring"},
])
def test_config_validation(kwargs):
    with pytest.raises(ContractError):
        hz.HarmonizeConfig(**kwargs).validate()


def test_make_predictor_rejects_unknown():
    from harmonidiff.scheduler import build_schedule
    with pytest.raises(ContractError):
        hz.make_predictor({"kind": "unet"}, build_schedule(), np.zeros((1, 2, 2)))
