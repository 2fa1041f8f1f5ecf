"""Mask samplers and task masks: exactness, determinism, algebra, zero-fill."""

import math

import numpy as np
import pytest

from conftest import random_scene
from motionmask.errors import (InvariantError, ShapeMismatchError,
                               UnsatisfiableMaskError)
from motionmask.masking import (MaskGrid, MaskProfileConfig, apply_mask,
                                conditional_mask, measured_ratio,
                                occlusion_task_mask, prediction_mask,
                                sample_patchwise_mask, sample_pointwise_mask,
                                sample_timewise_mask)
from motionmask.rng import SeedStream, derive


# Independent reimplementation of the documented RNG + permutation scheme,
# written from the docs alone: splitmix64 finalizer, draw i = mix(seed + i*golden),
# uniform = (u >> 11) * 2^-53, below(n) = floor(uniform * n), Fisher-Yates from
# the top index down.
def _ref_mix(z):
    z &= (1 << 64) - 1
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & ((1 << 64) - 1)
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & ((1 << 64) - 1)
    return z ^ (z >> 31)


class _RefStream:
    def __init__(self, seed):
        self.seed = seed & ((1 << 64) - 1)
        self.i = 0

    def below(self, n):
        self.i += 1
        u = _ref_mix((self.seed + self.i * 0x9E3779B97F4A7C15) & ((1 << 64) - 1))
        return min(int(((u >> 11) * 2.0**-53) * n), n - 1)


def _ref_permutation(seed, n):
    stream = _RefStream(seed)
    items = list(range(n))
    for i in range(n - 1, 0, -1):
        j = stream.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def test_pointwise_zero_and_full_ratio():
    valid = np.ones((2, 5), dtype=bool)
    assert sample_pointwise_mask(2, 5, valid, 0.0, 1).hidden_count() == 0
    assert sample_pointwise_mask(2, 5, valid, 1.0, 1).hidden_count() == 10


def test_pointwise_matches_reference_permutation():
    n, t, ratio, seed = 5, 10, 0.75, 42
    valid = np.ones((n, t), dtype=bool)
    mask = sample_pointwise_mask(n, t, valid, ratio, seed)
    assert mask.hidden_count() == 37  # floor(0.75 * 50)
    order = _ref_permutation(seed, n * t)
    expected = np.zeros(n * t, dtype=bool)
    expected[np.array(order[:37])] = True
    assert np.array_equal(mask.hidden, expected.reshape(n, t))


def test_pointwise_reference_with_invalid_cells():
    # valid cells are enumerated row-major; the permutation indexes that list
    n, t, seed = 3, 7, 9
    valid = np.zeros((n, t), dtype=bool)
    valid[0, ::2] = True
    valid[2, 1:5] = True
    cells = np.flatnonzero(valid.ravel())
    k = math.floor(0.5 * len(cells))
    order = _ref_permutation(seed, len(cells))
    expected = np.zeros(n * t, dtype=bool)
    expected[cells[np.array(order[:k])]] = True
    mask = sample_pointwise_mask(n, t, valid, 0.5, seed)
    assert np.array_equal(mask.hidden, expected.reshape(n, t))
    assert not mask.hidden[~valid].any()


def test_pointwise_never_hides_invalid_cells():
    for seed in range(25):
        scene = random_scene(seed)
        mask = sample_pointwise_mask(scene.n_agents, scene.t_total,
                                     scene.valid, 0.9, seed)
        assert not mask.hidden[~scene.valid].any()
        assert mask.hidden_count() == math.floor(0.9 * scene.valid.sum())


def test_pointwise_out_of_range_ratio_rejected():
    valid = np.ones((2, 2), dtype=bool)
    with pytest.raises(InvariantError):
        sample_pointwise_mask(2, 2, valid, 1.2, 0)
    with pytest.raises(InvariantError):
        sample_pointwise_mask(2, 2, valid, -0.1, 0)


def test_patchwise_zero_ratio_empty():
    valid = np.ones((3, 8), dtype=bool)
    assert sample_patchwise_mask(3, 8, valid, 0.0, 2, 4, 0).hidden_count() == 0


def test_patchwise_count_bound_single_agent():
    valid = np.ones((1, 20), dtype=bool)
    for seed in range(20):
        mask = sample_patchwise_mask(1, 20, valid, 0.25, 2, 5, seed)
        assert 5 <= mask.hidden_count() <= 9  # [target, target + len_max - 1]


def _patch_runs(row):
    runs, start = [], None
    for i, v in enumerate(row):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(row)))
    return runs


def test_patchwise_overlap_and_count_checker():
    n, t, ratio, lmin, lmax, seed = 4, 16, 0.5, 2, 4, 7
    valid = np.ones((n, t), dtype=bool)
    mask = sample_patchwise_mask(n, t, valid, ratio, lmin, lmax, seed)
    target = math.floor(ratio * n * t)
    assert target <= mask.hidden_count() <= target + lmax - 1
    # merged runs never need to respect [lmin, lmax] (patches may abut),
    # but each row's hidden cells must be coverable by non-overlapping
    # patches, which merged runs always are; check minimum run length
    # against 1 (abutting) and that nothing leaked outside the grid.
    for i in range(n):
        for start, end in _patch_runs(mask.hidden[i]):
            assert end - start >= 1


def test_patchwise_respects_validity_counting():
    for seed in range(15):
        scene = random_scene(seed, n=4, t=12)
        v = int(scene.valid.sum())
        target = math.floor(0.4 * v)
        mask = sample_patchwise_mask(4, 12, scene.valid, 0.4, 2, 4, seed)
        got = int((mask.hidden & scene.valid).sum())
        assert target <= got <= target + 4 - 1


def test_patchwise_unsatisfiable():
    valid = np.ones((1, 3), dtype=bool)
    with pytest.raises(UnsatisfiableMaskError):
        sample_patchwise_mask(1, 3, valid, 0.5, 5, 6, 0)


def test_timewise_zero_ratio():
    valid = np.ones((3, 10), dtype=bool)
    assert sample_timewise_mask(3, 10, valid, 0.0, 0).hidden_count() == 0


def test_timewise_column_counts():
    valid = np.ones((3, 10), dtype=bool)
    mask = sample_timewise_mask(3, 10, valid, 0.4, 5)
    cols = mask.hidden.all(axis=0)
    assert cols.sum() == 4
    assert mask.hidden_count() == 12


def test_timewise_columns_identical_across_agents_and_reference():
    n, t, ratio, seed = 3, 20, 0.75, 1
    valid = np.ones((n, t), dtype=bool)
    mask = sample_timewise_mask(n, t, valid, ratio, seed)
    k = math.floor(ratio * t)
    chosen = set(_ref_permutation(seed, t)[:k])
    for col in range(t):
        column = mask.hidden[:, col]
        assert column.all() or not column.any()
        assert column.all() == (col in chosen)
    assert mask.hidden.all(axis=0).sum() == 15


def test_samplers_are_deterministic():
    valid = np.ones((4, 9), dtype=bool)
    for sampler, args in (
        (sample_pointwise_mask, (4, 9, valid, 0.6, 11)),
        (sample_patchwise_mask, (4, 9, valid, 0.6, 2, 3, 11)),
        (sample_timewise_mask, (4, 9, valid, 0.6, 11)),
    ):
        assert sampler(*args) == sampler(*args)


# -- task masks --------------------------------------------------------------

def test_prediction_mask_counts():
    assert prediction_mask(3, 50, 20).hidden_count() == 90
    assert prediction_mask(1, 2, 1).hidden_count() == 1
    for n, t, t_obs in ((2, 6, 3), (5, 12, 2), (1, 9, 8)):
        assert prediction_mask(n, t, t_obs).hidden_count() == n * (t - t_obs)


def test_conditional_mask_counts_and_identity():
    mask = conditional_mask(3, 50, 20, ego_index=0)
    assert mask.hidden_count() == 60
    assert conditional_mask(1, 10, 5, 0).hidden_count() == 0
    pred = prediction_mask(3, 50, 20)
    diff = pred.hidden & ~mask.hidden
    expected = np.zeros_like(pred.hidden)
    expected[0, 20:] = True
    assert np.array_equal(diff, expected)


def test_occlusion_mask_union():
    n, t, t_obs = 4, 10, 6
    none = occlusion_task_mask(n, t, t_obs, np.zeros((n, t_obs), dtype=bool))
    assert none == prediction_mask(n, t, t_obs)
    everything = occlusion_task_mask(n, t, t_obs, np.ones((n, t_obs), dtype=bool))
    assert everything.hidden_count() == n * t
    stream = SeedStream(3)
    occ = np.array([[stream.uniform() < 0.3 for _ in range(t_obs)]
                    for _ in range(n)])
    mask = occlusion_task_mask(n, t, t_obs, occ)
    expected = prediction_mask(n, t, t_obs).hidden.copy()
    expected[:, :t_obs] |= occ
    assert np.array_equal(mask.hidden, expected)


def test_occlusion_mask_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        occlusion_task_mask(3, 10, 6, np.zeros((3, 5), dtype=bool))


def test_task_mask_algebra_exhaustive():
    """conditional subset of prediction; occlusion superset of prediction."""
    violations = 0
    stream = SeedStream(99)
    for n in range(1, 7):
        for t in range(2, 13):
            for t_obs in range(1, t):
                pred = prediction_mask(n, t, t_obs).hidden
                for ego in range(n):
                    cond = conditional_mask(n, t, t_obs, ego).hidden
                    if (cond & ~pred).any():
                        violations += 1
                occ = np.array([[stream.uniform() < 0.4 for _ in range(t_obs)]
                                for _ in range(n)])
                occm = occlusion_task_mask(n, t, t_obs, occ).hidden
                if (pred & ~occm).any():
                    violations += 1
    assert violations == 0


# -- apply_mask / measured_ratio ---------------------------------------------

def test_apply_mask_empty_is_identity():
    scene = random_scene(21)
    empty = MaskGrid(np.zeros((scene.n_agents, scene.t_total), dtype=bool))
    assert apply_mask(scene, empty) == scene


def test_apply_mask_full_zeroes_everything():
    scene = random_scene(22)
    full = MaskGrid(np.ones((scene.n_agents, scene.t_total), dtype=bool))
    masked = apply_mask(scene, full)
    assert not masked.valid.any()
    assert (masked.xy == 0).all() and (masked.vel == 0).all()
    assert (masked.heading == 0).all() and (masked.size == 0).all()


def test_apply_mask_idempotent_and_preserves_visible():
    for seed in range(10):
        scene = random_scene(seed)
        mask = sample_pointwise_mask(scene.n_agents, scene.t_total,
                                     scene.valid, 0.5, seed)
        once = apply_mask(scene, mask)
        twice = apply_mask(once, mask)
        assert once == twice
        keep = ~mask.hidden
        assert np.array_equal(once.xy[keep], scene.xy[keep])
        assert np.array_equal(once.heading[keep], scene.heading[keep])
        assert np.array_equal(once.vel[keep], scene.vel[keep])
        assert np.array_equal(once.size[keep], scene.size[keep])
        assert np.array_equal(once.valid[keep], scene.valid[keep])
        assert scene.valid.sum() >= once.valid.sum()  # input untouched


def test_apply_mask_leaves_no_information_in_hidden_cells():
    for seed in range(10):
        scene = random_scene(seed, all_valid=True)
        mask = sample_pointwise_mask(scene.n_agents, scene.t_total,
                                     scene.valid, 0.6, seed)
        masked = apply_mask(scene, mask)
        h = mask.hidden
        assert not masked.valid[h].any()
        assert (masked.xy[h] == 0).all()
        assert (masked.heading[h] == 0).all()
        assert (masked.vel[h] == 0).all()
        assert (masked.size[h] == 0).all()
        # kind is canonicalized to the same constant on every hidden cell
        assert len(set(masked.kind[h].tolist())) <= 1


def test_measured_ratio_cases():
    valid = np.ones((10, 10), dtype=bool)
    empty = MaskGrid(np.zeros((10, 10), dtype=bool))
    full = MaskGrid(np.ones((10, 10), dtype=bool))
    assert measured_ratio(empty, valid) == 0.0
    assert measured_ratio(full, valid) == 1.0
    mask = sample_pointwise_mask(10, 10, valid, 0.5, 13)
    assert measured_ratio(mask, valid) == 0.5
    none_valid = np.zeros((10, 10), dtype=bool)
    assert measured_ratio(full, none_valid) == 0.0


def test_mask_profile_config_round_trip():
    cfg = MaskProfileConfig(profile="patchwise", ratio=0.75,
                            patch_len_min=2, patch_len_max=6, seed=5)
    assert MaskProfileConfig.from_obj(cfg.to_obj()) == cfg
    with pytest.raises(InvariantError):
        MaskProfileConfig(profile="pointwise", ratio=1.5)
    with pytest.raises(InvariantError):
        MaskProfileConfig(profile="blockwise", ratio=0.5)
