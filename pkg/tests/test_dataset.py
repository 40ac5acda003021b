import json
import math
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenlaunch.container import SchemaVersionError, ShapeMismatchError, TruncatedFileError
from greenlaunch.dataset import (
    Dataset,
    InsufficientDataError,
    ReplayBuffer,
    collect_rollouts,
    largest_remainder_counts,
    load,
    mix_datasets,
    sample_batch,
    save,
)
from greenlaunch.sim import JOB_FEATURES, SimConfig

CFG = SimConfig(R_max=10)
J = CFG.n * JOB_FEATURES


def synthetic(n, tag="x", seed=0, T=4, R=3, jd=5):
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, T, R)), rng.random((n, jd)), rng.integers(0, 12, n), rng.normal(size=n),
                   rng.random((n, T, R)), rng.random((n, jd)), rng.random(n) < 0.1, np.zeros(n, np.uint16),
                   [tag], "abc", 12)


def test_collect_counts_and_tags():
    ds = collect_rollouts("qos", CFG, 3, 50, seed=1)
    assert len(ds) == 150
    assert ds.behavior_tags() == ["qos"] * 150
    assert ds.image_shape == (CFG.T_horizon, CFG.R_max) and ds.job_dim == J
    assert ds.n_actions == 12 and ds.config_hash == CFG.config_hash()
    assert not ds.dones.any()  # episode ends are time limits


def test_collect_zero_rollouts_is_empty():
    assert len(collect_rollouts("sjf", CFG, 0, 50)) == 0


def test_collect_is_deterministic(tmp_path):
    a = collect_rollouts("random", CFG, 2, 40, seed=5)
    b = collect_rollouts("random", CFG, 2, 40, seed=5)
    assert a.equals(b)
    save(a, tmp_path / "a.bin")
    save(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_collect_accepts_callable_policy():
    ds = collect_rollouts(lambda state, obs: 11, CFG, 1, 20, tag="noop")
    assert set(ds.actions) == {11} and ds.tag_names == ["noop"]


def test_transitions_chain_within_rollout():
    ds = collect_rollouts("hvf", CFG, 1, 30, seed=2)
    assert np.array_equal(ds.next_images[:-1], ds.images[1:])
    assert np.array_equal(ds.next_jobs[:-1], ds.jobs[1:])


# --- mixing -----------------------------------------------------------------

def test_largest_remainder_small_case():
    assert largest_remainder_counts([0.5, 0.5], 3) == [2, 1]
    assert largest_remainder_counts([0.25] * 4, 100_000) == [25_000] * 4
    assert largest_remainder_counts([0.1, 0.2, 0.7], 7) == [1, 1, 5]


@given(st.lists(st.integers(1, 50), min_size=1, max_size=6), st.integers(0, 10_000))
def test_largest_remainder_properties(weights, total):
    fr = [w / sum(weights) for w in weights]
    counts = largest_remainder_counts(fr, total)
    assert sum(counts) == total
    assert all(math.floor(f * total) <= c <= math.floor(f * total) + 1 for f, c in zip(fr, counts))


def test_mix_four_way_exact_counts():
    parts = [(synthetic(30, tag, seed=i), 0.25) for i, tag in enumerate(["sjf", "fcfs", "qos", "hvf"])]
    mixed = mix_datasets(parts, 100, seed=0)
    assert len(mixed) == 100
    assert mixed.tag_counts() == {"sjf": 25, "fcfs": 25, "qos": 25, "hvf": 25}


def test_mix_two_parts_total_three_is_deterministic():
    parts = [(synthetic(5, "a", 1), 0.5), (synthetic(5, "b", 2), 0.5)]
    m1, m2 = mix_datasets(parts, 3, seed=4), mix_datasets(parts, 3, seed=4)
    assert m1.tag_counts() == {"a": 2, "b": 1}
    assert m1.equals(m2)


def test_mix_single_part_is_a_subsample():
    src = synthetic(20, "q")
    mixed = mix_datasets([(src, 1.0)], 8, seed=3)
    rows = {tuple(src.jobs[i]) for i in range(len(src))}
    assert len(mixed) == 8
    assert all(tuple(r) in rows for r in mixed.jobs)
    assert len({tuple(r) for r in mixed.jobs}) == 8  # without replacement


def test_mix_insufficient_data_names_part():
    parts = [(synthetic(50, "plenty"), 0.5), (synthetic(3, "scarce"), 0.5)]
    with pytest.raises(InsufficientDataError, match="scarce"):
        mix_datasets(parts, 20)


def test_mix_rejects_bad_fractions():
    with pytest.raises(ValueError):
        mix_datasets([(synthetic(5), 0.6), (synthetic(5), 0.6)], 4)


# --- sampling / buffer ------------------------------------------------------

def test_single_item_buffer_repeats():
    buf = ReplayBuffer(5, (4, 3), 5)
    ds = synthetic(1)
    buf.add_dataset(ds)
    batch = sample_batch(buf, 4, np.random.default_rng(0))
    assert len(batch) == 4
    assert all(np.array_equal(t.obs[1], ds.jobs[0]) for t in batch)


def test_sampling_uniformity_chi_square():
    buf = ReplayBuffer(10, (4, 3), 5)
    buf.add_dataset(synthetic(10))
    for i in range(10):
        buf.actions[i] = i
    rng = np.random.default_rng(123)
    draws = np.concatenate([buf.sample(1000, rng).actions for _ in range(100)])
    counts = np.bincount(draws, minlength=10)
    n, p = len(draws), 0.1
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)
    chi2 = float(np.sum((counts - n * p) ** 2 / (n * p)))
    assert chi2 < 27.88  # df=9, p=0.001


def test_sampling_seeded():
    buf = ReplayBuffer(50, (4, 3), 5)
    buf.add_dataset(synthetic(50))
    a = buf.sample(16, np.random.default_rng(7))
    b = buf.sample(16, np.random.default_rng(7))
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.jobs, b.jobs)


def test_empty_buffer_sampling_raises():
    with pytest.raises(ValueError):
        ReplayBuffer(3, (4, 3), 5).sample(1, np.random.default_rng())


@given(st.integers(1, 20), st.integers(0, 30))
def test_fifo_eviction(capacity, extra):
    buf = ReplayBuffer(capacity, (1, 1), 1)
    total = capacity + extra
    for i in range(total):
        buf.add((np.zeros((1, 1)), np.array([float(i)])), 0, float(i), (np.zeros((1, 1)), np.zeros(1)), False)
    assert len(buf) == min(capacity, total)
    kept = [t.reward for t in buf.items()]
    assert kept == [float(i) for i in range(max(0, total - capacity), total)]


def test_add_dataset_larger_than_capacity_keeps_newest():
    buf = ReplayBuffer(4, (4, 3), 5)
    ds = synthetic(10)
    buf.add_dataset(ds)
    assert [t.reward for t in buf.items()] == list(ds.rewards[-4:])


# --- file format ------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 40), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_round_trip_identity(tmp_path_factory, n, T, R, seed):
    path = tmp_path_factory.mktemp("rt") / "d.bin"
    ds = synthetic(n, "qos", seed, T=T, R=R, jd=7)
    save(ds, path)
    back = load(path)
    assert back.equals(ds)
    assert back.tag_names == ds.tag_names and back.config_hash == ds.config_hash
    assert back.n_actions == ds.n_actions


def test_truncated_file_raises(tmp_path):
    path = tmp_path / "d.bin"
    save(synthetic(5), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(TruncatedFileError):
        load(path)
    path.write_bytes(raw[:6])
    with pytest.raises(TruncatedFileError):
        load(path)


def _rewrite_header(path, edit):
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen])
    edit(header)
    blob = json.dumps(header).encode()
    path.write_bytes(raw[:4] + struct.pack("<I", len(blob)) + blob + raw[8 + hlen:])


def test_version_mismatch_raises(tmp_path):
    path = tmp_path / "d.bin"
    save(synthetic(3), path)
    _rewrite_header(path, lambda h: h.update(schema_version=99))
    with pytest.raises(SchemaVersionError):
        load(path)


def test_shape_mismatch_raises(tmp_path):
    path = tmp_path / "d.bin"
    save(synthetic(3), path)
    _rewrite_header(path, lambda h: h.update(job_dim=6))
    with pytest.raises((ShapeMismatchError, TruncatedFileError)) as exc:
        load(path)
    assert exc.type is ShapeMismatchError


def test_errors_are_distinct_types():
    assert len({SchemaVersionError, TruncatedFileError, ShapeMismatchError}) == 3
    assert not issubclass(TruncatedFileError, SchemaVersionError)


def test_config_hash_mismatch_warns(tmp_path):
    path = tmp_path / "d.bin"
    save(synthetic(3), path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds = load(path, expected_config_hash="ffff")
    assert ds.warnings and "ffff" in ds.warnings[0]
    assert any("config hash" in str(w.message) for w in caught)
    assert load(path, expected_config_hash="abc").warnings == []


def test_concatenate_recodes_tags():
    a, b = synthetic(3, "qos", 1), synthetic(2, "sjf", 2)
    cat = Dataset.concatenate([a, b])
    assert cat.behavior_tags() == ["qos"] * 3 + ["sjf"] * 2
