import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from sglab import data
from sglab.data import DataError


def block_mean_loop(img, f):
    h, w, c = img.shape
    out = np.zeros((h // f, w // f, c))
    for i in range(h // f):
        for j in range(w // f):
            for k in range(c):
                out[i, j, k] = sum(float(img[i * f + a, j * f + b, k]) for a in range(f) for b in range(f)) / (f * f)
    return out


def write_png(path, size, value=128):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((size, size, 3), value, np.uint8)).save(path)


# --- ingestion ------------------------------------------------------------


def test_ingest_counts(tmp_path):
    for who in ("bob", "amy"):
        for k in range(3):
            write_png(tmp_path / who / f"{k}.png", 40, 30 * k)
    cat = data.ingest_dataset(tmp_path, 32)
    assert cat.num_identities == 2
    assert len(cat) == 6
    assert all(r.image.shape == (32, 32, 3) for r in cat.records)
    assert cat.names == ("amy", "bob")
    assert [r.source_id for r in cat.records][:3] == ["amy/0", "amy/1", "amy/2"]


def test_singleton_folder_excluded(tmp_path, caplog):
    for who, n in (("a", 2), ("b", 1), ("c", 3)):
        for k in range(n):
            write_png(tmp_path / who / f"{k}.png", 32)
    with caplog.at_level(logging.WARNING):
        cat = data.ingest_dataset(tmp_path, 32)
    assert cat.num_identities == 2
    assert cat.names == ("a", "c")
    assert "excluding identity 'b'" in caplog.text


def test_unreadable_image_skipped(tmp_path, caplog):
    for who in ("a", "b"):
        for k in range(2):
            write_png(tmp_path / who / f"{k}.png", 32)
    (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
    with caplog.at_level(logging.WARNING):
        cat = data.ingest_dataset(tmp_path, 32)
    assert len(cat) == 4
    assert "skipping unreadable image" in caplog.text


def test_empty_root_is_fatal(tmp_path):
    with pytest.raises(DataError, match="no identities"):
        data.ingest_dataset(tmp_path, 32)


def test_manifest_lines(tmp_path, corpus_dir):
    cat = data.ingest_dataset(corpus_dir, 32)
    data.write_manifest(cat, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == len(cat)
    assert lines[0] == "id000/img00,0,32x32x3"


# --- LR synthesis ---------------------------------------------------------


def test_constant_image_stays_constant():
    img = np.full((32, 32, 3), 0.7, np.float32)
    for f in (1, 2, 4, 8):
        out = data.synthesize_lr(img, f)
        assert np.all(out == np.float32(0.7))


def test_checkerboard_to_half():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.float32)
    img = np.repeat(board[:, :, None], 3, axis=2)
    assert data.synthesize_lr(img, 4).tolist() == [[[0.5, 0.5, 0.5]]]


def test_block_mean_matches_loop():
    rng = np.random.default_rng(0)
    img = rng.random((32, 32, 3))
    out = data.synthesize_lr(img, 4)
    assert out.shape == (8, 8, 3)
    np.testing.assert_allclose(out, block_mean_loop(img, 4), atol=1e-12)


def test_indivisible_size_rejected():
    with pytest.raises(DataError):
        data.synthesize_lr(np.zeros((30, 30, 3)), 4)


unit = st.floats(0, 1, width=32)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (8, 8, 3), elements=unit), st.sampled_from([1, 2, 4]))
def test_lr_range_preserved(img, f):
    out = data.synthesize_lr(img, f)
    assert out.min() >= img.min() and out.max() <= img.max()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 3, 3), elements=unit), st.sampled_from([1, 2, 4]))
def test_replication_inverse(img, f):
    up = np.repeat(np.repeat(img, f, axis=0), f, axis=1)
    assert np.array_equal(data.synthesize_lr(up, f), img)


# --- pair sampling --------------------------------------------------------


def test_half_genuine(small_catalog):
    batch = data.sample_pair_batch(small_catalog, 8, 0.5, 0)
    assert int(batch.y.sum()) == 4
    assert batch.lr1.shape == (8, 3, 8, 8) and batch.hr2.shape == (8, 3, 32, 32)


def test_all_genuine(small_catalog):
    batch = data.sample_pair_batch(small_catalog, 16, 1.0, 1)
    assert np.array_equal(batch.id1, batch.id2)
    assert bool(batch.y.eq(1).all())


def test_pair_images_match_catalog(small_catalog):
    batch = data.sample_pair_batch(small_catalog, 6, 0.5, 2)
    for i in range(6):
        hr = batch.hr1[i].permute(1, 2, 0).numpy()
        matches = [k for k in range(len(small_catalog)) if np.array_equal(small_catalog.images[k], hr)]
        assert matches and all(small_catalog.identities[k] == batch.id1[i] for k in matches)


def test_genuine_pairs_use_distinct_records(small_catalog):
    batch = data.sample_pair_batch(small_catalog, 64, 1.0, 3)
    assert all(not torch.equal(batch.hr1[i], batch.hr2[i]) for i in range(64))


def test_pair_sampling_needs_two_identities():
    cat = data.catalog_from_arrays(np.zeros((2, 4, 4, 3), np.float32), [0, 0])
    with pytest.raises(DataError):
        data.sample_pair_batch(cat, 4, 0.5, 0)
    assert len(data.sample_pair_batch(cat, 4, 1.0, 0)) == 4


def test_pair_audit_10k(small_catalog):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(625):
        batch = data.sample_pair_batch(small_catalog, 16, 0.5, rng)
        bad += int(np.sum(batch.y.numpy().astype(bool) != (batch.id1 == batch.id2)))
        assert int(batch.y.sum()) == 8
    assert bad == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 24), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_pair_labels_and_fraction(b, frac, seed):
    cat = data.catalog_from_arrays(np.random.default_rng(0).random((9, 4, 4, 3)).astype(np.float32), [0, 0, 0, 1, 1, 2, 2, 2, 2])
    batch = data.sample_pair_batch(cat, b, frac, seed)
    assert np.array_equal(batch.y.numpy() == 1, batch.id1 == batch.id2)
    assert int(batch.y.sum()) == round(b * frac)
    again = data.sample_pair_batch(cat, b, frac, seed)
    assert all(torch.equal(getattr(batch, k), getattr(again, k)) for k in ("lr1", "lr2", "hr1", "hr2", "y"))


# --- splitting ------------------------------------------------------------


def test_split_proportion():
    cat = data.catalog_from_arrays(np.zeros((30, 4, 4, 3), np.float32), np.repeat(np.arange(3), 10))
    train, test = data.split_catalog(cat, 0.2, 0)
    assert np.bincount(train.identities).tolist() == [8, 8, 8]
    assert np.bincount(test.identities).tolist() == [2, 2, 2]


def test_split_deterministic_and_partitions(small_catalog):
    a_train, a_test = data.split_catalog(small_catalog, 0.3, 5)
    b_train, b_test = data.split_catalog(small_catalog, 0.3, 5)
    ids = lambda c: [r.source_id for r in c.records]  # noqa: E731
    assert ids(a_train) == ids(b_train) and ids(a_test) == ids(b_test)
    assert set(ids(a_train)) | set(ids(a_test)) == set(ids(small_catalog))
    assert not set(ids(a_train)) & set(ids(a_test))


def test_record_validation():
    with pytest.raises(DataError):
        data.FaceRecord(np.zeros((8, 6, 3), np.float32), 0, "x")
    with pytest.raises(DataError):
        data.FaceRecord(np.full((8, 8, 3), 1.5, np.float32), 0, "x")
