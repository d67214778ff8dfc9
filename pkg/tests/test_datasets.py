import gzip
import struct

import numpy as np
import pandas as pd
import pytest
import requests

from conftest import linearly_separable
from datasets import (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Provenance, blob_centers, fetch_idx,
                      gen_blobs, gen_two_arcs, inject_label_noise, load_csv, load_idx, make_batch,
                      normalize, split_test, split_train_valid)
from exceptions import (DataError, IdxCountMismatchError, IdxFormatError, IdxTruncatedError,
                        PreconditionError)


def write_idx(tmp_path, images: np.ndarray, labels: np.ndarray, gz: bool = False,
              image_magic: int = IDX_IMAGES_MAGIC):
    count, rows, cols = images.shape
    image_bytes = struct.pack('>IIII', image_magic, count, rows, cols) + images.astype(np.uint8).tobytes()
    label_bytes = struct.pack('>II', IDX_LABELS_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes()
    suffix = '.gz' if gz else ''
    image_path = tmp_path / f"images-idx3-ubyte{suffix}"
    label_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    opener = gzip.open if gz else open
    with opener(image_path, 'wb') as f:
        f.write(image_bytes)
    with opener(label_path, 'wb') as f:
        f.write(label_bytes)
    return str(image_path), str(label_path)


def test_blobs_are_seeded_and_balanced():
    a = gen_blobs(2000, 4, 2, 0.3, seed=0)
    b = gen_blobs(2000, 4, 2, 0.3, seed=0)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert np.bincount(a.labels).tolist() == [500, 500, 500, 500]
    assert a.provenance is Provenance.BLOBS


def test_separated_blobs_are_linearly_separable():
    data = gen_blobs(300, 4, 2, 0.3, seed=1)
    assert linearly_separable(data.inputs, data.labels, 4)


def test_blob_centers_simplex_when_dim_allows():
    centers = blob_centers(3, 5)
    distances = [np.linalg.norm(centers[i] - centers[j]) for i in range(3) for j in range(i + 1, 3)]
    assert np.allclose(distances, distances[0])


def test_blobs_need_two_dims():
    with pytest.raises(PreconditionError):
        gen_blobs(10, 2, 1, 0.3, seed=0)


def test_two_arcs_shape():
    data = gen_two_arcs(101, 0.1, seed=3)
    assert data.inputs.shape == (101, 2)
    assert data.K == 2
    assert np.bincount(data.labels).tolist() == [51, 50]


def test_dataset_arrays_are_read_only():
    data = gen_blobs(20, 2, 2, 0.3, seed=0)
    with pytest.raises(ValueError):
        data.labels[0] = 1


@pytest.mark.parametrize('rate', [0.0, 0.2, 0.4, 0.6, 0.8])
def test_label_noise_changes_exact_count(rate):
    labels = np.arange(1000) % 10
    noisy = inject_label_noise(labels, rate, 10, seed=4)

    assert int(np.sum(noisy != labels)) == round(rate * 1000)
    np.testing.assert_array_equal(noisy, inject_label_noise(labels, rate, 10, seed=4))
    assert noisy.min() >= 0 and noisy.max() < 10


def test_label_noise_full_rate_changes_everything():
    labels = np.zeros(50, dtype=np.int64)
    assert np.all(inject_label_noise(labels, 1.0, 3, seed=0) != 0)


def test_label_noise_rejects_bad_rate():
    with pytest.raises(PreconditionError):
        inject_label_noise(np.zeros(5), 1.5, 3, seed=0)


def test_splits_are_disjoint_and_tagged():
    data = gen_blobs(200, 2, 2, 0.3, seed=0)
    rest, test = split_test(data, 0.25, seed=1)
    train, valid = split_train_valid(rest, 0.1, seed=2)

    assert (test.n, rest.n) == (50, 150)
    assert (train.n, valid.n) == (135, 15)
    assert (train.role, valid.role, test.role) == ('train', 'valid', 'test')
    rows = {tuple(x) for x in train.inputs} | {tuple(x) for x in valid.inputs} | {tuple(x) for x in test.inputs}
    assert len(rows) == 200


def test_split_rejects_degenerate_fraction():
    with pytest.raises(PreconditionError):
        split_train_valid(gen_blobs(4, 2, 2, 0.3, seed=0), 0.01, seed=0)


def test_normalize_uses_training_statistics():
    data = gen_blobs(400, 2, 3, 0.5, seed=2)
    train, valid = split_train_valid(data, 0.5, seed=0)
    norm_train, norm_valid = normalize(train, valid)

    np.testing.assert_allclose(norm_train.inputs.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(norm_train.inputs.std(axis=0), 1.0)
    np.testing.assert_allclose(norm_valid.inputs, (valid.inputs - train.inputs.mean(axis=0)) / train.inputs.std(axis=0))
    assert norm_valid.role == 'valid'


@pytest.mark.parametrize('gz', [False, True])
def test_load_idx(tmp_path, gz):
    images = np.arange(3 * 2 * 2).reshape(3, 2, 2) * 20
    labels = np.array([0, 2, 1])
    data = load_idx(*write_idx(tmp_path, images, labels, gz=gz))

    assert data.inputs.shape == (3, 4)
    assert data.K == 3
    np.testing.assert_allclose(data.inputs[1], np.array([80, 100, 120, 140]) / 255.0)
    np.testing.assert_array_equal(data.labels, labels)


def test_load_idx_limit(tmp_path):
    data = load_idx(*write_idx(tmp_path, np.zeros((5, 2, 2)), np.array([0, 1, 0, 1, 0])), limit=2)
    assert data.n == 2


def test_load_idx_bad_magic(tmp_path):
    paths = write_idx(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]), image_magic=0x0802)
    with pytest.raises(IdxFormatError) as info:
        load_idx(*paths)
    assert info.value.observed == 0x0802


def test_load_idx_truncated(tmp_path):
    image_path, label_path = write_idx(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]))
    with open(image_path, 'rb') as f:
        raw = f.read()
    with open(image_path, 'wb') as f:
        f.write(raw[:-3])
    with pytest.raises(IdxTruncatedError):
        load_idx(image_path, label_path)


@pytest.mark.parametrize('damage', [lambda raw: raw[:len(raw) // 2], lambda raw: b'plain bytes'])
def test_load_idx_damaged_gzip(tmp_path, damage):
    image_path, label_path = write_idx(tmp_path, np.zeros((4, 3, 3)), np.array([0, 1, 0, 1]), gz=True)
    with open(image_path, 'rb') as f:
        raw = f.read()
    with open(image_path, 'wb') as f:
        f.write(damage(raw))
    with pytest.raises(IdxTruncatedError):
        load_idx(image_path, label_path)


        load_idx(image_path, label_path)


def test_load_idx_count_mismatch(tmp_path):
    image_path, _ = write_idx(tmp_path, np.zeros((3, 2, 2)), np.array([0, 1, 0]))
    other = tmp_path / 'other'
    other.mkdir()
    _, label_path = write_idx(other, np.zeros((2, 2, 2)), np.array([0, 1]))
    with pytest.raises(IdxCountMismatchError):
        load_idx(image_path, label_path)


def test_load_idx_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_idx(str(tmp_path / 'nope'), str(tmp_path / 'nope2'))


def test_load_csv(tmp_path):
    path = tmp_path / 'data.csv'
    pd.DataFrame({'f0': [0.1, 0.2, 0.3], 'f1': [1.0, 2.0, 3.0], 'label': [0, 1, 2]}).to_csv(path, index=False)
    data = load_csv(str(path))

    assert data.inputs.shape == (3, 2)
    assert data.K == 3
    assert data.provenance is Provenance.CSV


def test_load_csv_bad_header(tmp_path):
    path = tmp_path / 'data.csv'
    pd.DataFrame({'x': [0.1], 'label': [0]}).to_csv(path, index=False)
    with pytest.raises(DataError):
        load_csv(str(path))


class FakeResponse:
    def __init__(self, content: bytes, status: int = 200):
        self.content = content
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} error")


class FakeSession:
    def __init__(self, status: int = 200):
        self.status = status
        self.urls = []

    def get(self, url, timeout=None):
        self.urls.append(url)
        return FakeResponse(b'payload', self.status)


def test_fetch_idx_downloads_each_file(tmp_path):
    session = FakeSession()
    paths = fetch_idx('https://example.org/mnist', ['a.gz', 'b.gz'], str(tmp_path), session)

    assert session.urls == ['https://example.org/mnist/a.gz', 'https://example.org/mnist/b.gz']
    assert [open(p, 'rb').read() for p in paths] == [b'payload', b'payload']


def test_fetch_idx_skips_present_files(tmp_path):
    (tmp_path / 'a.gz').write_bytes(b'old')
    session = FakeSession()
    fetch_idx('https://example.org/mnist/', ['a.gz'], str(tmp_path), session)
    assert session.urls == []


def test_fetch_idx_http_error(tmp_path):
    with pytest.raises(DataError):
        fetch_idx('https://example.org/mnist', ['a.gz'], str(tmp_path), FakeSession(status=404))


@pytest.mark.parametrize('fn', [gen_blobs, split_train_valid, split_test, make_batch])
def test_dataset_helpers_are_documented(fn):
    assert fn.__doc__ and fn.__doc__.strip()
