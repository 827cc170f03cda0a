"""Tests for datasets, the synthetic generator, splits, and file formats."""

import pathlib

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from modalbridge.data import (Dataset, PairedDataset, SynthConfig,
                              generate_synthetic, load_features, load_labels,
                              load_matrix, read_kv_file, save_features,
                              save_labels, save_matrix, split,
                              synth_config_from_file)
from modalbridge.errors import FeatureFormatError
from modalbridge.tensor import make_rng

FIXTURES = pathlib.Path(__file__).parent / "fixtures"

# Values that exercise the float text round trip: negatives, non-dyadic
# fractions, denormal-adjacent magnitudes, and signed zero.
TRICKY = np.array([[0.1, -1.0 / 3.0, 1e-300],
                   [-0.0, 1.7976931348623157e308, 5e-324],
                   [2.5, -7.25, 3.141592653589793]])


def _dataset(rng, n=5, d=3, c=2):
    return Dataset(rng.standard_normal((n, d)), rng.integers(0, c, n), c)


# ---------------------------------------------------------------------------
# container validation
# ---------------------------------------------------------------------------

def test_dataset_validation():
    with pytest.raises(ValueError, match="at least one row"):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError, match="align"):
        Dataset(np.zeros((2, 2)), [0], 2)
    with pytest.raises(ValueError, match="out of range"):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValueError, match="out of range"):
        Dataset(np.zeros((2, 2)), [-1, 0], 2)
    with pytest.raises(ValueError, match="NaN or Inf"):
        Dataset(np.array([[np.nan, 0.0]]), [0], 1)


def test_paired_dataset_validation():
    rng = make_rng(0)
    img = Dataset(rng.standard_normal((4, 3)), [0, 1, 0, 1], 2)
    txt_ok = Dataset(rng.standard_normal((4, 2)), [0, 1, 0, 1], 2)
    assert PairedDataset(img, txt_ok).n == 4
    with pytest.raises(ValueError, match="equal row counts"):
        PairedDataset(img, Dataset(rng.standard_normal((3, 2)), [0, 1, 0], 2))
    with pytest.raises(ValueError, match="share labels"):
        PairedDataset(img, Dataset(txt_ok.features, [1, 0, 1, 0], 2))
    with pytest.raises(ValueError, match="class count"):
        PairedDataset(img, Dataset(txt_ok.features, [0, 1, 0, 1], 3))
    with pytest.raises(ValueError, match="row-aligned"):
        PairedDataset(img, txt_ok, unlabeled_img=np.zeros((2, 3)),
                      unlabeled_txt=np.zeros((1, 2)))


def test_paired_dataset_defaults_empty_unlabeled():
    rng = make_rng(1)
    paired = PairedDataset(_dataset(rng), _dataset(make_rng(1)))
    assert paired.unlabeled_img.shape == (0, 3)
    assert paired.unlabeled_txt.shape == (0, 3)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def test_synth_config_validation():
    with pytest.raises(ValueError, match="overlap"):
        SynthConfig(c_src=3, c_tgt=4, overlap=4)
    with pytest.raises(ValueError, match="class counts"):
        SynthConfig(c_tgt=1, overlap=0)
    with pytest.raises(ValueError, match="noise_sigma"):
        SynthConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError, match="d_img"):
        SynthConfig(d_img=0)
    cfg = SynthConfig(n_train_pairs=10, n_test_pairs=3)
    assert cfg.n_pairs == 13


def test_synthetic_same_seed_is_bit_identical():
    cfg = SynthConfig(n_source=20, n_train_pairs=15, n_test_pairs=5)
    src_a, tgt_a = generate_synthetic(cfg)
    src_b, tgt_b = generate_synthetic(cfg)
    np.testing.assert_array_equal(src_a.features, src_b.features)
    np.testing.assert_array_equal(src_a.labels, src_b.labels)
    np.testing.assert_array_equal(tgt_a.img.features, tgt_b.img.features)
    np.testing.assert_array_equal(tgt_a.txt.features, tgt_b.txt.features)

    src_c, _ = generate_synthetic(
        SynthConfig(n_source=20, n_train_pairs=15, n_test_pairs=5, seed=8))
    assert not np.array_equal(src_a.features, src_c.features)


def test_synthetic_shapes_and_balance():
    cfg = SynthConfig(c_src=5, c_tgt=3, overlap=2, n_source=11,
                      n_train_pairs=7, n_test_pairs=2)
    src, tgt = generate_synthetic(cfg)
    assert src.features.shape == (11, cfg.d_img)
    assert src.class_count == 5
    assert tgt.n == 9
    assert tgt.img.d == cfg.d_img and tgt.txt.d == cfg.d_txt
    # round-robin labels are balanced up to remainder
    np.testing.assert_array_equal(np.bincount(tgt.img.labels), [3, 3, 3])
    np.testing.assert_array_equal(np.bincount(src.labels), [3, 2, 2, 2, 2])


def test_noiseless_pairs_are_exact_linear_images_of_shared_latents():
    """With zero noise every sample of a class collapses onto the class
    latent mean, so same-class rows are identical within each modality
    and the feature matrices have rank <= c_tgt."""
    cfg = SynthConfig(noise_sigma=0.0, overlap=4, n_source=16,
                      n_train_pairs=12, n_test_pairs=0)
    _, tgt = generate_synthetic(cfg)
    for c in range(cfg.c_tgt):
        rows = np.flatnonzero(tgt.img.labels == c)
        for feats in (tgt.img.features, tgt.txt.features):
            np.testing.assert_array_equal(feats[rows],
                                          np.tile(feats[rows[0]], (len(rows), 1)))
    assert np.linalg.matrix_rank(tgt.img.features) <= cfg.c_tgt
    assert np.linalg.matrix_rank(tgt.txt.features) <= cfg.c_tgt
    # distinct classes map to distinct rows
    assert not np.array_equal(tgt.img.features[0], tgt.img.features[1])


def test_overlapping_source_classes_sit_near_target_classes():
    """Source classes that reuse target latent means should land much
    closer to the matching target class mean than fresh classes do."""
    cfg = SynthConfig(c_src=8, c_tgt=4, overlap=4, noise_sigma=0.0,
                      n_source=64, n_train_pairs=8, n_test_pairs=0)
    src, tgt = generate_synthetic(cfg)
    tgt_means = np.stack([tgt.img.features[tgt.img.labels == c].mean(axis=0)
                          for c in range(4)])
    src_means = np.stack([src.features[src.labels == c].mean(axis=0)
                          for c in range(8)])
    overlap_dist = np.linalg.norm(src_means[:4] - tgt_means, axis=1)
    fresh_dist = np.array([np.linalg.norm(src_means[4 + c] - tgt_means, axis=1).min()
                           for c in range(4)])
    assert overlap_dist.max() < fresh_dist.min()


def test_synthetic_classes_are_linearly_separable():
    cfg = SynthConfig(c_tgt=4, n_train_pairs=200, n_test_pairs=0,
                      n_source=200, noise_sigma=0.45)
    _, tgt = generate_synthetic(cfg)
    clf = LogisticRegression(max_iter=2000)
    clf.fit(tgt.img.features, tgt.img.labels)
    assert clf.score(tgt.img.features, tgt.img.labels) > 0.9
    clf.fit(tgt.txt.features, tgt.txt.labels)
    assert clf.score(tgt.txt.features, tgt.txt.labels) > 0.9


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def _paired(n=10, seed=2):
    rng = make_rng(seed)
    feats_i = rng.standard_normal((n, 3))
    feats_t = rng.standard_normal((n, 2))
    labels = rng.integers(0, 2, n)
    return PairedDataset(Dataset(feats_i, labels, 2),
                         Dataset(feats_t, labels, 2))


def test_split_sizes_disjoint_and_pairing():
    paired = _paired()
    train, test = split(paired, 6, 3, make_rng(3))
    assert train.n == 6
    assert test.img.shape == (3, 3) and test.txt.shape == (3, 2)
    assert test.labels.shape == (3,)
    np.testing.assert_array_equal(train.unlabeled_img, test.img)
    np.testing.assert_array_equal(train.unlabeled_txt, test.txt)

    # recover source row indices by matching feature rows, then check
    # disjointness and preserved pairing
    def row_index(row, feats):
        hits = np.flatnonzero((feats == row).all(axis=1))
        assert hits.size == 1
        return hits[0]

    train_idx = [row_index(r, paired.img.features) for r in train.img.features]
    test_idx = [row_index(r, paired.img.features) for r in test.img]
    assert not set(train_idx) & set(test_idx)
    for k, i in enumerate(train_idx):
        np.testing.assert_array_equal(train.txt.features[k],
                                      paired.txt.features[i])
        assert train.img.labels[k] == paired.img.labels[i]
    for k, i in enumerate(test_idx):
        np.testing.assert_array_equal(test.txt[k], paired.txt.features[i])
        assert test.labels[k] == paired.img.labels[i]


def test_split_seed_reproducible():
    paired = _paired()
    a, _ = split(paired, 5, 5, make_rng(4))
    b, _ = split(paired, 5, 5, make_rng(4))
    np.testing.assert_array_equal(a.img.features, b.img.features)
    c, _ = split(paired, 5, 5, make_rng(5))
    assert not np.array_equal(a.img.features, c.img.features)


def test_split_rejects_excess_counts():
    with pytest.raises(ValueError, match="cannot split"):
        split(_paired(), 8, 3, make_rng(0))
    with pytest.raises(ValueError, match="cannot split"):
        split(_paired(), 0, 3, make_rng(0))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def test_golden_fixture_parses_to_known_matrix():
    ds = load_features(FIXTURES / "tiny_features.csv")
    np.testing.assert_array_equal(
        ds.features, np.array([[1.5, -2.25], [0.125, 3.0], [-0.5, 0.001]]))
    np.testing.assert_array_equal(ds.labels, [0, 1, 0])
    assert ds.class_count == 2


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_features_round_trip_bit_exact(tmp_path, fmt):
    ds = Dataset(TRICKY, [0, 2, 1], 3)
    path = tmp_path / f"feat.{fmt}"
    save_features(path, ds, fmt=fmt)
    back = load_features(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.class_count == 3
    # signed zero survives
    assert np.signbit(back.features[1, 0])


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_matrix_round_trip_bit_exact(tmp_path, fmt):
    path = tmp_path / f"mat.{fmt}"
    save_matrix(path, TRICKY, fmt=fmt)
    np.testing.assert_array_equal(load_matrix(path), TRICKY)


def test_load_matrix_accepts_labeled_inputs(tmp_path):
    ds = Dataset(TRICKY, [0, 1, 2], 3)
    csv, binary = tmp_path / "a.csv", tmp_path / "a.bin"
    save_features(csv, ds, fmt="csv")
    save_features(binary, ds, fmt="binary")
    np.testing.assert_array_equal(load_matrix(csv), TRICKY)
    np.testing.assert_array_equal(load_matrix(binary), TRICKY)


def test_labels_round_trip(tmp_path):
    path = tmp_path / "labels.csv"
    save_labels(path, [3, 0, 2, 2], 4)
    labels, c = load_labels(path)
    np.testing.assert_array_equal(labels, [3, 0, 2, 2])
    assert c == 4


def test_save_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="format"):
        save_features(tmp_path / "x", Dataset(TRICKY, [0, 0, 0], 1), fmt="json")
    with pytest.raises(ValueError, match="format"):
        save_matrix(tmp_path / "x", TRICKY, fmt="npz")


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_malformed_csv_errors_carry_line_numbers(tmp_path):
    cases = [
        ("empty.csv", "", ":1: empty file"),
        ("header.csv", "3,2\n", "expected 3 comma-separated integers"),
        ("notint.csv", "a,2,2\n", ":2:"),  # comment shifts line numbers
        ("fields.csv", "1,2,2\n0,1.0\n", r"expected 1 label \+ 2 features"),
        ("float.csv", "1,2,2\n0,1.0,zzz\n", "could not convert"),
        ("extra.csv", "1,1,2\n0,1.0\n1,2.0\n", "more rows than header"),
        ("missing.csv", "2,1,2\n0,1.0\n", "declared n=2 but found 1"),
        ("range.csv", "1,1,2\n5,1.0\n", "out of range"),
        ("nonfinite.csv", "1,1,2\n0,nan\n", "finite"),
    ]
    header_comment = "# leading comment\n"
    for name, text, needle in cases:
        path = _write(tmp_path, name, header_comment + text)
        with pytest.raises(FeatureFormatError, match=needle):
            load_features(path)


def test_matrix_and_label_parse_errors(tmp_path):
    with pytest.raises(FeatureFormatError, match="expected 2 features"):
        load_matrix(_write(tmp_path, "m.csv", "1,2\n1.0\n"))
    with pytest.raises(FeatureFormatError, match="non-finite"):
        load_matrix(_write(tmp_path, "inf.csv", "1,1\ninf\n"))
    with pytest.raises(FeatureFormatError, match="out of range"):
        load_labels(_write(tmp_path, "l.csv", "1,2\n7\n"))
    with pytest.raises(FeatureFormatError, match="declared n=3"):
        load_labels(_write(tmp_path, "short.csv", "3,2\n0\n1\n"))


def test_binary_corruption_errors(tmp_path):
    ds = Dataset(TRICKY, [0, 1, 2], 3)
    path = tmp_path / "feat.bin"
    save_features(path, ds, fmt="binary")
    blob = path.read_bytes()

    bad_version = _write(tmp_path, "v.bin", "")
    bad_version.write_bytes(blob[:4] + b"\x09" + blob[5:])
    with pytest.raises(FeatureFormatError, match="version"):
        load_features(bad_version)

    truncated = tmp_path / "t.bin"
    truncated.write_bytes(blob[:-4])
    with pytest.raises(FeatureFormatError, match="mismatch"):
        load_features(truncated)

    unlabeled = tmp_path / "u.bin"
    save_matrix(unlabeled, TRICKY, fmt="binary")
    with pytest.raises(FeatureFormatError, match="no labels"):
        load_features(unlabeled)


# ---------------------------------------------------------------------------
# key-value config files
# ---------------------------------------------------------------------------

def test_read_kv_file(tmp_path):
    path = _write(tmp_path, "cfg.txt",
                  "# comment\nalpha = 3\n\nbeta = hello world\n")
    assert read_kv_file(path) == {"alpha": "3", "beta": "hello world"}
    with pytest.raises(FeatureFormatError, match="key = value"):
        read_kv_file(_write(tmp_path, "bad.txt", "no separator\n"))
    with pytest.raises(FeatureFormatError, match="duplicate"):
        read_kv_file(_write(tmp_path, "dup.txt", "a = 1\na = 2\n"))
    with pytest.raises(FeatureFormatError, match="empty key or value"):
        read_kv_file(_write(tmp_path, "empty.txt", "a =\n"))


def test_synth_config_from_file(tmp_path):
    path = _write(tmp_path, "synth.txt",
                  "c_src = 5\nc_tgt = 3\noverlap = 2\nnoise_sigma = 0.25\n"
                  "seed = 42\n")
    cfg = synth_config_from_file(path)
    assert cfg == SynthConfig(c_src=5, c_tgt=3, overlap=2,
                              noise_sigma=0.25, seed=42)
    with pytest.raises(FeatureFormatError, match="unknown keys"):
        synth_config_from_file(_write(tmp_path, "u.txt", "sigma = 1\n"))
    with pytest.raises(FeatureFormatError, match="key 'c_src'"):
        synth_config_from_file(_write(tmp_path, "b.txt", "c_src = few\n"))
    with pytest.raises(FeatureFormatError, match="overlap"):
        synth_config_from_file(_write(tmp_path, "r.txt",
                                      "c_src = 2\noverlap = 3\n"))
