"""Datasets, feature file formats, splits, and the synthetic generator.

File formats (all little-endian, float64 features; golden fixtures live
under tests/fixtures/):

* labeled CSV     -- header line ``n,d,c`` then n rows ``label,f1,...,fd``
* matrix CSV      -- header line ``n,d`` then n rows ``f1,...,fd``
* labels CSV      -- header line ``n,c`` then n rows of one label each
* binary feature  -- magic ``MBFT``, version u32, flags u8 (bit0 = has
  labels), n u64, d u32, c u32, then int64 labels (if flagged) and the
  row-major float64 feature block.

CSV floats are written with ``repr`` so a save/load round trip is
bit-exact; lines starting with ``#`` are skipped. Loaders sniff the
binary magic, so every ``load_*`` accepts either flavor.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FeatureFormatError
from .tensor import as_matrix, make_rng

FEATURE_MAGIC = b"MBFT"
FEATURE_VERSION = 1


@dataclass
class Dataset:
    """Labeled feature vectors: features (n, d), integer labels in
    [0, class_count)."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"label out of range [0, {self.class_count})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class PairedDataset:
    """Row-aligned image/text pairs; row p of img pairs with row p of
    txt and the two share one label. The unlabeled_* matrices hold the
    held-out split (features only)."""

    img: Dataset
    txt: Dataset
    unlabeled_img: np.ndarray = None
    unlabeled_txt: np.ndarray = None

    def __post_init__(self):
        if self.unlabeled_img is None:
            self.unlabeled_img = np.zeros((0, self.img.d))
        if self.unlabeled_txt is None:
            self.unlabeled_txt = np.zeros((0, self.txt.d))
        self.unlabeled_img = np.asarray(self.unlabeled_img, dtype=np.float64)
        self.unlabeled_txt = np.asarray(self.unlabeled_txt, dtype=np.float64)
        if self.img.n != self.txt.n:
            raise ValueError("paired datasets must have equal row counts")
        if not np.array_equal(self.img.labels, self.txt.labels):
            raise ValueError("paired rows must share labels elementwise")
        if self.img.class_count != self.txt.class_count:
            raise ValueError("paired datasets must share the class count")
        if self.unlabeled_img.shape[0] != self.unlabeled_txt.shape[0]:
            raise ValueError("unlabeled splits must be row-aligned")

    @property
    def n(self) -> int:
        return self.img.n


@dataclass
class TestSplit:
    """Held-out pairs: features for both modalities plus the labels
    kept aside purely for retrieval evaluation."""

    img: np.ndarray
    txt: np.ndarray
    labels: np.ndarray


def split(paired: PairedDataset, train_n: int, test_n: int,
          rng: np.random.Generator):
    """Disjoint random train/test split that preserves pairing.

    Returns (train PairedDataset, TestSplit); the train set's
    unlabeled_* fields hold the test feature matrices.
    """
    n = paired.n
    if train_n < 1 or test_n < 0 or train_n + test_n > n:
        raise ValueError(f"cannot split {n} pairs into {train_n} + {test_n}")
    perm = rng.permutation(n)
    tr = perm[:train_n]
    te = perm[train_n:train_n + test_n]
    c = paired.img.class_count
    test = TestSplit(img=paired.img.features[te].copy(),
                     txt=paired.txt.features[te].copy(),
                     labels=paired.img.labels[te].copy())
    train = PairedDataset(
        img=Dataset(paired.img.features[tr].copy(), paired.img.labels[tr].copy(), c),
        txt=Dataset(paired.txt.features[tr].copy(), paired.txt.labels[tr].copy(), c),
        unlabeled_img=test.img,
        unlabeled_txt=test.txt,
    )
    return train, test


# ---------------------------------------------------------------------------
# Synthetic cross-modal generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Latent-factor generator configuration.

    Every target class gets a latent mean; each pair draws one shared
    latent sample around its class mean, and the two modalities see
    that sample through fixed random linear maps plus their own noise.
    The first ``overlap`` source classes reuse target latent means
    (lightly perturbed), tying source semantics to target semantics;
    the remaining source classes get fresh means. All draws come from
    one seeded PCG64 stream in a fixed order.
    """

    c_src: int = 8
    c_tgt: int = 4
    overlap: int = 4
    d_latent: int = 8
    d_img: int = 32
    d_txt: int = 24
    noise_sigma: float = 0.6
    n_source: int = 300
    n_train_pairs: int = 400
    n_test_pairs: int = 100
    seed: int = 7

    def __post_init__(self):
        if self.c_src < 2 or self.c_tgt < 2:
            raise ValueError("class counts must be >= 2")
        if not 0 <= self.overlap <= min(self.c_src, self.c_tgt):
            raise ValueError("overlap must be in [0, min(c_src, c_tgt)]")
        for name in ("d_latent", "d_img", "d_txt", "n_source",
                     "n_train_pairs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_test_pairs < 0:
            raise ValueError("n_test_pairs must be >= 0")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise ValueError("noise_sigma must be finite and >= 0")

    @property
    def n_pairs(self) -> int:
        return self.n_train_pairs + self.n_test_pairs


# Shift applied to target latent means reused by overlapping source
# classes; small relative to the unit-scale means.
_OVERLAP_SHIFT = 0.1


def generate_synthetic(cfg: SynthConfig):
    """Build (source Dataset, target PairedDataset) from the latent model.

    Classes are assigned round-robin, so both domains are balanced up
    to remainder. The returned target set holds all n_train + n_test
    pairs; carve it with :func:`split`.
    """
    rng = make_rng(cfg.seed)
    mu_tgt = rng.standard_normal((cfg.c_tgt, cfg.d_latent))
    img_map = rng.standard_normal((cfg.d_latent, cfg.d_img)) / np.sqrt(cfg.d_latent)
    txt_map = rng.standard_normal((cfg.d_latent, cfg.d_txt)) / np.sqrt(cfg.d_latent)

    mu_src = np.empty((cfg.c_src, cfg.d_latent))
    k = cfg.overlap
    mu_src[:k] = mu_tgt[:k] + _OVERLAP_SHIFT * rng.standard_normal((k, cfg.d_latent))
    mu_src[k:] = rng.standard_normal((cfg.c_src - k, cfg.d_latent))

    n = cfg.n_pairs
    tgt_labels = np.arange(n, dtype=np.int64) % cfg.c_tgt
    shared = mu_tgt[tgt_labels] + cfg.noise_sigma * rng.standard_normal(
        (n, cfg.d_latent))
    img_feats = (shared + cfg.noise_sigma * rng.standard_normal(
        (n, cfg.d_latent))) @ img_map
    txt_feats = (shared + cfg.noise_sigma * rng.standard_normal(
        (n, cfg.d_latent))) @ txt_map

    src_labels = np.arange(cfg.n_source, dtype=np.int64) % cfg.c_src
    src_feats = (mu_src[src_labels] + cfg.noise_sigma * rng.standard_normal(
        (cfg.n_source, cfg.d_latent))) @ img_map

    source = Dataset(src_feats, src_labels, cfg.c_src)
    target = PairedDataset(
        img=Dataset(img_feats, tgt_labels, cfg.c_tgt),
        txt=Dataset(txt_feats, tgt_labels.copy(), cfg.c_tgt),
    )
    return source, target


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _data_lines(path):
    """Yield (line_number, stripped_line) skipping blanks and comments."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                yield lineno, s


def _parse_ints(path, lineno, text, count):
    parts = text.split(",")
    if len(parts) != count:
        raise FeatureFormatError(
            f"{path}:{lineno}: expected {count} comma-separated integers, "
            f"got {text!r}")
    try:
        return [int(p) for p in parts]
    except ValueError as e:
        raise FeatureFormatError(f"{path}:{lineno}: {e}") from None


def save_features(path, dataset: Dataset, fmt: str = "csv") -> None:
    """Write a labeled feature file in the chosen format."""
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{dataset.n},{dataset.d},{dataset.class_count}\n")
            for y, row in zip(dataset.labels, dataset.features):
                f.write(str(int(y)) + "," + ",".join(_fmt(v) for v in row) + "\n")
    elif fmt == "binary":
        _save_binary(path, dataset.features, dataset.labels, dataset.class_count)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def save_matrix(path, matrix: np.ndarray, fmt: str = "csv") -> None:
    """Write an unlabeled feature matrix."""
    m = as_matrix(matrix, "matrix")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{m.shape[0]},{m.shape[1]}\n")
            for row in m:
                f.write(",".join(_fmt(v) for v in row) + "\n")
    elif fmt == "binary":
        _save_binary(path, m, None, 0)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def save_labels(path, labels, class_count: int) -> None:
    y = np.asarray(labels, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{y.shape[0]},{class_count}\n")
        for v in y:
            f.write(f"{int(v)}\n")


def _save_binary(path, features, labels, class_count):
    n, d = features.shape
    flags = 1 if labels is not None else 0
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IBQII", FEATURE_VERSION, flags, n, d, class_count))
        if labels is not None:
            f.write(np.ascontiguousarray(labels, dtype="<i8").tobytes())
        f.write(np.ascontiguousarray(features, dtype="<f8").tobytes())


def _is_binary(path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == FEATURE_MAGIC


def _load_binary(path):
    """Returns (features, labels_or_None, class_count)."""
    with open(path, "rb") as f:
        blob = f.read()
    header = struct.calcsize("<IBQII")
    if len(blob) < 4 + header:
        raise FeatureFormatError(f"{path}: truncated header (byte {len(blob)})")
    version, flags, n, d, c = struct.unpack_from("<IBQII", blob, 4)
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version} (byte 4)")
    offset = 4 + header
    labels = None
    if flags & 1:
        end = offset + 8 * n
        if end > len(blob):
            raise FeatureFormatError(f"{path}: truncated labels (byte {offset})")
        labels = np.frombuffer(blob[offset:end], dtype="<i8").astype(np.int64)
        offset = end
    end = offset + 8 * n * d
    if end != len(blob):
        raise FeatureFormatError(
            f"{path}: feature block size mismatch (byte {offset})")
    feats = np.frombuffer(blob[offset:end], dtype="<f8").astype(
        np.float64).reshape(n, d)
    return feats, labels, c


def load_features(path) -> Dataset:
    """Load a labeled feature file (CSV or binary, sniffed by magic)."""
    if _is_binary(path):
        feats, labels, c = _load_binary(path)
        if labels is None:
            raise FeatureFormatError(f"{path}: file has no labels (byte 8)")
        try:
            return Dataset(feats, labels, c)
        except ValueError as e:
            raise FeatureFormatError(f"{path}: {e}") from None

    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FeatureFormatError(f"{path}:1: empty file") from None
    n, d, c = _parse_ints(path, lineno, header, 3)
    feats = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for lineno, text in lines:
        if row >= n:
            raise FeatureFormatError(f"{path}:{lineno}: more rows than header n={n}")
        parts = text.split(",")
        if len(parts) != d + 1:
            raise FeatureFormatError(
                f"{path}:{lineno}: expected 1 label + {d} features, "
                f"got {len(parts)} fields")
        try:
            labels[row] = int(parts[0])
            feats[row] = [float(p) for p in parts[1:]]
        except ValueError as e:
            raise FeatureFormatError(f"{path}:{lineno}: {e}") from None
        row += 1
    if row != n:
        raise FeatureFormatError(f"{path}: header declared n={n} but found {row} rows")
    try:
        return Dataset(feats, labels, c)
    except ValueError as e:
        raise FeatureFormatError(f"{path}: {e}") from None


def load_matrix(path) -> np.ndarray:
    """Load features only; accepts matrix CSV, labeled CSV, or binary."""
    if _is_binary(path):
        return _load_binary(path)[0]
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FeatureFormatError(f"{path}:1: empty file") from None
    fields = header.split(",")
    if len(fields) == 3:
        return load_features(path).features
    n, d = _parse_ints(path, lineno, header, 2)
    feats = np.empty((n, d))
    row = 0
    for lineno, text in lines:
        if row >= n:
            raise FeatureFormatError(f"{path}:{lineno}: more rows than header n={n}")
        parts = text.split(",")
        if len(parts) != d:
            raise FeatureFormatError(
                f"{path}:{lineno}: expected {d} features, got {len(parts)}")
        try:
            feats[row] = [float(p) for p in parts]
        except ValueError as e:
            raise FeatureFormatError(f"{path}:{lineno}: {e}") from None
        row += 1
    if row != n:
        raise FeatureFormatError(f"{path}: header declared n={n} but found {row} rows")
    if not np.all(np.isfinite(feats)):
        raise FeatureFormatError(f"{path}: non-finite feature value")
    return feats


def load_labels(path):
    """Load a labels file; returns (labels, class_count)."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FeatureFormatError(f"{path}:1: empty file") from None
    n, c = _parse_ints(path, lineno, header, 2)
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for lineno, text in lines:
        if row >= n:
            raise FeatureFormatError(f"{path}:{lineno}: more rows than header n={n}")
        (labels[row],) = _parse_ints(path, lineno, text, 1)
        if not 0 <= labels[row] < c:
            raise FeatureFormatError(
                f"{path}:{lineno}: label {labels[row]} out of range [0, {c})")
        row += 1
    if row != n:
        raise FeatureFormatError(f"{path}: header declared n={n} but found {row} rows")
    return labels, c


# ---------------------------------------------------------------------------
# Key-value config files (shared by the trainer and the CLI)
# ---------------------------------------------------------------------------

def read_kv_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, text in _data_lines(path):
        if "=" not in text:
            raise FeatureFormatError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise FeatureFormatError(f"{path}:{lineno}: empty key or value")
        if key in out:
            raise FeatureFormatError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(path, key, value, kind):
    try:
        if kind is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return kind(value)
    except ValueError as e:
        raise FeatureFormatError(f"{path}: key {key!r}: {e}") from None


def synth_config_from_file(path) -> SynthConfig:
    """Build a SynthConfig from a key-value file; unknown keys fail."""
    kinds = {
        "c_src": int, "c_tgt": int, "overlap": int, "d_latent": int,
        "d_img": int, "d_txt": int, "noise_sigma": float,
        "n_source": int, "n_train_pairs": int, "n_test_pairs": int,
        "seed": int,
    }
    raw = read_kv_file(path)
    unknown = sorted(set(raw) - set(kinds))
    if unknown:
        raise FeatureFormatError(f"{path}: unknown keys {unknown}")
    fields = {k: _coerce(path, k, v, kinds[k]) for k, v in raw.items()}
    try:
        return SynthConfig(**fields)
    except ValueError as e:
        raise FeatureFormatError(f"{path}: {e}") from None
