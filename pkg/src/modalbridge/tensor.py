"""Dense float64 linear algebra, activations, and seeded randomness.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64 and
row-major layout; vectors are 1-D float64 arrays. Every function here is
pure and none mutates its inputs, so values can be shared freely across
threads for reading.

Randomness comes from numpy's PCG64 bit generator. The seed fully
determines the stream, byte for byte, across runs and platforms.
"""

import numpy as np

from .errors import DegenerateInputError


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for the given 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Mask ``upstream`` where the rectifier input ``x`` was <= 0."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError(
            f"relu_backward shape mismatch: {x.shape} vs {upstream.shape}"
        )
    return np.where(x > 0.0, upstream, 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax of a vector (max subtraction).

    exp of the result sums to 1 within 1e-12 for inputs with magnitude
    up to about 1e3.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("log_softmax expects a non-empty 1-D vector")
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax for a batch of logit rows."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] == 0:
        raise ValueError("log_softmax_rows expects a non-empty 2-D matrix")
    shifted = z - np.max(z, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax; each row sums to 1 up to rounding."""
    return np.exp(log_softmax_rows(logits))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|), in [-1, 1].

    A zero-norm operand raises DegenerateInputError: the representations
    this package ranks are post-softmax probability vectors, which can
    never be zero, so a zero norm signals a pipeline bug upstream.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"cosine_similarity length mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine_similarity received a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
