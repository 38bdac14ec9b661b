"""Deterministic numerics kernel.

Every routine in this module is bit-reproducible: same inputs give the
same float32 outputs on every call in a process and across runs on the
same platform. Matrices are stored as float32 and all reductions
accumulate in float64 with a fixed summation order, so results do not
depend on BLAS threading or vectorization choices.

``matmul`` in particular is defined to equal the naive triple loop
(k innermost, float64 accumulator) bit for bit. It is implemented as a
k-ordered sum of rank-1 outer products, which performs the identical
sequence of IEEE-754 operations per output element.
"""

from __future__ import annotations

import numpy as np

# Probabilities below this threshold are treated as exact zeros in
# entropy sums (the 0 * log 0 = 0 convention).
ENTROPY_EPS = 1e-12

# Vectors with norm below this are treated as directionless.
COSINE_NORM_EPS = 1e-12

STOCHASTIC_ATOL = 1e-5


def as_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D float32 C-contiguous array."""
    m = np.ascontiguousarray(a, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    """Multiply two matrices with fixed-order float64 accumulation.

    The accumulation order is k-major: for each output element the
    products a[i, k] * b[k, j] are added in increasing k, all in
    float64, and the final sum is rounded to float32 once. This makes
    the result independent of the numpy build and bit-identical to a
    naive three-loop reference.
    """
    am = as_matrix(a)
    bm = as_matrix(b)
    if am.shape[1] != bm.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {am.shape} @ {bm.shape}"
        )
    a64 = am.astype(np.float64)
    b64 = bm.astype(np.float64)
    acc = np.zeros((am.shape[0], bm.shape[1]), dtype=np.float64)
    for k in range(am.shape[1]):
        acc += np.multiply.outer(a64[:, k], b64[k, :])
    out = acc.astype(np.float32)
    if not np.isfinite(out).all():
        raise FloatingPointError("matmul produced non-finite values")
    return out


def row_softmax(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization.

    Works in float64 and rounds to float32 at the end. Output rows sum
    to 1 within 1e-6 and all entries are finite for finite input.
    """
    x = as_matrix(m).astype(np.float64)
    x -= x.max(axis=1, keepdims=True)
    e = np.exp(x)
    e /= e.sum(axis=1, keepdims=True)
    return e.astype(np.float32)


def row_neg_entropy(p) -> np.ndarray:
    """Per-row negative entropy sum_j p_ij * log(p_ij).

    Rows must be stochastic (entries >= 0, sum within 1e-5 of 1).
    Entries below 1e-12 contribute exactly zero. Results are clamped
    to [-log N, 0]; a one-hot row gives exactly 0 and a uniform row
    gives exactly -log N when N is a power of two.
    """
    pm = as_matrix(p)
    p64 = pm.astype(np.float64)
    if (p64 < 0.0).any():
        raise ValueError("row_neg_entropy requires non-negative entries")
    sums = p64.sum(axis=1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=STOCHASTIC_ATOL):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(
            f"row_neg_entropy requires stochastic rows (max |sum-1| = {worst:g})"
        )
    n = pm.shape[1]
    terms = np.where(
        p64 > ENTROPY_EPS,
        p64 * np.log(np.maximum(p64, ENTROPY_EPS)),
        0.0,
    )
    vals = terms.sum(axis=1)
    return np.clip(vals, -np.log(float(n)), 0.0).astype(np.float64)


def cosine_sim(u, v) -> float:
    """Cosine similarity of two 1-D vectors in float64.

    Returns 0.0 if either vector has norm below 1e-12.
    """
    u64 = np.asarray(u, dtype=np.float64).reshape(-1)
    v64 = np.asarray(v, dtype=np.float64).reshape(-1)
    if u64.shape != v64.shape:
        raise ValueError(f"cosine_sim length mismatch: {u64.shape} vs {v64.shape}")
    nu = float(np.sqrt(np.dot(u64, u64)))
    nv = float(np.sqrt(np.dot(v64, v64)))
    if nu < COSINE_NORM_EPS or nv < COSINE_NORM_EPS:
        return 0.0
    return float(np.dot(u64, v64) / (nu * nv))


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the single RNG entry point for the package."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent child seeds from one root seed."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]
