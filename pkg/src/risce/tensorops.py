"""Dense complex multilinear algebra: unfoldings, mode products, CP assembly.

Conventions
-----------
Tensors are plain ``numpy.ndarray``s of ``complex128``. The linearization
order is column-major ("first mode fastest"): ``vec(T) == T.flatten(order="F")``.
The mode-n unfolding follows the Kolda/Bader convention: mode-n fibers become
rows, the remaining modes run along columns in increasing order with the
earliest mode varying fastest. Modes are 0-indexed.
"""

import numpy as np

__all__ = [
    "unfold", "fold", "mode_dot", "khatri_rao", "cp_reconstruct",
    "frontal_vectorize", "vec", "truncated_svd", "eig", "pinv",
]


def unfold(t, mode):
    """Mode-n matricization of a tensor.

    For a rank-1 tensor a o b o c o d the mode-0 unfolding equals
    a (d kron c kron b)^T.
    """
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m, mode, shape):
    """Inverse of :func:`unfold`: rebuild the tensor of `shape` from its mode-n unfolding."""
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    moved = [shape[mode]] + [s for i, s in enumerate(shape) if i != mode]
    return np.moveaxis(m.reshape(moved, order="F"), 0, mode)


def mode_dot(t, mat, mode):
    """Mode-n product t x_n mat: contract mode `mode` with the columns of `mat`."""
    if mat.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix has {mat.shape[1]} columns, mode {mode} has length {t.shape[mode]}")
    new_shape = list(t.shape)
    new_shape[mode] = mat.shape[0]
    return fold(mat @ unfold(t, mode), mode, new_shape)


def khatri_rao(a, b):
    """Column-wise Kronecker product: column l of the result is a[:, l] kron b[:, l]."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return np.einsum("ir,jr->ijr", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1])


def cp_reconstruct(*factors):
    """Assemble the dense tensor sum_l f1[:, l] o f2[:, l] o ... from CP factors."""
    cols = {f.shape[1] for f in factors}
    if len(cols) != 1:
        raise ValueError(f"factors disagree on column count: {sorted(cols)}")
    letters = "ijkmnpq"[: len(factors)]
    spec = ",".join(f"{c}l" for c in letters) + "->" + letters
    return np.einsum(spec, *factors)


def frontal_vectorize(t):
    """Collapse the first two modes by column-stacking every frontal slice.

    Maps an I1 x I2 x ... tensor to I1*I2 x ... with vec() applied to each
    I1 x I2 slice, so a CP tensor [[A, B, C, ...]] becomes [[B kr A, C, ...]].
    """
    if t.ndim < 3:
        raise ValueError("need an order >= 3 tensor")
    return t.reshape((t.shape[0] * t.shape[1],) + t.shape[2:], order="F")


def vec(t):
    """Column-major vectorization; equals vec of the mode-0 unfolding."""
    return t.flatten(order="F")


def truncated_svd(m, r):
    """Rank-r truncated SVD. Returns (U, s, V) with m ~ U @ diag(s) @ V.conj().T."""
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"rank {r} out of range for shape {m.shape}")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return u[:, :r], s[:r], vh[:r].conj().T


def eig(m):
    """Eigendecomposition of a general square complex matrix.

    Eigenvalues are returned unsorted; eigenvector columns are unit norm.
    """
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return np.linalg.eig(m)


def pinv(m):
    """Moore-Penrose pseudo-inverse."""
    return np.linalg.pinv(m)
