"""Tensor-decomposition solvers for the received-signal tensor.

Three solvers recover CP factors (A, B, C, D) from a noisy 4th-order tensor:

* ``fourd_stdce`` -- one-shot structured decomposition that exploits the
  Vandermonde Doppler factor through spatial smoothing, a truncated SVD, and
  a shift-invariance eigendecomposition. No initialization, no iteration.
* ``dlr4dtd`` -- ADMM loop combining a Tucker (global low-rank) denoiser, the
  structured CPD (local low-rank), and sparse-outlier removal via
  soft-thresholding.
* ``cp_als`` -- alternating least squares baseline with orthogonal-factorization
  subproblem solves.
"""

from dataclasses import dataclass
import math

import numpy as np

from .tensorops import (cp_reconstruct, frontal_vectorize, khatri_rao, mode_dot,
                        truncated_svd, unfold, eig, pinv)

__all__ = ["FactorSet", "AdmmParams", "AdmmState", "DecompositionError",
           "DivergenceError", "soft_threshold", "hooi", "tucker_reconstruct",
           "spatial_smoothing", "solve_khatri_rao_rank1", "fourd_stdce",
           "dlr4dtd", "cp_als"]


class DecompositionError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, iteration, value):
        super().__init__(f"non-finite ADMM objective {value!r} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class FactorSet:
    """CP factors of the received tensor plus the Doppler generator per path.

    The D factor of the signal model is a Vandermonde matrix whose column l is
    the geometric sequence of ``doppler_eigs[l]`` (a unit-modulus phasor);
    solvers that do not enforce that structure get a least-squares generator
    fit via :meth:`from_factors`.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    doppler_eigs: np.ndarray

    def __post_init__(self):
        cols = {m.shape[1] for m in (self.a, self.b, self.c, self.d)}
        if len(cols) != 1:
            raise ValueError(f"factors disagree on path count: {sorted(cols)}")
        if self.doppler_eigs.shape != (self.a.shape[1],):
            raise ValueError("need one Doppler eigenvalue per path")

    @property
    def n_paths(self):
        return self.a.shape[1]

    def to_tensor(self):
        return cp_reconstruct(self.a, self.b, self.c, self.d)

    @classmethod
    def from_factors(cls, a, b, c, d):
        """Attach Doppler generators fitted by the one-step shift of D's columns."""
        num = np.sum(d[1:] * d[:-1].conj(), axis=0)
        den = np.sum(np.abs(d[:-1]) ** 2, axis=0)
        eigs = np.ones(d.shape[1], dtype=complex)
        ok = (den > 0) & (np.abs(num) > 0)
        eigs[ok] = num[ok] / den[ok]
        eigs[ok] /= np.abs(eigs[ok])
        return cls(a=a, b=b, c=c, d=d, doppler_eigs=eigs)


def soft_threshold(t, gap):
    """Complex soft-thresholding: shrink magnitudes by gap/2, keep phases."""
    if gap < 0:
        raise ValueError("gap must be nonnegative")
    if gap == 0:
        return t.copy()
    mag = np.abs(t)
    shrunk = np.maximum(mag - gap / 2.0, 0.0)
    out = np.zeros_like(t)
    nz = mag > 0
    out[nz] = t[nz] * (shrunk[nz] / mag[nz])
    return out


def _leading_left_vectors(m, r):
    """Top-r left singular vectors; wide matrices go through the small Gram."""
    if m.shape[0] <= m.shape[1]:
        _, vecs = np.linalg.eigh(m @ m.conj().T)
        return vecs[:, ::-1][:, :r]
    return np.linalg.svd(m, full_matrices=False)[0][:, :r]


def hooi(t, ranks, sweeps=3, init=None):
    """Higher-order orthogonal iteration for a multilinear-rank approximation.

    Returns (core, factors) with orthonormal factor columns. Initialization is
    the truncated HOSVD unless warm-start factors are supplied; each sweep can
    only decrease the reconstruction error.
    """
    if len(ranks) != t.ndim:
        raise ValueError("need one target rank per mode")
    if any(r > s for r, s in zip(ranks, t.shape)):
        raise ValueError(f"ranks {tuple(ranks)} exceed shape {t.shape}")
    if init is None:
        factors = [_leading_left_vectors(unfold(t, n), ranks[n]) for n in range(t.ndim)]
    else:
        factors = list(init)
    for _ in range(sweeps):
        for n in range(t.ndim):
            proj = t
            for j in range(t.ndim):
                if j != n:
                    proj = mode_dot(proj, factors[j].conj().T, j)
            factors[n] = _leading_left_vectors(unfold(proj, n), ranks[n])
    core = t
    for n in range(t.ndim):
        core = mode_dot(core, factors[n].conj().T, n)
    return core, factors


def tucker_reconstruct(core, factors):
    out = core
    for n, u in enumerate(factors):
        out = mode_dot(out, u, n)
    return out


def spatial_smoothing(q1t, k4, l4, n_pilots):
    """Windowed restack of the transposed mode-0 unfolding.

    ``q1t`` has M*K rows ordered subcarrier-fastest; window l keeps slot rows
    l..l+k4-1, and the l4 windows are stacked along columns. Requires
    k4 + l4 = M + 1. For an exact CP input the result factors as
    (D[:k4] kr C) ([1; D[:l4-1]] kr E)^T, exposing D's shift structure.
    """
    rows = q1t.shape[0]
    n_slots = rows // n_pilots
    if rows != n_slots * n_pilots:
        raise ValueError("row count is not a multiple of the pilot count")
    if k4 + l4 != n_slots + 1:
        raise ValueError(f"need k4 + l4 = M + 1, got {k4} + {l4} with M = {n_slots}")
    if k4 < 1 or l4 < 1:
        raise ValueError("window sizes must be positive")
    return np.hstack([q1t[l * n_pilots:(l + k4) * n_pilots, :] for l in range(l4)])


def solve_khatri_rao_rank1(e, rows):
    """Best rank-1 split of a vectorized outer product e ~ b kron a.

    Returns (a, b) minimizing ||unvec(e) - a b^T||_F with b unit norm.
    """
    mat = np.asarray(e).reshape(rows, -1, order="F")
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    return s[0] * u[:, 0], vh[0].copy()


def fourd_stdce(o, rank, k4=None):
    """Structured CP decomposition of a 4th-order tensor with Vandermonde mode 3.

    Steps: collapse modes 0-1, spatially smooth the slot axis, take a rank-L
    truncated SVD, recover the Doppler generators as eigenvalues of the
    shift-invariance map between the two slot-shifted row blocks of the left
    singular matrix, then solve for the remaining factors by per-column least
    squares and a rank-1 Khatri-Rao split. Eigenvalues are renormalized to the
    unit circle (the model constrains |generator| = 1); noise perturbs only
    the modulus. Assumes the path count ``rank`` is known.
    """
    n1, n2, n_pilots, n_slots = o.shape
    if k4 is None:
        k4 = math.ceil((n_slots + 1) / 2)
    l4 = n_slots + 1 - k4
    if rank < 1:
        raise ValueError("rank must be positive")
    if rank > min(k4 * n_pilots, l4 * n1 * n2) or rank > (k4 - 1) * n_pilots:
        raise ValueError(f"rank {rank} too large for smoothing windows ({k4}, {l4})")

    if not np.any(o):
        zero = lambda n: np.zeros((n, rank), dtype=complex)
        return FactorSet(a=zero(n1), b=zero(n2), c=zero(n_pilots),
                         d=zero(n_slots), doppler_eigs=np.zeros(rank, dtype=complex))

    q1t = unfold(frontal_vectorize(o), 0).T            # (M*K, N_st*N_s*N_b)
    qs = spatial_smoothing(q1t, k4, l4, n_pilots)
    u_s, sing, v_s = truncated_svd(qs, rank)

    # Shift invariance along the slot windows: dropping the last (first)
    # subcarrier block of U_s spans D[:k4-1] kr C (D[1:k4] kr C), so the
    # connecting map has the Doppler phasors e^{+j w_l} as eigenvalues.
    u_lo = u_s[: n_pilots * (k4 - 1), :]
    u_hi = u_s[n_pilots:, :]
    lam, p_mat = eig(pinv(u_lo) @ u_hi)
    moduli = np.abs(lam)
    if np.any(moduli < 1e-12):
        raise DecompositionError("degenerate Doppler eigenvalue in shift-invariance step")
    lam = lam / moduli
    d = lam[None, :] ** np.arange(1, n_slots + 1)[:, None]

    # C columns from U_s P = D[:k4] kr C, solved per path in closed form.
    up = u_s @ p_mat
    c = np.empty((n_pilots, rank), dtype=complex)
    for l in range(rank):
        dl = d[:k4, l]
        c[:, l] = dl.conj() @ up[:, l].reshape(k4, n_pilots) / (dl.conj() @ dl)

    # E = B kr A columns from V_s^* Sigma P^{-T} = [1; D[:l4-1]] kr E.
    ve = (v_s.conj() * sing[None, :]) @ np.linalg.inv(p_mat).T
    d_hat = np.vstack([np.ones((1, rank)), d[: l4 - 1, :]])
    a = np.empty((n1, rank), dtype=complex)
    b = np.empty((n2, rank), dtype=complex)
    for l in range(rank):
        dl = d_hat[:, l]
        e_l = dl.conj() @ ve[:, l].reshape(l4, n1 * n2) / (dl.conj() @ dl)
        a[:, l], b[:, l] = solve_khatri_rao_rank1(e_l, n1)

    return FactorSet(a=a, b=b, c=c, d=d, doppler_eigs=lam)


@dataclass(frozen=True)
class AdmmParams:
    """Tuning constants of the ADMM solver (defaults follow the method's
    published operating point)."""

    mu1: float = 0.01
    mu2: float = 0.5
    gamma: float = 1.5
    eps1: float = 1e-5
    eps2: float = 1e-5
    eps3: float = 1e-5
    max_iters: int = 300
    hooi_sweeps: int = 2
    tucker_ranks: tuple = None     # default (L, L, L, L)
    k4: int = None                 # default ceil((M+1)/2)


@dataclass
class AdmmState:
    """Final iterates and diagnostics of one ADMM run."""

    z: np.ndarray
    r: np.ndarray
    s: np.ndarray
    mult: np.ndarray
    objective: np.ndarray
    iterations: int
    converged: bool
    params: AdmmParams


def _objective(y, z, r, s, p):
    return (np.linalg.norm(y - z - s) ** 2
            + p.mu1 * np.linalg.norm(y - r - s) ** 2
            + p.mu2 * np.abs(s).sum())


def dlr4dtd(y, rank, params=None):
    """Double low-rank decomposition of a noisy tensor by ADMM.

    Alternates: (1) a Tucker-(L,L,L,L) fit by warm-started HOOI of the
    quadratic surrogate (2Y - 2S + gamma*R - Mult)/(2 + gamma); (2) the
    structured CPD of (2*mu1*Y - 2*mu1*S + gamma*Z + Mult)/(2*mu1 + gamma);
    (3) sparse-outlier refresh by soft-thresholding Y - (Z + mu1*R)/(1 + mu1)
    with gap mu2/(1 + mu1); (4) multiplier step Mult += gamma*(Z - R).

    Iterations stop at ``max_iters``, or when both iterate gaps drop below
    (eps1, eps2), or when the objective decrease falls below eps3.
    Returns (FactorSet from the last structured-CPD call, AdmmState).
    """
    p = params or AdmmParams()
    ranks = p.tucker_ranks or (rank,) * y.ndim
    z = np.zeros_like(y)
    r = np.zeros_like(y)
    s = np.zeros_like(y)
    mult = np.zeros_like(y)
    obj = [_objective(y, z, r, s, p)]
    factors = None
    u_warm = None
    converged = False
    it = 0
    for it in range(1, p.max_iters + 1):
        z_old, r_old = z, r

        target = (2 * y - 2 * s + p.gamma * r - mult) / (2 + p.gamma)
        core, u_warm = hooi(target, ranks, sweeps=p.hooi_sweeps, init=u_warm)
        z = tucker_reconstruct(core, u_warm)

        o = (2 * p.mu1 * y - 2 * p.mu1 * s + p.gamma * z + mult) / (2 * p.mu1 + p.gamma)
        factors = fourd_stdce(o, rank, k4=p.k4)
        r = factors.to_tensor()

        s = soft_threshold(y - (z + p.mu1 * r) / (1 + p.mu1), p.mu2 / (1 + p.mu1))
        mult = mult + p.gamma * (z - r)

        obj.append(_objective(y, z, r, s, p))
        if not np.isfinite(obj[-1]):
            raise DivergenceError(it, obj[-1])
        gap_ok = (np.abs(z - z_old).max() < p.eps1
                  and np.abs(r - r_old).max() < p.eps2)
        if gap_ok or (obj[-2] - obj[-1]) < p.eps3:
            converged = True
            break

    state = AdmmState(z=z, r=r, s=s, mult=mult, objective=np.asarray(obj),
                      iterations=it, converged=converged, params=p)
    return factors, state


def cp_als(y, rank, sweeps=200, rng=None, tol=1e-8):
    """CP alternating least squares baseline.

    Factors start at random unit-norm columns; every mode update solves its
    least-squares subproblem through numpy's SVD-based ``lstsq`` (no normal
    equations). Returns the best iterate seen; the fit is nonincreasing
    across sweeps up to the solver's exactness.
    """
    rng = rng or np.random.default_rng()
    ndim = y.ndim
    factors = []
    for n in range(ndim):
        f = rng.standard_normal((y.shape[n], rank)) + 1j * rng.standard_normal((y.shape[n], rank))
        factors.append(f / np.linalg.norm(f, axis=0, keepdims=True))
    y_norm = np.linalg.norm(y)
    if y_norm == 0:
        return FactorSet.from_factors(*[np.zeros_like(f) for f in factors])

    unfoldings = [unfold(y, n) for n in range(ndim)]
    best = (np.inf, [f.copy() for f in factors])
    prev_fit = np.inf
    for _ in range(sweeps):
        for n in range(ndim):
            others = [factors[j] for j in reversed(range(ndim)) if j != n]
            kr = others[0]
            for f in others[1:]:
                kr = khatri_rao(kr, f)
            factors[n] = np.linalg.lstsq(kr, unfoldings[n].T, rcond=None)[0].T
        # rebalance column scales into mode 0 for conditioning
        scale = np.ones(rank)
        for n in range(1, ndim):
            norms = np.linalg.norm(factors[n], axis=0)
            norms[norms == 0] = 1.0
            factors[n] = factors[n] / norms
            scale = scale * norms
        factors[0] = factors[0] * scale
        fit = np.linalg.norm(y - cp_reconstruct(*factors)) / y_norm
        if fit < best[0]:
            best = (fit, [f.copy() for f in factors])
        if abs(prev_fit - fit) < tol:
            break
        prev_fit = fit
    return FactorSet.from_factors(*best[1])
