"""Pointwise algebra of four-dimensional curvature tensors.

Everything here works on frame components in an orthonormal frame, so index
placement is irrelevant.  A symmetric 2-tensor is a ``(4, 4)`` array and an
algebraic curvature tensor is a ``(4, 4, 4, 4)`` array with the sign convention
``R[i, j, i, j] = sectional curvature of the (i, j) plane``.  With this
convention

    Ric_ij = R_ipjp,   s = R_ipip,   (A o B)_ij = A_ipjq B_pq,

and the unit round sphere is ``R_ijkl = d_ik d_jl - d_il d_jk``.
"""

from dataclasses import dataclass

import numpy as np

DIM = 4
G = np.eye(DIM)

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class CurvatureDecomposition:
    """Scalar curvature, traceless Ricci tensor and Weyl tensor."""

    s: float
    z: np.ndarray
    W: np.ndarray


def kulkarni_nomizu(h, k):
    """(h o k)_ijkl = h_ik k_jl + h_jl k_ik - h_il k_jk - h_jk k_il."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    hk = np.einsum("ik,jl->ijkl", h, k)
    return (hk + np.einsum("ik,jl->ijkl", k, h)
            - np.einsum("il,jk->ijkl", h, k) - np.einsum("il,jk->ijkl", k, h))


def round_tensor(K=1.0):
    """Constant sectional curvature K."""
    return 0.5 * K * kulkarni_nomizu(G, G)


def ricci(R):
    return np.einsum("ipjp->ij", R)


def scalar(R):
    return float(np.einsum("ipip->", R))


def norm_sq(T):
    return float(np.sum(np.asarray(T) ** 2))


def circ(A, B):
    """A o B with the curvature-type contraction A_ipjq B_pq (or A_ip B_pj for matrices)."""
    A = np.asarray(A)
    if A.ndim == 4:
        return np.einsum("ipjq,pq->ij", A, B)
    return A @ B


def check_contraction(R):
    """Rc_ij = R_ipqr R_jpqr; its trace is |Rm|^2."""
    return np.einsum("ipqr,jpqr->ij", R, R)


def symmetry_defect(R):
    """Largest violation of the algebraic curvature symmetries and first Bianchi."""
    R = np.asarray(R, dtype=float)
    bianchi = R + np.einsum("iklj->ijkl", R) + np.einsum("iljk->ijkl", R)
    return max(
        np.abs(R + np.swapaxes(R, 0, 1)).max(),
        np.abs(R + np.swapaxes(R, 2, 3)).max(),
        np.abs(R - np.transpose(R, (2, 3, 0, 1))).max(),
        np.abs(bianchi).max(),
    )


def decompose(R):
    R = np.asarray(R, dtype=float)
    if R.shape != (DIM,) * 4:
        raise ValueError(f"expected a {DIM}x{DIM}x{DIM}x{DIM} tensor, got {R.shape}")
    scale = 1.0 + np.abs(R).max()
    if symmetry_defect(R) > SYMMETRY_TOL * scale:
        raise ValueError("input violates curvature symmetries")
    s = scalar(R)
    z = ricci(R) - 0.25 * s * G
    z = 0.5 * (z + z.T)
    W = R - 0.5 * kulkarni_nomizu(z, G) - (s / 24.0) * kulkarni_nomizu(G, G)
    return CurvatureDecomposition(s, z, W)


def reconstruct(d):
    z = np.asarray(d.z, dtype=float)
    if np.abs(z - z.T).max() > SYMMETRY_TOL * (1.0 + np.abs(z).max()):
        raise ValueError("z is not symmetric")
    if abs(np.trace(z)) > SYMMETRY_TOL * (1.0 + np.abs(z).max()):
        raise ValueError("z is not traceless")
    return np.asarray(d.W) + 0.5 * kulkarni_nomizu(z, G) + (d.s / 24.0) * kulkarni_nomizu(G, G)


def concircular(R):
    """Rm - (s/24) g o g."""
    return np.asarray(R) - (scalar(R) / 24.0) * kulkarni_nomizu(G, G)


def algebraic_residuals(R):
    """Max-norm residuals of the pointwise identities that fix the contraction conventions.

    (a) Rc - |Rm|^2 g / 4 = (s/3) z + 2 W o z
    (b) 2 r o r = 2 z o z + s z + s^2 g / 8
    (c) -2 R o r = -2 W o z - |z|^2 g + 2 z o z - (s/3) z - s^2 g / 8
    (d) |Rm|^2 = |W|^2 + 2|z|^2 + s^2/6
    (e) |Rm - (s/24) g o g|^2 = |W|^2 + 2|z|^2
    """
    R = np.asarray(R, dtype=float)
    d = decompose(R)
    s, z, W = d.s, d.z, d.W
    r = ricci(R)
    rm2 = norm_sq(R)
    z2 = norm_sq(z)
    w2 = norm_sq(W)
    Wz = circ(W, z)
    zz = z @ z
    res_a = check_contraction(R) - 0.25 * rm2 * G - (s / 3.0) * z - 2.0 * Wz
    res_b = 2.0 * r @ r - (2.0 * zz + s * z + s * s / 8.0 * G)
    res_c = -2.0 * circ(R, r) - (-2.0 * Wz - z2 * G + 2.0 * zz - (s / 3.0) * z - s * s / 8.0 * G)
    return {
        "besse": float(np.abs(res_a).max()),
        "ricci_square": float(np.abs(res_b).max()),
        "curvature_on_ricci": float(np.abs(res_c).max()),
        "norm_split": abs(rm2 - (w2 + 2.0 * z2 + s * s / 6.0)),
        "concircular_norm": abs(norm_sq(concircular(R)) - (w2 + 2.0 * z2)),
    }


def gradf_algebraic(d):
    """Zeroth-order part of grad F: (s/3) z + 4 z o z - |z|^2 g - 4 W o z."""
    z = np.asarray(d.z, dtype=float)
    return (d.s / 3.0) * z + 4.0 * z @ z - norm_sq(z) * G - 4.0 * circ(d.W, z)


def random_traceless(rng, scale=1.0):
    a = rng.normal(scale=scale, size=(DIM, DIM))
    z = 0.5 * (a + a.T)
    return z - np.trace(z) / DIM * G


def random_weyl(rng, scale=1.0, terms=6):
    """Weyl part of a random sum of Kulkarni-Nomizu squares.

    Sums of h o h span the algebraic curvature tensors, so projecting such a sum
    onto its totally trace-free part gives a well spread Weyl tensor.
    """
    R = np.zeros((DIM,) * 4)
    for _ in range(terms):
        a = rng.normal(scale=scale, size=(DIM, DIM))
        h = 0.5 * (a + a.T)
        R += rng.choice((-1.0, 1.0)) * kulkarni_nomizu(h, h)
    return decompose(R).W


def random_decomposition(rng, scale=1.0):
    s = float(rng.normal(scale=12.0 * scale))
    return CurvatureDecomposition(s, random_traceless(rng, scale), random_weyl(rng, scale))


def random_curvature(rng, scale=1.0):
    return reconstruct(random_decomposition(rng, scale))
