"""Pure-numpy kernel implementations.

These are the reference versions of the contraction kernels; the compiled
extension in ``_core.pyx`` mirrors this module function for function. Array
conventions (shared by both backends, inputs are assumed validated):

  t      (z, p, q)  generator tensor, slice-major over the depth axis z
  a,b,c  (p, r), (q, r), (z, r)  factor matrices of a rank-r decomposition
  s      (z,)       one meta vector
  S      (B, z)     batch of meta vectors
  H      (B, q)     batch of layer inputs
  g      (p, q)     upstream gradient of a single generated weight matrix
  dPre   (B, p)     upstream gradient of a batch of layer pre-activations

The generated weight for one item is ``W* [p,q] = sum_z s[z] * t[z]`` in the
full parameterization and ``W* = A diag(C^T s) B^T`` in the factorized one.
The batched "apply" kernels compute ``W*_b @ H[b]`` for every row b without
materializing the per-item weight matrices.
"""

import numpy as np


def mode3_contract(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Contract a (z,p,q) tensor with s along its depth axis: sum_z s[z]*t[z]."""
    return np.tensordot(s, t, axes=1)


def mode3_contract_backward(t, s, g):
    """Gradients of <g, mode3_contract(t, s)> w.r.t. t and s."""
    dt = s[:, None, None] * g[None, :, :]
    ds = t.reshape(t.shape[0], -1) @ g.ravel()
    return dt, ds


def cp_contract(a, b, c, s):
    """Contract factorized tensor with s: A diag(C^T s) B^T, cost O(r(p+q+z))."""
    w = c.T @ s
    return (a * w) @ b.T


def cp_contract_backward(a, b, c, s, g):
    """Gradients of <g, cp_contract(a,b,c,s)> w.r.t. all four operands.

    With w = C^T s and h_r = a_r^T g b_r:
      dA = g B diag(w),  dB = g^T A diag(w),  dC = s h^T,  ds = C h.
    """
    w = c.T @ s
    gb = g @ b
    h = np.einsum("pr,pr->r", a, gb)
    da = gb * w
    db = g.T @ (a * w)
    dc = np.outer(s, h)
    ds = c @ h
    return da, db, dc, ds


def mode3_apply(t, S, H):
    """Batched generate-and-apply: out[b] = (sum_z S[b,z]*t[z]) @ H[b].

    Iterates z-outer so only (B,p) temporaries are formed; the per-item
    weight matrices are never materialized.
    """
    out = np.zeros((H.shape[0], t.shape[1]))
    for z in range(t.shape[0]):
        out += S[:, z : z + 1] * (H @ t[z].T)
    return out


def mode3_apply_backward(t, S, H, dPre):
    """Gradients of the batched mode3_apply w.r.t. t, S, and H."""
    dt = np.zeros_like(t)
    dS = np.zeros_like(S)
    dH = np.zeros_like(H)
    for z in range(t.shape[0]):
        proj = H @ t[z].T
        dS[:, z] = np.einsum("bp,bp->b", dPre, proj)
        weighted = dPre * S[:, z : z + 1]
        dt[z] = weighted.T @ H
        dH += weighted @ t[z]
    return dt, dS, dH


def cp_apply(a, b, c, S, H):
    """Batched factorized generate-and-apply via three small matmuls."""
    U = H @ b
    W = S @ c
    return (U * W) @ a.T


def cp_apply_backward(a, b, c, S, H, dPre):
    """Gradients of the batched cp_apply w.r.t. the factors, S, and H."""
    U = H @ b
    W = S @ c
    G = dPre @ a
    da = dPre.T @ (U * W)
    dU = G * W
    dW = G * U
    db = H.T @ dU
    dH = dU @ b.T
    dc = S.T @ dW
    dS = dW @ c.T
    return da, db, dc, dS, dH
