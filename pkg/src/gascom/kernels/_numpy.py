"""Pure numpy token-level multi-head attention kernels (fallback backend).

Shapes: ``Q`` is (h, Tq, dh), ``E`` is (T, d), ``WK``/``WV`` are (h, d, dh),
``WO`` is (h*dh, d).
"""

import numpy as np

NAME = "numpy"


def softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def attend_forward(Q, E, WK, WV, WO):
    """Attention of the query tokens over one node; returns (O, cache)."""
    h, tq, dh = Q.shape
    K = np.matmul(E, WK)
    V = np.matmul(E, WV)
    A = softmax_rows(np.matmul(Q, K.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)))
    H = np.matmul(A, V).transpose(1, 0, 2).reshape(tq, h * dh)
    return H @ WO, (K, V, A, H)


def attend_backward(dO, Q, E, WK, WV, WO, cache, gWK, gWV, gWO):
    """Backprop through :func:`attend_forward`.

    Parameter gradients are accumulated into ``gWK``, ``gWV``, ``gWO`` in
    place; returns ``(dQ, dE)``.
    """
    K, V, A, H = cache
    h, tq, dh = Q.shape
    gWO += H.T @ dO
    dH = (dO @ WO.T).reshape(tq, h, dh).transpose(1, 0, 2)
    dA = np.matmul(dH, V.transpose(0, 2, 1))
    dV = np.matmul(A.transpose(0, 2, 1), dH)
    dL = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dL *= 1.0 / np.sqrt(dh)
    dQ = np.matmul(dL, K)
    dK = np.matmul(dL.transpose(0, 2, 1), Q)
    gWK += np.matmul(E.T, dK)
    gWV += np.matmul(E.T, dV)
    dE = (np.matmul(dK, WK.transpose(0, 2, 1)) + np.matmul(dV, WV.transpose(0, 2, 1))).sum(axis=0)
    return dQ, dE
