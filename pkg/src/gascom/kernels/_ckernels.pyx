# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled token-level multi-head attention kernels.

Same contract as ``gascom.kernels._numpy``. Matrix products go straight to
BLAS ``dgemm`` and the softmax runs in C, so a whole node costs a single
Python call instead of a few dozen small numpy dispatches.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"


cdef inline void mm(bint ta, bint tb, int m, int n, int k, double alpha,
                    double* a, int lda, double* b, int ldb,
                    double beta, double* c, int ldc) noexcept nogil:
    # Row-major C(m x n) = alpha * op(A) op(B) + beta * C, via column-major dgemm on C^T.
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    dgemm(&fb, &fa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def attend_forward(double[:, :, ::1] Q, double[:, ::1] E, double[:, :, ::1] WK,
                   double[:, :, ::1] WV, double[:, ::1] WO):
    cdef int h = Q.shape[0], tq = Q.shape[1], dh = Q.shape[2]
    cdef int t = E.shape[0], d = E.shape[1], hd = h * dh
    cdef int j, a, b
    cdef double s, m, inv = 1.0 / sqrt(<double>dh)

    K_ = np.empty((h, t, dh))
    V_ = np.empty((h, t, dh))
    A_ = np.empty((h, tq, t))
    H_ = np.empty((tq, hd))
    O_ = np.empty((tq, d))
    cdef double[:, :, ::1] K = K_, V = V_, A = A_
    cdef double[:, ::1] H = H_, O = O_
    cdef double* row

    with nogil:
        for j in range(h):
            mm(False, False, t, dh, d, 1.0, &E[0, 0], d, &WK[j, 0, 0], dh, 0.0, &K[j, 0, 0], dh)
            mm(False, False, t, dh, d, 1.0, &E[0, 0], d, &WV[j, 0, 0], dh, 0.0, &V[j, 0, 0], dh)
            mm(False, True, tq, t, dh, inv, &Q[j, 0, 0], dh, &K[j, 0, 0], dh, 0.0, &A[j, 0, 0], t)
            for a in range(tq):
                row = &A[j, a, 0]
                m = row[0]
                for b in range(1, t):
                    if row[b] > m:
                        m = row[b]
                s = 0.0
                for b in range(t):
                    row[b] = exp(row[b] - m)
                    s += row[b]
                s = 1.0 / s
                for b in range(t):
                    row[b] *= s
            mm(False, False, tq, dh, t, 1.0, &A[j, 0, 0], t, &V[j, 0, 0], dh, 0.0, &H[0, j * dh], hd)
        mm(False, False, tq, d, hd, 1.0, &H[0, 0], hd, &WO[0, 0], d, 0.0, &O[0, 0], d)
    return O_, (K_, V_, A_, H_)


def attend_backward(double[:, ::1] dO, double[:, :, ::1] Q, double[:, ::1] E,
                    double[:, :, ::1] WK, double[:, :, ::1] WV, double[:, ::1] WO,
                    cache, double[:, :, ::1] gWK, double[:, :, ::1] gWV, double[:, ::1] gWO):
    cdef double[:, :, ::1] K = cache[0], V = cache[1], A = cache[2]
    cdef double[:, ::1] H = cache[3]
    cdef int h = Q.shape[0], tq = Q.shape[1], dh = Q.shape[2]
    cdef int t = E.shape[0], d = E.shape[1], hd = h * dh
    cdef int j, a, b
    cdef double r, inv = 1.0 / sqrt(<double>dh)

    dH_ = np.empty((tq, hd))
    dQ_ = np.empty((h, tq, dh))
    dE_ = np.zeros((t, d))
    dA_ = np.empty((tq, t))
    dK_ = np.empty((t, dh))
    dV_ = np.empty((t, dh))
    cdef double[:, ::1] dH = dH_, dE = dE_, dA = dA_, dK = dK_, dV = dV_
    cdef double[:, :, ::1] dQ = dQ_
    cdef double* arow
    cdef double* grow

    with nogil:
        mm(True, False, hd, d, tq, 1.0, &H[0, 0], hd, &dO[0, 0], d, 1.0, &gWO[0, 0], d)
        mm(False, True, tq, hd, d, 1.0, &dO[0, 0], d, &WO[0, 0], d, 0.0, &dH[0, 0], hd)
        for j in range(h):
            mm(False, True, tq, t, dh, 1.0, &dH[0, j * dh], hd, &V[j, 0, 0], dh, 0.0, &dA[0, 0], t)
            mm(True, False, t, dh, tq, 1.0, &A[j, 0, 0], t, &dH[0, j * dh], hd, 0.0, &dV[0, 0], dh)
            for a in range(tq):
                arow = &A[j, a, 0]
                grow = &dA[a, 0]
                r = 0.0
                for b in range(t):
                    r += grow[b] * arow[b]
                for b in range(t):
                    grow[b] = arow[b] * (grow[b] - r) * inv
            mm(False, False, tq, dh, t, 1.0, &dA[0, 0], t, &K[j, 0, 0], dh, 0.0, &dQ[j, 0, 0], dh)
            mm(True, False, t, dh, tq, 1.0, &dA[0, 0], t, &Q[j, 0, 0], dh, 0.0, &dK[0, 0], dh)
            mm(True, False, d, dh, t, 1.0, &E[0, 0], d, &dK[0, 0], dh, 1.0, &gWK[j, 0, 0], dh)
            mm(True, False, d, dh, t, 1.0, &E[0, 0], d, &dV[0, 0], dh, 1.0, &gWV[j, 0, 0], dh)
            mm(False, True, t, d, dh, 1.0, &dK[0, 0], dh, &WK[j, 0, 0], dh, 1.0, &dE[0, 0], d)
            mm(False, True, t, d, dh, 1.0, &dV[0, 0], dh, &WV[j, 0, 0], dh, 1.0, &dE[0, 0], d)
    return dQ_, dE_
