# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled matrix-free kernels for XXZ-type spin operators.

An operator is stored as a real diagonal over the 2**N product basis plus a
list of flip-flop bonds.  Each bond is a pair bitmask ``(1 << a) | (1 << b)``
and an amplitude; it connects basis states in which the two bits differ.
"""
import numpy as np
cimport numpy as cnp

ctypedef double complex complex128_t
ctypedef long long int64_t


def apply_xxz(const double[::1] diag,
              const int64_t[::1] masks,
              const double[::1] amps,
              x,
              out,
              complex128_t c_op=1.0,
              complex128_t c_x=0.0,
              y=None,
              complex128_t c_y=0.0):
    """out = c_op * (A @ x) + c_x * x + c_y * y, column-wise on (d, k) blocks.

    ``x``, ``out`` and ``y`` are C-contiguous complex128 arrays of shape (d, k).
    """
    if out.shape != x.shape:
        raise ValueError("output block has wrong shape")
    if diag.shape[0] != x.shape[0]:
        raise ValueError("operator dimension does not match state dimension")
    cdef double[:, ::1] xv = x.view(np.float64)
    cdef double[:, ::1] ov = out.view(np.float64)
    cdef double[:, ::1] yv
    cdef bint has_y = y is not None and c_y != 0
    if has_y:
        yv = y.view(np.float64)
    cdef Py_ssize_t d = xv.shape[0]
    cdef Py_ssize_t k2 = xv.shape[1]
    cdef Py_ssize_t nb = masks.shape[0]
    cdef Py_ssize_t s, t, b, j
    cdef int64_t m, sm
    cdef double opr = c_op.real, opi = c_op.imag
    cdef double cxr = c_x.real, cxi = c_x.imag
    cdef double cyr = c_y.real, cyi = c_y.imag
    cdef double ar, ai, f, re, im
    # flip-flop terms accumulate the bare A @ x first, then scale by c_op
    cdef double[::1] acc = np.empty(k2, dtype=np.float64)

    with nogil:
        if k2 == 2:
            for s in range(d):
                ar = diag[s] * xv[s, 0]
                ai = diag[s] * xv[s, 1]
                for b in range(nb):
                    m = masks[b]
                    sm = s & m
                    f = amps[b] * ((sm != 0) & (sm != m))
                    t = s ^ m
                    ar = ar + f * xv[t, 0]
                    ai = ai + f * xv[t, 1]
                re = opr * ar - opi * ai + cxr * xv[s, 0] - cxi * xv[s, 1]
                im = opr * ai + opi * ar + cxr * xv[s, 1] + cxi * xv[s, 0]
                if has_y:
                    re = re + cyr * yv[s, 0] - cyi * yv[s, 1]
                    im = im + cyr * yv[s, 1] + cyi * yv[s, 0]
                ov[s, 0] = re
                ov[s, 1] = im
        else:
            for s in range(d):
                for j in range(k2):
                    acc[j] = diag[s] * xv[s, j]
                for b in range(nb):
                    m = masks[b]
                    sm = s & m
                    f = amps[b] * ((sm != 0) & (sm != m))
                    t = s ^ m
                    for j in range(k2):
                        acc[j] = acc[j] + f * xv[t, j]
                for j in range(0, k2, 2):
                    ar = acc[j]
                    ai = acc[j + 1]
                    re = opr * ar - opi * ai + cxr * xv[s, j] - cxi * xv[s, j + 1]
                    im = opr * ai + opi * ar + cxr * xv[s, j + 1] + cxi * xv[s, j]
                    if has_y:
                        re = re + cyr * yv[s, j] - cyi * yv[s, j + 1]
                        im = im + cyr * yv[s, j + 1] + cyi * yv[s, j]
                    ov[s, j] = re
                    ov[s, j + 1] = im
    return out


def diagonal_from_bonds(Py_ssize_t n_sites,
                        const int64_t[::1] zz_a,
                        const int64_t[::1] zz_b,
                        const double[::1] zz_amp,
                        const double[::1] fields):
    """Diagonal of sum_b amp_b S^z_a S^z_b + sum_i h_i S^z_i over the product basis."""
    cdef Py_ssize_t d = (<Py_ssize_t>1) << n_sites
    cdef Py_ssize_t s, b, i
    cdef double acc
    cdef cnp.ndarray[double, ndim=1] res = np.empty(d, dtype=np.float64)
    cdef double[::1] rv = res
    cdef Py_ssize_t nb = zz_a.shape[0]
    with nogil:
        for s in range(d):
            acc = 0.0
            for b in range(nb):
                if ((s >> zz_a[b]) ^ (s >> zz_b[b])) & 1:
                    acc = acc - 0.25 * zz_amp[b]
                else:
                    acc = acc + 0.25 * zz_amp[b]
            for i in range(n_sites):
                if (s >> i) & 1:
                    acc = acc + 0.5 * fields[i]
                else:
                    acc = acc - 0.5 * fields[i]
            rv[s] = acc
    return res
