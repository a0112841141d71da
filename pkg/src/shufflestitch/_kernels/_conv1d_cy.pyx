# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv1d kernels. Same contracts as conv1d_numpy."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv1d_forward(double[:, ::1] x, double[:, :, ::1] w, int pad):
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c_in = w.shape[1]
    cdef Py_ssize_t c_out = w.shape[2]
    cdef Py_ssize_t t_in = x.shape[0]
    cdef Py_ssize_t t_out = t_in + 2 * pad - k + 1
    cdef cnp.ndarray[double, ndim=2] y = np.zeros((t_out, c_out))
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t t, j, ci, co, src
    cdef double xv

    for t in range(t_out):
        for j in range(k):
            src = t + j - pad
            if src < 0 or src >= t_in:
                continue
            for ci in range(c_in):
                xv = x[src, ci]
                if xv == 0.0:
                    continue
                for co in range(c_out):
                    yv[t, co] += xv * w[j, ci, co]
    return y


def conv1d_backward_input(double[:, ::1] gy, double[:, :, ::1] w, int t_in, int pad):
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c_in = w.shape[1]
    cdef Py_ssize_t c_out = w.shape[2]
    cdef Py_ssize_t t_out = gy.shape[0]
    cdef cnp.ndarray[double, ndim=2] gx = np.zeros((t_in, c_in))
    cdef double[:, ::1] gxv = gx
    cdef Py_ssize_t t, j, ci, co, src
    cdef double acc

    for t in range(t_out):
        for j in range(k):
            src = t + j - pad
            if src < 0 or src >= t_in:
                continue
            for ci in range(c_in):
                acc = 0.0
                for co in range(c_out):
                    acc += gy[t, co] * w[j, ci, co]
                gxv[src, ci] += acc
    return gx


def conv1d_backward_kernel(double[:, ::1] gy, double[:, ::1] x, int k, int pad):
    cdef Py_ssize_t t_in = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t c_out = gy.shape[1]
    cdef Py_ssize_t t_out = gy.shape[0]
    cdef cnp.ndarray[double, ndim=3] gw = np.zeros((k, c_in, c_out))
    cdef double[:, :, ::1] gwv = gw
    cdef Py_ssize_t t, j, ci, co, src
    cdef double xv

    for t in range(t_out):
        for j in range(k):
            src = t + j - pad
            if src < 0 or src >= t_in:
                continue
            for ci in range(c_in):
                xv = x[src, ci]
                if xv == 0.0:
                    continue
                for co in range(c_out):
                    gwv[j, ci, co] += xv * gy[t, co]
    return gw
