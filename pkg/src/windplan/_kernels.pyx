# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamics kernels; same API and layout as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()

BACKEND = "cython"

DEF NX = 9
DEF NU = 4
DEF NZ = 13


cdef inline void _axis(const double* ang, double* z, double* dz) noexcept nogil:
    # z: body z-axis (3); dz: row-major 3x3, column j = dz/d(angle j)
    cdef double cphi = cos(ang[0]), sphi = sin(ang[0])
    cdef double cth = cos(ang[1]), sth = sin(ang[1])
    cdef double cpsi = cos(ang[2]), spsi = sin(ang[2])
    z[0] = cpsi * sth * cphi + spsi * sphi
    z[1] = spsi * sth * cphi - cpsi * sphi
    z[2] = cth * cphi
    if dz != NULL:
        dz[0] = -cpsi * sth * sphi + spsi * cphi
        dz[3] = -spsi * sth * sphi - cpsi * cphi
        dz[6] = -cth * sphi
        dz[1] = cpsi * cth * cphi
        dz[4] = spsi * cth * cphi
        dz[7] = -sth * cphi
        dz[2] = -spsi * sth * cphi + cpsi * sphi
        dz[5] = cpsi * sth * cphi + spsi * sphi
        dz[8] = 0.0


cdef inline void _deriv(const double* x, const double* u, const double* f,
                        double m, double g, double kd, double* out) noexcept nogil:
    cdef double z[3]
    cdef int i
    _axis(x + 6, z, NULL)
    cdef double zv = z[0] * x[3] + z[1] * x[4] + z[2] * x[5]
    for i in range(3):
        out[i] = x[3 + i]
        out[3 + i] = (u[3] * z[i] - kd * (x[3 + i] - z[i] * zv) + f[i]) / m
        out[6 + i] = u[i]
    out[5] -= g


cdef inline void _jac(const double* x, const double* u, double m, double g,
                      double kd, double* J) noexcept nogil:
    # J: row-major 9 x 13, [A | B]
    cdef double z[3]
    cdef double dz[9]
    cdef double dvdz[9]
    cdef int i, j, k
    cdef double acc
    _axis(x + 6, z, dz)
    cdef double zv = z[0] * x[3] + z[1] * x[4] + z[2] * x[5]
    for i in range(NX * NZ):
        J[i] = 0.0
    for i in range(3):
        J[i * NZ + 3 + i] = 1.0
        for j in range(3):
            J[(3 + i) * NZ + 3 + j] = -(kd / m) * ((1.0 if i == j else 0.0) - z[i] * z[j])
            dvdz[i * 3 + j] = (kd / m) * z[i] * x[3 + j]
        dvdz[i * 3 + i] += u[3] / m + (kd / m) * zv
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc = acc + dvdz[i * 3 + k] * dz[k * 3 + j]
            J[(3 + i) * NZ + 6 + j] = acc
        J[(3 + i) * NZ + 9 + 3] = z[i] / m
        J[(6 + i) * NZ + 9 + i] = 1.0


cdef inline void _chain(const double* J, const double* S, double c, double* out) noexcept nogil:
    # out = A @ ([I|0] + c S) + [0|B] ; J = [A|B], S and out are 9 x 13
    cdef int i, j, k
    cdef double acc
    for i in range(NX):
        for j in range(NZ):
            acc = J[i * NZ + j] if j < NX else 0.0
            for k in range(NX):
                acc = acc + J[i * NZ + k] * c * S[k * NZ + j]
            if j >= NX:
                acc = acc + J[i * NZ + j]
            out[i * NZ + j] = acc


cdef void _rk4_row(const double* x, const double* u, const double* f, double h,
                   double m, double g, double kd, double* xn, double* S) noexcept nogil:
    cdef double k1[NX]
    cdef double k2[NX]
    cdef double k3[NX]
    cdef double k4[NX]
    cdef double xt[NX]
    cdef double J[NX * NZ]
    cdef double S1[NX * NZ]
    cdef double S2[NX * NZ]
    cdef double S3[NX * NZ]
    cdef double S4[NX * NZ]
    cdef int i
    _deriv(x, u, f, m, g, kd, k1)
    if S != NULL:
        _jac(x, u, m, g, kd, S1)
    for i in range(NX):
        xt[i] = x[i] + 0.5 * h * k1[i]
    _deriv(xt, u, f, m, g, kd, k2)
    if S != NULL:
        _jac(xt, u, m, g, kd, J)
        _chain(J, S1, 0.5 * h, S2)
    for i in range(NX):
        xt[i] = x[i] + 0.5 * h * k2[i]
    _deriv(xt, u, f, m, g, kd, k3)
    if S != NULL:
        _jac(xt, u, m, g, kd, J)
        _chain(J, S2, 0.5 * h, S3)
    for i in range(NX):
        xt[i] = x[i] + h * k3[i]
    _deriv(xt, u, f, m, g, kd, k4)
    if S != NULL:
        _jac(xt, u, m, g, kd, J)
        _chain(J, S3, h, S4)
    for i in range(NX):
        xn[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if S != NULL:
        for i in range(NX * NZ):
            S[i] = (h / 6.0) * (S1[i] + 2.0 * S2[i] + 2.0 * S3[i] + S4[i])
        for i in range(NX):
            S[i * NZ + i] += 1.0


def _prep(X, U, F):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    n = X.shape[0]
    U = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(U), (n, NU)), dtype=np.float64)
    F = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(F), (n, 3)), dtype=np.float64)
    return X, U, F


def deriv(X, U, F, double m, double g, double kd):
    X, U, F = _prep(X, U, F)
    cdef const double[:, ::1] xv = X
    cdef const double[:, ::1] uv = U
    cdef const double[:, ::1] fv = F
    out = np.empty_like(X)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t r
    for r in range(xv.shape[0]):
        _deriv(&xv[r, 0], &uv[r, 0], &fv[r, 0], m, g, kd, &ov[r, 0])
    return out


def jac(X, U, double m, double g, double kd):
    X, U, _ = _prep(X, U, np.zeros(3))
    cdef const double[:, ::1] xv = X
    cdef const double[:, ::1] uv = U
    n = X.shape[0]
    J = np.empty((n, NX, NZ))
    cdef double[:, :, ::1] jv = J
    cdef Py_ssize_t r
    for r in range(n):
        _jac(&xv[r, 0], &uv[r, 0], m, g, kd, &jv[r, 0, 0])
    return J[:, :, :NX].copy(), J[:, :, NX:].copy()


def rk4(X, U, F, double dt, double m, double g, double kd):
    X, U, F = _prep(X, U, F)
    cdef const double[:, ::1] xv = X
    cdef const double[:, ::1] uv = U
    cdef const double[:, ::1] fv = F
    out = np.empty_like(X)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t r
    for r in range(xv.shape[0]):
        _rk4_row(&xv[r, 0], &uv[r, 0], &fv[r, 0], dt, m, g, kd, &ov[r, 0], NULL)
    return out


def rk4_sens(X, U, F, double dt, double m, double g, double kd):
    X, U, F = _prep(X, U, F)
    cdef const double[:, ::1] xv = X
    cdef const double[:, ::1] uv = U
    cdef const double[:, ::1] fv = F
    n = X.shape[0]
    out = np.empty_like(X)
    S = np.empty((n, NX, NZ))
    cdef double[:, ::1] ov = out
    cdef double[:, :, ::1] sv = S
    cdef Py_ssize_t r
    cdef Py_ssize_t nr = xv.shape[0]
    with nogil:
        for r in range(nr):
            _rk4_row(&xv[r, 0], &uv[r, 0], &fv[r, 0], dt, m, g, kd, &ov[r, 0], &sv[r, 0, 0])
    return out, S[:, :, :NX].copy(), S[:, :, NX:].copy()
