# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Must stay operation-for-operation identical to
``_kernels_py`` so both backends produce bitwise-equal results."""
import numpy as np
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free


def sample_path(const double[:, ::1] cum, long s0, const double[::1] u):
    cdef Py_ssize_t steps = u.shape[0], n = cum.shape[0], t, j
    out = np.empty(steps + 1, dtype=np.int64)
    cdef long long[::1] path = out
    cdef long long s = s0
    cdef double x
    with nogil:
        path[0] = s
        for t in range(steps):
            x = u[t]
            j = 0
            while j < n - 1 and not (x < cum[s, j]):
                j += 1
            s = j
            path[t + 1] = s
    return out


def td0_kernel(const double[:, ::1] phi, const long long[::1] states,
               const double[:, ::1] reward, double gamma,
               const double[::1] etas, Py_ssize_t stride, bint diag,
               const double[::1] theta_star, const double[::1] rbar,
               const double[:, ::1] next_phi, const double[:, ::1] a_mat,
               const double[::1] b_vec,
               double[:, ::1] theta_rec, double[::1] gnorm_rec,
               double[:, ::1] diag_rec, double[::1] theta_out,
               double[::1] wsum, double[::1] usum, double[::1] diag_out):
    cdef Py_ssize_t T = etas.shape[0], d = phi.shape[1]
    cdef Py_ssize_t t, j, k, i
    cdef long long s, s2
    cdef double vs, vs2, vm, delta, cd, eta, gn, acc, ip_xi, ip_b, nxi, nb, ng
    cdef double x, y
    cdef double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0, acc4 = 0.0
    cdef double *theta = <double *> malloc(5 * d * sizeof(double))
    if theta == NULL:
        raise MemoryError()
    cdef double *g = theta + d
    cdef double *m = theta + 2 * d
    cdef double *gbar = theta + 3 * d
    cdef double *e = theta + 4 * d
    with nogil:
        for j in range(d):
            theta[j] = 0.0
        for t in range(T):
            s = states[t]
            s2 = states[t + 1]
            eta = etas[t]
            vs = 0.0
            vs2 = 0.0
            for j in range(d):
                vs = vs + phi[s, j] * theta[j]
                vs2 = vs2 + phi[s2, j] * theta[j]
            delta = reward[s, s2] + gamma * vs2 - vs
            gn = 0.0
            for j in range(d):
                g[j] = delta * phi[s, j]
                gn = gn + g[j] * g[j]
            if t % stride == 0:
                i = t // stride
                for j in range(d):
                    theta_rec[i, j] = theta[j]
                gnorm_rec[i] = sqrt(gn)
                if diag:
                    diag_rec[i, 0] = acc0
                    diag_rec[i, 1] = acc1
                    diag_rec[i, 2] = acc2
                    diag_rec[i, 3] = acc3
                    diag_rec[i, 4] = acc4
            for j in range(d):
                wsum[j] = wsum[j] + eta * theta[j]
                usum[j] = usum[j] + theta[j]
            if diag:
                vm = 0.0
                for j in range(d):
                    vm = vm + next_phi[s, j] * theta[j]
                cd = rbar[s] + gamma * vm - vs
                ip_xi = 0.0
                ip_b = 0.0
                nxi = 0.0
                nb = 0.0
                ng = 0.0
                for j in range(d):
                    m[j] = cd * phi[s, j]
                    acc = 0.0
                    for k in range(d):
                        acc = acc + a_mat[j, k] * theta[k]
                    gbar[j] = b_vec[j] - acc
                    e[j] = theta[j] - theta_star[j]
                    x = g[j] - m[j]
                    y = m[j] - gbar[j]
                    ip_xi = ip_xi + x * e[j]
                    ip_b = ip_b + y * e[j]
                    nxi = nxi + x * x
                    nb = nb + y * y
                    ng = ng + gbar[j] * gbar[j]
                acc0 = acc0 + eta * ip_xi
                acc1 = acc1 + eta * ip_b
                acc2 = acc2 + eta * eta * nxi
                acc3 = acc3 + eta * eta * nb
                acc4 = acc4 + eta * eta * ng
            for j in range(d):
                theta[j] = theta[j] + eta * g[j]
        for j in range(d):
            theta_out[j] = theta[j]
        diag_out[0] = acc0
        diag_out[1] = acc1
        diag_out[2] = acc2
        diag_out[3] = acc3
        diag_out[4] = acc4
    free(theta)
