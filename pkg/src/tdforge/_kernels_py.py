"""Pure-Python twin of ``_kernels.pyx``.

Scalar Python floats are IEEE doubles, and every expression below mirrors the
compiled loop term by term, so both backends agree bit for bit.
"""
import math

import numpy as np


def sample_path(cum, s0, u):
    cum_rows = cum.tolist()
    n = len(cum_rows)
    out = np.empty(len(u) + 1, dtype=np.int64)
    path = [0] * (len(u) + 1)
    s = int(s0)
    path[0] = s
    for t, x in enumerate(u.tolist()):
        row = cum_rows[s]
        j = 0
        while j < n - 1 and not (x < row[j]):
            j += 1
        s = j
        path[t + 1] = s
    out[:] = path
    return out


def td0_kernel(phi, states, reward, gamma, etas, stride, diag,
               theta_star, rbar, next_phi, a_mat, b_vec,
               theta_rec, gnorm_rec, diag_rec, theta_out, wsum, usum, diag_out):
    d = phi.shape[1]
    rng_d = range(d)
    phi_l = phi.tolist()
    r_l = reward.tolist()
    st = states.tolist()
    theta = [0.0] * d
    ws = wsum.tolist()
    us = usum.tolist()
    if diag:
        ts_l = theta_star.tolist()
        rb_l = rbar.tolist()
        np_l = next_phi.tolist()
        a_l = a_mat.tolist()
        b_l = b_vec.tolist()
    acc0 = acc1 = acc2 = acc3 = acc4 = 0.0
    for t, eta in enumerate(etas.tolist()):
        s = st[t]
        s2 = st[t + 1]
        fs = phi_l[s]
        fs2 = phi_l[s2]
        vs = 0.0
        vs2 = 0.0
        for j in rng_d:
            vs = vs + fs[j] * theta[j]
            vs2 = vs2 + fs2[j] * theta[j]
        delta = r_l[s][s2] + gamma * vs2 - vs
        g = [delta * fs[j] for j in rng_d]
        if t % stride == 0:
            gn = 0.0
            for j in rng_d:
                gn = gn + g[j] * g[j]
            i = t // stride
            theta_rec[i] = theta
            gnorm_rec[i] = math.sqrt(gn)
            if diag:
                diag_rec[i] = (acc0, acc1, acc2, acc3, acc4)
        for j in rng_d:
            ws[j] = ws[j] + eta * theta[j]
            us[j] = us[j] + theta[j]
        if diag:
            nf = np_l[s]
            vm = 0.0
            for j in rng_d:
                vm = vm + nf[j] * theta[j]
            cd = rb_l[s] + gamma * vm - vs
            ip_xi = ip_b = nxi = nb = ng = 0.0
            for j in rng_d:
                m = cd * fs[j]
                row = a_l[j]
                acc = 0.0
                for k in rng_d:
                    acc = acc + row[k] * theta[k]
                gbar = b_l[j] - acc
                e = theta[j] - ts_l[j]
                x = g[j] - m
                y = m - gbar
                ip_xi = ip_xi + x * e
                ip_b = ip_b + y * e
                nxi = nxi + x * x
                nb = nb + y * y
                ng = ng + gbar * gbar
            acc0 = acc0 + eta * ip_xi
            acc1 = acc1 + eta * ip_b
            acc2 = acc2 + eta * eta * nxi
            acc3 = acc3 + eta * eta * nb
            acc4 = acc4 + eta * eta * ng
        theta = [theta[j] + eta * g[j] for j in rng_d]
    theta_out[:] = theta
    wsum[:] = ws
    usum[:] = us
    diag_out[:] = (acc0, acc1, acc2, acc3, acc4)
