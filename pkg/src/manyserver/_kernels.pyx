# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot loops; see ``_pykernels`` for the reference
implementation that this file mirrors line by line."""
from libc.math cimport log1p, INFINITY

from libc.stdint cimport int64_t

cdef enum:
    I_N = 0
    I_Q = 1
    I_ARR = 2
    I_ABD = 3
    I_DEP = 4
    I_B = 5
    I_UPOS = 6
    I_IAPOS = 7
    I_REC = 8
    I_LOG = 9
    D_T = 0
    D_NEXT = 1
    D_LAST = 2
    D_INTQ = 3


DONE = 0
NEED_RANDOM = 1
LOG_FULL = 2


def psi_march(const double[::1] u, const double[:, ::1] v, double alpha,
              const double[::1] eR, const double[:, ::1] W, const double[::1] p,
              double dt, double[::1] x, double[:, ::1] z, double[::1] state):
    cdef Py_ssize_t npts = u.shape[0]
    cdef Py_ssize_t K = p.shape[0]
    cdef Py_ssize_t i, k, j
    cdef double xi, xm, xl, xlp, xip, Ax, s
    cdef double Az[64]
    cdef double zi[64]
    if K > 64:
        raise ValueError("at most 64 phases supported by the compiled kernel")
    for i in range(npts):
        if state[0] == 0.0:
            xi = u[i]
            xm = -xi if xi < 0.0 else 0.0
            for k in range(K):
                zi[k] = v[i, k] - p[k] * xm
            state[0] = 1.0
        else:
            xl = state[2]
            xlp = xl if xl > 0.0 else 0.0
            Ax = state[1] + dt * xlp
            s = 0.0
            for k in range(K):
                Az[k] = state[3 + k] + dt * state[3 + K + k]
                s += eR[k] * Az[k]
            xi = u[i] - alpha * Ax - s
            xm = -xi if xi < 0.0 else 0.0
            for k in range(K):
                s = 0.0
                for j in range(K):
                    s += W[k, j] * Az[j]
                zi[k] = v[i, k] - p[k] * xm - s
            xip = xi if xi > 0.0 else 0.0
            state[1] = state[1] + 0.5 * dt * (xlp + xip)
            for k in range(K):
                state[3 + k] = state[3 + k] + 0.5 * dt * (state[3 + K + k] + zi[k])
        x[i] = xi
        for k in range(K):
            z[i, k] = zi[k]
        state[2] = xi
        for k in range(K):
            state[3 + K + k] = zi[k]


cdef inline void _snapshot(double[::1] row, double t, double[::1] dstate, int64_t[::1] istate,
                           int64_t[::1] Z, int64_t[::1] Bj, int64_t[::1] C,
                           int64_t[:, ::1] routes, double[::1] T, Py_ssize_t K) noexcept:
    cdef Py_ssize_t c, k, j
    row[0] = t
    row[1] = t - dstate[D_LAST]
    row[2] = istate[I_N]
    c = 3
    for k in range(K):
        row[c + k] = Z[k]
    c += K
    row[c] = istate[I_ARR]
    row[c + 1] = istate[I_ABD]
    row[c + 2] = istate[I_DEP]
    row[c + 3] = istate[I_B]
    c += 4
    for k in range(K):
        row[c + k] = Bj[k]
    c += K
    for k in range(K):
        row[c + k] = C[k]
    c += K
    for k in range(K):
        for j in range(K + 1):
            row[c] = routes[k, j]
            c += 1
    for k in range(K):
        row[c + k] = T[k]
    c += K
    row[c] = dstate[D_INTQ]


def des_run(double t_end, int64_t n, double alpha, const double[::1] nu,
            const double[:, ::1] rcdf, const double[::1] icdf,
            const double[::1] ubuf, const double[::1] iabuf,
            const double[::1] rec_times, double[:, ::1] rec_out,
            double[::1] dstate, int64_t[::1] istate, int64_t[::1] Z,
            int64_t[::1] Bj, int64_t[::1] C, int64_t[:, ::1] routes,
            double[::1] T, double[:, ::1] log_out, int log_on):
    cdef Py_ssize_t K = nu.shape[0]
    cdef Py_ssize_t n_u = ubuf.shape[0]
    cdef Py_ssize_t n_ia = iabuf.shape[0]
    cdef Py_ssize_t n_rec = rec_times.shape[0]
    cdef Py_ssize_t log_cap = log_out.shape[0]
    cdef double t = dstate[D_T]
    cdef Py_ssize_t upos, rec, k, j, last, lp
    cdef int64_t N, q
    cdef int etype
    cdef double r, tau, t_next, t_ev, tr, dt, uu, s, aq, w
    while True:
        upos = istate[I_UPOS]
        if upos + 4 > n_u or istate[I_IAPOS] + 1 > n_ia:
            dstate[D_T] = t
            return NEED_RANDOM
        if log_on and istate[I_LOG] + 1 > log_cap:
            dstate[D_T] = t
            return LOG_FULL
        N = istate[I_N]
        q = istate[I_Q]
        r = alpha * q
        for k in range(K):
            r += nu[k] * Z[k]
        if r > 0.0:
            tau = t - log1p(-ubuf[upos]) / r
            upos += 1
        else:
            tau = INFINITY
        t_next = dstate[D_NEXT]
        t_ev = t_next if t_next <= tau else tau
        rec = istate[I_REC]
        while rec < n_rec and rec_times[rec] < t_ev and rec_times[rec] <= t_end:
            tr = rec_times[rec]
            dt = tr - t
            for k in range(K):
                T[k] = T[k] + Z[k] * dt
            dstate[D_INTQ] = dstate[D_INTQ] + q * dt
            t = tr
            _snapshot(rec_out[rec], t, dstate, istate, Z, Bj, C, routes, T, K)
            rec += 1
        istate[I_REC] = rec
        if t_ev > t_end:
            dt = t_end - t
            for k in range(K):
                T[k] = T[k] + Z[k] * dt
            dstate[D_INTQ] = dstate[D_INTQ] + q * dt
            dstate[D_T] = t_end
            istate[I_UPOS] = upos
            return DONE
        dt = t_ev - t
        for k in range(K):
            T[k] = T[k] + Z[k] * dt
        dstate[D_INTQ] = dstate[D_INTQ] + q * dt
        t = t_ev
        if t_next <= tau:
            istate[I_ARR] += 1
            dstate[D_LAST] = t
            dstate[D_NEXT] = t + iabuf[istate[I_IAPOS]]
            istate[I_IAPOS] += 1
            N += 1
            if N <= n:
                uu = ubuf[upos]
                upos += 1
                j = 0
                while j < K - 1 and uu >= icdf[j]:
                    j += 1
                Z[j] += 1
                Bj[j] += 1
                istate[I_B] += 1
            else:
                q += 1
            etype = 0
        else:
            s = ubuf[upos] * r
            upos += 1
            aq = alpha * q
            if s < aq:
                q -= 1
                N -= 1
                istate[I_ABD] += 1
                etype = 3
            else:
                s -= aq
                k = 0
                last = -1
                while k < K:
                    if Z[k] > 0:
                        last = k
                        w = nu[k] * Z[k]
                        if s < w:
                            break
                        s -= w
                    k += 1
                if k == K:
                    k = last
                C[k] += 1
                uu = ubuf[upos]
                upos += 1
                j = 0
                while j < K and uu >= rcdf[k, j]:
                    j += 1
                routes[k, j] += 1
                Z[k] -= 1
                if j < K:
                    Z[j] += 1
                    etype = 1
                else:
                    N -= 1
                    istate[I_DEP] += 1
                    etype = 2
                    if q > 0:
                        q -= 1
                        uu = ubuf[upos]
                        upos += 1
                        j = 0
                        while j < K - 1 and uu >= icdf[j]:
                            j += 1
                        Z[j] += 1
                        Bj[j] += 1
                        istate[I_B] += 1
        istate[I_N] = N
        istate[I_Q] = q
        istate[I_UPOS] = upos
        if log_on:
            lp = istate[I_LOG]
            log_out[lp, 0] = t
            log_out[lp, 1] = etype
            log_out[lp, 2] = N
            for k in range(K):
                log_out[lp, 3 + k] = Z[k]
            istate[I_LOG] += 1
        dstate[D_T] = t
