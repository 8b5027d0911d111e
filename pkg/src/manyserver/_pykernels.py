"""Pure-Python versions of the hot loops.

These mirror ``_kernels.pyx`` statement for statement (same operation order,
same libm calls) so that both backends produce bitwise identical output.
"""
from __future__ import annotations

from math import inf, log1p

# status codes shared with the compiled kernels
DONE = 0
NEED_RANDOM = 1
LOG_FULL = 2

# layout of the integer DES state vector
I_N, I_Q, I_ARR, I_ABD, I_DEP, I_B, I_UPOS, I_IAPOS, I_REC, I_LOG = range(10)
ISTATE_LEN = 10
# layout of the float DES state vector
D_T, D_NEXT, D_LAST, D_INTQ = range(4)
DSTATE_LEN = 4


def psi_march(u, v, alpha, eR, W, p, dt, x, z, state):
    """March the integral equations over one chunk of grid points.

    ``state`` is ``[started, Ix, x_last, Iz(K), z_last(K)]`` and is updated
    in place so that consecutive chunks continue one path.
    """
    npts = u.shape[0]
    K = p.shape[0]
    Az = [0.0] * K
    zi = [0.0] * K
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


def _snapshot(row, t, dstate, istate, Z, Bj, C, routes, T, K):
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


def _log(log_out, pos, t, etype, N, Z, K):
    log_out[pos, 0] = t
    log_out[pos, 1] = etype
    log_out[pos, 2] = N
    for k in range(K):
        log_out[pos, 3 + k] = Z[k]


def des_run(t_end, n, alpha, nu, rcdf, icdf, ubuf, iabuf, rec_times, rec_out,
            dstate, istate, Z, Bj, C, routes, T, log_out, log_on):
    """Advance the many-server queue until ``t_end``.

    Returns ``DONE``, ``NEED_RANDOM`` (refill ``ubuf``/``iabuf`` and call
    again) or ``LOG_FULL`` (drain ``log_out`` and call again). All state lives
    in the array arguments.
    """
    K = nu.shape[0]
    n_u = ubuf.shape[0]
    n_ia = iabuf.shape[0]
    n_rec = rec_times.shape[0]
    log_cap = log_out.shape[0]
    t = dstate[D_T]
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
            tau = inf
        t_next = dstate[D_NEXT]
        t_ev = t_next if t_next <= tau else tau
        # snapshots strictly before the event (right-continuous paths)
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
            # the exponential draw is discarded; memorylessness makes this exact
            istate[I_UPOS] = upos
            return DONE
        dt = t_ev - t
        for k in range(K):
            T[k] = T[k] + Z[k] * dt
        dstate[D_INTQ] = dstate[D_INTQ] + q * dt
        t = t_ev
        if t_next <= tau:
            # arrival
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
            _log(log_out, istate[I_LOG], t, etype, N, Z, K)
            istate[I_LOG] += 1
        dstate[D_T] = t
