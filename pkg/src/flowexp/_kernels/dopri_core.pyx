# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Dormand-Prince 5(4) for polynomial right-hand sides.

The system is x' = sum_m ctl[chan[m]](t) * coefs[m] * prod_v y_v^exps[m, v]
where y = (x_0, ..., x_{d-1}, w) and w = 1/(1 - x_pole).  Each call
integrates one control piece, on which every channel is a polynomial in t.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, fmax, fmin, isfinite

cnp.import_array()

cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200
cdef double E6 = 22.0 / 525, E7 = -1.0 / 40

DEF OK = 0
DEF UNDERFLOW = 1
DEF POLE = 2
DEF MAXSTEPS = 3


cdef int rhs(double t, double[::1] x, double[::1] out, const long[:, ::1] exps,
             const double[:, ::1] coefs, const long[::1] chan, const double[:, ::1] ctl,
             double[::1] cval, int pole) noexcept nogil:
    cdef Py_ssize_t d = x.shape[0], nm = exps.shape[0], nc = ctl.shape[0], P = ctl.shape[1]
    cdef Py_ssize_t i, m, v, k
    cdef double acc, mono, wv = 0.0, base
    cdef long e
    for k in range(nc):
        acc = 0.0
        for i in range(P - 1, -1, -1):
            acc = acc * t + ctl[k, i]
        cval[k] = acc
    if pole >= 0:
        base = 1.0 - x[pole]
        if fabs(base) < 1e-12:
            return POLE
        wv = 1.0 / base
    for i in range(d):
        out[i] = 0.0
    for m in range(nm):
        mono = cval[chan[m]]
        if mono == 0.0:
            continue
        for v in range(d + 1):
            e = exps[m, v]
            if e == 0:
                continue
            base = x[v] if v < d else wv
            while e > 0:
                mono *= base
                e -= 1
        for i in range(d):
            out[i] += coefs[m, i] * mono
    return OK


cdef double errnorm(double[::1] e, double[::1] y0, double[::1] y1, double tol) noexcept nogil:
    cdef Py_ssize_t i
    cdef double r = 0.0, sc
    for i in range(e.shape[0]):
        sc = tol * (1.0 + fmax(fabs(y0[i]), fabs(y1[i])))
        r = fmax(r, fabs(e[i]) / sc)
    return r


def integrate_piece(double[::1] x, double t0, double t1, const long[:, ::1] exps,
                    const double[:, ::1] coefs, const long[::1] chan, const double[:, ::1] ctl,
                    int pole, double tol, double hmax, long max_steps, double h_init):
    """Advance x in place from t0 to t1.  Returns (status, steps, rejected,
    max accepted error ratio, last step)."""
    cdef Py_ssize_t d = x.shape[0], i
    cdef double[::1] k1 = np.empty(d), k2 = np.empty(d), k3 = np.empty(d), k4 = np.empty(d)
    cdef double[::1] k5 = np.empty(d), k6 = np.empty(d), k7 = np.empty(d)
    cdef double[::1] ytmp = np.empty(d), ynew = np.empty(d), err = np.empty(d)
    cdef double[::1] cval = np.empty(max(ctl.shape[0], 1))
    cdef double t = t0, h, hnew, en, fac, worst = 0.0, d0, d1, d2, h0
    cdef long steps = 0, rejected = 0
    cdef int st
    cdef bint last
    if t1 <= t0:
        return OK, 0, 0, 0.0, h_init
    with nogil:
        st = rhs(t, x, k1, exps, coefs, chan, ctl, cval, pole)
        if st != OK:
            with gil:
                return st, 0, 0, 0.0, 0.0
        if h_init > 0:
            h = h_init
        else:
            d0 = 0.0
            d1 = 0.0
            for i in range(d):
                d0 = fmax(d0, fabs(x[i]) / (tol * (1 + fabs(x[i]))))
                d1 = fmax(d1, fabs(k1[i]) / (tol * (1 + fabs(x[i]))))
            if d0 < 1e-5 or d1 < 1e-5:
                h0 = 1e-6
            else:
                h0 = 0.01 * d0 / d1
            h0 = fmin(h0, t1 - t0)
            for i in range(d):
                ytmp[i] = x[i] + h0 * k1[i]
            st = rhs(t + h0, ytmp, k2, exps, coefs, chan, ctl, cval, pole)
            d2 = 0.0
            if st == OK:
                for i in range(d):
                    d2 = fmax(d2, fabs(k2[i] - k1[i]) / (tol * (1 + fabs(x[i]))) / h0)
            if fmax(d1, d2) <= 1e-15:
                h = fmax(1e-6, h0 * 1e-3)
            else:
                h = pow(0.01 / fmax(d1, d2), 0.2)
            h = fmin(100 * h0, h)
        h = fmin(h, hmax)
        while t < t1:
            if steps + rejected >= max_steps:
                with gil:
                    return MAXSTEPS, steps, rejected, worst, h
            last = t + h >= t1
            if last:
                h = t1 - t
            if h < 1e-14 * (1.0 + fabs(t)):
                with gil:
                    return UNDERFLOW, steps, rejected, worst, h
            for i in range(d):
                ytmp[i] = x[i] + h * A21 * k1[i]
            st = rhs(t + C2 * h, ytmp, k2, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    ytmp[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i])
                st = rhs(t + C3 * h, ytmp, k3, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    ytmp[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
                st = rhs(t + C4 * h, ytmp, k4, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    ytmp[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                st = rhs(t + C5 * h, ytmp, k5, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    ytmp[i] = x[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                st = rhs(t + h, ytmp, k6, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    ynew[i] = x[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
                st = rhs(t + h, ynew, k7, exps, coefs, chan, ctl, cval, pole)
            if st == OK:
                for i in range(d):
                    err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
                en = errnorm(err, x, ynew, tol)
                if not isfinite(en):
                    en = 1e10
            else:
                # stage hit the pole: shrink and retry
                en = 1e10
            if en <= 1.0:
                t = t1 if last else t + h
                for i in range(d):
                    x[i] = ynew[i]
                    k1[i] = k7[i]
                steps += 1
                worst = fmax(worst, en)
                fac = 5.0 if en == 0 else fmin(5.0, fmax(0.2, 0.9 * pow(en, -0.2)))
                if not last:
                    h = fmin(h * fac, hmax)
            else:
                rejected += 1
                fac = fmax(0.1, 0.9 * pow(en, -0.2))
                h = h * fac
                if st == POLE and h < 1e-12:
                    with gil:
                        return POLE, steps, rejected, worst, h
    return OK, steps, rejected, worst, h
