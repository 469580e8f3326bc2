"""Reference Dormand-Prince 5(4) in numpy; same step control as the
compiled kernel so both produce the same step sequence."""
from __future__ import annotations

import math

import numpy as np

OK, UNDERFLOW, POLE, MAXSTEPS = 0, 1, 2, 3

C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class PoleHit(Exception):
    pass


def poly_rhs(exps, coefs, chan, ctl, pole):
    """Closure evaluating the polynomial system on one piece."""
    exps = np.asarray(exps)
    d = coefs.shape[1]
    xe = exps[:, :d]
    we = exps[:, d]
    used = [v for v in range(d + 1) if exps[:, v].any()]

    def f(t, x):
        cval = np.zeros(ctl.shape[0])
        for i in range(ctl.shape[1] - 1, -1, -1):
            cval = cval * t + ctl[:, i]
        mono = cval[chan].copy()
        if pole >= 0:
            base = 1.0 - x[pole]
            if abs(base) < 1e-12:
                raise PoleHit
            wv = 1.0 / base
        for v in used:
            e = xe[:, v] if v < d else we
            b = x[v] if v < d else wv
            mono = mono * b ** e
        return mono @ coefs

    return f


def _norm(e, y0, y1, tol):
    return float(np.max(np.abs(e) / (tol * (1.0 + np.maximum(np.abs(y0), np.abs(y1))))))


def integrate(f, x, t0, t1, tol, hmax, max_steps, h_init):
    """Generic driver: advance x in place under x' = f(t, x)."""
    if t1 <= t0:
        return OK, 0, 0, 0.0, h_init
    steps = rejected = 0
    worst = 0.0
    t = t0
    try:
        k1 = f(t, x)
    except PoleHit:
        return POLE, 0, 0, 0.0, 0.0
    if h_init > 0:
        h = h_init
    else:
        sc = tol * (1 + np.abs(x))
        d0 = float(np.max(np.abs(x) / sc))
        d1 = float(np.max(np.abs(k1) / sc))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, t1 - t0)
        try:
            k2 = f(t + h0, x + h0 * k1)
            d2 = float(np.max(np.abs(k2 - k1) / sc)) / h0
        except PoleHit:
            d2 = 0.0
        m = max(d1, d2)
        h = max(1e-6, h0 * 1e-3) if m <= 1e-15 else (0.01 / m) ** 0.2
        h = min(100 * h0, h)
    h = min(h, hmax)
    ks = [None] * 7
    while t < t1:
        if steps + rejected >= max_steps:
            return MAXSTEPS, steps, rejected, worst, h
        last = t + h >= t1
        if last:
            h = t1 - t
        if h < 1e-14 * (1.0 + abs(t)):
            return UNDERFLOW, steps, rejected, worst, h
        ks[0] = k1
        hit = False
        try:
            for s in range(1, 7):
                y = x.copy()
                for j, a in enumerate(A[s]):
                    if a:
                        y = y + (h * a) * ks[j]
                ks[s] = f(t + C[s] * h, y)
                if s == 6:
                    ynew = y
            err = h * sum(E[j] * ks[j] for j in range(7) if E[j])
            en = _norm(err, x, ynew, tol)
            if not math.isfinite(en):
                en = 1e10
        except (PoleHit, FloatingPointError, OverflowError):
            hit = True
            en = 1e10
        if en <= 1.0:
            t = t1 if last else t + h
            x[:] = ynew
            k1 = ks[6]
            steps += 1
            worst = max(worst, en)
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            if not last:
                h = min(h * fac, hmax)
        else:
            rejected += 1
            h *= max(0.1, 0.9 * en ** -0.2)
            if hit and h < 1e-12:
                return POLE, steps, rejected, worst, h
    return OK, steps, rejected, worst, h


def integrate_piece(x, t0, t1, exps, coefs, chan, ctl, pole, tol, hmax, max_steps, h_init):
    f = poly_rhs(exps, np.asarray(coefs), np.asarray(chan), np.asarray(ctl), pole)
    with np.errstate(over="raise", invalid="raise"):
        return integrate(f, x, t0, t1, tol, hmax, max_steps, h_init)
