"""Adaptive embedded Runge-Kutta integration (Tsitouras 5(4) pair).

Two entry points:

* :func:`integrate` — generic right-hand side ``f(t, y)`` with ``y`` any
  complex ndarray; used when the generator must be rebuilt at arbitrary
  times.
* :func:`integrate_affine` — the linear system ``y' = y L^T + theta(t) y dL^T``
  plus per-row source terms, specialized for stacked density-matrix /
  sensitivity propagation; JIT-compiled when numba is importable.

Both record the largest accepted step, which downstream error budgeting
consumes (global error of a 5(4) pair scales as h^4).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["IntegrationError", "integrate", "integrate_affine"]


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state during integration."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t = {t!r})")
        self.t = t


# Tsitouras 5(4) tableau (FSAL: the 7th stage is the next step's first).
_C2, _C3, _C4, _C5 = 0.161, 0.327, 0.9, 0.9800255409045097
_A21 = 0.161
_A31, _A32 = -0.008480655492356989, 0.335480655492357
_A41, _A42, _A43 = 2.8971530571054935, -6.359448489975075, 4.3622954328695815
_A51, _A52, _A53, _A54 = (
    5.325864828439257,
    -11.748883564062828,
    7.4955393428898365,
    -0.09249506636175525,
)
_A61, _A62, _A63, _A64, _A65 = (
    5.86145544294642,
    -12.92096931784711,
    8.159367898576159,
    -0.071584973281401,
    -0.028269050394068383,
)
_B1, _B2, _B3, _B4, _B5, _B6 = (
    0.09646076681806523,
    0.01,
    0.4798896504144996,
    1.379008574103742,
    -3.290069515436081,
    2.324710524099774,
)
_E1, _E2, _E3, _E4, _E5, _E6, _E7 = (
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    0.015151515151515152,
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_MAX_STEPS = 100_000_000


def _error_norm(err, y0, y1, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, t1, rtol, atol) -> float:
    """Hairer-style starting step selection."""
    span = t1 - t0
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean(np.abs(y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean(np.abs(f0 / scale) ** 2)))
    h0 = 1e-6 * span if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = float(np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6 * span, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(f, t0, t1, y0, rtol=1e-8, atol=1e-8, h0=None):
    """Integrate y' = f(t, y) from t0 to t1 (> t0).

    Returns ``(y1, h_last, h_max)`` where h_last seeds the next interval and
    h_max is the largest accepted step.
    """
    t = float(t0)
    y = np.array(y0, dtype=complex)
    k1 = f(t, y)
    if h0 is None or not (0 < h0 <= t1 - t0):
        h = _initial_step(f, t0, y, k1, t1, rtol, atol)
    else:
        h = float(h0)
    h_max_acc = 0.0
    h_unclipped = h
    for _ in range(_MAX_STEPS):
        if t >= t1:
            return y, h_unclipped, h_max_acc
        h = min(h, t1 - t)
        if h < 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError("step size underflow", t)
        k2 = f(t + _C2 * h, y + h * (_A21 * k1))
        k3 = f(t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2))
        k4 = f(t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5 = f(t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
        k6 = f(t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5))
        ynew = y + h * (_B1 * k1 + _B2 * k2 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = f(t + h, ynew)
        err = h * (
            _E1 * k1 + _E2 * k2 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        enorm = _error_norm(err, y, ynew, rtol, atol)
        if not math.isfinite(enorm):
            raise IntegrationError("non-finite values encountered", t)
        if enorm <= 1.0:
            t += h
            y = ynew
            k1 = k7
            h_max_acc = max(h_max_acc, h)
            factor = _MAX_FACTOR if enorm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * enorm ** -0.2
            )
            h_unclipped = h * factor
            h = h_unclipped
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * enorm ** -0.2)
            h_unclipped = h
    raise IntegrationError("step limit exceeded", t)


# ---------------------------------------------------------------------------
# specialized affine kernel
#
# State layout: y is a C-contiguous (n+1, m) complex array; row 0 holds the
# vectorized density matrix, row a+1 its derivative w.r.t. parameter a.
# The right-hand side is
#   ydot      = y @ LT + theta(t) * (y @ dLT)
#   ydot[1:] += reshape(y[0] @ GTall, (n, m))
# with LT/dLT the transposed Lindbladian block, GTall the horizontally
# stacked transposed source blocks, and theta ramping 0 -> 1 across the
# interval — two BLAS products per stage, no work on zero blocks.


def _affine_core(LT, dLT, has_dl, GTall, ta, tb, y0, rtol, atol, h0):
    nrows, m = y0.shape
    nsrc = nrows - 1
    inv_span = 1.0 / (tb - ta)
    t = ta
    y = y0.copy()
    h = h0
    h_max_acc = 0.0
    h_unclipped = h
    eps16 = 16 * 2.220446049250313e-16
    status = 0
    n_attempts = 0

    # first-stage derivative (FSAL seed)
    k1 = np.dot(y, LT)
    if has_dl:
        k1 += ((t - ta) * inv_span) * np.dot(y, dLT)
    if nsrc > 0:
        src = np.dot(y[0], GTall)
        for a in range(nsrc):
            k1[a + 1] += src[a * m : (a + 1) * m]

    while t < tb:
        n_attempts += 1
        if n_attempts > _MAX_STEPS:
            status = 3
            break
        if h > tb - t:
            h = tb - t
        tcap = abs(t)
        if tcap < 1.0:
            tcap = 1.0
        if h < eps16 * tcap:
            status = 1
            break

        w = y + h * (_A21 * k1)
        k2 = np.dot(w, LT)
        if has_dl:
            k2 += ((t + _C2 * h - ta) * inv_span) * np.dot(w, dLT)
        if nsrc > 0:
            src = np.dot(w[0], GTall)
            for a in range(nsrc):
                k2[a + 1] += src[a * m : (a + 1) * m]

        w = y + h * (_A31 * k1 + _A32 * k2)
        k3 = np.dot(w, LT)
        if has_dl:
            k3 += ((t + _C3 * h - ta) * inv_span) * np.dot(w, dLT)
        if nsrc > 0:
            src = np.dot(w[0], GTall)
            for a in range(nsrc):
                k3[a + 1] += src[a * m : (a + 1) * m]

        w = y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3)
        k4 = np.dot(w, LT)
        if has_dl:
            k4 += ((t + _C4 * h - ta) * inv_span) * np.dot(w, dLT)
        if nsrc > 0:
            src = np.dot(w[0], GTall)
            for a in range(nsrc):
                k4[a + 1] += src[a * m : (a + 1) * m]

        w = y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
        k5 = np.dot(w, LT)
        if has_dl:
            k5 += ((t + _C5 * h - ta) * inv_span) * np.dot(w, dLT)
        if nsrc > 0:
            src = np.dot(w[0], GTall)
            for a in range(nsrc):
                k5[a + 1] += src[a * m : (a + 1) * m]

        w = y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
        k6 = np.dot(w, LT)
        if has_dl:
            k6 += ((t + h - ta) * inv_span) * np.dot(w, dLT)
        if nsrc > 0:
            src = np.dot(w[0], GTall)
            for a in range(nsrc):
                k6[a + 1] += src[a * m : (a + 1) * m]

        ynew = y + h * (
            _B1 * k1 + _B2 * k2 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6
        )
        k7 = np.dot(ynew, LT)
        if has_dl:
            k7 += ((t + h - ta) * inv_span) * np.dot(ynew, dLT)
        if nsrc > 0:
            src = np.dot(ynew[0], GTall)
            for a in range(nsrc):
                k7[a + 1] += src[a * m : (a + 1) * m]

        err = h * (
            _E1 * k1 + _E2 * k2 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        # scaled RMS error norm
        acc = 0.0
        for i in range(nrows):
            for j in range(m):
                ay = abs(y[i, j])
                an = abs(ynew[i, j])
                big = ay if ay > an else an
                q = abs(err[i, j]) / (atol + rtol * big)
                acc += q * q
        enorm = math.sqrt(acc / (nrows * m))
        if not math.isfinite(enorm):
            status = 2
            break
        if enorm <= 1.0:
            t = t + h
            y = ynew
            k1 = k7
            if h > h_max_acc:
                h_max_acc = h
            if enorm == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * enorm ** -0.2
                if factor > _MAX_FACTOR:
                    factor = _MAX_FACTOR
            h_unclipped = h * factor
            h = h_unclipped
        else:
            factor = _SAFETY * enorm ** -0.2
            if factor < _MIN_FACTOR:
                factor = _MIN_FACTOR
            h = h * factor
            h_unclipped = h
    return y, h_unclipped, h_max_acc, status, t


_affine_core_jit = None


def _get_affine_core():
    """Return the JIT-compiled kernel when numba is present, else the
    pure-Python one."""
    global _affine_core_jit
    if _affine_core_jit is not None:
        return _affine_core_jit
    try:
        import numba

        _affine_core_jit = numba.njit(cache=True, fastmath=False)(_affine_core)
    except ImportError:
        _affine_core_jit = _affine_core
    return _affine_core_jit


def integrate_affine(L, dL, G, ta, tb, y0, rtol=1e-8, atol=1e-8, h0=None):
    """Integrate the stacked sensitivity system over [ta, tb].

    ``y0`` has shape (n+1, m): row 0 = vec(rho), row a+1 = vec(d_a rho).
    Row derivatives are L y_row + theta dL y_row, plus G[a] y_0 feeding row
    a+1, theta ramping 0 -> 1 across the interval.  Returns
    (y1, h_last, h_max).
    """
    y0 = np.ascontiguousarray(y0, dtype=complex)
    nrows, m = y0.shape
    n = nrows - 1
    LT = np.ascontiguousarray(L.T, dtype=complex)
    has_dl = dL is not None and bool(np.any(dL))
    dLT = (
        np.ascontiguousarray(dL.T, dtype=complex)
        if has_dl
        else np.zeros((m, m), dtype=complex)
    )
    GTall = np.zeros((m, max(n, 1) * m), dtype=complex)
    for a in range(n):
        GTall[:, a * m : (a + 1) * m] = G[a].T
    if h0 is None or not (0 < h0):
        inv = 1.0 / (tb - ta)

        def rhs(t, y):
            out = y @ LT
            if has_dl:
                out += ((t - ta) * inv) * (y @ dLT)
            if n > 0:
                out[1:] += (y[0] @ GTall[:, : n * m]).reshape(n, m)
            return out

        h0 = _initial_step(rhs, ta, y0, rhs(ta, y0), tb, rtol, atol)
    core = _get_affine_core()
    y1, h_last, h_max, status, t_fail = core(
        LT, dLT, has_dl, GTall, float(ta), float(tb), y0, float(rtol), float(atol), float(h0)
    )
    if status == 1:
        raise IntegrationError("step size underflow", t_fail)
    if status == 2:
        raise IntegrationError("non-finite values encountered", t_fail)
    if status == 3:
        raise IntegrationError("step limit exceeded", t_fail)
    return y1, h_last, h_max
