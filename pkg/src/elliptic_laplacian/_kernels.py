"""Hot kernels: proper-time integrals of Gaussian expectations.

For a complex Gaussian ``G = X + iY`` with independent ``X ~ N(0, sx2)``,
``Y ~ N(0, sy2)`` and ``D = |G - lam|^2 + w^2`` we use

    1/D   = int_0^inf exp(-t D) dt
    1/D^2 = int_0^inf t exp(-t D) dt

and the Gaussian average of ``exp(-t D)`` (and of its first two moments in
``lam - G``) is closed form. The remaining 1D integral in ``u = log t`` is
analytic in a strip and decays at both ends, so the plain trapezoid rule
converges exponentially.

Returned columns, in order:

    0 K0  = E[1/D]
    1 K1x = E[(x - X)/D]        2 K1y = E[(y - Y)/D]
    3 J2  = E[1/D^2]
    4 JX  = E[(x - X)/D^2]      5 JY  = E[(y - Y)/D^2]
    6 JXX = E[(x - X)^2/D^2]    7 JXY = E[(x - X)(y - Y)/D^2]
    8 JYY = E[(y - Y)^2/D^2]

Only columns 0-2 are filled when ``jac`` is false.
"""
import numpy as np

from ._accel import njit, use_numba

U_LO = -36.0
TAIL = 45.0
NCOL = 9
_CHUNK = 1024


def decay_rate(x, y, w, sx2, sy2):
    """Exponential decay rate of the proper-time integrand; 0 means divergent."""
    r = w * w
    if sy2 == 0.0:
        r = r + y * y
    if sx2 == 0.0:
        r = r + x * x
    return r


@njit(cache=True)
def _moments_numba(x, y, w, sx2, sy2, nnodes, jac):
    npts = x.shape[0]
    out = np.zeros((npts, NCOL))
    for p in range(npts):
        xp = x[p]
        yp = y[p]
        w2 = w[p] * w[p]
        r = w2
        if sy2 == 0.0:
            r += yp * yp
        if sx2 == 0.0:
            r += xp * xp
        if r <= 0.0:
            for c in range(NCOL if jac else 3):
                out[p, c] = np.inf
            continue
        uhi = max(np.log(TAIL / r), U_LO + 1.0)
        h = (uhi - U_LO) / (nnodes - 1)
        # nodes are geometric in t, so step t by multiplication
        q = np.exp(h)
        t = np.exp(U_LO) / q
        x2 = xp * xp
        y2 = yp * yp
        a0 = a1 = a2 = a3 = a4 = a5 = a6 = a7 = a8 = 0.0
        for k in range(nnodes):
            t *= q
            ix = 1.0 / (1.0 + 2.0 * t * sx2)
            iy = 1.0 / (1.0 + 2.0 * t * sy2)
            f = h * t * np.exp(-t * (w2 + x2 * ix + y2 * iy)) * np.sqrt(ix * iy)
            if k == 0 or k == nnodes - 1:
                f *= 0.5
            mx = xp * ix
            my = yp * iy
            a0 += f
            a1 += f * mx
            a2 += f * my
            if jac:
                ft = f * t
                a3 += ft
                a4 += ft * mx
                a5 += ft * my
                a6 += ft * (mx * mx + sx2 * ix)
                a7 += ft * mx * my
                a8 += ft * (my * my + sy2 * iy)
        out[p, 0] = a0
        out[p, 1] = a1
        out[p, 2] = a2
        if jac:
            out[p, 3] = a3
            out[p, 4] = a4
            out[p, 5] = a5
            out[p, 6] = a6
            out[p, 7] = a7
            out[p, 8] = a8
    return out


def _moments_numpy(x, y, w, sx2, sy2, nnodes, jac):
    npts = x.shape[0]
    out = np.zeros((npts, NCOL))
    frac = np.arange(nnodes) / (nnodes - 1)
    ends = np.ones(nnodes)
    ends[0] = ends[-1] = 0.5
    for lo in range(0, npts, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        xp, yp, wp = x[sl, None], y[sl, None], w[sl, None]
        r = decay_rate(x[sl], y[sl], w[sl], sx2, sy2)
        bad = r <= 0.0
        uhi = np.maximum(np.log(TAIL / np.where(bad, 1.0, r)), U_LO + 1.0)
        h = ((uhi - U_LO) / (nnodes - 1))[:, None]
        t = np.exp(U_LO + (uhi - U_LO)[:, None] * frac)
        ax = 1.0 + 2.0 * t * sx2
        ay = 1.0 + 2.0 * t * sy2
        e0 = np.exp(-t * (wp * wp + xp * xp / ax + yp * yp / ay)) / np.sqrt(ax * ay)
        f = e0 * (h * t) * ends
        mx = xp / ax
        my = yp / ay
        block = out[sl]
        block[:, 0] = f.sum(axis=1)
        block[:, 1] = (f * mx).sum(axis=1)
        block[:, 2] = (f * my).sum(axis=1)
        ncol = 3
        if jac:
            ncol = NCOL
            ft = f * t
            block[:, 3] = ft.sum(axis=1)
            block[:, 4] = (ft * mx).sum(axis=1)
            block[:, 5] = (ft * my).sum(axis=1)
            block[:, 6] = (ft * (mx * mx + sx2 / ax)).sum(axis=1)
            block[:, 7] = (ft * mx * my).sum(axis=1)
            block[:, 8] = (ft * (my * my + sy2 / ay)).sum(axis=1)
        block[bad, :ncol] = np.inf
    return out


def proper_time_moments(x, y, w, sx2, sy2, nnodes, jac=False, backend=None):
    """Evaluate the kernel table for 1D arrays ``x, y, w`` (broadcast together).

    ``backend`` is ``"numba"``, ``"numpy"`` or ``None`` (pick by env flag).
    """
    x, y, w = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(w, dtype=float)
    )
    shape = x.shape
    x, y, w = (np.array(a, dtype=float).ravel() for a in (x, y, w))  # owned, writeable copies
    if backend is None:
        backend = "numba" if use_numba() else "numpy"
    if backend == "numba":
        if not use_numba():
            raise RuntimeError("numba backend requested but numba is disabled or missing")
        out = _moments_numba(x, y, w, float(sx2), float(sy2), int(nnodes), bool(jac))
    elif backend == "numpy":
        out = _moments_numpy(x, y, w, float(sx2), float(sy2), int(nnodes), bool(jac))
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return out.reshape(shape + (NCOL,))
