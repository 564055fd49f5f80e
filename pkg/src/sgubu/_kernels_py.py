"""Pure-Python twin of the compiled step kernels.

Vectorised over the ``(n_chains, d)`` ensemble with the same arithmetic order
as ``_kernels.pyx``, so both backends produce identical bits.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "python"
INV_SQRT2 = 1.0 / math.sqrt(2.0)


def _grad(x, P, Cn, scale, batch_s, noise_s):
    g = np.zeros_like(x)
    if batch_s is None:
        for i in range(P.shape[0]):
            g = g + P[i] * (x - Cn[i])
    else:
        for t in range(batch_s.shape[1]):
            idx = batch_s[:, t]
            g = g + P[idx] * (x - Cn[idx])
        g = scale * g
    if noise_s is not None:
        g = g + noise_s
    return g


def advance(method, x, v, h, hg, sq, coeffs, P, Cn, scale, batch, xi1, xi2, noise, out_x, out_v):
    """Advance ``x``, ``v`` (shape ``(C, d)``, updated in place) by ``xi1.shape[0]`` steps.

    ``method`` is 0 (UBU), 1 (Euler kinetic) or 2 (SGLD).  Returns the index of
    the first step that produced a non-finite state, or -1.  The Euler schemes
    take their Brownian increment as ``(xi1[s, 0] + xi1[s, 1]) / sqrt(2)``, the
    same path that drives the two UBU half-steps.
    """
    eta, F, nx1, nx2, nv1, nv2 = coeffs
    xc = x.copy()
    vc = v.copy()
    bad = -1
    for s in range(xi1.shape[0]):
        bs = None if batch is None else batch[s]
        ns = None if noise is None else noise[s]
        if method == 0:
            a1 = xi1[s, 0]
            a2 = xi2[s, 0]
            x1 = xc + F * vc + nx1 * a1 + nx2 * a2
            v1 = eta * vc + nv1 * a1 + nv2 * a2
            g = _grad(x1, P, Cn, scale, bs, ns)
            v1 = v1 - h * g
            b1 = xi1[s, 1]
            b2 = xi2[s, 1]
            xc = x1 + F * v1 + nx1 * b1 + nx2 * b2
            vc = eta * v1 + nv1 * b1 + nv2 * b2
        elif method == 1:
            xc = xc + h * vc
            g = _grad(xc, P, Cn, scale, bs, ns)
            vc = vc - h * g - hg * vc + sq * ((xi1[s, 0] + xi1[s, 1]) * INV_SQRT2)
        else:
            g = _grad(xc, P, Cn, scale, bs, ns)
            xc = xc - h * g + sq * ((xi1[s, 0] + xi1[s, 1]) * INV_SQRT2)
        if out_x is not None:
            out_x[s] = xc
        if out_v is not None:
            out_v[s] = vc
        if not (np.isfinite(xc).all() and np.isfinite(vc).all()):
            bad = s
            break
    x[...] = xc
    v[...] = vc
    return bad
