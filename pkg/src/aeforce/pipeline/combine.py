"""Merging the integrated fine-scale curve with coarse-scale force anchors."""

from __future__ import annotations

import numpy as np

from ..errors import LengthMismatch


def combine(t, f, anchors, dT: float, t0: float | None = None):
    """Slope-correct ``f`` window by window so it passes through every anchor.

    ``anchors[n-1]`` is the coarse force prediction at ``t0 + n*dT``. For
    ``n = 1..N_c`` in order::

        delta_n = (F(n dT) - f_{n-1}(n dT)) / dT
        f_n(t)  = f_{n-1}(t) + delta_n * (t - (n-1) dT)    for t > (n-1) dT

    Anchor times missing from ``t`` are inserted (by linear interpolation of
    ``f``), so the returned samples hit every anchor.

    Returns ``(t_out, f_out, deltas)``.
    """
    t = np.asarray(t, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    F = np.asarray(anchors, dtype=np.float64).ravel()
    if t.shape != f.shape or t.ndim != 1 or t.size < 2:
        raise LengthMismatch("curve times and values must be equal-length 1-D arrays")
    if not dT > 0:
        raise ValueError("coarse window width must be positive")
    if t0 is None:
        t0 = float(t[0])
    n_c = F.size
    edges = t0 + np.arange(n_c + 1) * dT
    if n_c and edges[-1] > t[-1] + 1e-9 * max(1.0, abs(t[-1])):
        raise LengthMismatch(
            f"{n_c} anchors need the curve up to t = {edges[-1]:g}, it ends at {t[-1]:g}"
        )

    # snap near-coincident samples onto the anchor times, insert the rest
    tol = 1e-9 * max(1.0, abs(edges[-1]))
    t_out = t.copy()
    f_out = f.copy()
    missing = []
    for e in edges[1:]:
        i = np.searchsorted(t_out, e)
        hit = [j for j in (i - 1, i) if 0 <= j < t_out.size and abs(t_out[j] - e) <= tol]
        if hit:
            t_out[hit[0]] = e
        else:
            missing.append(e)
    if missing:
        missing = np.array(missing)
        vals = np.interp(missing, t, f)
        t_out = np.concatenate([t_out, missing])
        f_out = np.concatenate([f_out, vals])
        order = np.argsort(t_out, kind="mergesort")
        t_out, f_out = t_out[order], f_out[order]

    anchor_idx = np.searchsorted(t_out, edges[1:])
    deltas = np.empty(n_c)
    for n in range(1, n_c + 1):
        start = edges[n - 1]
        deltas[n - 1] = (F[n - 1] - f_out[anchor_idx[n - 1]]) / dT
        after = t_out > start
        f_out[after] += deltas[n - 1] * (t_out[after] - start)
    return t_out, f_out, deltas
