"""Zero level set extraction from P1 nodal fields (marching triangles)."""

from __future__ import annotations

import numpy as np

from .fem import Field, _fmt


def _zero_segments(v: Field):
    """Segments of {v = 0} and the triangle each one came from.

    A vertex value of exactly 0 counts as positive, so each triangle whose
    values straddle 0 contributes exactly one segment and triangles with a
    constant sign contribute none.
    """
    mesh = v.mesh
    vals = v.coeffs[mesh.triangles]  # (nt, 3)
    pos = vals >= 0.0
    npos = pos.sum(axis=1)
    minority_pos = npos == 1   # one nonnegative vertex, two negative
    minority_neg = npos == 2   # one negative vertex, two nonnegative
    crossed = minority_pos | minority_neg
    if not np.any(crossed):
        return np.empty((0, 4)), np.empty(0, dtype=int)
    tri_idx = np.flatnonzero(crossed)
    tv = vals[tri_idx]
    tp = pos[tri_idx]
    # local index of the vertex whose sign differs from the other two
    odd = np.where(minority_pos[tri_idx, None], tp, ~tp).argmax(axis=1)
    coords = mesh.vertices[mesh.triangles[tri_idx]]  # (nc, 3, 2)
    rows = np.arange(tri_idx.size)
    a = (odd + 1) % 3
    b = (odd + 2) % 3
    vo, va, vb = tv[rows, odd], tv[rows, a], tv[rows, b]
    po, pa, pb = coords[rows, odd], coords[rows, a], coords[rows, b]
    # crossing parameter of the linear interpolant along each cut edge
    ta = vo / (vo - va)
    tb = vo / (vo - vb)
    q1 = po + ta[:, None] * (pa - po)
    q2 = po + tb[:, None] * (pb - po)
    return np.hstack([q1, q2]), tri_idx


def zero_level_set(v: Field) -> np.ndarray:
    """Line segments (x0, y0, x1, y1) tracing the zero set of the field."""
    segs, _ = _zero_segments(v)
    return segs


def write_levelset_csv(segments: np.ndarray, path, comments=()) -> None:
    """Level-set file: header ``x0,y0,x1,y1``, one row per segment."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("x0,y0,x1,y1\n")
        for row in np.atleast_2d(segments):
            if row.size == 0:
                continue
            fh.write(",".join(_fmt(x) for x in row) + "\n")
