"""Fast drift summation: numba direct O(N^2) kernels and a Barnes-Hut quadtree.

All summations are deterministic and independent of the thread count: the
parallel loops are over target particles only, and each target accumulates
its sum in a fixed sequential order.

The quadtree approximates far cells by their aggregate weight placed at the
cell's center of mass, evaluated through the *unmollified* Biot-Savart
kernel; the acceptance criterion forces far cells to lie entirely outside
the mollification radius, where the mollified and bare kernels agree
exactly, so the only error is multipole truncation.  The dipole term
vanishes because expansion is around the center of mass with equal weights.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

__all__ = ["direct_drift_biot_savart", "direct_drift_radial_table", "tree_drift_biot_savart"]

_TWO_PI = 2.0 * np.pi


@njit(cache=True, parallel=True)
def direct_drift_biot_savart(pos, n_moll, out):
    """(1/N) sum_j K_n(x_i - x_j) with the closed-form mollified kernel.

    K_n(0) = 0, so coincident pairs (including self pairs) contribute
    nothing; self-exclusion and self-inclusion coincide for this kernel.
    """
    N = pos.shape[0]
    eps = 1.0 / n_moll
    for i in prange(N):
        ax = 0.0
        ay = 0.0
        xi = pos[i, 0]
        yi = pos[i, 1]
        for j in range(N):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            if r2 < eps * eps:
                s2 = r2 * n_moll * n_moll
                u = 1.0 - s2
                mass = 1.0 - u * u * u * u * u
            else:
                mass = 1.0
            f = mass / (_TWO_PI * r2)
            ax += -dy * f
            ay += dx * f
        out[i, 0] = ax / N
        out[i, 1] = ay / N


@njit(cache=True, parallel=True)
def direct_drift_radial_table(pos, radii, gvals, a_exp, out):
    """(1/N) sum_j g(|z|) z_perp for a tabulated mollified swirl profile.

    Inside the table range g is linearly interpolated; outside, the bare
    power-law profile 1 / (2 pi |z|^{1+a}) applies.
    """
    N = pos.shape[0]
    rmax = radii[-1]
    m = radii.shape[0]
    dr = radii[1] - radii[0]
    for i in prange(N):
        ax = 0.0
        ay = 0.0
        xi = pos[i, 0]
        yi = pos[i, 1]
        for j in range(N):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            r = np.sqrt(r2)
            if r < rmax:
                k = int(r / dr)
                if k >= m - 1:
                    k = m - 2
                w = (r - radii[k]) / dr
                g = gvals[k] * (1.0 - w) + gvals[k + 1] * w
            else:
                g = 1.0 / (_TWO_PI * r ** (1.0 + a_exp))
            ax += -dy * g
            ay += dx * g
        out[i, 0] = ax / N
        out[i, 1] = ay / N


@njit(cache=True)
def _build_quadtree(pos, leaf_size):
    """Top-down quadtree over 2D points; returns flat node arrays and the permutation."""
    N = pos.shape[0]
    max_nodes = 8 * N + 64
    child = -np.ones((max_nodes, 4), dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    cx = np.zeros(max_nodes)
    cy = np.zeros(max_nodes)
    half = np.zeros(max_nodes)
    comx = np.zeros(max_nodes)
    comy = np.zeros(max_nodes)
    rmax = np.zeros(max_nodes)
    # complex quadrupole moment sum_j conj(y_j - com)^2, for the multipole
    # expansion of the vortex kernel in complex form i / (2 pi conj(z))
    qre = np.zeros(max_nodes)
    qim = np.zeros(max_nodes)
    ore = np.zeros(max_nodes)
    oim = np.zeros(max_nodes)

    perm = np.arange(N)
    xmin = pos[:, 0].min()
    xmax = pos[:, 0].max()
    ymin = pos[:, 1].min()
    ymax = pos[:, 1].max()
    h0 = max(xmax - xmin, ymax - ymin) * 0.5 + 1e-12
    cx0 = 0.5 * (xmin + xmax)
    cy0 = 0.5 * (ymin + ymax)

    n_nodes = 1
    start[0] = 0
    count[0] = N
    cx[0] = cx0
    cy[0] = cy0
    half[0] = h0

    max_depth = 48
    stack = np.empty((max_nodes, 2), dtype=np.int64)  # (node, depth)
    top = 0
    stack[top, 0] = 0
    stack[top, 1] = 0
    top += 1
    scratch = np.empty(N, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        s = start[node]
        c = count[node]
        # center of mass and radius of the node's particles
        sx = 0.0
        sy = 0.0
        for k in range(s, s + c):
            sx += pos[perm[k], 0]
            sy += pos[perm[k], 1]
        mx = sx / c
        my = sy / c
        comx[node] = mx
        comy[node] = my
        rm = 0.0
        qr = 0.0
        qi = 0.0
        orr = 0.0
        oi = 0.0
        for k in range(s, s + c):
            dx = pos[perm[k], 0] - mx
            dy = pos[perm[k], 1] - my
            d2 = dx * dx + dy * dy
            if d2 > rm:
                rm = d2
            # conj(delta)^2 and conj(delta)^3 with conj(delta) = dx - i dy
            c2r = dx * dx - dy * dy
            c2i = -2.0 * dx * dy
            qr += c2r
            qi += c2i
            orr += c2r * dx + c2i * dy
            oi += -c2r * dy + c2i * dx
        rmax[node] = np.sqrt(rm)
        qre[node] = qr
        qim[node] = qi
        ore[node] = orr
        oim[node] = oi

        if c <= leaf_size or depth >= max_depth:
            continue

        # partition the slice into quadrants: (x < cx, y < cy) -> 0, etc.
        ccx = cx[node]
        ccy = cy[node]
        offs = np.zeros(5, dtype=np.int64)
        for k in range(s, s + c):
            p = perm[k]
            q = (1 if pos[p, 0] >= ccx else 0) + 2 * (1 if pos[p, 1] >= ccy else 0)
            offs[q + 1] += 1
        for q in range(4):
            offs[q + 1] += offs[q]
        cursor = offs[:4].copy()
        for k in range(s, s + c):
            p = perm[k]
            q = (1 if pos[p, 0] >= ccx else 0) + 2 * (1 if pos[p, 1] >= ccy else 0)
            scratch[cursor[q]] = p
            cursor[q] += 1
        for k in range(c):
            perm[s + k] = scratch[k]

        hh = half[node] * 0.5
        for q in range(4):
            cnt = offs[q + 1] - offs[q]
            if cnt == 0:
                continue
            nid = n_nodes
            n_nodes += 1
            child[node, q] = nid
            start[nid] = s + offs[q]
            count[nid] = cnt
            cx[nid] = ccx + (hh if q % 2 == 1 else -hh)
            cy[nid] = ccy + (hh if q // 2 == 1 else -hh)
            half[nid] = hh
            stack[top, 0] = nid
            stack[top, 1] = depth + 1
            top += 1

    return (
        child[:n_nodes],
        start[:n_nodes],
        count[:n_nodes],
        comx[:n_nodes],
        comy[:n_nodes],
        rmax[:n_nodes],
        qre[:n_nodes],
        qim[:n_nodes],
        ore[:n_nodes],
        oim[:n_nodes],
        perm,
    )


@njit(cache=True, parallel=True)
def _tree_walk_biot_savart(
    pos, targets, child, start, count, comx, comy, rmax, qre, qim, ore, oim, perm, n_moll, theta, out
):
    N = pos.shape[0]
    M = targets.shape[0]
    eps = 1.0 / n_moll
    for i in prange(M):
        xi = targets[i, 0]
        yi = targets[i, 1]
        ax = 0.0
        ay = 0.0
        stack = np.empty(1024, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            dx = xi - comx[node]
            dy = yi - comy[node]
            dist = np.sqrt(dx * dx + dy * dy)
            rm = rmax[node]
            # far cell: multipole truncation only, and every source strictly
            # outside the mollification radius
            if dist - rm > rm / theta and dist - rm > eps:
                # complex expansion around the com: with D = conj(x - com),
                # sum_j 1/(D - conj(y_j - com)) = m/D + Q/D^3 + O(rm^3/d^4)
                # (the dipole term vanishes by choice of expansion center);
                # the velocity is i/(2 pi) times that sum
                r2 = dx * dx + dy * dy
                inv_re = dx / r2
                inv_im = dy / r2
                # invD^2
                i2re = inv_re * inv_re - inv_im * inv_im
                i2im = 2.0 * inv_re * inv_im
                # invD^3 and invD^4
                i3re = i2re * inv_re - i2im * inv_im
                i3im = i2re * inv_im + i2im * inv_re
                i4re = i2re * i2re - i2im * i2im
                i4im = 2.0 * i2re * i2im
                sre = (
                    count[node] * inv_re
                    + qre[node] * i3re
                    - qim[node] * i3im
                    + ore[node] * i4re
                    - oim[node] * i4im
                )
                sim = (
                    count[node] * inv_im
                    + qre[node] * i3im
                    + qim[node] * i3re
                    + ore[node] * i4im
                    + oim[node] * i4re
                )
                ax += -sim / _TWO_PI
                ay += sre / _TWO_PI
                continue
            is_leaf = True
            for q in range(4):
                if child[node, q] >= 0:
                    is_leaf = False
                    stack[top] = child[node, q]
                    top += 1
            if is_leaf:
                for k in range(start[node], start[node] + count[node]):
                    j = perm[k]
                    ddx = xi - pos[j, 0]
                    ddy = yi - pos[j, 1]
                    r2 = ddx * ddx + ddy * ddy
                    if r2 == 0.0:
                        continue
                    if r2 < eps * eps:
                        s2 = r2 * n_moll * n_moll
                        u = 1.0 - s2
                        mass = 1.0 - u * u * u * u * u
                    else:
                        mass = 1.0
                    f = mass / (_TWO_PI * r2)
                    ax += -ddy * f
                    ay += ddx * f
        out[i, 0] = ax / N
        out[i, 1] = ay / N


def tree_drift_biot_savart(
    pos: np.ndarray,
    n_moll: int,
    theta: float,
    leaf_size: int = 16,
    targets: np.ndarray | None = None,
) -> np.ndarray:
    """Barnes-Hut approximation of the mollified Biot-Savart empirical drift.

    ``targets`` defaults to the source positions (the usual all-particle
    drift); passing a different array evaluates the field induced by ``pos``
    at those points instead.  Coincident source/target pairs contribute
    nothing (K_n(0) = 0), which subsumes self-exclusion.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"opening angle theta={theta} outside (0, 1]")
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    tgt = pos if targets is None else np.ascontiguousarray(targets, dtype=np.float64)
    out = np.empty_like(tgt)
    if len(pos) == 1 and targets is None:
        out[:] = 0.0
        return out
    child, start, count, comx, comy, rmax, qre, qim, ore, oim, perm = _build_quadtree(pos, leaf_size)
    _tree_walk_biot_savart(
        pos, tgt, child, start, count, comx, comy, rmax, qre, qim, ore, oim, perm, float(n_moll), theta, out
    )
    return out
