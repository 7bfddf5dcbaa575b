"""Numba kernels for the per-sample hot paths.

Everything here operates on the struct-of-arrays node table, the chunk pool
tables, and raw arena views, so a kernel call involves no Python object
traffic.  Structural changes (splits, chunk linking) stay in Python; these
kernels only read topology and write per-node counters, grid bits, and
record payloads.

Descent math mirrors the conventions in octree.py exactly: child bounds are
``bmin + half`` per set octant bit with float64 arithmetic in that order,
and grid cells are ``floor(g * (p - bmin) / size)`` clamped to the grid.
The kernels recompute bounds on the way down instead of loading them per
node; both paths produce identical bytes because the operations match.

All kernels are single-threaded and assume exclusive write access to the
tree, matching the one-writer update loop.
"""
from __future__ import annotations

import numpy as np
from numba import njit

NO_NODE = -1
NO_CHUNK = -1


@njit(cache=True)
def count_points(
    xyz, children, inner, final, pending, touched, n_touched, bx0, by0, bz0, size0
):
    """Descend each point to its leaf and bump that leaf's pending counter.

    Leaves whose pending goes 0 -> 1 are appended to ``touched``; final
    leaves are skipped entirely.  Returns the new touched length.
    """
    nt = n_touched
    for i in range(xyz.shape[0]):
        x = np.float64(xyz[i, 0])
        y = np.float64(xyz[i, 1])
        z = np.float64(xyz[i, 2])
        nid = 0
        bx, by, bz, s = bx0, by0, bz0, size0
        while inner[nid]:
            h = s * 0.5
            o = 0
            if x >= bx + h:
                o |= 1
                bx += h
            if y >= by + h:
                o |= 2
                by += h
            if z >= bz + h:
                o |= 4
                bz += h
            s = h
            nid = children[nid, o]
        if final[nid]:
            continue
        if pending[nid] == 0:
            touched[nt] = nid
            nt += 1
        pending[nid] += 1
    return nt


@njit(cache=True)
def sample_and_route(
    xyz,
    rgba,
    children,
    inner,
    grid_off,
    grid_u8,
    pending,
    g,
    bnode,
    bcell,
    brgba,
    backlog_len,
    backlog_cap,
    touched,
    n_touched,
    leaf_out,
    bx0,
    by0,
    bz0,
    size0,
):
    """Claim grid cells along each point's path and record its leaf.

    At every inner node passed, the point's cell is tested against the
    occupancy grid; a newly set bit appends (node, cell, color) to the
    backlog and bumps the node's pending counter (0 -> 1 also appends the
    node to ``touched``).  ``leaf_out[i]`` receives the landing leaf.
    Returns (backlog length, touched length, overflow flag).
    """
    blen = backlog_len
    nt = n_touched
    overflow = False
    for i in range(xyz.shape[0]):
        x = np.float64(xyz[i, 0])
        y = np.float64(xyz[i, 1])
        z = np.float64(xyz[i, 2])
        nid = 0
        bx, by, bz, s = bx0, by0, bz0, size0
        while inner[nid]:
            cx = np.int64(np.floor(g * (x - bx) / s))
            cy = np.int64(np.floor(g * (y - by) / s))
            cz = np.int64(np.floor(g * (z - bz) / s))
            if cx < 0:
                cx = 0
            elif cx > g - 1:
                cx = g - 1
            if cy < 0:
                cy = 0
            elif cy > g - 1:
                cy = g - 1
            if cz < 0:
                cz = 0
            elif cz > g - 1:
                cz = g - 1
            cell = cx + g * cy + g * g * cz
            byte = grid_off[nid] + (cell >> 3)
            mask = np.uint8(1 << (cell & 7))
            if grid_u8[byte] & mask == 0:
                grid_u8[byte] |= mask
                if blen < backlog_cap:
                    bnode[blen] = nid
                    bcell[blen] = cell
                    brgba[blen] = rgba[i]
                    blen += 1
                    if pending[nid] == 0:
                        touched[nt] = nid
                        nt += 1
                    pending[nid] += 1
                else:
                    overflow = True
            h = s * 0.5
            o = 0
            if x >= bx + h:
                o |= 1
                bx += h
            if y >= by + h:
                o |= 2
                by += h
            if z >= bz + h:
                o |= 4
                bz += h
            s = h
            nid = children[nid, o]
        leaf_out[i] = nid
    return blen, nt, overflow


@njit(cache=True)
def store_points(
    xyz,
    rgba,
    leaf_ids,
    count,
    chunk_head,
    chunk_next,
    chunk_occ,
    payload_off,
    cap,
    f32v,
    u32v,
    stamp,
    cursor,
    pass_no,
):
    """Append each point record to its leaf's chunk list in input order.

    ``stamp``/``cursor`` cache the write chunk per node across points so a
    node's chunk chain is walked once per pass, not once per point.  Chunks
    must already be allocated for the full pending amount.
    """
    for i in range(leaf_ids.shape[0]):
        nid = leaf_ids[i]
        c = count[nid]
        if stamp[nid] != pass_no:
            stamp[nid] = pass_no
            cid = chunk_head[nid]
            for _ in range(c // cap):
                cid = chunk_next[cid]
            cursor[nid] = cid
        cid = cursor[nid]
        rel = c % cap
        base4 = (payload_off[cid] >> 2) + 4 * rel
        f32v[base4] = xyz[i, 0]
        f32v[base4 + 1] = xyz[i, 1]
        f32v[base4 + 2] = xyz[i, 2]
        u32v[base4 + 3] = rgba[i]
        chunk_occ[cid] += 1
        count[nid] = c + 1
        if rel + 1 == cap:
            cursor[nid] = chunk_next[cid]


@njit(cache=True)
def store_voxels(
    bnode,
    bcell,
    brgba,
    n,
    bmin,
    level,
    size_by_level,
    g,
    count,
    chunk_head,
    chunk_next,
    chunk_occ,
    payload_off,
    cap,
    f32v,
    u32v,
    stamp,
    cursor,
    pass_no,
):
    """Materialize backlog entries as voxel records at their cell centers."""
    for i in range(n):
        nid = bnode[i]
        cell = np.int64(bcell[i])
        cx = cell % g
        cy = (cell // g) % g
        cz = cell // (g * g)
        step = size_by_level[level[nid]] / g
        x = bmin[nid, 0] + (cx + 0.5) * step
        y = bmin[nid, 1] + (cy + 0.5) * step
        z = bmin[nid, 2] + (cz + 0.5) * step
        c = count[nid]
        if stamp[nid] != pass_no:
            stamp[nid] = pass_no
            cid = chunk_head[nid]
            for _ in range(c // cap):
                cid = chunk_next[cid]
            cursor[nid] = cid
        cid = cursor[nid]
        rel = c % cap
        base4 = (payload_off[cid] >> 2) + 4 * rel
        f32v[base4] = x
        f32v[base4 + 1] = y
        f32v[base4 + 2] = z
        u32v[base4 + 3] = brgba[i]
        chunk_occ[cid] += 1
        count[nid] = c + 1
        if rel + 1 == cap:
            cursor[nid] = chunk_next[cid]


@njit(cache=True)
def collect_allocs(
    count, pending, chunk_count, cap, touched_a, na, touched_b, nb,
    out_node, out_need, stamp, pass_no,
):
    """List (node, extra chunks) for every touched node short on chunks.

    ``stamp`` guards against ids appearing in both touched lists so each
    node's shortfall is reported once.
    """
    n_out = 0
    for src in range(2):
        t = touched_a if src == 0 else touched_b
        nt = na if src == 0 else nb
        for i in range(nt):
            nid = t[i]
            if stamp[nid] == pass_no:
                continue
            stamp[nid] = pass_no
            need = (count[nid] + pending[nid] + cap - 1) // cap - chunk_count[nid]
            if need > 0:
                out_node[n_out] = nid
                out_need[n_out] = need
                n_out += 1
    return n_out


@njit(cache=True)
def clear_marks(pending, final, touched_a, na, touched_b, nb):
    """Reset per-cycle pending and final flags on every touched node."""
    for i in range(na):
        pending[touched_a[i]] = 0
        final[touched_a[i]] = False
    for i in range(nb):
        pending[touched_b[i]] = 0


@njit(cache=True)
def rasterize_nodes(
    vis, chunk_head, chunk_next, chunk_occ, payload_off, cap, f32v, u32v, cam, fb
):
    """Splat every sample of the listed nodes into the packed framebuffer.

    ``cam`` layout: pos[0:3], right[3:6], up[6:9], fwd[9:12], tan_half[12],
    aspect[13], near[14], far[15], width[16], height[17].  Framebuffer cells
    hold ``float32 depth bits << 32 | rgba``; smaller wins, so the closest
    sample survives and depth ties resolve to the lower color value.
    Returns the number of samples processed.
    """
    w = np.int64(cam[16])
    h = np.int64(cam[17])
    tmpf = np.empty(1, np.float32)
    tmpu = tmpf.view(np.uint32)
    touched = 0
    for k in range(vis.shape[0]):
        cid = chunk_head[vis[k]]
        while cid != NO_CHUNK:
            base4 = payload_off[cid] >> 2
            occ = chunk_occ[cid]
            for s in range(occ):
                x = np.float64(f32v[base4 + 4 * s])
                y = np.float64(f32v[base4 + 4 * s + 1])
                z = np.float64(f32v[base4 + 4 * s + 2])
                rgba = u32v[base4 + 4 * s + 3]
                touched += 1
                dx = x - cam[0]
                dy = y - cam[1]
                dz = z - cam[2]
                zv = dx * cam[9] + dy * cam[10] + dz * cam[11]
                if zv <= cam[14] or zv >= cam[15]:
                    continue
                xv = dx * cam[3] + dy * cam[4] + dz * cam[5]
                yv = dx * cam[6] + dy * cam[7] + dz * cam[8]
                ndc_x = xv / (zv * cam[12] * cam[13])
                ndc_y = yv / (zv * cam[12])
                px = np.int64(np.floor((ndc_x + 1.0) * 0.5 * cam[16]))
                py = np.int64(np.floor((1.0 - ndc_y) * 0.5 * cam[17]))
                if px < 0 or px >= w or py < 0 or py >= h:
                    continue
                d01 = cam[15] * (zv - cam[14]) / ((cam[15] - cam[14]) * zv)
                tmpf[0] = d01
                packed = (np.uint64(tmpu[0]) << np.uint64(32)) | np.uint64(rgba)
                idx = py * w + px
                if packed < fb[idx]:
                    fb[idx] = packed
            cid = chunk_next[cid]
    return touched


@njit(cache=True)
def rasterize_points(xyz, rgba, cam, fb):
    """Splat a flat point array; same projection and packing as above."""
    w = np.int64(cam[16])
    h = np.int64(cam[17])
    tmpf = np.empty(1, np.float32)
    tmpu = tmpf.view(np.uint32)
    for i in range(xyz.shape[0]):
        x = np.float64(xyz[i, 0])
        y = np.float64(xyz[i, 1])
        z = np.float64(xyz[i, 2])
        dx = x - cam[0]
        dy = y - cam[1]
        dz = z - cam[2]
        zv = dx * cam[9] + dy * cam[10] + dz * cam[11]
        if zv <= cam[14] or zv >= cam[15]:
            continue
        xv = dx * cam[3] + dy * cam[4] + dz * cam[5]
        yv = dx * cam[6] + dy * cam[7] + dz * cam[8]
        ndc_x = xv / (zv * cam[12] * cam[13])
        ndc_y = yv / (zv * cam[12])
        px = np.int64(np.floor((ndc_x + 1.0) * 0.5 * cam[16]))
        py = np.int64(np.floor((1.0 - ndc_y) * 0.5 * cam[17]))
        if px < 0 or px >= w or py < 0 or py >= h:
            continue
        d01 = cam[15] * (zv - cam[14]) / ((cam[15] - cam[14]) * zv)
        tmpf[0] = d01
        packed = (np.uint64(tmpu[0]) << np.uint64(32)) | np.uint64(rgba[i])
        idx = py * w + px
        if packed < fb[idx]:
            fb[idx] = packed
