"""Numba kernels for heightfield shadow rays.

Rays are marched in camera space. A sample is occluded when the ray point lies
farther from the camera than the depth surface at its projection. Pixel
accumulation order is fixed, so results do not depend on thread count.
"""
import numpy as np
from numba import njit, prange


# neighbors whose depths differ by more than this many pixel footprints (about
# tan(80 deg) along a diagonal) straddle a silhouette and are not interpolated
JUMP_FOOTPRINTS = 8.0


@njit(cache=True, inline="always")
def _surface_depth(depth, valid, u, v, jump):
    h, w = depth.shape
    u0 = int(np.floor(u))
    v0 = int(np.floor(v))
    u0 = min(max(u0, 0), w - 2) if w > 1 else 0
    v0 = min(max(v0, 0), h - 2) if h > 1 else 0
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    if valid[v0, u0] and valid[v0, u1] and valid[v1, u0] and valid[v1, u1]:
        lo = min(min(depth[v0, u0], depth[v0, u1]), min(depth[v1, u0], depth[v1, u1]))
        hi = max(max(depth[v0, u0], depth[v0, u1]), max(depth[v1, u0], depth[v1, u1]))
        smooth = hi - lo <= jump * lo
    else:
        smooth = False
    if smooth:
        a = min(max(u - u0, 0.0), 1.0)
        b = min(max(v - v0, 0.0), 1.0)
        top = depth[v0, u0] * (1 - a) + depth[v0, u1] * a
        bot = depth[v1, u0] * (1 - a) + depth[v1, u1] * a
        return top * (1 - b) + bot * b
    ui = min(max(int(np.floor(u + 0.5)), 0), w - 1)
    vi = min(max(int(np.floor(v + 0.5)), 0), h - 1)
    if valid[vi, ui]:
        return depth[vi, ui]
    return -1.0


@njit(cache=True)
def visible(px, py, pz, nx, ny, nz, dx, dy, dz, depth, valid, fx, fy, cx, cy,
            step, bias, max_dist, plane, use_plane):
    h, w = depth.shape
    jump = JUMP_FOOTPRINTS / min(fx, fy)
    ox = px + bias * nx
    oy = py + bias * ny
    oz = pz + bias * nz
    if use_plane:
        denom = plane[0] * dx + plane[1] * dy + plane[2] * dz
        side = plane[0] * ox + plane[1] * oy + plane[2] * oz + plane[3]
        if denom < -1e-12 and side > -1e-9:
            return 0.0
    t = step
    while t <= max_dist:
        qx = ox + t * dx
        qy = oy + t * dy
        qz = oz + t * dz
        if qz <= 1e-9:
            return 1.0
        u = fx * qx / qz + cx
        v = fy * qy / qz + cy
        # the projected ray is a straight segment, so once it leaves the image it never returns
        if u < -0.5 or u > w - 0.5 or v < -0.5 or v > h - 0.5:
            return 1.0
        d = _surface_depth(depth, valid, u, v, jump)
        if d > 0.0 and qz > d:
            return 0.0
        t += step
    return 1.0


@njit(parallel=True, cache=True)
def accumulate_transfer(points, normals, valid, depth, dirs, group, weight, out,
                        fx, fy, cx, cy, step, bias, max_dist, plane, use_plane):
    """out[group[n], c, y, x] += weight[n, c] * max(0, n.d) * V for every direction n."""
    h, w = valid.shape
    n_dirs = dirs.shape[0]
    n_ch = weight.shape[1]
    for y in prange(h):
        for x in range(w):
            if not valid[y, x]:
                continue
            px, py, pz = points[y, x, 0], points[y, x, 1], points[y, x, 2]
            nx, ny, nz = normals[y, x, 0], normals[y, x, 1], normals[y, x, 2]
            for n in range(n_dirs):
                cosv = nx * dirs[n, 0] + ny * dirs[n, 1] + nz * dirs[n, 2]
                if cosv <= 0.0:
                    continue
                vis = visible(px, py, pz, nx, ny, nz, dirs[n, 0], dirs[n, 1], dirs[n, 2],
                              depth, valid, fx, fy, cx, cy, step, bias, max_dist, plane, use_plane)
                if vis > 0.0:
                    g = group[n]
                    for c in range(n_ch):
                        out[g, c, y, x] += weight[n, c] * cosv


@njit(parallel=True, cache=True)
def transfer_rows(points, normals, valid, depth, pix_y, pix_x, dirs, out,
                  fx, fy, cx, cy, step, bias, max_dist, plane, use_plane):
    """out[i, n] = max(0, n.d) * V for the listed pixels."""
    for i in prange(pix_y.shape[0]):
        y = pix_y[i]
        x = pix_x[i]
        px, py, pz = points[y, x, 0], points[y, x, 1], points[y, x, 2]
        nx, ny, nz = normals[y, x, 0], normals[y, x, 1], normals[y, x, 2]
        for n in range(dirs.shape[0]):
            cosv = nx * dirs[n, 0] + ny * dirs[n, 1] + nz * dirs[n, 2]
            if cosv <= 0.0:
                out[i, n] = 0.0
                continue
            out[i, n] = cosv * visible(px, py, pz, nx, ny, nz, dirs[n, 0], dirs[n, 1], dirs[n, 2],
                                       depth, valid, fx, fy, cx, cy, step, bias, max_dist,
                                       plane, use_plane)
