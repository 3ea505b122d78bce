"""Independent scalar reference implementations used as test oracles.

These are written with plain Python loops and ``math`` so that they share no
code path with the vectorised package implementation they check.
"""
import math


def project(fx, fy, cx, cy, X, Y, Z):
    # K @ (X, Y, Z) then divide by the third component
    x = fx * X + cx * Z
    y = fy * Y + cy * Z
    return x / Z, y / Z


def unproject(fx, fy, cx, cy, u, v, d):
    return (u - cx) * d / fx, (v - cy) * d / fy, d


def matvec(R, p):
    return [sum(R[i][k] * p[k] for k in range(3)) for i in range(3)]


def rigid(R, t, p):
    q = matvec(R, p)
    return [q[i] + t[i] for i in range(3)]


def sub(a, b):
    return [a[i] - b[i] for i in range(3)]


def dot(a, b):
    return sum(a[i] * b[i] for i in range(3))


def cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def norm(a):
    return math.sqrt(dot(a, a))


def blend(c_pre, w_pre, c_obs, w):
    c = [(c_pre[k] * w_pre + w * c_obs[k]) / (w_pre + w) for k in range(3)]
    return c, w_pre + w * (1 - w_pre)


def gradient_magnitude(gray):
    """Brute force over interior pixels of a list-of-rows grayscale image."""
    h, w = len(gray), len(gray[0])
    total, count = 0.0, 0
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            gx = (gray[y][x + 1] - gray[y][x - 1]) / 2.0
            gy = (gray[y + 1][x] - gray[y - 1][x]) / 2.0
            total += math.hypot(gx, gy)
            count += 1
    return total / count


def luminance(rgb):
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]


def bilinear(img, x, y):
    """img[row][col] -> list of channels, clamped to pixel centres."""
    h, w = len(img), len(img[0])
    x = min(max(x, 0.0), w - 1)
    y = min(max(y, 0.0), h - 1)
    x0 = min(int(math.floor(x)), w - 2)
    y0 = min(int(math.floor(y)), h - 2)
    fx, fy = x - x0, y - y0
    out = []
    for c in range(len(img[0][0])):
        top = img[y0][x0][c] * (1 - fx) + img[y0][x0 + 1][c] * fx
        bot = img[y0 + 1][x0][c] * (1 - fx) + img[y0 + 1][x0 + 1][c] * fx
        out.append(top * (1 - fy) + bot * fy)
    return out


def integrate_depth(tsdf, weight, lower, pitch, trunc, max_w, depth, intr, R, t):
    """Per-voxel loop over nested lists ``tsdf[i][j][k]``; updates in place."""
    fx, fy, cx, cy, W, H = intr
    n = len(tsdf)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                p = [lower[0] + (i + 0.5) * pitch, lower[1] + (j + 0.5) * pitch, lower[2] + (k + 0.5) * pitch]
                X, Y, Z = rigid(R, t, p)
                if Z <= 0:
                    continue
                x, y = project(fx, fy, cx, cy, X, Y, Z)
                u, v = math.floor(x + 0.5), math.floor(y + 0.5)
                if not (0 <= u < W and 0 <= v < H):
                    continue
                d = float(depth[v][u])
                if d <= 0 or d - Z < -trunc:
                    continue
                obs = min((d - Z) / trunc, 1.0)
                wp = weight[i][j][k]
                tsdf[i][j][k] = (tsdf[i][j][k] * wp + obs) / (wp + 1)
                weight[i][j][k] = min(wp + 1, max_w)


def integrate_color(color, weight, lower, pitch, sigma, gate, depth, hd, dintr, hintr, R, t, Rc, tc):
    """Full scan over every colour voxel following the update steps literally."""
    fx, fy, cx, cy, W, H = dintr
    hfx, hfy, hcx, hcy, HW, HH = hintr
    n = len(weight)
    updated = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                p = [lower[0] + (i + 0.5) * pitch, lower[1] + (j + 0.5) * pitch, lower[2] + (k + 0.5) * pitch]
                pc = rigid(R, t, p)
                if pc[2] <= 0:
                    continue
                x, y = project(fx, fy, cx, cy, *pc)
                u, v = math.floor(x + 0.5), math.floor(y + 0.5)
                if not (0 <= u < W and 0 <= v < H):
                    continue
                d = float(depth[v][u])
                if d <= 0:
                    continue
                q = unproject(fx, fy, cx, cy, u, v, d)
                if norm(sub(pc, q)) > sigma:
                    continue
                if u + 1 >= W or v + 1 >= H:
                    continue
                dr, dd = float(depth[v][u + 1]), float(depth[v + 1][u])
                if dr <= 0 or dd <= 0:
                    continue
                nrm = cross(sub(unproject(fx, fy, cx, cy, u + 1, v, dr), q), sub(unproject(fx, fy, cx, cy, u, v + 1, dd), q))
                nl = norm(nrm)
                if nl == 0:
                    continue
                wgt = min(dot(nrm, q) / (nl * norm(q)), 1.0)
                wp = weight[i][j][k]
                if not (wgt > 0 and wgt > gate * wp):
                    continue
                P = unproject(fx, fy, cx, cy, x, y, pc[2])
                Ph = rigid(Rc, tc, P)
                if Ph[2] <= 0:
                    continue
                xh, yh = project(hfx, hfy, hcx, hcy, *Ph)
                if not (0 <= xh <= HW - 1 and 0 <= yh <= HH - 1):
                    continue
                obs = bilinear(hd, xh, yh)
                c, w_new = blend(color[i][j][k], wp, obs, wgt)
                color[i][j][k] = [min(max(ch, 0.0), 255.0) for ch in c]
                weight[i][j][k] = min(max(w_new, 0.0), 1.0)
                updated.append((i, j, k))
    return updated


def plane_sq_dist(normal, point, v):
    nl = norm(normal)
    return (dot(normal, sub(v, point)) / nl) ** 2


def point_in_triangle(px, py, a, b, c):
    def edge(p, q):
        return (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
    e0, e1, e2 = edge(a, b), edge(b, c), edge(c, a)
    return (e0 >= 0 and e1 >= 0 and e2 >= 0) or (e0 <= 0 and e1 <= 0 and e2 <= 0)
