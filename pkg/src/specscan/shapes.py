"""Procedural test meshes: sphere, cylinder, box, flat sheet and the dome-shaped
"mirror" used by the end-to-end run."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def _grid_faces(rows: int, cols: int, wrap: bool, offset: int = 0) -> list:
    faces = []
    ncol = cols if wrap else cols - 1
    for i in range(rows - 1):
        for j in range(ncol):
            a = offset + i * cols + j
            b = offset + i * cols + (j + 1) % cols
            c = offset + (i + 1) * cols + (j + 1) % cols
            d = offset + (i + 1) * cols + j
            faces += [(a, b, c), (a, c, d)]
    return faces


def _close_ring(center_idx: int, ring: list[int], flip: bool) -> list:
    faces = []
    for j in range(len(ring)):
        a, b = ring[j], ring[(j + 1) % len(ring)]
        faces.append((center_idx, b, a) if flip else (center_idx, a, b))
    return faces


def uv_sphere(radius: float = 100.0, n_lat: int = 32, n_lon: int = 64, center=(0, 0, 0)) -> TriangleMesh:
    verts = [(0.0, 0.0, radius)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((radius * np.sin(th) * np.cos(ph), radius * np.sin(th) * np.sin(ph), radius * np.cos(th)))
    verts.append((0.0, 0.0, -radius))
    faces = _grid_faces(n_lat - 1, n_lon, wrap=True, offset=1)
    faces += _close_ring(0, list(range(1, 1 + n_lon)), flip=False)
    last = len(verts) - 1
    faces += _close_ring(last, list(range(last - n_lon, last)), flip=True)
    return TriangleMesh(np.array(verts) + np.asarray(center, float), np.array(faces))


def cylinder(radius: float = 50.0, height: float = 120.0, n_around: int = 64, n_up: int = 16,
             capped: bool = True) -> TriangleMesh:
    verts = []
    for i in range(n_up + 1):
        z = -height / 2 + height * i / n_up
        for j in range(n_around):
            ph = 2 * np.pi * j / n_around
            verts.append((radius * np.cos(ph), radius * np.sin(ph), z))
    faces = _grid_faces(n_up + 1, n_around, wrap=True)
    if capped:
        bot = len(verts)
        verts.append((0.0, 0.0, -height / 2))
        top = len(verts)
        verts.append((0.0, 0.0, height / 2))
        faces += _close_ring(bot, list(range(n_around)), flip=True)
        faces += _close_ring(top, list(range(n_up * n_around, (n_up + 1) * n_around)), flip=False)
    return TriangleMesh(np.array(verts), np.array(faces))


def box(size=(120.0, 80.0, 60.0)) -> TriangleMesh:
    sx, sy, sz = (s / 2 for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    f = [(0, 2, 3), (0, 3, 1), (4, 5, 7), (4, 7, 6), (0, 1, 5), (0, 5, 4),
         (2, 6, 7), (2, 7, 3), (0, 4, 6), (0, 6, 2), (1, 3, 7), (1, 7, 5)]
    return TriangleMesh(v, np.array(f))


def sheet(size_x: float = 100.0, size_y: float = 100.0, nx: int = 10, ny: int = 10, z: float = 0.0) -> TriangleMesh:
    xs = np.linspace(-size_x / 2, size_x / 2, nx + 1)
    ys = np.linspace(-size_y / 2, size_y / 2, ny + 1)
    verts = [(x, y, z) for x in xs for y in ys]
    faces = _grid_faces(nx + 1, ny + 1, wrap=False)
    return TriangleMesh(np.array(verts), np.array(faces))


def mirror(semi_x: float = 60.0, semi_y: float = 38.0, height: float = 22.0,
           n_rings: int = 24, n_sectors: int = 96) -> TriangleMesh:
    """Closed convex dome: paraboloid cap z = h(1 - (x/a)^2 - (y/b)^2) over a
    flat elliptical base at z = 0."""
    top = [(0.0, 0.0, height)]
    for i in range(1, n_rings + 1):
        rho = i / n_rings
        z = height * (1.0 - rho * rho)
        for j in range(n_sectors):
            ph = 2 * np.pi * j / n_sectors
            top.append((semi_x * rho * np.cos(ph), semi_y * rho * np.sin(ph), z))
    faces = _close_ring(0, list(range(1, 1 + n_sectors)), flip=False)
    faces += _grid_faces(n_rings, n_sectors, wrap=True, offset=1)
    verts = list(top)
    # base rings share the rim vertices of the cap
    rim = list(range(1 + (n_rings - 1) * n_sectors, 1 + n_rings * n_sectors))
    prev = rim
    base_rings = max(4, n_rings // 3)
    for i in range(base_rings - 1, 0, -1):
        rho = i / base_rings
        ring = []
        for j in range(n_sectors):
            ph = 2 * np.pi * j / n_sectors
            ring.append(len(verts))
            verts.append((semi_x * rho * np.cos(ph), semi_y * rho * np.sin(ph), 0.0))
        for j in range(n_sectors):
            a, b = prev[j], prev[(j + 1) % n_sectors]
            c, d = ring[(j + 1) % n_sectors], ring[j]
            faces += [(a, c, b), (a, d, c)]
        prev = ring
    center = len(verts)
    verts.append((0.0, 0.0, 0.0))
    faces += _close_ring(center, prev, flip=True)
    return TriangleMesh(np.array(verts), np.array(faces))
