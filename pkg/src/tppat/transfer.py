"""Piecewise-linear transfer of nodal fields between meshes.

Used to break the inversion crime: data generated on one mesh can be
interpolated onto a different reconstruction mesh. Each target node is located
in a source triangle (with a uniform bucket grid to keep the search fast) and
the field is evaluated with barycentric weights. Target points that fall
marginally outside the source mesh, from floating-point boundary jitter, are
assigned to the triangle with the least barycentric violation.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .fem import as_field
from .mesh import Mesh

_EDGE_TOL = 1e-12


class _TriangleLocator:
    def __init__(self, mesh: Mesh, buckets_per_side: int | None = None):
        self.mesh = mesh
        t = mesh.triangles
        p = mesh.nodes
        self.a = p[t[:, 0]]
        self.b = p[t[:, 1]]
        self.c = p[t[:, 2]]
        det = (self.b[:, 0] - self.a[:, 0]) * (self.c[:, 1] - self.a[:, 1]) \
            - (self.c[:, 0] - self.a[:, 0]) * (self.b[:, 1] - self.a[:, 1])
        self.det = det

        self.lo = p.min(axis=0)
        self.hi = p.max(axis=0)
        if buckets_per_side is None:
            buckets_per_side = max(1, int(np.sqrt(len(t) / 2.0)))
        self.nb = buckets_per_side
        self.buckets = {}
        span = np.maximum(self.hi - self.lo, 1e-300)
        tmin = np.minimum(np.minimum(self.a, self.b), self.c)
        tmax = np.maximum(np.maximum(self.a, self.b), self.c)
        i0 = np.clip(((tmin - self.lo) / span * self.nb).astype(int), 0, self.nb - 1)
        i1 = np.clip(((tmax - self.lo) / span * self.nb).astype(int), 0, self.nb - 1)
        for k in range(len(t)):
            for bx in range(i0[k, 0], i1[k, 0] + 1):
                for by in range(i0[k, 1], i1[k, 1] + 1):
                    self.buckets.setdefault((bx, by), []).append(k)

    def _bary(self, k: int, x: float, y: float):
        ax, ay = self.a[k]
        bx, by = self.b[k]
        cx, cy = self.c[k]
        l1 = ((by - cy) * (x - cx) + (cx - bx) * (y - cy)) / self.det[k]
        l2 = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy)) / self.det[k]
        return l1, l2, 1.0 - l1 - l2

    def locate(self, x: float, y: float):
        """Containing triangle and barycentric weights; nearest on miss."""
        span = np.maximum(self.hi - self.lo, 1e-300)
        bx = int(np.clip((x - self.lo[0]) / span[0] * self.nb, 0, self.nb - 1))
        by = int(np.clip((y - self.lo[1]) / span[1] * self.nb, 0, self.nb - 1))
        best = None
        best_violation = np.inf
        for k in self.buckets.get((bx, by), []):
            lams = self._bary(k, x, y)
            violation = -min(lams)
            if violation <= _EDGE_TOL:
                return k, lams
            if violation < best_violation:
                best_violation = violation
                best = (k, lams)
        if best is None:                       # empty bucket: scan everything
            for k in range(len(self.det)):
                lams = self._bary(k, x, y)
                violation = -min(lams)
                if violation <= _EDGE_TOL:
                    return k, lams
                if violation < best_violation:
                    best_violation = violation
                    best = (k, lams)
        if best is None or best_violation > 1e-6:
            raise ValidationError(
                f"point ({x:g}, {y:g}) lies outside the source mesh")
        return best


def transfer_field(source_mesh: Mesh, target_mesh: Mesh, values,
                   locator: _TriangleLocator | None = None) -> np.ndarray:
    """Interpolate a nodal field from source_mesh onto target_mesh nodes.

    Exact for target nodes that coincide with source nodes (hence the
    identity on matching meshes) and exact for fields that are linear on each
    source triangle.
    """
    values = as_field(source_mesh, values)
    loc = locator or _TriangleLocator(source_mesh)
    out = np.empty(target_mesh.node_count)
    tris = source_mesh.triangles
    for i, (x, y) in enumerate(target_mesh.nodes):
        k, lams = loc.locate(float(x), float(y))
        # snap to a vertex when the point is one, for bitwise round trips
        jmax = int(np.argmax(lams))
        if lams[jmax] >= 1.0 - 1e-12:
            out[i] = values[tris[k, jmax]]
        else:
            out[i] = (lams[0] * values[tris[k, 0]]
                      + lams[1] * values[tris[k, 1]]
                      + lams[2] * values[tris[k, 2]])
    return out


def make_locator(mesh: Mesh) -> _TriangleLocator:
    """Reusable locator when transferring several fields between the same meshes."""
    return _TriangleLocator(mesh)
