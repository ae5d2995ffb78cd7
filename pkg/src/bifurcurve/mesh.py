"""Conforming meshes on intervals, squares, disks and annuli.

Triangulations support newest-vertex bisection with red/green/blue style
closure and history-based coarsening.  A triangle is stored as a vertex
triple ``(a, b, c)`` in counterclockwise order whose *reference edge* is
``(a, b)``; the third vertex ``c`` is the newest one.  Bisecting at the
midpoint ``m`` of the reference edge produces the children ``(c, a, m)``
and ``(b, c, m)``, which again follow the convention.  One-dimensional
meshes use ``(left, right)`` vertex pairs and bisect at the interval
midpoint.

Meshes are immutable once built; ``refine`` and ``coarsen`` return new
generations.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

ANNULUS_SECTORS = 64  # angular vertex count of annulus seed meshes

_CIRCLE_TOL = 1e-12


class MeshError(Exception):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Domain descriptor. Dirichlet-zero boundary everywhere."""

    kind: str  # "interval" | "square" | "disk" | "annulus"
    a: float = 0.0
    b: float = 1.0
    r1: float = 0.0  # inner radius for the annulus

    def __post_init__(self):
        if self.kind not in ("interval", "square", "disk", "annulus"):
            raise MeshError(f"unknown domain kind {self.kind!r}")
        if self.kind == "interval" and not self.a < self.b:
            raise MeshError("interval requires a < b")
        if self.kind == "annulus" and not 0.0 < self.r1 < 1.0:
            raise MeshError("annulus requires inner radius in (0, 1)")

    @staticmethod
    def interval(a: float, b: float) -> "DomainSpec":
        return DomainSpec("interval", a=a, b=b)

    @staticmethod
    def square() -> "DomainSpec":
        return DomainSpec("square")

    @staticmethod
    def disk() -> "DomainSpec":
        return DomainSpec("disk")

    @staticmethod
    def annulus(r1: float) -> "DomainSpec":
        return DomainSpec("annulus", r1=r1)

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation (2D) or interval partition (1D).

    ``elements`` has shape (nt, 3) in 2D and (nt, 2) in 1D.  ``level``
    records the bisection depth of each element relative to the initial
    mesh and, together with the vertex-ordering convention, is the whole
    refinement history needed for coarsening.
    """

    generation: int
    domain: DomainSpec
    vertices: np.ndarray  # (nv, dim) float
    elements: np.ndarray  # (nt, 3) or (nt, 2) int
    level: np.ndarray  # (nt,) int
    boundary: np.ndarray  # (nv,) bool

    def __post_init__(self):
        for arr in (self.vertices, self.elements, self.level, self.boundary):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary


@dataclass(frozen=True)
class Field:
    """Nodal coefficients bound to one mesh generation."""

    mesh_generation: int
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def bound_to(self, mesh: Mesh) -> bool:
        return self.mesh_generation == mesh.generation and len(self.values) == mesh.n_vertices


def zero_field(mesh: Mesh) -> Field:
    return Field(mesh.generation, np.zeros(mesh.n_vertices))


def make_field(mesh: Mesh, values) -> Field:
    values = np.asarray(values, dtype=float).copy()
    if len(values) != mesh.n_vertices:
        raise MeshError("field length does not match vertex count")
    return Field(mesh.generation, values)


# ---------------------------------------------------------------------------
# generation


def generate_domain(spec: DomainSpec, initial_resolution: int) -> Mesh:
    """Build the seed mesh of a domain at the requested resolution.

    Resolution means: number of elements (interval), cells per side
    (square), radial rings (disk), or radial layers (annulus).  Circular
    boundaries are approximated by polygons whose vertices lie exactly on
    the circle; the annulus uses 64 angular points per ring at half-step
    angular offsets and logarithmically spaced radii so that all cells
    are near-similar and the mesh is invariant under rotations by 2*pi/64.
    """
    if initial_resolution < 1:
        raise MeshError("initial_resolution must be >= 1")
    n = int(initial_resolution)
    if spec.kind == "interval":
        verts = np.linspace(spec.a, spec.b, n + 1)[:, None]
        elems = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        return _finalize(spec, verts, elems)
    if spec.kind == "square":
        return _finalize(spec, *_square_seed(n))
    if spec.kind == "disk":
        return _finalize(spec, *_disk_seed(n))
    if spec.kind == "annulus":
        return _finalize(spec, *_annulus_seed(spec.r1, n))
    raise MeshError(f"unknown domain kind {spec.kind!r}")


def _square_seed(n):
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + n + 1
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return verts, np.array(tris, dtype=int)


def _ring_points(radius, count, offset):
    ang = 2.0 * np.pi * (np.arange(count) + offset) / count
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def _strip(inner_ids, outer_ids, tris):
    """Triangulate the annular strip between two concentric rings.

    Angular positions are compared as exact fractions of a turn so the
    pattern repeats identically in every symmetry sector.
    """
    ni, no = len(inner_ids), len(outer_ids)
    i = j = 0
    while i < ni or j < no:
        next_in = Fraction(i + 1, ni)
        next_out = Fraction(j + 1, no)
        if j < no and (i == ni or next_out <= next_in):
            tris.append((outer_ids[j % no], outer_ids[(j + 1) % no], inner_ids[i % ni]))
            j += 1
        else:
            tris.append((inner_ids[(i + 1) % ni], inner_ids[i % ni], outer_ids[j % no]))
            i += 1


def _disk_seed(n):
    # rings of 8*i points keep cells close to unit aspect everywhere
    verts = [np.zeros((1, 2))]
    ring_ids = []
    start = 1
    for i in range(1, n + 1):
        m = 8 * i
        verts.append(_ring_points(i / n, m, 0.0))
        ring_ids.append(np.arange(start, start + m))
        start += m
    verts = np.vstack(verts)
    tris = []
    first = ring_ids[0]
    for j in range(len(first)):
        tris.append((first[j], first[(j + 1) % len(first)], 0))
    for i in range(len(ring_ids) - 1):
        _strip(ring_ids[i], ring_ids[i + 1], tris)
    return verts, np.array(tris, dtype=int)


def _annulus_seed(r1, n):
    m = ANNULUS_SECTORS
    radii = np.exp(np.log(r1) * (1.0 - np.arange(n + 1) / n))
    radii[0], radii[-1] = r1, 1.0
    verts = np.vstack([_ring_points(r, m, 0.5) for r in radii])
    tris = []
    for i in range(n):
        lo, hi = i * m, (i + 1) * m
        for j in range(m):
            a, b = lo + j, lo + (j + 1) % m
            c, d = hi + j, hi + (j + 1) % m
            tris.append((a, b, d))
            tris.append((a, d, c))
    return verts, np.array(tris, dtype=int)


def _finalize(spec, verts, elems):
    verts = np.asarray(verts, dtype=float)
    elems = np.asarray(elems, dtype=int)
    if spec.dim == 2:
        elems = _orient_ccw(verts, elems)
        elems = _init_reference_edges(verts, elems)
    boundary = _boundary_vertices(verts, elems)
    return Mesh(0, spec, verts, elems, np.zeros(len(elems), dtype=int), boundary)


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _orient_ccw(verts, tris):
    p = verts[tris]
    cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = cross < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [1, 0, 2]]
    return tris


def _init_reference_edges(verts, tris):
    """Rotate each triangle so its longest edge comes first.

    Near-ties are resolved toward the edge whose opposite vertex has the
    lowest index, which keeps symmetric meshes symmetric.
    """
    p = verts[tris]
    lens = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=1,
    )
    out = tris.copy()
    lmax = lens.max(axis=1)
    for t in range(len(tris)):
        cand = np.nonzero(lens[t] >= lmax[t] * (1.0 - 1e-12))[0]
        # opposite vertex of local edge k is vertex (k+2) % 3
        k = min(cand, key=lambda e: tris[t, (e + 2) % 3])
        if k == 1:
            out[t] = tris[t, [1, 2, 0]]
        elif k == 2:
            out[t] = tris[t, [2, 0, 1]]
    return out


# ---------------------------------------------------------------------------
# edge bookkeeping


def edge_table(mesh: Mesh):
    """Unique edges and incidence of a triangulation.

    Returns (edges, tri2edge, counts): edges is (ne, 2) with sorted vertex
    pairs, tri2edge maps local edges (a,b),(b,c),(c,a) to edge ids, counts
    is the number of incident elements per edge.
    """
    t = mesh.elements
    raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    raw = np.sort(raw, axis=1)
    edges, inv, counts = np.unique(raw, axis=0, return_inverse=True, return_counts=True)
    tri2edge = inv.reshape(3, -1).T
    return edges, tri2edge, counts


def _boundary_vertices(verts, elems):
    nv = len(verts)
    flags = np.zeros(nv, dtype=bool)
    if elems.shape[1] == 2:
        idx, counts = np.unique(elems.ravel(), return_counts=True)
        flags[idx[counts == 1]] = True
        return flags
    raw = np.concatenate([elems[:, [0, 1]], elems[:, [1, 2]], elems[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inv, counts = np.unique(raw_sorted, axis=0, return_inverse=True, return_counts=True)
    bnd = edges[counts == 1]
    flags[bnd.ravel()] = True
    return flags


def element_volumes(mesh: Mesh) -> np.ndarray:
    """Element lengths (1D) or areas (2D)."""
    p = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        return np.abs(p[:, 1, 0] - p[:, 0, 0])
    return 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def domain_volume(mesh: Mesh) -> float:
    """Length of the partition (1D) or area of the boundary polygon (2D).

    In 2D the directed boundary edges of the (counterclockwise) elements
    give the polygon area by the shoelace formula, holes included.
    """
    if mesh.dim == 1:
        xs = mesh.vertices[:, 0]
        return float(xs.max() - xs.min())
    t = mesh.elements
    raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(raw, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    directed = raw[counts[inv] == 1]
    p, q = mesh.vertices[directed[:, 0]], mesh.vertices[directed[:, 1]]
    return float(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def min_angle(mesh: Mesh) -> float:
    """Smallest interior angle over all triangles, in radians."""
    p = mesh.vertices[mesh.elements]
    angs = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angs.append(np.arccos(np.clip(c, -1.0, 1.0)))
    return float(np.min(angs))


# ---------------------------------------------------------------------------
# refinement


def _project_boundary_point(spec: DomainSpec, midpoint, endpoint):
    """Put a new boundary vertex onto the exact circle of its edge."""
    r_end = np.linalg.norm(endpoint)
    if spec.kind == "disk":
        target = 1.0
    else:
        target = spec.r1 if abs(r_end - spec.r1) < abs(r_end - 1.0) else 1.0
    r_mid = np.linalg.norm(midpoint)
    if r_mid == 0.0:
        return midpoint
    return midpoint * (target / r_mid)


def refine(mesh: Mesh, marked) -> Mesh:
    """Bisect the marked elements, propagating so no hanging node remains.

    Every marked element has its reference edge bisected; closure marks
    the reference edge of any element with another marked edge, iterated
    to a fixpoint.  Elements then split once, twice or three times
    depending on how many of their edges carry midpoints.
    """
    marked = np.asarray(sorted(set(int(i) for i in marked)), dtype=int)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise MeshError("marked element index out of range")
    if mesh.dim == 1:
        return _refine_1d(mesh, marked)
    return _refine_2d(mesh, marked)


def _refine_1d(mesh, marked):
    verts = [mesh.vertices[:, 0].tolist()]
    xs = list(mesh.vertices[:, 0])
    elems = []
    levels = []
    is_marked = np.zeros(mesh.n_elements, dtype=bool)
    is_marked[marked] = True
    for e in range(mesh.n_elements):
        a, b = mesh.elements[e]
        if is_marked[e]:
            m = len(xs)
            xs.append(0.5 * (xs[a] + xs[b]))
            elems += [(a, m), (m, b)]
            levels += [mesh.level[e] + 1] * 2
        else:
            elems.append((a, b))
            levels.append(mesh.level[e])
    verts = np.array(xs)[:, None]
    elems = np.array(elems, dtype=int)
    return Mesh(mesh.generation + 1, mesh.domain, verts, elems,
                np.array(levels, dtype=int), _boundary_vertices(verts, elems))


def _refine_2d(mesh, marked):
    edges, tri2edge, counts = edge_table(mesh)
    ne = len(edges)
    marked_edge = np.zeros(ne, dtype=bool)
    marked_edge[tri2edge[marked, 0]] = True

    # closure: an element with any marked edge must have its reference
    # edge marked; repeat until stable
    while True:
        has_any = marked_edge[tri2edge].any(axis=1)
        need = has_any & ~marked_edge[tri2edge[:, 0]]
        if not need.any():
            break
        marked_edge[tri2edge[need, 0]] = True

    curved = mesh.domain.kind in ("disk", "annulus")
    new_pts = []
    midpoint_of = np.full(ne, -1, dtype=int)
    nv = mesh.n_vertices
    for e in np.nonzero(marked_edge)[0]:
        a, b = edges[e]
        mp = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        if curved and counts[e] == 1 and mesh.boundary[a] and mesh.boundary[b]:
            mp = _project_boundary_point(mesh.domain, mp, mesh.vertices[a])
        midpoint_of[e] = nv + len(new_pts)
        new_pts.append(mp)
    verts = np.vstack([mesh.vertices, np.array(new_pts)]) if new_pts else mesh.vertices.copy()

    tris = []
    levels = []

    def emit(a, b, c, lv):
        tris.append((a, b, c))
        levels.append(lv)

    for t in range(mesh.n_elements):
        a, b, c = mesh.elements[t]
        lv = mesh.level[t]
        e0, e1, e2 = tri2edge[t]
        if not marked_edge[e0]:
            emit(a, b, c, lv)
            continue
        m0 = midpoint_of[e0]
        if marked_edge[e2]:
            m2 = midpoint_of[e2]
            emit(m0, c, m2, lv + 2)
            emit(a, m0, m2, lv + 2)
        else:
            emit(c, a, m0, lv + 1)
        if marked_edge[e1]:
            m1 = midpoint_of[e1]
            emit(m0, b, m1, lv + 2)
            emit(c, m0, m1, lv + 2)
        else:
            emit(b, c, m0, lv + 1)

    elems = np.array(tris, dtype=int)
    return Mesh(mesh.generation + 1, mesh.domain, verts, elems,
                np.array(levels, dtype=int), _boundary_vertices(verts, elems))


# ---------------------------------------------------------------------------
# coarsening


def coarsen(mesh: Mesh, marked) -> Mesh:
    """Merge marked sibling pairs, undoing earlier bisections.

    A newest vertex is removed only when every element around it is a
    marked, unrefined child of the bisections that created it; infeasible
    merges are skipped.  The initial mesh is never coarsened further.
    """
    marked = set(int(i) for i in marked)
    if marked and (min(marked) < 0 or max(marked) >= mesh.n_elements):
        raise MeshError("marked element index out of range")
    if mesh.dim == 1:
        return _coarsen_1d(mesh, marked)
    return _coarsen_2d(mesh, marked)


def _coarsen_1d(mesh, marked):
    incident = {}
    for e in range(mesh.n_elements):
        for v in mesh.elements[e]:
            incident.setdefault(int(v), []).append(e)
    drop = set()
    merged = {}
    for v, elems in incident.items():
        if len(elems) != 2:
            continue
        ea, eb = elems
        if not (ea in marked and eb in marked):
            continue
        if mesh.level[ea] == 0 or mesh.level[ea] != mesh.level[eb]:
            continue
        # v must be the newest vertex of both intervals
        if not all(v > min(mesh.elements[e]) and v == max(mesh.elements[e]) for e in (ea, eb)):
            continue
        if any(e in drop for e in (ea, eb)):
            continue
        left = ea if mesh.elements[ea][1] == v else eb
        right = eb if left == ea else ea
        if not (mesh.elements[left][1] == v and mesh.elements[right][0] == v):
            continue
        merged[min(ea, eb)] = (
            (mesh.elements[left][0], mesh.elements[right][1]),
            mesh.level[ea] - 1,
            v,
        )
        drop.update((ea, eb))
    return _rebuild_after_merge(mesh, drop, merged)


def _coarsen_2d(mesh, marked):
    nv = mesh.n_vertices
    incident = [[] for _ in range(nv)]
    for e in range(mesh.n_elements):
        for v in mesh.elements[e]:
            incident[v].append(e)
    drop = set()
    merged = {}  # position of first child -> (parent triple, level, removed vertex)
    for v in range(nv):
        elems = incident[v]
        if len(elems) not in (2, 4):
            continue
        if not all(mesh.elements[e][2] == v for e in elems):
            continue
        if not all(e in marked for e in elems):
            continue
        if any(mesh.level[e] == 0 for e in elems):
            continue
        pairs = _match_siblings(mesh, elems, v, interior=len(elems) == 4)
        if pairs is None:
            continue
        if any(e in drop for e in elems):
            continue
        for first, second in pairs:
            ta, tb = mesh.elements[first], mesh.elements[second]
            parent = (int(ta[1]), int(tb[0]), int(ta[0]))
            merged[min(first, second)] = (parent, mesh.level[first] - 1, v)
            drop.update((first, second))
    return _rebuild_after_merge(mesh, drop, merged)


def _match_siblings(mesh, elems, v, interior):
    """Pair the children around a removable vertex, or None if impossible."""
    remaining = list(elems)
    pairs = []
    while remaining:
        first = remaining.pop(0)
        ta = mesh.elements[first]
        match = None
        for other in remaining:
            tb = mesh.elements[other]
            a_ok = tb[1] == ta[0]
            b_ok = ta[1] == tb[0]
            for fst, snd, ok in ((first, other, a_ok), (other, first, b_ok)):
                if not ok:
                    continue
                tf, ts = mesh.elements[fst], mesh.elements[snd]
                if mesh.level[fst] != mesh.level[snd]:
                    continue
                pa, pb = mesh.vertices[tf[1]], mesh.vertices[ts[0]]
                mid = 0.5 * (pa + pb)
                scale = np.linalg.norm(pa - pb) + 1.0
                if interior and np.linalg.norm(mid - mesh.vertices[v]) > 1e-9 * scale:
                    continue
                match = (other, fst, snd)
                break
            if match:
                break
        if match is None:
            return None
        other, fst, snd = match
        remaining.remove(other)
        pairs.append((fst, snd))
    return pairs


def _rebuild_after_merge(mesh, drop, merged):
    if not merged:
        return Mesh(mesh.generation + 1, mesh.domain, mesh.vertices.copy(),
                    mesh.elements.copy(), mesh.level.copy(), mesh.boundary.copy())
    removed_verts = {info[2] for info in merged.values()}
    keep_vert = np.ones(mesh.n_vertices, dtype=bool)
    keep_vert[list(removed_verts)] = False
    remap = -np.ones(mesh.n_vertices, dtype=int)
    remap[keep_vert] = np.arange(keep_vert.sum())

    elems = []
    levels = []
    for e in range(mesh.n_elements):
        if e in merged:
            parent, lv, _ = merged[e]
            elems.append([remap[i] for i in parent])
            levels.append(lv)
        elif e not in drop:
            elems.append([remap[i] for i in mesh.elements[e]])
            levels.append(mesh.level[e])
    verts = mesh.vertices[keep_vert]
    elems = np.array(elems, dtype=int)
    return Mesh(mesh.generation + 1, mesh.domain, verts, elems,
                np.array(levels, dtype=int), _boundary_vertices(verts, elems))


# ---------------------------------------------------------------------------
# interpolation


def _barycentric(verts, tri, points):
    a, b, c = verts[tri[0]], verts[tri[1]], verts[tri[2]]
    T = np.column_stack([b - a, c - a])
    try:
        lam = np.linalg.solve(T, (points - a).T).T
    except np.linalg.LinAlgError:
        return np.full((len(points), 3), -np.inf)
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def _neighbors(mesh):
    _, tri2edge, _ = edge_table(mesh)
    ne = tri2edge.max() + 1
    owner = -np.ones((ne, 2), dtype=int)
    for t in range(mesh.n_elements):
        for k in range(3):
            e = tri2edge[t, k]
            owner[e, 0 if owner[e, 0] < 0 else 1] = t
    nbr = -np.ones((mesh.n_elements, 3), dtype=int)
    for t in range(mesh.n_elements):
        for k in range(3):
            e = tri2edge[t, k]
            o = owner[e]
            nbr[t, k] = o[1] if o[0] == t else o[0]
    return nbr


def locate_points(mesh: Mesh, points: np.ndarray):
    """Find, for each point, a containing element and barycentric weights.

    Walks the triangulation from the previous hit; points that fall
    outside by roundoff (or across the annulus hole) are clamped onto the
    nearest element found by a full scan.
    """
    points = np.atleast_2d(points)
    nbr = _neighbors(mesh)
    elems = np.empty(len(points), dtype=int)
    weights = np.empty((len(points), 3))
    current = 0
    for i, x in enumerate(points):
        t = current
        found = False
        for _ in range(mesh.n_elements + 2):
            lam = _barycentric(mesh.vertices, mesh.elements[t], x[None, :])[0]
            if lam.min() >= -1e-12:
                found = True
                break
            # cross the edge opposite the most negative coordinate
            worst = int(np.argmin(lam))
            nxt = nbr[t, (worst + 1) % 3]  # local edge (k+1): opposite vertex k
            if nxt < 0:
                break
            t = nxt
        if not found:
            t, lam = _scan_nearest(mesh, x)
        elems[i] = t
        weights[i] = lam
        current = t
    return elems, weights


def _scan_nearest(mesh, x):
    lam = _barycentric_all(mesh, x)
    score = lam.min(axis=1)
    t = int(np.argmax(score))
    w = np.clip(lam[t], 0.0, None)
    s = w.sum()
    return t, (w / s if s > 0 else np.full(3, 1.0 / 3.0))


_bary_cache = {}


def _barycentric_all(mesh, x):
    key = (id(mesh), mesh.generation)
    cached = _bary_cache.get(key)
    if cached is None or cached[0] is not mesh:
        p = mesh.vertices[mesh.elements]
        d = p[:, 1:] - p[:, :1]
        det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
        inv = np.empty((mesh.n_elements, 2, 2))
        inv[:, 0, 0] = d[:, 1, 1] / det
        inv[:, 0, 1] = -d[:, 1, 0] / det
        inv[:, 1, 0] = -d[:, 0, 1] / det
        inv[:, 1, 1] = d[:, 0, 0] / det
        _bary_cache.clear()
        _bary_cache[key] = (mesh, p[:, 0], inv)
        cached = _bary_cache[key]
    _, origin, inv = cached
    rel = x[None, :] - origin
    lam12 = np.einsum("tij,tj->ti", inv, rel)
    return np.column_stack([1.0 - lam12.sum(axis=1), lam12])


def interpolate(fld: Field, old: Mesh, new: Mesh) -> Field:
    """Evaluate the P1 interpolant of ``fld`` at the vertices of ``new``."""
    if not fld.bound_to(old):
        raise MeshError("field is not bound to the given source mesh")
    if old.dim == 1:
        return _interpolate_1d(fld, old, new)
    elems, weights = locate_points(old, new.vertices)
    vals = np.einsum("pk,pk->p", fld.values[old.elements[elems]], weights)
    return Field(new.generation, vals)


def _interpolate_1d(fld, old, new):
    lefts = old.vertices[old.elements[:, 0], 0]
    order = np.argsort(lefts)
    lefts_sorted = lefts[order]
    xs = new.vertices[:, 0]
    idx = np.clip(np.searchsorted(lefts_sorted, xs, side="right") - 1, 0, len(order) - 1)
    el = order[idx]
    a = old.vertices[old.elements[el, 0], 0]
    b = old.vertices[old.elements[el, 1], 0]
    t = np.clip((xs - a) / (b - a), 0.0, 1.0)
    vals = (1 - t) * fld.values[old.elements[el, 0]] + t * fld.values[old.elements[el, 1]]
    return Field(new.generation, vals)


# ---------------------------------------------------------------------------
# snapshot text format


def write_snapshot(path, mesh: Mesh, fld: Field) -> None:
    """Write ``NV NT D`` header, coordinates, elements and nodal values."""
    if not fld.bound_to(mesh):
        raise MeshError("field is not bound to the mesh")
    lines = [f"{mesh.n_vertices} {mesh.n_elements} {mesh.dim}"]
    for p in mesh.vertices:
        lines.append(" ".join(f"{c:.17g}" for c in p))
    for el in mesh.elements:
        lines.append(" ".join(str(int(v)) for v in el))
    for v in fld.values:
        lines.append(f"{v:.17g}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path):
    """Parse a snapshot file back into raw (vertices, elements, values)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    nv, nt, dim = (int(x) for x in lines[0].split())
    if len(lines) != 1 + nv + nt + nv:
        raise MeshError(f"snapshot has {len(lines)} lines, expected {1 + 2 * nv + nt}")
    verts = np.array([[float(x) for x in ln.split()] for ln in lines[1 : 1 + nv]])
    elems = np.array([[int(x) for x in ln.split()] for ln in lines[1 + nv : 1 + nv + nt]])
    vals = np.array([float(ln) for ln in lines[1 + nv + nt :]])
    if verts.shape[1] != dim or elems.shape[1] != dim + 1:
        raise MeshError("snapshot dimensions are inconsistent")
    return verts, elems, vals


# ---------------------------------------------------------------------------
# symmetry orbits (annulus)


def rotation_orbits(mesh: Mesh, sectors: int = ANNULUS_SECTORS):
    """Group elements into orbits of the rotation by 2*pi/sectors.

    Returns an array mapping each element to an orbit id, or None when the
    mesh is not invariant under the rotation.  Used to keep adaptive
    refinement of annulus meshes exactly rotation-symmetric.
    """
    if mesh.dim != 2:
        return None
    ang = 2.0 * np.pi / sectors
    c, s = np.cos(ang), np.sin(ang)
    cen = mesh.vertices[mesh.elements].mean(axis=1)
    rot = np.column_stack([c * cen[:, 0] - s * cen[:, 1], s * cen[:, 0] + c * cen[:, 1]])
    scale = np.linalg.norm(mesh.vertices, axis=1).max()
    quantum = 1e-9 * scale
    key = np.round(cen / quantum).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(key)}
    succ = np.empty(mesh.n_elements, dtype=int)
    rkey = np.round(rot / quantum).astype(np.int64)
    for t in range(mesh.n_elements):
        j = lookup.get(tuple(rkey[t]))
        if j is None:
            # a centroid can land on a bucket boundary; probe the neighbors
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    j = lookup.get((rkey[t, 0] + dx, rkey[t, 1] + dy))
                    if j is not None and np.linalg.norm(cen[j] - rot[t]) < 3.0 * quantum:
                        break
                    j = None
                if j is not None:
                    break
        if j is None:
            return None
        succ[t] = j
    orbit = -np.ones(mesh.n_elements, dtype=int)
    nxt = 0
    for t in range(mesh.n_elements):
        if orbit[t] >= 0:
            continue
        j = t
        while orbit[j] < 0:
            orbit[j] = nxt
            j = succ[j]
        nxt += 1
    return orbit


def symmetrize_marks(mesh: Mesh, marked, mode: str = "union", sectors: int = ANNULUS_SECTORS):
    """Close a mark set under the mesh rotation group.

    ``union`` marks the whole orbit of any marked element (refinement);
    ``intersection`` keeps only fully marked orbits (coarsening).  Marks
    pass through unchanged when the mesh has no rotational symmetry.
    """
    orbit = rotation_orbits(mesh, sectors)
    marked = set(int(i) for i in marked)
    if orbit is None:
        return marked
    by_orbit = {}
    for t in range(mesh.n_elements):
        by_orbit.setdefault(orbit[t], []).append(t)
    out = set()
    for members in by_orbit.values():
        hit = sum(1 for t in members if t in marked)
        if mode == "union" and hit > 0:
            out.update(members)
        elif mode == "intersection" and hit == len(members):
            out.update(members)
    return out
