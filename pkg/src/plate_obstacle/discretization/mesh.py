import logging
from typing import Iterable, Optional

import numpy as np
from scipy import sparse

from src.plate_obstacle.discretization.domain_type import DomainType
from src.plate_obstacle.discretization.quadrature import QuadRule
from src.plate_obstacle.utils.exceptions import MeshRefinementError, PointLocationError

logger = logging.getLogger(__name__)

# Local edge j joins the local vertices LOCAL_EDGES[j] and lies opposite local vertex j.
# Local edge 2, between vertices 0 and 1, is the refinement edge.
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])
REFINEMENT_EDGE = 2

INITIAL_GRID_SIZE = 4
CLOSURE_SWEEP_FACTOR = 64
GEOMETRY_TOLERANCE = 1e-12


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Mesh:
    """
        Conforming triangulation refined by newest-vertex bisection.

        Every triangle is stored counter-clockwise as [v0, v1, v2] with (v0, v1) as its refinement edge and v2 as
        its newest vertex. Edges are stored with the lower vertex id first. `edge_triangles[e]` holds the adjacent
        triangle ids in increasing order, with -1 in the second slot for boundary edges, and every edge normal
        points out of `edge_triangles[e, 0]`.

        A mesh never changes after construction; `refine` returns a new one. Vertex ids are stable under
        refinement: new vertices are appended after the existing ones.
    """

    def __init__(self,
                 vertices: np.ndarray,
                 triangles: np.ndarray,
                 domain: Optional[DomainType] = None,
                 generation: Optional[np.ndarray] = None,
                 parent: Optional[np.ndarray] = None):
        self.vertices = _readonly(np.ascontiguousarray(vertices, dtype=float))
        self.triangles = _readonly(np.ascontiguousarray(triangles, dtype=np.int64))
        self.domain = domain

        n_triangles = self.triangles.shape[0]
        self.generation = _readonly(np.zeros(n_triangles, dtype=np.int64) if generation is None
                                    else np.asarray(generation, dtype=np.int64))
        self.parent = None if parent is None else _readonly(np.asarray(parent, dtype=np.int64))

        self._build_edges()
        self._build_geometry()

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def _build_edges(self):
        local = self.triangles[:, LOCAL_EDGES]
        local = np.sort(local, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.edges = _readonly(edges)
        self.triangle_edges = _readonly(inverse.reshape(self.n_triangles, 3))

        owners = np.repeat(np.arange(self.n_triangles), 3)
        order = np.lexsort((owners, inverse))
        sorted_edges = inverse[order]
        sorted_owners = owners[order]
        first = np.ones(sorted_edges.size, dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]

        counts = np.bincount(inverse, minlength=self.n_edges)
        if np.any(counts > 2):
            raise MeshRefinementError('An edge is shared by more than two triangles.')

        edge_triangles = np.full((self.n_edges, 2), -1, dtype=np.int64)
        edge_triangles[sorted_edges[first], 0] = sorted_owners[first]
        edge_triangles[sorted_edges[~first], 1] = sorted_owners[~first]
        self.edge_triangles = _readonly(edge_triangles)
        self.boundary_edges = _readonly(edge_triangles[:, 1] < 0)

        boundary_vertices = np.zeros(self.n_vertices, dtype=bool)
        boundary_vertices[self.edges[self.boundary_edges].ravel()] = True
        self.boundary_vertices = _readonly(boundary_vertices)

        neighbors = np.full((self.n_triangles, 3), -1, dtype=np.int64)
        adjacent = edge_triangles[self.triangle_edges]
        own = np.arange(self.n_triangles)[:, None]
        neighbors[:] = np.where(adjacent[..., 0] == own, adjacent[..., 1], adjacent[..., 0])
        self.neighbors = _readonly(neighbors)

    def _build_geometry(self):
        x0 = self.vertices[self.triangles[:, 0]]
        x1 = self.vertices[self.triangles[:, 1]]
        x2 = self.vertices[self.triangles[:, 2]]
        jacobians = np.stack([x1 - x0, x2 - x0], axis=2)
        determinants = jacobians[:, 0, 0] * jacobians[:, 1, 1] - jacobians[:, 0, 1] * jacobians[:, 1, 0]
        if np.any(determinants <= 0.0):
            raise MeshRefinementError(f'{np.count_nonzero(determinants <= 0.0)} triangles have non-positive area.')

        inverse = np.empty_like(jacobians)
        inverse[:, 0, 0] = jacobians[:, 1, 1]
        inverse[:, 1, 1] = jacobians[:, 0, 0]
        inverse[:, 0, 1] = -jacobians[:, 0, 1]
        inverse[:, 1, 0] = -jacobians[:, 1, 0]
        inverse /= determinants[:, None, None]

        self.jacobians = _readonly(jacobians)
        self.inverse_jacobians = _readonly(inverse)
        self.determinants = _readonly(determinants)
        self.areas = _readonly(determinants / 2.0)
        self.centroids = _readonly((x0 + x1 + x2) / 3.0)

        tangents = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        lengths = np.linalg.norm(tangents, axis=1)
        self.edge_lengths = _readonly(lengths)
        self.diameters = _readonly(lengths[self.triangle_edges].max(axis=1))

        normals = np.column_stack([tangents[:, 1], -tangents[:, 0]]) / lengths[:, None]
        midpoints = self.vertices[self.edges].mean(axis=1)
        outward = np.einsum('ei,ei->e', midpoints - self.centroids[self.edge_triangles[:, 0]], normals)
        normals[outward < 0.0] *= -1.0
        self.normals = _readonly(normals)
        self.edge_midpoints = _readonly(midpoints)

    def h_max(self) -> float:
        return float(self.diameters.max())

    def shape_ratios(self) -> np.ndarray:
        """
            Ratio of circumscribed to inscribed circle diameter for every triangle.
        """
        sides = self.edge_lengths[self.triangle_edges]
        circumradius = sides.prod(axis=1) / (4.0 * self.areas)
        inradius = self.areas / (sides.sum(axis=1) / 2.0)
        return circumradius / inradius

    def min_angles(self) -> np.ndarray:
        corners = self.vertices[self.triangles]
        angles = np.empty((self.n_triangles, 3))
        for j in range(3):
            u = corners[:, (j + 1) % 3] - corners[:, j]
            v = corners[:, (j + 2) % 3] - corners[:, j]
            cosine = np.einsum('ti,ti->t', u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles[:, j] = np.arccos(np.clip(cosine, -1.0, 1.0))
        return angles.min(axis=1)

    def edge_star_matrix(self) -> sparse.csr_matrix:
        """
            Sparse triangle-by-edge incidence of edge stars: entry (T, e) is nonzero if edge e has at least one
            endpoint among the vertices of T.
        """
        rows = np.repeat(np.arange(self.n_triangles), 3)
        triangle_vertex = sparse.csr_matrix((np.ones(rows.size), (rows, self.triangles.ravel())),
                                            shape=(self.n_triangles, self.n_vertices))
        edge_rows = np.repeat(np.arange(self.n_edges), 2)
        vertex_edge = sparse.csr_matrix((np.ones(edge_rows.size), (self.edges.ravel(), edge_rows)),
                                        shape=(self.n_vertices, self.n_edges))
        star = (triangle_vertex @ vertex_edge).tocsr()
        star.data[:] = 1.0
        star.sort_indices()
        return star

    def edge_star(self, triangle: int) -> np.ndarray:
        touches = np.isin(self.edges, self.triangles[triangle]).any(axis=1)
        return np.flatnonzero(touches)

    def edge_points(self, edges: np.ndarray, rule: QuadRule) -> tuple[np.ndarray, np.ndarray]:
        """
            Physical quadrature points and arc-length weights on the given edges.

            Returns:
                tuple[np.ndarray, np.ndarray]: Points of shape (n_edges, n_points, 2) and weights of shape
                (n_edges, n_points).
        """
        start = self.vertices[self.edges[edges, 0]]
        end = self.vertices[self.edges[edges, 1]]
        t = rule.points[None, :, None]
        points = start[:, None, :] * (1.0 - t) + end[:, None, :] * t
        weights = self.edge_lengths[edges][:, None] * rule.weights[None, :]
        return points, weights

    def triangle_points(self, triangles: np.ndarray, reference_points: np.ndarray) -> np.ndarray:
        """
            Maps reference points, shared (n_points, 2) or per triangle (n_triangles, n_points, 2), to physical
            coordinates.
        """
        origin = self.vertices[self.triangles[triangles, 0]]
        jacobians = self.jacobians[triangles]
        if reference_points.ndim == 2:
            return origin[:, None, :] + np.einsum('tij,pj->tpi', jacobians, reference_points)
        return origin[:, None, :] + np.einsum('tij,tpj->tpi', jacobians, reference_points)

    def pull_back(self, triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
        """
            Reference coordinates of physical points (n_triangles, n_points, 2) with respect to the given triangles.
        """
        origin = self.vertices[self.triangles[triangles, 0]]
        return np.einsum('tij,tpj->tpi', self.inverse_jacobians[triangles], points - origin[:, None, :])

    def contains_on_boundary(self, points: np.ndarray, tolerance: float = 1e-10) -> np.ndarray:
        """
            Whether points (n, 2) lie on the boundary of the mesh's domain.
        """
        x, y = points[..., 0], points[..., 1]
        on_box = np.isclose(np.maximum(np.abs(x), np.abs(y)), 0.5, atol=tolerance, rtol=0.0)
        if self.domain is DomainType.LSHAPE:
            removed = (x > tolerance) & (y > tolerance)
            reentrant_x = (np.abs(x) <= tolerance) & (y >= -tolerance) & (y <= 0.5 + tolerance)
            reentrant_y = (np.abs(y) <= tolerance) & (x >= -tolerance) & (x <= 0.5 + tolerance)
            return (on_box & ~removed) | reentrant_x | reentrant_y
        return on_box

    def check_invariants(self) -> list[str]:
        """
            Checks adjacency, conformity and orientation of the mesh.

            Returns:
                list[str]: A description of every violation found; empty for a valid mesh.
        """
        violations = []
        counts = np.bincount(self.triangle_edges.ravel(), minlength=self.n_edges)
        if np.any((counts < 1) | (counts > 2)):
            violations.append('edges with an adjacency count other than 1 or 2')

        for e in range(self.n_edges):
            for t in self.edge_triangles[e]:
                if t >= 0 and not np.all(np.isin(self.edges[e], self.triangles[t])):
                    violations.append(f'edge {e} is not an edge of adjacent triangle {t}')

        if self.domain is not None:
            off_boundary = ~self.contains_on_boundary(self.edge_midpoints[self.boundary_edges])
            if np.any(off_boundary):
                violations.append(f'{np.count_nonzero(off_boundary)} single-sided edges inside the domain '
                                  f'(hanging nodes)')

        if np.any(self.determinants <= 0.0):
            violations.append('triangles with non-positive signed area')
        total_area = self.areas.sum()
        expected = {DomainType.SQUARE: 1.0, DomainType.LSHAPE: 0.75}.get(self.domain)
        if expected is not None and abs(total_area - expected) > 1e-12:
            violations.append(f'triangles cover area {total_area}, expected {expected}')
        return violations

    def to_text(self) -> str:
        lines = [f'vertices {self.n_vertices} triangles {self.n_triangles}']
        lines.extend(f'{x!r} {y!r}' for x, y in self.vertices.tolist())
        lines.extend(f'{i} {j} {k}' for i, j, k in self.triangles.tolist())
        return '\n'.join(lines) + '\n'


def build_initial(domain: DomainType) -> Mesh:
    """
        Builds the coarse mesh of a domain from a 4x4 grid of squares of side 1/4 on (-0.5, 0.5)^2, every square
        split by its south-west to north-east diagonal. The L-shape drops the squares of the quadrant
        x > 0, y > 0. Each triangle is right-isosceles with its hypotenuse as refinement edge.
    """
    n = INITIAL_GRID_SIZE
    coordinates = np.linspace(-0.5, 0.5, n + 1)

    def grid_index(i, j):
        return i + (n + 1) * j

    triangles = []
    for j in range(n):
        for i in range(n):
            if domain is DomainType.LSHAPE and i >= n // 2 and j >= n // 2:
                continue
            a, b = grid_index(i, j), grid_index(i + 1, j)
            c, d = grid_index(i + 1, j + 1), grid_index(i, j + 1)
            triangles.append([c, a, b])
            triangles.append([a, c, d])
    triangles = np.array(triangles, dtype=np.int64)

    xx, yy = np.meshgrid(coordinates, coordinates, indexing='xy')
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    used = np.unique(triangles)
    renumber = np.full(vertices.shape[0], -1, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    mesh = Mesh(vertices[used], renumber[triangles], domain=domain)
    logger.info(f'Built initial {domain.value} mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, '
                f'{mesh.n_edges} edges')
    return mesh


def _close_marking(mesh: Mesh, marked: np.ndarray) -> np.ndarray:
    limit = CLOSURE_SWEEP_FACTOR * mesh.n_triangles
    refinement_edges = mesh.triangle_edges[:, REFINEMENT_EDGE]
    sweeps = 0
    while True:
        pending = marked[mesh.triangle_edges].any(axis=1) & ~marked[refinement_edges]
        if not pending.any():
            return marked
        marked[refinement_edges[pending]] = True
        sweeps += 1
        if sweeps > limit:
            raise MeshRefinementError(f'Refinement closure did not terminate after {sweeps} sweeps.')


def refine(mesh: Mesh,
           marked_triangles: Iterable[int] = (),
           marked_edges: Iterable[int] = ()) -> Mesh:
    """
        Refines a mesh by newest-vertex bisection.

        Every marked triangle is bisected at least once and every marked edge is bisected in all adjacent triangles.
        The closure marks refinement edges until no hanging node remains, so each refined triangle yields two,
        three or four children.

        Args:
            mesh (Mesh): The mesh to refine.
            marked_triangles (Iterable[int]): Ids of triangles to bisect.
            marked_edges (Iterable[int]): Ids of edges to bisect.

        Raises:
            MeshRefinementError: If an id is invalid or the closure fails to terminate.

        Returns:
            Mesh: The refined mesh; its `parent` maps every child to its triangle in `mesh`.
    """
    triangle_ids = np.asarray(list(marked_triangles), dtype=np.int64)
    edge_ids = np.asarray(list(marked_edges), dtype=np.int64)
    if np.any((triangle_ids < 0) | (triangle_ids >= mesh.n_triangles)):
        raise MeshRefinementError('Marked triangle id out of range.')
    if np.any((edge_ids < 0) | (edge_ids >= mesh.n_edges)):
        raise MeshRefinementError('Marked edge id out of range.')

    marked = np.zeros(mesh.n_edges, dtype=bool)
    marked[mesh.triangle_edges[triangle_ids, REFINEMENT_EDGE]] = True
    marked[edge_ids] = True
    if not marked.any():
        return mesh

    marked = _close_marking(mesh, marked)
    return _bisect(mesh, marked)


def uniform_refine(mesh: Mesh) -> Mesh:
    """
        Bisects every edge once, splitting each triangle into four similar children of half the diameter.
    """
    return _bisect(mesh, np.ones(mesh.n_edges, dtype=bool))


def _bisect(mesh: Mesh, marked: np.ndarray) -> Mesh:
    n_new = int(np.count_nonzero(marked))
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint[marked] = mesh.n_vertices + np.arange(n_new)
    new_vertices = mesh.vertices[mesh.edges[marked]].mean(axis=1)
    vertices = np.vstack([mesh.vertices, new_vertices])

    a, b, c = mesh.triangles.T
    m = midpoint[mesh.triangle_edges[:, 2]]
    p = midpoint[mesh.triangle_edges[:, 1]]
    q = midpoint[mesh.triangle_edges[:, 0]]
    refined = marked[mesh.triangle_edges[:, 2]]
    left = refined & marked[mesh.triangle_edges[:, 1]]
    right = refined & marked[mesh.triangle_edges[:, 0]]
    ids = np.arange(mesh.n_triangles)
    generation = mesh.generation

    # (parent, slot, triangle, generation) blocks, ordered by parent then slot below.
    blocks = []

    def add(selection, slot, corners, generation_offset):
        blocks.append((ids[selection], np.full(np.count_nonzero(selection), slot),
                       np.column_stack([corner[selection] for corner in corners]),
                       generation[selection] + generation_offset))

    add(~refined, 0, (a, b, c), 0)
    add(refined & ~left, 0, (c, a, m), 1)
    add(left, 0, (m, c, p), 2)
    add(left, 1, (a, m, p), 2)
    add(refined & ~right, 2, (b, c, m), 1)
    add(right, 2, (m, b, q), 2)
    add(right, 3, (c, m, q), 2)

    parents = np.concatenate([block[0] for block in blocks])
    slots = np.concatenate([block[1] for block in blocks])
    triangles = np.vstack([block[2] for block in blocks])
    generations = np.concatenate([block[3] for block in blocks])
    order = np.lexsort((slots, parents))

    if np.any(triangles[order] < 0):
        raise MeshRefinementError('Bisection referenced an unmarked edge midpoint.')

    refined_mesh = Mesh(vertices, triangles[order], domain=mesh.domain, generation=generations[order],
                        parent=parents[order])
    logger.debug(f'Bisected {np.count_nonzero(refined)} of {mesh.n_triangles} triangles into '
                 f'{refined_mesh.n_triangles} triangles')
    return refined_mesh


def ancestor_map(meshes: list[Mesh], coarse_level: int, fine_level: Optional[int] = None) -> np.ndarray:
    """
        Maps every triangle of `meshes[fine_level]` to the triangle of `meshes[coarse_level]` containing it, by
        composing the parent arrays of a nested refinement sequence.

        Raises:
            MeshRefinementError: If a mesh in the sequence carries no parent array.
    """
    fine_level = len(meshes) - 1 if fine_level is None else fine_level
    ancestors = np.arange(meshes[fine_level].n_triangles)
    for level in range(fine_level, coarse_level, -1):
        parent = meshes[level].parent
        if parent is None:
            raise MeshRefinementError(f'Mesh at level {level} has no parent map.')
        ancestors = parent[ancestors]
    return ancestors


class PointLocator:
    """
        Finds the triangle containing a physical point by walking across edges from the last hit, falling back to a
        scan over all triangles. Not safe to share between threads.
    """

    def __init__(self, mesh: Mesh, tolerance: float = 1e-10):
        self.mesh = mesh
        self.tolerance = tolerance
        self._last = 0

    def _barycentric(self, triangles, point):
        origin = self.mesh.vertices[self.mesh.triangles[triangles, 0]]
        xi = np.einsum('...ij,...j->...i', self.mesh.inverse_jacobians[triangles], point - origin)
        return np.stack([1.0 - xi[..., 0] - xi[..., 1], xi[..., 0], xi[..., 1]], axis=-1)

    def locate(self, point: np.ndarray) -> int:
        point = np.asarray(point, dtype=float)
        triangle = self._last
        max_steps = 4 * int(np.sqrt(self.mesh.n_triangles)) + 16
        for _ in range(max_steps):
            coordinates = self._barycentric(triangle, point)
            weakest = int(np.argmin(coordinates))
            if coordinates[weakest] >= -self.tolerance:
                self._last = triangle
                return triangle
            neighbor = self.mesh.neighbors[triangle, weakest]
            if neighbor < 0:
                break
            triangle = int(neighbor)

        coordinates = self._barycentric(np.arange(self.mesh.n_triangles), point)
        best = int(np.argmax(coordinates.min(axis=1)))
        if coordinates[best].min() < -self.tolerance:
            raise PointLocationError(f'Point ({point[0]}, {point[1]}) lies outside the mesh.')
        self._last = best
        return best
