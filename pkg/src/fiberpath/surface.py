"""Curved-layer triangle meshes: vertex fans, polar frames, parallel transport.

Each vertex carries an ordered counterclockwise fan of incident edges and a
polar angle theta_ij per outgoing edge. Interior (closed-fan) vertices are
rescaled so the fan spans exactly 2*pi; open fans at boundary vertices keep
their raw angles, which keeps constant fields transport-parallel on flat
patches. The transport angle rho_ij = -theta_ij + (theta_ji + pi) moves
tangent directions between adjacent frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class SurfaceMeshError(Exception):
    """Non-manifold connectivity, isolated vertices, or bad input files."""


def wrap_angle(a):
    """Wrap radians into [-pi, pi)."""
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def rotation2(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass
class TransportRotation:
    """Frame change along a directed edge: angle rho and its 2x2 rotation."""

    rho: float
    matrix: np.ndarray


@dataclass
class LayerMesh:
    """One curved layer as an oriented triangle mesh with polar frames."""

    vertices: np.ndarray          # (n, 3) mm
    faces: np.ndarray             # (m, 3) int, CCW w.r.t. layer normal
    fans: list = field(default_factory=list)            # per vertex: neighbor ids, CCW
    total_angle: np.ndarray = None                      # Theta_i
    frame_scale: np.ndarray = None                      # 2pi/Theta_i interior, 1 on boundary
    edge_angle: dict = field(default_factory=dict)      # (i, j) -> theta_ij
    is_boundary_vertex: np.ndarray = None
    boundary_loops: list = field(default_factory=list)  # lists of vertex ids, oriented
    hole_loops: list = field(default_factory=list)      # indices into boundary_loops
    printing_direction: np.ndarray = None               # (n, 3) unit, layer normal at vertex
    iso_value: float = 0.0
    layer_id: int = 0
    face_owner_tets: np.ndarray = None                  # (m,) source tet id, optional

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        if self.total_angle is None:
            self._build()

    # -- construction ----------------------------------------------------

    def _build(self):
        n = len(self.vertices)
        m = len(self.faces)
        if m == 0:
            raise SurfaceMeshError("layer mesh has no faces")

        used = np.zeros(n, dtype=bool)
        used[self.faces.ravel()] = True
        if not used.all():
            missing = np.nonzero(~used)[0]
            raise SurfaceMeshError(f"isolated vertices: {missing[:10].tolist()}")

        # Directed-edge -> face map; duplicates mean inconsistent orientation
        # or a non-manifold edge.
        edge_face: dict = {}
        for f, (a, b, c) in enumerate(self.faces):
            for i, j in ((a, b), (b, c), (c, a)):
                key = (int(i), int(j))
                if key in edge_face:
                    raise SurfaceMeshError(
                        f"non-manifold or inconsistently oriented edge {key}"
                    )
                edge_face[key] = f
        self._edge_face = edge_face

        # CCW successor of each outgoing edge around its source vertex.
        succ = [dict() for _ in range(n)]
        for a, b, c in self.faces:
            succ[a][int(b)] = int(c)
            succ[b][int(c)] = int(a)
            succ[c][int(a)] = int(b)

        self.is_boundary_vertex = np.zeros(n, dtype=bool)
        self.total_angle = np.zeros(n)
        self.frame_scale = np.ones(n)
        self.fans = [None] * n
        for v in range(n):
            nbr_succ = succ[v]
            preds = set(nbr_succ.values())
            starts = [u for u in nbr_succ if u not in preds]
            if len(starts) == 0:
                # Closed fan: deterministic start at the lowest neighbor id.
                start = min(nbr_succ)
                n_neighbors = len(nbr_succ)
            elif len(starts) == 1:
                # Open fan: start at the first boundary edge counterclockwise.
                start = starts[0]
                n_neighbors = len(nbr_succ) + 1  # last neighbor has no successor
                self.is_boundary_vertex[v] = True
            else:
                raise SurfaceMeshError(f"non-manifold fan at vertex {v}")
            chain = [start]
            while True:
                nxt = nbr_succ.get(chain[-1])
                if nxt is None or nxt == start:
                    break
                chain.append(nxt)
                if len(chain) > n_neighbors:
                    raise SurfaceMeshError(f"fan at vertex {v} does not close")
            closed = nbr_succ.get(chain[-1]) == start
            if closed:
                chain.append(start)  # sentinel for the wrap-around corner
            neighbors = chain[:-1] if closed else chain
            if len(set(neighbors)) != n_neighbors:
                raise SurfaceMeshError(f"fan at vertex {v} does not cover all edges")
            self.fans[v] = neighbors

            # Corner angles between consecutive fan edges.
            p = self.vertices[v]
            dirs = self.vertices[chain] - p
            norms = np.linalg.norm(dirs, axis=1)
            if np.any(norms < 1e-14):
                raise SurfaceMeshError(f"zero-length edge at vertex {v}")
            dirs /= norms[:, None]
            cosines = np.clip(np.einsum("ij,ij->i", dirs[:-1], dirs[1:]), -1.0, 1.0)
            corners = np.arccos(cosines)

            theta_total = float(corners.sum())
            scale = 1.0 if self.is_boundary_vertex[v] else 2.0 * np.pi / theta_total
            cumulative = np.concatenate([[0.0], np.cumsum(corners)]) * scale
            for k, u in enumerate(neighbors):
                self.edge_angle[(v, int(u))] = float(cumulative[k])
            self.total_angle[v] = theta_total
            self.frame_scale[v] = scale

        self._find_boundary_loops()
        if self.printing_direction is None:
            self.printing_direction = self.vertex_normals()

    def _find_boundary_loops(self):
        nxt = {}
        for (i, j), _f in self._edge_face.items():
            if (j, i) not in self._edge_face:
                nxt[i] = j  # boundary edge, oriented with the mesh
        loops = []
        remaining = dict(nxt)
        while remaining:
            start = min(remaining)
            loop = [start]
            cur = remaining.pop(start)
            while cur != start:
                loop.append(cur)
                cur = remaining.pop(cur)
            loops.append(loop)
        self.boundary_loops = loops
        if len(loops) > 1:
            lengths = [self._loop_length(lp) for lp in loops]
            outer = int(np.argmax(lengths))
            self.hole_loops = [k for k in range(len(loops)) if k != outer]
        else:
            self.hole_loops = []

    def _loop_length(self, loop):
        p = self.vertices[loop]
        return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())

    # -- derived quantities ----------------------------------------------

    def face_normals(self) -> np.ndarray:
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return n / norms

    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def vertex_normals(self) -> np.ndarray:
        p = self.vertices[self.faces]
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # area-weighted
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        norms = np.linalg.norm(vn, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return vn / norms

    def edges(self) -> np.ndarray:
        """Unique undirected edges as (k, 2) with a < b."""
        e = set()
        for a, b, c in self.faces:
            for i, j in ((a, b), (b, c), (c, a)):
                e.add((min(int(i), int(j)), max(int(i), int(j))))
        return np.array(sorted(e), dtype=int)

    def boundary_edges(self) -> set:
        return {
            (min(i, j), max(i, j))
            for (i, j) in self._edge_face
            if (j, i) not in self._edge_face
        }

    def hole_boundary_vertices(self) -> list:
        """Oriented hole loops as vertex-id lists (subset of boundary_loops)."""
        return [self.boundary_loops[k] for k in self.hole_loops]

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).mean())

    def first_fan_edge_direction(self, v: int) -> np.ndarray:
        """Unit 3-vector of the first fan edge, projected to the tangent plane."""
        u = self.fans[v][0]
        d = self.vertices[u] - self.vertices[v]
        n = self.printing_direction[v]
        d = d - np.dot(d, n) * n
        norm = np.linalg.norm(d)
        if norm < 1e-14:
            d = self.vertices[u] - self.vertices[v]
            norm = np.linalg.norm(d)
        return d / norm

    def lift_angle(self, v: int, angle: float) -> np.ndarray:
        """3D tangent at vertex v for a polar-frame angle (unscales Eq. 4)."""
        true_angle = angle / self.frame_scale[v]
        n = self.printing_direction[v]
        e0 = self.first_fan_edge_direction(v)
        c, s = np.cos(true_angle), np.sin(true_angle)
        return c * e0 + s * np.cross(n, e0)


def transport(mesh: LayerMesh, i: int, j: int) -> TransportRotation:
    """Transport rotation moving tangent directions from frame i to frame j."""
    theta_ij = mesh.edge_angle.get((i, j))
    theta_ji = mesh.edge_angle.get((j, i))
    if theta_ij is None or theta_ji is None:
        raise KeyError(f"edge ({i}, {j}) not in mesh")
    rho = float(wrap_angle(-theta_ij + theta_ji + np.pi))
    return TransportRotation(rho=rho, matrix=rotation2(rho))


# -- OBJ IO ----------------------------------------------------------------


def write_obj(mesh: LayerMesh, path, texture_u=None) -> None:
    """Write an ASCII OBJ (v/vn/f, triangles); texture_u adds 1D vt rows."""
    with open(path, "w") as fh:
        fh.write(f"# layer {mesh.layer_id} iso {mesh.iso_value:.17g}\n")
        for p in mesh.vertices:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for d in mesh.printing_direction:
            fh.write(f"vn {d[0]:.17g} {d[1]:.17g} {d[2]:.17g}\n")
        if texture_u is not None:
            for u in texture_u:
                fh.write(f"vt {u:.17g} 0\n")
            for a, b, c in mesh.faces + 1:
                fh.write(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}\n")
        else:
            for a, b, c in mesh.faces + 1:
                fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def load_layer_mesh(path, layer_id=0, iso_value=0.0, face_owner_tets=None) -> LayerMesh:
    """Load a triangle-only OBJ into a LayerMesh (fans and frames built)."""
    vertices = []
    normals = []
    faces = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v":
                vertices.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vn":
                normals.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise SurfaceMeshError(f"{path}:{line_no}: only triangles supported")
                faces.append([i - 1 for i in idx])
    if not vertices:
        raise SurfaceMeshError(f"{path}: no vertices")
    mesh = LayerMesh(
        vertices=np.array(vertices),
        faces=np.array(faces, dtype=int),
        layer_id=layer_id,
        iso_value=iso_value,
        face_owner_tets=face_owner_tets,
        printing_direction=np.array(normals) if len(normals) == len(vertices) else None,
    )
    return mesh
