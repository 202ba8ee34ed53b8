"""Tetrahedral part model: TetGen-style IO, adjacency, boundary extraction.

Units are millimetres throughout. Element and vertex ids are 0-based in
memory regardless of the indexing convention of the input files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DEGENERATE_VOLUME = 1e-9  # mm^3


class MeshParseError(Exception):
    """Raised on malformed .node/.ele/annotation input, with line context."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class InvertedElementError(Exception):
    """Raised when elements have non-positive signed volume."""

    def __init__(self, element_ids):
        self.element_ids = list(element_ids)
        shown = ", ".join(str(e) for e in self.element_ids[:20])
        more = "" if len(self.element_ids) <= 20 else f" (+{len(self.element_ids) - 20} more)"
        super().__init__(f"degenerate or inverted tetrahedra: [{shown}]{more}")


@dataclass
class TetModel:
    """Volumetric part mesh with adjacency and annotated regions.

    vertices: (n, 3) float positions in mm.
    tets: (m, 4) int vertex indices, positively oriented.
    face_adjacency: (k, 2) int pairs of tets sharing a triangular face.
    boundary_facets: (b, 3) int triangles, outward-oriented.
    boundary_normals: (b, 3) unit outward normals.
    boundary_owner: (b,) owning tet of each boundary facet.
    roi_elements / roi_vertices: region-of-interest ids (surface quality,
    height consistency).
    holes: per-hole element-id arrays keyed by hole id; hole_elements is
    their union.
    """

    vertices: np.ndarray
    tets: np.ndarray
    face_adjacency: np.ndarray
    boundary_facets: np.ndarray
    boundary_normals: np.ndarray
    boundary_owner: np.ndarray
    roi_elements: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    roi_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    holes: dict = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    @property
    def hole_elements(self) -> np.ndarray:
        if not self.holes:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(list(self.holes.values())))

    def volumes(self) -> np.ndarray:
        return tet_volumes(self.vertices, self.tets)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def mean_edge_length(self) -> float:
        v = self.vertices[self.tets]
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        lengths = [np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in pairs]
        return float(np.mean(lengths))

    def validate(self) -> None:
        vols = self.volumes()
        bad = np.nonzero(vols <= DEGENERATE_VOLUME)[0]
        if len(bad):
            raise InvertedElementError(bad)
        if len(self.face_adjacency):
            pairs = {(int(a), int(b)) for a, b in self.face_adjacency}
            if any((b, a) in pairs for a, b in pairs):
                raise ValueError("face_adjacency contains duplicated symmetric pairs")
        for ids in (self.roi_elements, self.hole_elements):
            if len(ids) and (ids.min() < 0 or ids.max() >= self.num_tets):
                raise ValueError("region element ids out of range")
        if len(self.roi_vertices) and self.roi_vertices.max() >= self.num_vertices:
            raise ValueError("roi vertex ids out of range")


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of tets (positive for right-handed ordering)."""
    v = vertices[tets]
    a = v[:, 1] - v[:, 0]
    b = v[:, 2] - v[:, 0]
    c = v[:, 3] - v[:, 0]
    return np.einsum("ij,ij->i", np.cross(a, b), c) / 6.0


# Faces of a tet (i0,i1,i2,i3), each oriented so its normal points out of
# the tet when the tet has positive signed volume.
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


def tet_faces(tets: np.ndarray):
    """Yield (sorted_face_key, oriented_face, tet_id) for all tet faces."""
    for t, tet in enumerate(tets):
        for fa in _TET_FACES:
            face = (int(tet[fa[0]]), int(tet[fa[1]]), int(tet[fa[2]]))
            yield tuple(sorted(face)), face, t


def build_topology(vertices: np.ndarray, tets: np.ndarray):
    """Face adjacency plus outward-oriented boundary facets."""
    seen: dict = {}
    adjacency = []
    for key, face, t in tet_faces(tets):
        if key in seen:
            other_face, other_t = seen.pop(key)
            adjacency.append((other_t, t))
        else:
            seen[key] = (face, t)
    boundary = [(face, t) for face, t in seen.values()]
    boundary.sort(key=lambda item: item[0])
    facets = np.array([f for f, _ in boundary], dtype=int).reshape(-1, 3)
    owners = np.array([t for _, t in boundary], dtype=int)
    if len(facets):
        p = vertices[facets]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        normals = n / norms
    else:
        normals = np.empty((0, 3))
    adj = np.array(sorted(adjacency), dtype=int).reshape(-1, 2)
    return adj, facets, normals, owners


def _data_lines(path: Path):
    """Yield (line_no, tokens) skipping blanks and '#' comments."""
    with open(path) as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield i, line.split()


def _read_node_file(path: Path):
    rows = _data_lines(path)
    try:
        line_no, header = next(rows)
    except StopIteration:
        raise MeshParseError(path, 1, "empty .node file")
    try:
        count = int(header[0])
        dim = int(header[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, line_no, f"bad .node header: {' '.join(header)}")
    if dim != 3:
        raise MeshParseError(path, line_no, f"expected 3D nodes, got dim={dim}")
    ids = np.empty(count, dtype=int)
    pts = np.empty((count, 3))
    for k in range(count):
        try:
            line_no, tok = next(rows)
        except StopIteration:
            raise MeshParseError(path, line_no, f"expected {count} nodes, file ended at {k}")
        try:
            ids[k] = int(tok[0])
            pts[k] = [float(tok[1]), float(tok[2]), float(tok[3])]
        except (ValueError, IndexError):
            raise MeshParseError(path, line_no, f"bad node record: {' '.join(tok)}")
    offset = int(ids[0])
    if offset not in (0, 1) or not np.array_equal(ids, np.arange(offset, offset + count)):
        raise MeshParseError(path, line_no, "node ids must be consecutive and 0- or 1-based")
    return pts, offset


def _read_ele_file(path: Path, offset: int, num_nodes: int):
    rows = _data_lines(path)
    try:
        line_no, header = next(rows)
    except StopIteration:
        raise MeshParseError(path, 1, "empty .ele file")
    try:
        count = int(header[0])
        nodes_per = int(header[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, line_no, f"bad .ele header: {' '.join(header)}")
    if nodes_per != 4:
        raise MeshParseError(path, line_no, "only 4-node tetrahedra are supported")
    tets = np.empty((count, 4), dtype=int)
    for k in range(count):
        try:
            line_no, tok = next(rows)
        except StopIteration:
            raise MeshParseError(path, line_no, f"expected {count} tets, file ended at {k}")
        try:
            tets[k] = [int(tok[1]), int(tok[2]), int(tok[3]), int(tok[4])]
        except (ValueError, IndexError):
            raise MeshParseError(path, line_no, f"bad element record: {' '.join(tok)}")
    tets -= offset
    if tets.min(initial=0) < 0 or tets.max(initial=-1) >= num_nodes:
        raise MeshParseError(path, line_no, "element references node id out of range")
    return tets


def _read_annotations(path: Path, offset: int):
    """Sections: [fixed], [load fx fy fz], [roi], [hole <k>]; one id per line."""
    fixed = []
    loads: dict = {}
    roi = []
    holes: dict = {}
    section = None
    load_vec = None
    hole_id = None
    for line_no, tok in _data_lines(path):
        word = " ".join(tok)
        if word.startswith("["):
            if not word.endswith("]"):
                raise MeshParseError(path, line_no, f"unterminated section header: {word}")
            head = word[1:-1].split()
            name = head[0].lower()
            if name == "fixed":
                section = "fixed"
            elif name == "load":
                if len(head) != 4:
                    raise MeshParseError(path, line_no, "load section needs fx fy fz")
                try:
                    load_vec = np.array([float(x) for x in head[1:]])
                except ValueError:
                    raise MeshParseError(path, line_no, f"bad load vector: {word}")
                section = "load"
            elif name == "roi":
                section = "roi"
            elif name == "hole":
                if len(head) != 2:
                    raise MeshParseError(path, line_no, "hole section needs an id")
                try:
                    hole_id = int(head[1])
                except ValueError:
                    raise MeshParseError(path, line_no, f"bad hole id: {word}")
                holes.setdefault(hole_id, [])
                section = "hole"
            else:
                raise MeshParseError(path, line_no, f"unknown section: {word}")
            continue
        if section is None:
            raise MeshParseError(path, line_no, f"id outside any section: {word}")
        try:
            ident = int(tok[0]) - offset
        except ValueError:
            raise MeshParseError(path, line_no, f"bad id: {word}")
        if section == "fixed":
            fixed.append(ident)
        elif section == "load":
            loads[ident] = loads.get(ident, np.zeros(3)) + load_vec
        elif section == "roi":
            roi.append(ident)
        elif section == "hole":
            holes[hole_id].append(ident)
    return fixed, loads, roi, holes


def load_tet_model(node_file, ele_file, annotations=None):
    """Load a TetModel from TetGen-style files plus an annotation file.

    Returns (model, load_case_data) where load_case_data is
    (fixed_vertex_ids, {vertex_id: force}) from the annotation file, or
    ([], {}) when annotations is None.
    """
    node_file = Path(node_file)
    ele_file = Path(ele_file)
    vertices, offset = _read_node_file(node_file)
    tets = _read_ele_file(ele_file, offset, len(vertices))

    vols = tet_volumes(vertices, tets)
    bad = np.nonzero(vols <= DEGENERATE_VOLUME)[0]
    if len(bad):
        raise InvertedElementError(bad)

    adjacency, facets, normals, owners = build_topology(vertices, tets)

    fixed, loads, roi, holes = [], {}, [], {}
    if annotations is not None:
        fixed, loads, roi, holes = _read_annotations(Path(annotations), offset)

    roi_elements = np.array(sorted(set(roi)), dtype=int)
    roi_vertices = (
        np.unique(tets[roi_elements].ravel()) if len(roi_elements) else np.empty(0, dtype=int)
    )
    model = TetModel(
        vertices=vertices,
        tets=tets,
        face_adjacency=adjacency,
        boundary_facets=facets,
        boundary_normals=normals,
        boundary_owner=owners,
        roi_elements=roi_elements,
        roi_vertices=roi_vertices,
        holes={k: np.array(sorted(set(v)), dtype=int) for k, v in sorted(holes.items())},
    )
    model.validate()
    logger.info(
        "loaded tet model: %d vertices, %d tets, %d boundary facets",
        model.num_vertices,
        model.num_tets,
        len(facets),
    )
    return model, (sorted(set(fixed)), loads)


def make_tet_model(vertices, tets, roi_elements=(), holes=None) -> TetModel:
    """Build a TetModel from in-memory arrays (fixes topology, validates)."""
    vertices = np.asarray(vertices, dtype=float)
    tets = np.asarray(tets, dtype=int)
    adjacency, facets, normals, owners = build_topology(vertices, tets)
    roi_elements = np.array(sorted(set(int(e) for e in roi_elements)), dtype=int)
    roi_vertices = (
        np.unique(tets[roi_elements].ravel()) if len(roi_elements) else np.empty(0, dtype=int)
    )
    holes = {
        int(k): np.array(sorted(set(int(e) for e in v)), dtype=int)
        for k, v in (holes or {}).items()
    }
    model = TetModel(
        vertices=vertices,
        tets=tets,
        face_adjacency=adjacency,
        boundary_facets=facets,
        boundary_normals=normals,
        boundary_owner=owners,
        roi_elements=roi_elements,
        roi_vertices=roi_vertices,
        holes=holes,
    )
    model.validate()
    return model


def write_tet_model(model: TetModel, node_file, ele_file, annotations=None,
                    fixed=(), loads=None):
    """Write TetGen-style files (1-based ids) and optionally annotations."""
    with open(node_file, "w") as fh:
        fh.write(f"{model.num_vertices} 3 0 0\n")
        for i, p in enumerate(model.vertices, start=1):
            fh.write(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    with open(ele_file, "w") as fh:
        fh.write(f"{model.num_tets} 4 0\n")
        for i, t in enumerate(model.tets, start=1):
            fh.write(f"{i} {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}\n")
    if annotations is None:
        return
    with open(annotations, "w") as fh:
        if len(fixed):
            fh.write("[fixed]\n")
            for v in fixed:
                fh.write(f"{v + 1}\n")
        for vec, ids in _group_loads(loads or {}):
            fh.write(f"[load {vec[0]:.17g} {vec[1]:.17g} {vec[2]:.17g}]\n")
            for v in ids:
                fh.write(f"{v + 1}\n")
        if len(model.roi_elements):
            fh.write("[roi]\n")
            for e in model.roi_elements:
                fh.write(f"{e + 1}\n")
        for k, elems in sorted(model.holes.items()):
            fh.write(f"[hole {k}]\n")
            for e in elems:
                fh.write(f"{e + 1}\n")


def _group_loads(loads: dict):
    groups: dict = {}
    for vid, vec in loads.items():
        key = tuple(np.asarray(vec, dtype=float))
        groups.setdefault(key, []).append(int(vid))
    for key in sorted(groups):
        yield np.array(key), sorted(groups[key])
