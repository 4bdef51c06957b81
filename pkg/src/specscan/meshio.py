"""ASCII OBJ / PLY readers and an ASCII PLY writer."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriangleMesh


class MeshParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _read_obj(path: Path) -> TriangleMesh:
    verts, tris = [], []
    with open(path, encoding="ascii", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError:
                    raise MeshParseError(path, lineno, "bad vertex coordinates") from None
                if len(rest) < 3:
                    raise MeshParseError(path, lineno, "vertex needs 3 coordinates")
            elif tag == "f":
                poly = []
                for tok in rest:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshParseError(path, lineno, f"bad face index {tok!r}") from None
                    if i == 0:
                        raise MeshParseError(path, lineno, "face index 0 (OBJ indices are 1-based)")
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise MeshParseError(path, lineno, f"face index {tok} out of range")
                    poly.append(i)
                if len(poly) < 3:
                    raise MeshParseError(path, lineno, "face needs at least 3 vertices")
                tris.extend(_fan(poly))
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))


def _read_ply_header(fh, path):
    if fh.readline().strip() != "ply":
        raise MeshParseError(path, 1, "missing 'ply' magic")
    elements = []  # (name, count, [(prop, is_list)])
    lineno = 1
    fmt = None
    while True:
        lineno += 1
        line = fh.readline()
        if not line:
            raise MeshParseError(path, lineno, "unterminated header")
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
            if fmt != "ascii":
                raise MeshParseError(path, lineno, f"unsupported PLY format {fmt}")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError(path, lineno, "property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], True))
            else:
                elements[-1][2].append((tok[2], False))
        elif tok[0] == "end_header":
            break
    if fmt is None:
        raise MeshParseError(path, lineno, "missing format line")
    return elements, lineno


def _read_ply(path: Path):
    with open(path, encoding="ascii", errors="replace") as fh:
        elements, lineno = _read_ply_header(fh, path)
        data = {}
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                lineno += 1
                line = fh.readline()
                if not line:
                    raise MeshParseError(path, lineno, f"unexpected end of file in element {name}")
                tok = line.split()
                row, pos = {}, 0
                try:
                    for prop, is_list in props:
                        if is_list:
                            n = int(tok[pos])
                            row[prop] = [int(x) for x in tok[pos + 1:pos + 1 + n]]
                            if len(row[prop]) != n:
                                raise IndexError
                            pos += 1 + n
                        else:
                            row[prop] = float(tok[pos])
                            pos += 1
                except (ValueError, IndexError):
                    raise MeshParseError(path, lineno, f"malformed {name} record") from None
                rows.append((lineno, row))
            data[name] = rows
    return data


def _ply_vertices(data) -> np.ndarray:
    rows = data.get("vertex", [])
    return np.array([[r["x"], r["y"], r["z"]] for _, r in rows], dtype=float).reshape(-1, 3)


def load_mesh(path) -> TriangleMesh:
    """Load an ASCII OBJ or PLY; polygons are fan-triangulated and zero-area
    triangles dropped."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _read_obj(path)
    elif suffix == ".ply":
        data = _read_ply(path)
        verts = _ply_vertices(data)
        tris = []
        for lineno, row in data.get("face", []):
            poly = row.get("vertex_indices", row.get("vertex_index"))
            if poly is None or len(poly) < 3:
                raise MeshParseError(path, lineno, "face without vertex_indices")
            if min(poly) < 0 or max(poly) >= len(verts):
                raise MeshParseError(path, lineno, "face index out of range")
            tris.extend(_fan(poly))
        mesh = TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))
    else:
        raise MeshParseError(path, 0, f"unsupported mesh extension {suffix!r}")
    return mesh.without_degenerate()


def read_ply_cloud(path) -> tuple[PointCloud, np.ndarray | None]:
    """Read points (with normals and RGB when present)."""
    data = _read_ply(Path(path))
    rows = [r for _, r in data.get("vertex", [])]
    pts = _ply_vertices(data)
    normals = colors = None
    if rows and all(k in rows[0] for k in ("nx", "ny", "nz")):
        normals = np.array([[r["nx"], r["ny"], r["nz"]] for r in rows])
    if rows and all(k in rows[0] for k in ("red", "green", "blue")):
        colors = np.array([[r["red"], r["green"], r["blue"]] for r in rows], dtype=np.uint8)
    return PointCloud(pts, normals), colors


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else repr(float(x))


def write_ply(path, cloud: PointCloud, colors=None, mesh_faces=None) -> None:
    path = Path(path)
    n = len(cloud)
    has_n = cloud.normals is not None
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(n, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {n}",
             "property double x", "property double y", "property double z"]
    if has_n:
        lines += ["property double nx", "property double ny", "property double nz"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if mesh_faces is not None:
        lines += [f"element face {len(mesh_faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    for i in range(n):
        row = [_fmt(v) for v in cloud.points[i]]
        if has_n:
            row += [_fmt(v) for v in cloud.normals[i]]
        if colors is not None:
            row += [str(int(c)) for c in colors[i]]
        lines.append(" ".join(row))
    if mesh_faces is not None:
        for f in mesh_faces:
            lines.append("3 " + " ".join(str(int(i)) for i in f))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
