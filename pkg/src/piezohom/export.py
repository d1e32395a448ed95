"""Plain-text mesh files, legacy VTK field exports, coefficient CSV and run manifests.

Mesh text format
----------------
Line-oriented, ``#`` starts a comment. Sections start with a keyword line::

    piezohom-mesh 1
    params <json object or null>
    box <L1> <L2> <L3>
    fiber_radius <R>
    nodes <n>            then n lines: x y z fiber
    elements <m>         then m lines: n0 ... n7 fiber
    centers <k>          then k lines: x y z
    set <name> <count>   then the node ids, whitespace separated
    bonds <count>        then count lines: a b
    surface <fiber> <circ index> <count>  then the node ids
    end

Contact interfaces are not stored; they are rebuilt from the surface grids
and the mesh parameters on reading.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import platform
import sys
import time

import numpy as np

from .mesh import MeshParams, RveMesh, identify_contact_interfaces

MESH_FORMAT_VERSION = 1
CSV_HEADER = ("amplitude", "coefficient", "value", "hill_gap", "iterations")
_VTK_HEXAHEDRON = 12


class FormatError(ValueError):
    pass


def _ids(values) -> str:
    return " ".join(str(int(v)) for v in values)


def write_mesh(mesh: RveMesh, path) -> None:
    params = None if mesh.params is None else dataclasses.asdict(mesh.params)
    with open(path, "w") as fh:
        fh.write(f"piezohom-mesh {MESH_FORMAT_VERSION}\n")
        fh.write(f"params {json.dumps(params)}\n")
        fh.write("box " + " ".join(repr(float(v)) for v in mesh.box) + "\n")
        fh.write(f"fiber_radius {float(mesh.fiber_radius)!r}\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for x, f in zip(mesh.nodes, mesh.node_fiber):
            fh.write(" ".join(repr(float(v)) for v in x) + f" {int(f)}\n")
        fh.write(f"elements {mesh.n_elements}\n")
        for conn, f in zip(mesh.elements, mesh.element_fiber):
            fh.write(f"{_ids(conn)} {int(f)}\n")
        fh.write(f"centers {len(mesh.fiber_centers)}\n")
        for c in mesh.fiber_centers:
            fh.write(" ".join(repr(float(v)) for v in c) + "\n")
        for name, ids in mesh.face_sets.items():
            fh.write(f"set {name} {len(ids)}\n{_ids(ids)}\n")
        fh.write(f"bonds {len(mesh.bond_pairs)}\n")
        for a, b in mesh.bond_pairs:
            fh.write(f"{int(a)} {int(b)}\n")
        for f, grid in enumerate(mesh.surface_grids):
            for K in sorted(grid):
                ids = np.asarray(grid[K]).ravel()
                fh.write(f"surface {f} {K} {len(ids)}\n{_ids(ids)}\n")
        fh.write("end\n")


def read_mesh(path) -> RveMesh:
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(f"{path}: unexpected end of file")
        pos += 1
        return lines[pos - 1]

    head = take().split()
    if head[:1] != ["piezohom-mesh"] or int(head[1]) != MESH_FORMAT_VERSION:
        raise FormatError(f"{path}: not a piezohom mesh file (version {MESH_FORMAT_VERSION})")
    data = {"sets": {}, "bonds": np.zeros((0, 2), dtype=int), "surfaces": {}}
    while True:
        key, _, rest = take().partition(" ")
        if key == "end":
            break
        if key == "params":
            raw = json.loads(rest)
            if raw is not None:
                for k in ("grid", "divisions"):
                    raw[k] = tuple(raw[k])
                raw = MeshParams(**raw)
            data["params"] = raw
        elif key == "box":
            data["box"] = np.array(rest.split(), dtype=float)
        elif key == "fiber_radius":
            data["R"] = float(rest)
        elif key in ("nodes", "elements", "centers", "bonds"):
            rows = [take().split() for _ in range(int(rest))]
            data[key] = np.array(rows, dtype=float if key in ("nodes", "centers") else int)
        elif key == "set":
            name, count = rest.split()
            ids = np.array(take().split(), dtype=int) if int(count) else np.zeros(0, dtype=int)
            data["sets"][name] = ids
        elif key == "surface":
            f, K, count = map(int, rest.split())
            data["surfaces"].setdefault(f, {})[K] = np.array(take().split(), dtype=int)
        else:
            raise FormatError(f"{path}: unknown section {key!r}")
    nodes = data["nodes"].reshape(-1, 4)
    elems = data["elements"].reshape(-1, 9)
    mesh = RveMesh(
        nodes=nodes[:, :3].copy(),
        elements=elems[:, :8].copy(),
        box=data["box"],
        fiber_radius=data["R"],
        element_fiber=elems[:, 8].copy(),
        node_fiber=nodes[:, 3].astype(int),
        fiber_centers=data.get("centers", np.zeros((0, 3))).reshape(-1, 3),
        face_sets=data["sets"],
        bond_pairs=data["bonds"].reshape(-1, 2),
        surface_grids=[data["surfaces"].get(f, {}) for f in range(max(data["surfaces"], default=-1) + 1)],
        params=data.get("params"),
    )
    mesh.contact_surfaces = identify_contact_interfaces(mesh)
    return mesh


# ---------------------------------------------------------------------------
# VTK

STRESS_LABELS = ("S11", "S22", "S33", "S12", "S13", "S23", "D1", "D2", "D3")


def write_vtk(path, mesh: RveMesh, q=None, stress=None, title: str = "piezohom") -> None:
    """Legacy ASCII unstructured grid of hexahedra.

    Parameters
    ----------
    q : array_like, shape (n_nodes, 4), optional
        Nodal ``(u1, u2, u3, phi)``; written as point data.
    stress : array_like, shape (n_elements, 9), optional
        Element generalized stress; each component becomes a cell scalar.
    """
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines.extend(f"{x[0]:.17g} {x[1]:.17g} {x[2]:.17g}" for x in mesh.nodes)
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {9 * ne}")
    lines.extend("8 " + _ids(conn) for conn in mesh.elements)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend([str(_VTK_HEXAHEDRON)] * ne)
    if q is not None:
        q = np.asarray(q, dtype=float).reshape(mesh.n_nodes, 4)
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        lines.append("VECTORS displacement double")
        lines.extend(f"{u[0]:.17g} {u[1]:.17g} {u[2]:.17g}" for u in q[:, :3])
        lines.append("SCALARS potential double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.17g}" for v in q[:, 3])
    if stress is not None:
        stress = np.asarray(stress, dtype=float).reshape(ne, 9)
        lines.append(f"CELL_DATA {ne}")
        for k, lab in enumerate(STRESS_LABELS):
            lines.append(f"SCALARS {lab} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in stress[:, k])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_arrays(path) -> dict:
    """Point and cell arrays of a file written by :func:`write_vtk`."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    out, counts, section = {}, {}, None
    i = 0
    while i < len(lines):
        words = lines[i].split()
        i += 1
        if not words:
            continue
        if words[0] in ("POINT_DATA", "CELL_DATA"):
            section = words[0]
            counts[section] = int(words[1])
        elif words[0] in ("VECTORS", "SCALARS") and section:
            n = counts[section]
            if words[0] == "SCALARS":
                i += 1  # lookup table line
            arr = np.array([lines[i + k].split() for k in range(n)], dtype=float)
            out[words[1]] = arr[:, 0] if words[0] == "SCALARS" else arr
            i += n
    return out


# ---------------------------------------------------------------------------
# CSV and manifest


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_coefficient_csv(path, rows) -> None:
    """Rows of ``(amplitude, coefficient, value, hill_gap, iterations)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"coefficient row must have {len(CSV_HEADER)} entries: {row!r}")
            w.writerow([_fmt(v) for v in row])


def read_coefficient_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for r in reader:
            out.append(
                (
                    float(r["amplitude"]),
                    r["coefficient"],
                    float(r["value"]),
                    float(r["hill_gap"]) if r["hill_gap"] else None,
                    int(r["iterations"]) if r["iterations"] else None,
                )
            )
        return out


def _versions() -> dict:
    import scipy
    import yaml

    from . import __version__

    return {
        "piezohom": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
        "platform": platform.platform(),
    }


def write_manifest(path, config: dict, artifacts: dict, status: str, deterministic: bool = True, **extra) -> dict:
    """JSON run record: versions, resolved configuration, artifacts and status.

    With ``deterministic`` the wall-clock time stamp is omitted so reruns
    produce identical files.
    """
    manifest = {
        "status": status,
        "versions": _versions(),
        "config": config,
        "artifacts": artifacts,
        "seed": None,  # no random numbers are drawn by the pipeline
    }
    if not deterministic:
        manifest["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")
