"""VTK legacy, manifest, per-step CSV and JSON-lines writers."""
from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from contextlib import contextmanager
import csv
import dataclasses
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from .const import MANIFEST_FILE, SNAPSHOT_PATTERN, STATS_CSV, SUMMARY_FILE, VtkCellType
from .data import BarrierStats, Snapshot
from .errors import LayoutError, OutputError
from .mesh import ForestMesh
from .sipg import Basis, nodal_coordinates

_LOGGER = logging.getLogger(__name__)

_NUMBER = "%.10g"


@contextmanager
def _writing(path: Path) -> Iterator[None]:
    try:
        yield
    except OSError as err:
        raise OutputError(path, err.strerror or str(err)) from err


def _corner_nodes(basis: Basis) -> list[int]:
    n = basis.n1d
    if basis.dim == 1:
        return [0, n - 1]
    return [0, n - 1, n * n - 1, n * (n - 1)]


def _format(values: Iterable[float]) -> str:
    return " ".join(_NUMBER % v for v in values)


def write_vtk(
    mesh: ForestMesh,
    basis: Basis,
    path: str | Path,
    point_fields: Mapping[str, np.ndarray] | None = None,
    cell_fields: Mapping[str, np.ndarray] | None = None,
    title: str = "cardiolts",
) -> Path:
    """Legacy ASCII unstructured grid with one point per DG node.

    Point fields are (n_elem, n_nodes) arrays in active-element order, cell
    fields have one value per active element.
    """
    path = Path(path)
    element_ids = mesh.active_elements
    n_elem, n_nodes = len(element_ids), basis.n_nodes
    coords = nodal_coordinates(mesh, basis).reshape(-1, mesh.dim)
    points = np.zeros((len(coords), 3))
    points[:, : mesh.dim] = coords

    corners = _corner_nodes(basis)
    cell_type = VtkCellType.LINE if mesh.dim == 1 else VtkCellType.QUAD
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    lines.extend(_format(p) for p in points)
    lines.append(f"CELLS {n_elem} {n_elem * (len(corners) + 1)}")
    for row in range(n_elem):
        ids = " ".join(str(row * n_nodes + c) for c in corners)
        lines.append(f"{len(corners)} {ids}")
    lines.append(f"CELL_TYPES {n_elem}")
    lines.extend(str(int(cell_type)) for _ in range(n_elem))

    if cell_fields:
        lines.append(f"CELL_DATA {n_elem}")
        for name, values in cell_fields.items():
            values = np.asarray(values)
            if values.shape != (n_elem,):
                raise LayoutError(f"Cell field '{name}' has shape {values.shape}")
            kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
            lines += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
            lines.extend(str(int(v)) if kind == "int" else _NUMBER % v for v in values)
    if point_fields:
        lines.append(f"POINT_DATA {len(points)}")
        for name, values in point_fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (n_elem, n_nodes):
                raise LayoutError(f"Point field '{name}' has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines.extend(_NUMBER % v for v in values.ravel())

    with _writing(path):
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_vtk_points(path: str | Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Points and POINT_DATA scalars of a file written by ``write_vtk``"""
    lines = Path(path).read_text(encoding="ascii").split("\n")
    points = np.zeros((0, 3))
    fields: dict[str, np.ndarray] = {}
    in_point_data = False
    index = 0
    while index < len(lines):
        words = lines[index].split()
        index += 1
        if not words:
            continue
        if words[0] == "POINTS":
            count = int(words[1])
            points = np.array(
                [[float(v) for v in line.split()] for line in lines[index : index + count]]
            )
            index += count
        elif words[0] == "POINT_DATA":
            in_point_data = True
        elif words[0] == "CELL_DATA":
            in_point_data = False
        elif words[0] == "SCALARS" and in_point_data:
            index += 1
            count = len(points)
            fields[words[1]] = np.array([float(v) for v in lines[index : index + count]])
            index += count
    return points, fields


def write_manifest(path: str | Path, entries: Iterable[tuple[int, float, str]]) -> Path:
    """One line per snapshot: index, time (ms), file name"""
    path = Path(path)
    with _writing(path):
        path.write_text(
            "".join(f"{index} {_NUMBER % time} {name}\n" for index, time, name in entries),
            encoding="utf-8",
        )
    return path


def read_manifest(path: str | Path) -> list[tuple[int, float, Path]]:
    path = Path(path)
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        index, time, name = line.split(maxsplit=2)
        entries.append((int(index), float(time), path.parent / name))
    return entries


class StatsWriter:
    """Streams per barrier step statistics as CSV"""

    def __init__(self, path: str | Path, timing: bool = True) -> None:
        self.path = Path(path)
        names = [f.name for f in dataclasses.fields(BarrierStats)]
        self.fieldnames = names if timing else [n for n in names if n != "wall_time"]
        with _writing(self.path):
            self._handle = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._handle, fieldnames=self.fieldnames, lineterminator="\n")
        self._writer.writeheader()

    def __enter__(self) -> StatsWriter:
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()

    def write(self, stats: BarrierStats) -> None:
        record = dataclasses.asdict(stats)
        row = {}
        for name in self.fieldnames:
            value = record[name]
            row[name] = _NUMBER % value if isinstance(value, float) else value
        self._writer.writerow(row)

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()


def append_jsonl(path: str | Path, record: Mapping[str, Any]) -> None:
    """Append one JSON record per line with sorted keys"""
    path = Path(path)
    with _writing(path), path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def write_lat_csv(path: str | Path, points: np.ndarray, times: np.ndarray) -> Path:
    """Activation times per point; never activated points are left empty"""
    path = Path(path)
    points = np.asarray(points).reshape(len(times), -1)
    axes = ["x", "y", "z"][: points.shape[1]]
    with _writing(path), path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([*axes, "lat"])
        for point, time in zip(points, times):
            lat = "" if np.isnan(time) else _NUMBER % time
            writer.writerow([*(_NUMBER % c for c in point), lat])
    return path


class RunWriter:
    """Writes the artifacts of one run into a directory"""

    def __init__(
        self,
        directory: str | Path,
        basis: Basis,
        timing: bool = True,
        vtk: bool = True,
    ) -> None:
        self.directory = Path(directory)
        with _writing(self.directory):
            self.directory.mkdir(parents=True, exist_ok=True)
        self.basis = basis
        self.timing = timing
        self.vtk = vtk
        self.entries: list[tuple[int, float, str]] = []
        self.stats = StatsWriter(self.directory / STATS_CSV, timing)

    def __enter__(self) -> RunWriter:
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.stats.close()

    def snapshot(
        self,
        mesh: ForestMesh,
        snapshot: Snapshot,
        state_names: Iterable[str] = (),
        cell_fields: Mapping[str, np.ndarray] | None = None,
    ) -> str | None:
        if not self.vtk or snapshot.state is None:
            return None
        name = SNAPSHOT_PATTERN.format(index=snapshot.index)
        point_fields = {"phi": snapshot.state.phi}
        for number, state_name in enumerate(state_names):
            point_fields[state_name] = snapshot.state.s[:, number]
        levels = np.array([mesh.level(e) for e in snapshot.state.element_ids], dtype=int)
        write_vtk(
            mesh,
            self.basis,
            self.directory / name,
            point_fields=point_fields,
            cell_fields={"level": levels, **(cell_fields or {})},
            title=f"cardiolts t={_NUMBER % snapshot.time} ms",
        )
        snapshot.filename = name
        self.entries.append((snapshot.index, snapshot.time, name))
        return name

    def barrier(self, stats: BarrierStats) -> None:
        self.stats.write(stats)

    def finish(self, summary: Mapping[str, Any]) -> None:
        self.stats.close()
        write_manifest(self.directory / MANIFEST_FILE, self.entries)
        record = dict(summary)
        if not self.timing:
            record.pop("wall_time", None)
        append_jsonl(self.directory / SUMMARY_FILE, record)
