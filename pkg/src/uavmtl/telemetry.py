"""Flight telemetry: schema, CSV ingest/export, validation and a synthetic flight generator.

A :class:`FlightSeries` stores its records column-wise in a float64 array whose
column order is :data:`COLUMNS`.  Positions are either geodetic
(``position_x`` = longitude deg, ``position_y`` = latitude deg, ``position_z`` =
altitude m) or local metric (east, north, up in m), selected by ``coord_mode``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import EmptyFile, MissingColumn, UnparseableRow

COLUMNS = (
    "timestamp",
    "wind_speed",
    "wind_angle",
    "battery_voltage",
    "battery_current",
    "position_x",
    "position_y",
    "position_z",
    "orientation_x",
    "orientation_y",
    "orientation_z",
    "orientation_w",
    "velocity_x",
    "velocity_y",
    "velocity_z",
    "angular_x",
    "angular_y",
    "angular_z",
    "linear_acceleration_x",
    "linear_acceleration_y",
    "linear_acceleration_z",
    "payload",
)
FEATURE_COLUMNS = COLUMNS[1:]
COL = {name: i for i, name in enumerate(COLUMNS)}
POSITION_COLUMNS = ("position_x", "position_y", "position_z")
QUAT_COLUMNS = ("orientation_x", "orientation_y", "orientation_z", "orientation_w")

SCHEMAS = ("dataset1", "dataset2")
COORD_MODES = ("geodetic", "local")
LABEL_COLUMN = "label"

EARTH_RADIUS_M = 6_371_000.0
QUAT_NORM_TOL = 0.05
MAX_REJECT_FRACTION = 0.10


@dataclass(frozen=True)
class FlightRecord:
    timestamp: float
    wind_speed: float
    wind_angle: float
    battery_voltage: float
    battery_current: float
    position_x: float
    position_y: float
    position_z: float
    orientation_x: float
    orientation_y: float
    orientation_z: float
    orientation_w: float
    velocity_x: float
    velocity_y: float
    velocity_z: float
    angular_x: float
    angular_y: float
    angular_z: float
    linear_acceleration_x: float
    linear_acceleration_y: float
    linear_acceleration_z: float
    payload: float

    def as_row(self) -> list[float]:
        return [getattr(self, c) for c in COLUMNS]


@dataclass(frozen=True)
class Rejection:
    line_no: int
    reason: str


@dataclass
class FlightSeries:
    """Time-ordered telemetry of one flight.

    ``labels`` holds per-record :class:`~uavmtl.labeler.DroneState` indices once
    the series has been annotated (or read from a dataset2 ``label`` column).
    """

    flight_id: str
    data: np.ndarray
    sample_rate_hz: float = 10.0
    coord_mode: str = "geodetic"
    labels: Optional[np.ndarray] = None
    rejections: list[Rejection] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(COLUMNS):
            raise ValueError(f"data must be [N, {len(COLUMNS)}], got {self.data.shape}")
        if len(self.data) < 1:
            raise ValueError("a flight series needs at least one record")
        if self.coord_mode not in COORD_MODES:
            raise ValueError(f"coord_mode must be one of {COORD_MODES}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.data),):
                raise ValueError("labels must have one entry per record")

    def __len__(self) -> int:
        return len(self.data)

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COL[name]]

    @property
    def timestamps(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def features(self) -> np.ndarray:
        return self.data[:, 1:]

    @property
    def positions(self) -> np.ndarray:
        return self.data[:, [COL[c] for c in POSITION_COLUMNS]]

    @property
    def quaternions(self) -> np.ndarray:
        return self.data[:, [COL[c] for c in QUAT_COLUMNS]]

    @property
    def records(self) -> list[FlightRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[FlightRecord]:
        for row in self.data:
            yield FlightRecord(*(float(v) for v in row))

    @classmethod
    def from_records(cls, flight_id: str, records: list[FlightRecord], **kwargs) -> "FlightSeries":
        data = np.array([r.as_row() for r in records], dtype=np.float64)
        return cls(flight_id, data, **kwargs)

    def with_labels(self, labels) -> "FlightSeries":
        return FlightSeries(
            self.flight_id,
            self.data,
            sample_rate_hz=self.sample_rate_hz,
            coord_mode=self.coord_mode,
            labels=np.asarray(labels),
            rejections=list(self.rejections),
            meta=dict(self.meta),
        )


# ---------------------------------------------------------------------------
# record-level invariants


def _record_violations(row: np.ndarray, coord_mode: str) -> list[str]:
    problems = []
    q = row[[COL[c] for c in QUAT_COLUMNS]]
    if not np.all(np.isfinite(q)):
        problems.append("orientation missing")
    else:
        norm = float(np.sqrt(np.sum(q * q)))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            problems.append(f"quaternion norm {norm:.4f} outside 1 +/- {QUAT_NORM_TOL}")
    if coord_mode == "geodetic":
        if not abs(row[COL["position_y"]]) <= 90.0:
            problems.append(f"latitude {row[COL['position_y']]} out of range")
        if not abs(row[COL["position_x"]]) <= 180.0:
            problems.append(f"longitude {row[COL['position_x']]} out of range")
    if not row[COL["payload"]] >= 0.0:
        problems.append(f"negative payload {row[COL['payload']]}")
    return problems


# ---------------------------------------------------------------------------
# CSV I/O


def _as_text_stream(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), False
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", newline="", encoding="utf-8"), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary file-like
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def parse_flight_csv(
    source,
    schema: str = "dataset1",
    *,
    column_map: Optional[dict[str, str]] = None,
    coord_mode: str = "geodetic",
    sample_rate_hz: float = 10.0,
    flight_id: Optional[str] = None,
) -> FlightSeries:
    """Read a comma-delimited telemetry table.

    ``column_map`` maps canonical column names to the names used in the file.
    Rows that fail to parse or violate a record invariant are dropped and listed
    in ``series.rejections``; more than 10% rejected rows raises
    :class:`UnparseableRow`.  Timestamps are re-based to start at 0.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}")
    column_map = column_map or {}
    if flight_id is None and isinstance(source, (str, os.PathLike)):
        flight_id = os.path.splitext(os.path.basename(os.fspath(source)))[0]

    stream, owned = _as_text_stream(source)
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile("no header row") from None
        header = [h.strip() for h in header]
        index = {}
        for name in COLUMNS:
            file_name = column_map.get(name, name)
            if file_name not in header:
                raise MissingColumn(name)
            index[name] = header.index(file_name)
        label_idx = None
        if schema == "dataset2":
            label_name = column_map.get(LABEL_COLUMN, LABEL_COLUMN)
            if label_name in header:
                label_idx = header.index(label_name)
        cols = [index[c] for c in COLUMNS]

        rows, labels, rejections = [], [], []
        n_total = 0
        last_t = -math.inf
        for line_no, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            n_total += 1
            try:
                values = np.array([float(raw[i]) if raw[i].strip() else math.nan for i in cols])
                label = int(raw[label_idx]) if label_idx is not None else None
            except (ValueError, IndexError):
                rejections.append(Rejection(line_no, "unparseable value"))
                continue
            if label is not None and not 0 <= label < 5:
                rejections.append(Rejection(line_no, f"label {label} out of range"))
                continue
            problems = _record_violations(values, coord_mode)
            if not values[0] > last_t:
                problems.append("timestamp not increasing")
            if problems:
                rejections.append(Rejection(line_no, "; ".join(problems)))
                continue
            last_t = values[0]
            rows.append(values)
            if label is not None:
                labels.append(label)
    finally:
        if owned:
            stream.close()

    if n_total == 0:
        raise EmptyFile("no data rows")
    if len(rejections) > MAX_REJECT_FRACTION * n_total or not rows:
        raise UnparseableRow(rejections[0].line_no, len(rejections), n_total)

    data = np.vstack(rows)
    data[:, 0] -= data[0, 0]
    return FlightSeries(
        flight_id or "flight",
        data,
        sample_rate_hz=sample_rate_hz,
        coord_mode=coord_mode,
        labels=np.array(labels) if label_idx is not None else None,
        rejections=rejections,
    )


def write_flight_csv(series: FlightSeries, dest, schema: str = "dataset1", *, column_map=None) -> None:
    """Write ``series`` as CSV; floats use ``repr`` so a re-parse is exact.

    Under the dataset2 schema the ``label`` column is appended when the series
    carries labels.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}")
    column_map = column_map or {}
    header = [column_map.get(c, c) for c in COLUMNS]
    with_labels = schema == "dataset2" and series.labels is not None
    if with_labels:
        header.append(column_map.get(LABEL_COLUMN, LABEL_COLUMN))

    owned = isinstance(dest, (str, os.PathLike))
    stream = open(dest, "w", newline="", encoding="utf-8") if owned else dest
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(series.data):
            out = [repr(float(v)) for v in row]
            if with_labels:
                out.append(str(int(series.labels[i])))
            writer.writerow(out)
    finally:
        if owned:
            stream.close()


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    gaps: list[tuple[int, float]] = field(default_factory=list)
    violations: list[tuple[int, str]] = field(default_factory=list)
    nonfinite: list[tuple[str, int]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (self.gaps or self.violations or self.nonfinite)


def validate_series(series: FlightSeries) -> ValidationReport:
    """Report timestamp gaps (> 2x nominal step), invariant violations and NaN/inf cells."""
    report = ValidationReport()
    data = series.data
    nominal = 1.0 / series.sample_rate_hz
    steps = np.diff(data[:, 0])
    for i in np.flatnonzero(steps > 2.0 * nominal):
        report.gaps.append((int(i) + 1, float(steps[i])))
    for i in np.flatnonzero(~(steps > 0)):
        report.violations.append((int(i) + 1, "timestamp not increasing"))
    bad_rows, bad_cols = np.nonzero(~np.isfinite(data))
    for r, c in zip(bad_rows, bad_cols):
        report.nonfinite.append((COLUMNS[c], int(r)))
    for r, row in enumerate(data):
        for problem in _record_violations(row, series.coord_mode):
            report.violations.append((r, problem))
    return report


# ---------------------------------------------------------------------------
# coordinates


def local_to_geodetic(east, north, origin_lat: float, origin_lon: float):
    """Local tangent-plane metres to (lon, lat) degrees around an origin."""
    lat = origin_lat + np.degrees(np.asarray(north) / EARTH_RADIUS_M)
    lon = origin_lon + np.degrees(np.asarray(east) / (EARTH_RADIUS_M * math.cos(math.radians(origin_lat))))
    return lon, lat


def geodetic_to_local(lon, lat, origin_lat: float, origin_lon: float):
    north = np.radians(np.asarray(lat) - origin_lat) * EARTH_RADIUS_M
    east = np.radians(np.asarray(lon) - origin_lon) * EARTH_RADIUS_M * math.cos(math.radians(origin_lat))
    return east, north


def quaternion_from_euler(roll, pitch, yaw) -> np.ndarray:
    """ZYX Euler angles to (x, y, z, w) quaternions."""
    cr, sr = np.cos(np.asarray(roll) / 2), np.sin(np.asarray(roll) / 2)
    cp, sp = np.cos(np.asarray(pitch) / 2), np.sin(np.asarray(pitch) / 2)
    cy, sy = np.cos(np.asarray(yaw) / 2), np.sin(np.asarray(yaw) / 2)
    w = cr * cp * cy + sr * sp * sy
    x = sr * cp * cy - cr * sp * sy
    y = cr * sp * cy + sr * cp * sy
    z = cr * cp * sy - sr * sp * cy
    return np.stack([x, y, z, w], axis=-1)
