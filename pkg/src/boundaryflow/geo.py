"""Latitude/longitude catalogs on the unit sphere.

Coordinates map to ambient points as x = (cos lat cos lon, cos lat sin lon,
sin lat); length parameters given in miles become central angles in radians
through the Earth radius, e.g. 396 miles -> 396/3958.8 rad.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParseError, RangeError
from .field import DataCloud

EARTH_RADIUS_MILES = 3958.8

_LAT_KEYS = ("latitude", "lat")
_LON_KEYS = ("longitude", "lon", "lng")
_MAG_KEYS = ("magnitude", "mag")
_DATE_KEYS = ("date", "time", "timestamp")


@dataclass(frozen=True)
class GeoPoint:
    """One catalog entry in degrees, with optional magnitude and timestamp."""

    latitude: float
    longitude: float
    magnitude: Optional[float] = None
    timestamp: Optional[str] = None

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise RangeError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 < self.longitude <= 180.0):
            raise RangeError(f"longitude {self.longitude} outside (-180, 180]")


def miles_to_radians(miles: float) -> float:
    """Central angle subtended by a surface distance in miles."""
    return miles / EARTH_RADIUS_MILES


def latlon_to_unit(lat_deg, lon_deg) -> np.ndarray:
    lat = np.deg2rad(np.asarray(lat_deg, dtype=float))
    lon = np.deg2rad(np.asarray(lon_deg, dtype=float))
    return np.stack([np.cos(lat) * np.cos(lon),
                     np.cos(lat) * np.sin(lon),
                     np.sin(lat)], axis=-1)


def unit_to_latlon(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    lat = np.rad2deg(np.arcsin(np.clip(P[:, 2], -1.0, 1.0)))
    lon = np.rad2deg(np.arctan2(P[:, 1], P[:, 0]))
    return np.stack([lat, lon], axis=-1)


def _pick(header_map, keys):
    for k in keys:
        if k in header_map:
            return header_map[k]
    return None


def ingest_geo(path, min_magnitude: Optional[float] = None,
               lat_range: Optional[tuple] = None,
               lon_range: Optional[tuple] = None):
    """Read a lat/lon CSV catalog into a unit-sphere DataCloud.

    The header must name latitude and longitude columns (magnitude and date
    are optional); rows failing the filters are dropped. Returns the cloud
    and the list of parsed GeoPoint records that survived.
    """
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1)
        hmap = {name.strip().lower(): i for i, name in enumerate(header)}
        i_lat = _pick(hmap, _LAT_KEYS)
        i_lon = _pick(hmap, _LON_KEYS)
        if i_lat is None or i_lon is None:
            raise ParseError("header must contain latitude and longitude "
                             f"columns, got {header}", line=1)
        i_mag = _pick(hmap, _MAG_KEYS)
        i_date = _pick(hmap, _DATE_KEYS)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                lat = float(row[i_lat])
                lon = float(row[i_lon])
                mag = float(row[i_mag]) if i_mag is not None and row[i_mag].strip() else None
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            try:
                pt = GeoPoint(lat, lon, mag,
                              row[i_date] if i_date is not None else None)
            except RangeError as exc:
                raise RangeError(f"line {lineno}: {exc}") from exc
            if min_magnitude is not None and (pt.magnitude is None or
                                              pt.magnitude < min_magnitude):
                continue
            if lat_range is not None and not (lat_range[0] <= lat <= lat_range[1]):
                continue
            if lon_range is not None and not (lon_range[0] <= lon <= lon_range[1]):
                continue
            records.append(pt)
    if len(records) < 2:
        raise ParseError(f"only {len(records)} usable rows in {path}")
    pts = latlon_to_unit([p.latitude for p in records],
                         [p.longitude for p in records])
    return DataCloud(pts), records


def emit_geo(cloud_or_points, path) -> None:
    """Write unit-sphere points back to a lat/lon CSV (17 significant digits)."""
    pts = np.atleast_2d(np.asarray(getattr(cloud_or_points, "points",
                                           cloud_or_points), dtype=float))
    ll = unit_to_latlon(pts)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latitude", "longitude"])
        for lat, lon in ll:
            writer.writerow([f"{lat:.17g}", f"{lon:.17g}"])
