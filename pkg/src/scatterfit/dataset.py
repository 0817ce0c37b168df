"""Measured data containers and the plain-text reader/writer.

A :class:`DataSet` stores flat intensity and uncertainty arrays with one
parallel coordinate array per dimension (1 to 3).  Masking marks points as
excluded from fitting without ever touching the stored values, and masking
operations are idempotent.
"""

from __future__ import annotations

import io
import os
from typing import Sequence

import numpy as np

__all__ = ["DataSet", "data", "load_text", "save_text", "DataFormatError"]


class DataFormatError(ValueError):
    """Malformed data text; the message names the offending line."""


class DataSet:
    """Flat measured points: coordinates, intensities, uncertainties, mask.

    Parameters
    ----------
    name : str
    coords : sequence of arrays
        One array per dimension, all the same length.
    intensity : array
    sigma : array, optional
        Defaults to ``sqrt(max(intensity, 1))`` per point.
    """

    def __init__(self, name, coords, intensity, sigma=None):
        self.name = str(name)
        coords = tuple(np.asarray(c, dtype=float).ravel() for c in coords)
        if not 1 <= len(coords) <= 3:
            raise ValueError("between one and three coordinate arrays required")
        self.intensity = np.asarray(intensity, dtype=float).ravel()
        n = self.intensity.size
        for c in coords:
            if c.size != n:
                raise ValueError("coordinate arrays must match intensity length")
        self.coords = coords
        if sigma is None:
            sigma = np.sqrt(np.maximum(self.intensity, 1.0))
        else:
            sigma = np.asarray(sigma, dtype=float).ravel()
            if sigma.size != n:
                raise ValueError("sigma must match intensity length")
            if np.any(sigma <= 0):
                raise ValueError("sigma must be positive everywhere")
        self.sigma = sigma
        self.mask = np.zeros(n, dtype=bool)

    # -- shape -------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.intensity.size

    @property
    def ndim(self) -> int:
        return len(self.coords)

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(~self.mask))

    @property
    def active(self) -> np.ndarray:
        """Boolean selector of points that take part in fitting."""
        return ~self.mask

    def active_coords(self) -> tuple:
        keep = ~self.mask
        return tuple(c[keep] for c in self.coords)

    def active_intensity(self) -> np.ndarray:
        return self.intensity[~self.mask]

    def active_sigma(self) -> np.ndarray:
        return self.sigma[~self.mask]

    # -- masking -----------------------------------------------------------

    def mask_indices(self, indices, on=True) -> None:
        """Mask (or unmask) explicit point indices."""
        idx = np.asarray(indices, dtype=int)
        if idx.size and (idx.min() < -self.n or idx.max() >= self.n):
            raise IndexError("mask index out of range")
        self.mask[idx] = bool(on)

    def mask_index_range(self, start, stop, on=True) -> None:
        """Mask a half-open index range [start, stop)."""
        self.mask[start:stop] = bool(on)

    def mask_coord_range(self, interval, dim=0, on=True) -> None:
        """Mask points whose coordinate along ``dim`` lies in [lo, hi]."""
        if not 0 <= dim < self.ndim:
            raise ValueError("dimension %d out of range" % dim)
        lo, hi = float(interval[0]), float(interval[1])
        inside = (self.coords[dim] >= lo) & (self.coords[dim] <= hi)
        self.mask[inside] = bool(on)

    def clear_mask(self) -> None:
        self.mask[:] = False

    def __repr__(self):
        return "<DataSet %r n=%d ndim=%d active=%d>" % (
            self.name, self.n, self.ndim, self.n_active)


def data(name, x, intensity, sigma=None) -> DataSet:
    """One-dimensional data set; ``sigma`` defaults to sqrt(max(I, 1))."""
    return DataSet(name, (x,), intensity, sigma)


def _role_columns(columns, width, line_no):
    """Resolve the column selection into (x_cols, i_col, sigma_col)."""
    if columns is None:
        if width < 2:
            raise DataFormatError(
                "line %d: need at least two columns, found %d" % (line_no, width))
        return (0,), 1, (2 if width >= 3 else None)
    if isinstance(columns, dict):
        coord_keys = [k for k in ("x", "y", "z") if k in columns]
        if "x" not in columns or "I" not in columns:
            raise ValueError("column mapping needs at least 'x' and 'I'")
        return (tuple(columns[k] for k in coord_keys), columns["I"],
                columns.get("sigma"))
    cols = tuple(int(c) for c in columns)
    if len(cols) == 2:
        return (cols[0],), cols[1], None
    if len(cols) == 3:
        return (cols[0],), cols[1], cols[2]
    raise ValueError("column selection must name 2 or 3 columns")


def load_text(source, columns=None, comment_prefixes=("#",), name=None) -> DataSet:
    """Read whitespace- or comma-delimited columns into a 1D data set.

    Parameters
    ----------
    source : path, file-like, or str of content
    columns : None, (ix, iy[, isigma]) or {"x":, "I":, "sigma":}
        Which columns hold the coordinate, intensity and uncertainty.
        Defaults to the first two or three columns.
    comment_prefixes : tuple of str
        Lines starting with any of these (after stripping) are skipped.

    Raises
    ------
    DataFormatError
        With the 1-based line number for malformed rows.
    """
    close = False
    if hasattr(source, "read"):
        stream = source
        label = getattr(source, "name", "<stream>")
    elif isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        stream = open(source, "r")
        close = True
        label = os.fspath(source)
    elif isinstance(source, str):
        stream = io.StringIO(source)
        label = "<text>"
    else:
        raise TypeError("source must be a path, file object, or text")

    xs: list = []
    ys: list = []
    ss: list = []
    try:
        for line_no, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or any(line.startswith(p) for p in comment_prefixes):
                continue
            fields = [f for f in line.replace(",", " ").split() if f]
            xcols, icol, scol = _role_columns(columns, len(fields), line_no)
            wanted = max(list(xcols) + [icol] + ([scol] if scol is not None else []))
            if len(fields) <= wanted:
                raise DataFormatError(
                    "line %d: expected at least %d columns, found %d"
                    % (line_no, wanted + 1, len(fields)))
            try:
                xs.append(float(fields[xcols[0]]))
                ys.append(float(fields[icol]))
                if scol is not None:
                    ss.append(float(fields[scol]))
            except ValueError:
                raise DataFormatError(
                    "line %d: could not parse a numeric field" % line_no)
    finally:
        if close:
            stream.close()
    if not xs:
        raise DataFormatError("no data rows found")
    sigma = np.asarray(ss) if ss else None
    if ss and len(ss) != len(xs):
        raise DataFormatError("uncertainty column missing on some rows")
    if name is None:
        name = os.path.basename(str(label))
    return DataSet(name, (np.asarray(xs),), np.asarray(ys), sigma)


def save_text(dataset: DataSet, target, fmt="%.9g") -> None:
    """Write a data set as '# name' header plus coordinate/I/sigma columns."""
    close = False
    if hasattr(target, "write"):
        stream = target
    else:
        stream = open(target, "w")
        close = True
    try:
        stream.write("# %s\n" % dataset.name)
        cols = list(dataset.coords) + [dataset.intensity, dataset.sigma]
        for row in zip(*cols):
            stream.write(" ".join(fmt % v for v in row) + "\n")
    finally:
        if close:
            stream.close()
