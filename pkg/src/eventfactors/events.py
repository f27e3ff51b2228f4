"""Event panels: recurrent-event data for many units and event types.

A panel records, for each unit i and event type j, the times of that
unit's type-j events on the observation window [0, 1].  Panels are the
common input of the smoothing, fitting, and simulation layers.  An
optional binary mask marks which (unit, type) cells were observed at
all; unmasked cells are treated as absent, not as empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EventDataError",
    "EventPanel",
    "load_events",
    "save_events",
    "panel_to_json",
    "panel_from_json",
    "rescale_window",
]


class EventDataError(ValueError):
    """Raised for malformed event files or inconsistent panels."""


def _as_time_array(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64).reshape(-1)
    return arr


@dataclass
class EventPanel:
    """Recurrent events for ``n_units`` units and ``n_types`` event types.

    Parameters
    ----------
    n_units, n_types : int
        Panel dimensions N and J.
    events : list of list of ndarray
        ``events[i][j]`` holds the sorted event times of unit i, type j,
        all inside [0, 1].
    mask : ndarray of bool, optional
        Shape (N, J); True marks an observed cell.  ``None`` means fully
        observed.
    """

    n_units: int
    n_types: int
    events: list
    mask: np.ndarray | None = None
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_units < 1 or self.n_types < 1:
            raise EventDataError("panel dimensions must be positive")
        if len(self.events) != self.n_units:
            raise EventDataError(
                f"expected {self.n_units} unit rows, got {len(self.events)}"
            )
        for i, row in enumerate(self.events):
            if len(row) != self.n_types:
                raise EventDataError(
                    f"unit {i}: expected {self.n_types} cells, got {len(row)}"
                )
            for j, cell in enumerate(row):
                arr = _as_time_array(cell)
                if arr.size:
                    if not np.all(np.diff(arr) >= 0.0):
                        raise EventDataError(f"cell ({i}, {j}): times not sorted")
                    if arr[0] < 0.0 or arr[-1] > 1.0:
                        raise EventDataError(
                            f"cell ({i}, {j}): times outside [0, 1]"
                        )
                row[j] = arr
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.shape != (self.n_units, self.n_types):
                raise EventDataError(
                    f"mask shape {m.shape} does not match panel "
                    f"({self.n_units}, {self.n_types})"
                )
            self.mask = m.astype(bool)

    def cell(self, i: int, j: int) -> np.ndarray:
        return self.events[i][j]

    def counts(self) -> np.ndarray:
        """Per-cell event counts as an (N, J) integer array."""
        out = np.empty((self.n_units, self.n_types), dtype=np.int64)
        for i, row in enumerate(self.events):
            for j, cell in enumerate(row):
                out[i, j] = cell.size
        return out

    def total_count(self) -> int:
        return int(self.counts().sum())

    def flattened(self) -> tuple[np.ndarray, np.ndarray]:
        """All events as (times, cell_index) sorted by time.

        ``cell_index`` is the row-major linear index i * n_types + j.
        Cached; panels are treated as immutable after construction.
        """
        if self._flat is None:
            times, cells = [], []
            for i, row in enumerate(self.events):
                base = i * self.n_types
                for j, cell in enumerate(row):
                    if cell.size:
                        times.append(cell)
                        cells.append(np.full(cell.size, base + j, dtype=np.int64))
            if times:
                t = np.concatenate(times)
                c = np.concatenate(cells)
                order = np.argsort(t, kind="stable")
                self._flat = (t[order], c[order])
            else:
                self._flat = (
                    np.empty(0, dtype=np.float64),
                    np.empty(0, dtype=np.int64),
                )
        return self._flat


def _empty_cells(n_units: int, n_types: int) -> list:
    return [
        [np.empty(0, dtype=np.float64) for _ in range(n_types)]
        for _ in range(n_units)
    ]


def load_events(path, n_units: int | None = None, n_types: int | None = None,
                mask: np.ndarray | None = None) -> EventPanel:
    """Read a headerless ``unit_id,type_id,time`` CSV into a panel.

    Dimensions default to one past the largest id seen.  Malformed rows
    raise :class:`EventDataError` with the offending line number.
    """
    units, types, times = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise EventDataError(
                    f"{path}:{lineno}: expected 3 fields, got {len(parts)}"
                )
            try:
                u = int(parts[0])
                k = int(parts[1])
                t = float(parts[2])
            except ValueError as exc:
                raise EventDataError(f"{path}:{lineno}: {exc}") from None
            if u < 0 or k < 0:
                raise EventDataError(f"{path}:{lineno}: negative id")
            if not 0.0 <= t <= 1.0:
                raise EventDataError(
                    f"{path}:{lineno}: time {t} outside [0, 1]"
                )
            units.append(u)
            types.append(k)
            times.append(t)
    if n_units is None:
        n_units = max(units, default=-1) + 1
    if n_types is None:
        n_types = max(types, default=-1) + 1
    if n_units < 1 or n_types < 1:
        raise EventDataError(f"{path}: empty file and no dimensions given")
    cells = _empty_cells(n_units, n_types)
    buckets: dict[tuple[int, int], list] = {}
    for u, k, t in zip(units, types, times):
        if u >= n_units or k >= n_types:
            raise EventDataError(
                f"{path}: id ({u}, {k}) outside panel ({n_units}, {n_types})"
            )
        buckets.setdefault((u, k), []).append(t)
    for (u, k), ts in buckets.items():
        cells[u][k] = np.sort(np.asarray(ts, dtype=np.float64))
    return EventPanel(n_units, n_types, cells, mask=mask)


def save_events(panel: EventPanel, path) -> None:
    """Write the panel as headerless CSV, times at 12 significant digits.

    Rows are emitted cell by cell in row-major (unit, type) order with
    times ascending, so output bytes are a pure function of the panel.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(panel.events):
            for j, cell in enumerate(row):
                for t in cell:
                    fh.write(f"{i},{j},{t:.12g}\n")


def panel_to_json(panel: EventPanel) -> str:
    obj = {
        "n_units": panel.n_units,
        "n_types": panel.n_types,
        "events": [
            [int(i), int(j), float(t)]
            for i, row in enumerate(panel.events)
            for j, cell in enumerate(row)
            for t in cell
        ],
    }
    if panel.mask is not None:
        obj["mask"] = panel.mask.astype(int).tolist()
    return json.dumps(obj)


def panel_from_json(text: str) -> EventPanel:
    obj = json.loads(text)
    n_units = int(obj["n_units"])
    n_types = int(obj["n_types"])
    cells = _empty_cells(n_units, n_types)
    buckets: dict[tuple[int, int], list] = {}
    for u, k, t in obj["events"]:
        buckets.setdefault((int(u), int(k)), []).append(float(t))
    for (u, k), ts in buckets.items():
        if not (0 <= u < n_units and 0 <= k < n_types):
            raise EventDataError(
                f"event id ({u}, {k}) outside panel ({n_units}, {n_types})"
            )
        cells[u][k] = np.sort(np.asarray(ts, dtype=np.float64))
    mask = obj.get("mask")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return EventPanel(n_units, n_types, cells, mask=mask)


def rescale_window(panel: EventPanel, start: float, end: float) -> EventPanel:
    """Restrict to events in [start, end] and rescale that window to [0, 1]."""
    if not (0.0 <= start < end <= 1.0):
        raise EventDataError(f"invalid window [{start}, {end}]")
    width = end - start
    cells = _empty_cells(panel.n_units, panel.n_types)
    for i, row in enumerate(panel.events):
        for j, cell in enumerate(row):
            kept = cell[(cell >= start) & (cell <= end)]
            cells[i][j] = np.clip((kept - start) / width, 0.0, 1.0)
    return EventPanel(panel.n_units, panel.n_types, cells, mask=panel.mask)
