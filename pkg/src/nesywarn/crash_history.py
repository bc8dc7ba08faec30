"""Crash-history records and the location/time risk prior derived from them."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

CELL_SIZE = 50.0
NEIGHBORHOOD = 1
HOUR_TOLERANCE = 1
SATURATION = 20.0
MAP_LIMIT = 10_000  # cells from the origin in either axis
FIELDS = ("cell_x", "cell_y", "hour", "crash_type", "count")


class CrashDbError(ValueError):
    pass


@dataclass(frozen=True)
class CrashRecord:
    cell: tuple
    hour: int
    crash_type: str
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be at least 1, got {self.count}")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour must lie in 0-23, got {self.hour}")
        if any(abs(c) > MAP_LIMIT for c in self.cell):
            raise ValueError(f"cell {self.cell} outside the map")


def cell_of(x: float, y: float, size: float = CELL_SIZE) -> tuple:
    return (math.floor(x / size), math.floor(y / size))


def _hour_gap(a: int, b: int) -> int:
    d = abs(a - b) % 24
    return min(d, 24 - d)


class CrashStore:
    def __init__(self, records=(), saturation: float = SATURATION):
        self.records = list(records)
        self.saturation = saturation

    @classmethod
    def from_csv(cls, text: str, source: str = "<crash db>") -> "CrashStore":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or tuple(f.strip() for f in reader.fieldnames) != FIELDS:
            raise CrashDbError(f"{source}: header must be {','.join(FIELDS)}")
        records = []
        for row in reader:
            line = reader.line_num
            try:
                records.append(CrashRecord((int(row["cell_x"]), int(row["cell_y"])), int(row["hour"]),
                                           row["crash_type"].strip(), int(row["count"])))
            except (TypeError, ValueError) as e:
                raise CrashDbError(f"{source}: line {line}: {e}") from None
        return cls(records)

    @classmethod
    def load(cls, path) -> "CrashStore":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise CrashDbError(f"{path}: {e.strerror or e}") from None
        return cls.from_csv(text, str(path))

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(FIELDS)
        for r in self.records:
            w.writerow([r.cell[0], r.cell[1], r.hour, r.crash_type, r.count])
        return out.getvalue()

    def add(self, record: CrashRecord):
        self.records.append(record)


def query_crash_history(store: Optional[CrashStore], cell: tuple, hour: int) -> float:
    """Risk prior in [0, 1] from crashes in neighboring cells at nearby hours."""
    if store is None:
        raise CrashDbError("crash store not loaded")
    total = 0
    for r in store.records:
        if max(abs(r.cell[0] - cell[0]), abs(r.cell[1] - cell[1])) > NEIGHBORHOOD:
            continue
        if _hour_gap(r.hour, hour) > HOUR_TOLERANCE:
            continue
        total += r.count
    return min(1.0, total / store.saturation)
