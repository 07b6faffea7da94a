"""Embedded data warehouse: fixed-schema structured tables with time-range
queries, plus a byte-exact blob store. Persists to newline-delimited JSON
under the run's output directory.

Mobile edges never hold a warehouse handle; only fixed and system edge
runtimes are constructed with one.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Dict, List, Tuple

TABLE_SCHEMAS: Dict[str, frozenset] = {
    "bsm": frozenset(
        {
            "msg_id",
            "vehicle_id",
            "t_ms",
            "x_m",
            "y_m",
            "speed_mps",
            "heading_deg",
            "accel_mps2",
            "brake_active",
            "fixed_edge_id",
        }
    ),
    "traffic_record": frozenset(
        {"fixed_edge_id", "t_ms", "t0_ms", "t1_ms", "vehicle_count", "bsm_count", "mean_speed_mps"}
    ),
    "snapshot": frozenset(
        {"t_ms", "t0_ms", "t1_ms", "edge_count", "total_vehicle_count", "mean_speed_mps"}
    ),
    "latency_sample": frozenset(
        {"msg_id", "sample_class", "t_gen_ms", "t_done_ms", "latency_ms", "t_ms"}
    ),
    "quarantine": frozenset({"topic", "producer", "seq", "consumer", "reason", "t_ms"}),
}


class WarehouseError(Exception):
    pass


class BlobNotFound(WarehouseError):
    pass


class Warehouse:
    """In-process structured + blob store for one run."""

    def __init__(self) -> None:
        self._tables: Dict[str, List[dict]] = {name: [] for name in TABLE_SCHEMAS}
        self._blobs: Dict[str, Tuple[bytes, str]] = {}
        self._lock = threading.RLock()

    # -- structured rows ---------------------------------------------------

    def put_rows(self, table: str, rows: List[dict]) -> int:
        """Append rows to a table; all rows validate or nothing is written."""
        schema = TABLE_SCHEMAS.get(table)
        if schema is None:
            raise WarehouseError(f"unknown table {table!r}")
        for i, row in enumerate(rows):
            keys = set(row)
            if keys != schema:
                missing = sorted(schema - keys)
                extra = sorted(keys - schema)
                raise WarehouseError(
                    f"table {table!r} row {i}: missing={missing} unexpected={extra}"
                )
            if not isinstance(row["t_ms"], int):
                raise WarehouseError(f"table {table!r} row {i}: t_ms must be an integer")
        with self._lock:
            self._tables[table].extend(dict(row) for row in rows)
        return len(rows)

    def query(self, table: str, t0_ms: int, t1_ms: int) -> List[dict]:
        """Rows with t_ms in the half-open interval [t0, t1), insertion order."""
        if table not in TABLE_SCHEMAS:
            raise WarehouseError(f"unknown table {table!r}")
        if t0_ms > t1_ms:
            raise WarehouseError(f"bad time range [{t0_ms}, {t1_ms})")
        with self._lock:
            return [dict(r) for r in self._tables[table] if t0_ms <= r["t_ms"] < t1_ms]

    def count(self, table: str) -> int:
        with self._lock:
            return len(self._tables[table])

    # -- blobs ---------------------------------------------------------------

    def put_blob(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> None:
        if not key:
            raise WarehouseError("blob key must be non-empty")
        with self._lock:
            self._blobs[key] = (bytes(data), content_type)

    def get_blob(self, key: str) -> bytes:
        with self._lock:
            if key not in self._blobs:
                raise BlobNotFound(f"no blob under key {key!r}")
            return self._blobs[key][0]

    # -- persistence ---------------------------------------------------------

    def persist(self, out_dir: Path) -> None:
        """Write every table as ndjson plus the blob directory."""
        root = Path(out_dir) / "warehouse"
        root.mkdir(parents=True, exist_ok=True)
        with self._lock:
            for table, rows in sorted(self._tables.items()):
                path = root / f"{table}.ndjson"
                with path.open("w", encoding="utf-8") as fh:
                    for row in rows:
                        fh.write(json.dumps(row, sort_keys=True))
                        fh.write("\n")
            if self._blobs:
                blob_dir = root / "blobs"
                blob_dir.mkdir(exist_ok=True)
                meta = {}
                for key, (data, content_type) in sorted(self._blobs.items()):
                    (blob_dir / key).write_bytes(data)
                    meta[key] = content_type
                (blob_dir / "_content_types.json").write_text(
                    json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
                )
