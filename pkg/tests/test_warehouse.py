"""Structured tables, time-range queries, blobs and persistence."""

import json

import pytest

from cvedge.warehouse import BlobNotFound, Warehouse, WarehouseError


def bsm_row(t_ms, msg="p-abc:1"):
    return {
        "msg_id": msg,
        "vehicle_id": "p-abc",
        "t_ms": t_ms,
        "x_m": 1.0,
        "y_m": 2.0,
        "speed_mps": 3.0,
        "heading_deg": 0.0,
        "accel_mps2": 0.0,
        "brake_active": False,
        "fixed_edge_id": "f0",
    }


class TestRows:
    def test_put_returns_count(self):
        wh = Warehouse()
        assert wh.put_rows("bsm", [bsm_row(1), bsm_row(2), bsm_row(3)]) == 3

    def test_schema_mismatch_atomic(self):
        wh = Warehouse()
        bad = bsm_row(1)
        del bad["speed_mps"]
        with pytest.raises(WarehouseError, match="missing"):
            wh.put_rows("bsm", [bsm_row(0), bad])
        assert wh.count("bsm") == 0  # nothing written

    def test_unknown_table(self):
        with pytest.raises(WarehouseError):
            Warehouse().put_rows("nope", [])

    def test_empty_batch(self):
        wh = Warehouse()
        assert wh.put_rows("bsm", []) == 0

    def test_query_half_open(self):
        wh = Warehouse()
        wh.put_rows("bsm", [bsm_row(1), bsm_row(2), bsm_row(3)])
        assert [r["t_ms"] for r in wh.query("bsm", 1, 3)] == [1, 2]

    def test_query_empty_interval(self):
        wh = Warehouse()
        wh.put_rows("bsm", [bsm_row(10)])
        assert wh.query("bsm", 10, 10) == []

    def test_query_bad_range(self):
        with pytest.raises(WarehouseError):
            Warehouse().query("bsm", 5, 1)

    def test_full_range_conservation(self):
        wh = Warehouse()
        rows = [bsm_row(t) for t in range(50)]
        put = wh.put_rows("bsm", rows)
        assert len(wh.query("bsm", 0, 10**12)) == put == 50

    def test_insertion_order_preserved(self):
        wh = Warehouse()
        wh.put_rows("bsm", [bsm_row(5, "a:1"), bsm_row(5, "b:1"), bsm_row(5, "c:1")])
        assert [r["msg_id"] for r in wh.query("bsm", 0, 10)] == ["a:1", "b:1", "c:1"]


class TestBlobs:
    def test_round_trip(self):
        wh = Warehouse()
        data = bytes(range(256)) * 4  # 1 KiB
        wh.put_blob("capture.bin", data, "application/octet-stream")
        assert wh.get_blob("capture.bin") == data

    def test_unknown_key(self):
        with pytest.raises(BlobNotFound):
            Warehouse().get_blob("missing")

    def test_overwrite_last_write_wins(self):
        wh = Warehouse()
        wh.put_blob("k", b"first")
        wh.put_blob("k", b"second")
        assert wh.get_blob("k") == b"second"

    def test_empty_key_rejected(self):
        with pytest.raises(WarehouseError):
            Warehouse().put_blob("", b"x")


class TestPersist:
    def test_ndjson_layout(self, tmp_path):
        wh = Warehouse()
        wh.put_rows("bsm", [bsm_row(1), bsm_row(2)])
        wh.put_blob("img", b"\x89PNG", "image/png")
        wh.persist(tmp_path)
        table = tmp_path / "warehouse" / "bsm.ndjson"
        lines = table.read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["t_ms"] == 1
        assert (tmp_path / "warehouse" / "blobs" / "img").read_bytes() == b"\x89PNG"

    def test_empty_tables_still_written(self, tmp_path):
        Warehouse().persist(tmp_path)
        for table in ("bsm", "traffic_record", "snapshot", "latency_sample", "quarantine"):
            assert (tmp_path / "warehouse" / f"{table}.ndjson").exists()
