import csv
import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from stclear.cli_io import (
    SchemaError,
    instance_to_dict,
    load_instance,
    load_solution,
    main,
    save_instance,
)
from stclear.market_model import InvalidInstance

from _markets import empty_market, storage_market, transport_market, two_var_market


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestInstanceRoundTrip:
    @pytest.mark.parametrize(
        "build", [two_var_market, storage_market, transport_market, empty_market]
    )
    def test_emit_load_identity(self, tmp_path, build):
        inst = build()
        p = tmp_path / "inst.json"
        save_instance(inst, p)
        loaded = load_instance(p)
        assert instance_to_dict(loaded) == instance_to_dict(inst)
        # canonical form survives a second trip byte-for-byte
        p2 = tmp_path / "again.json"
        save_instance(loaded, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_truncated_file_is_schema_error(self, tmp_path):
        p = tmp_path / "bad.json"
        save_instance(two_var_market(), p)
        p.write_text(p.read_text()[: len(p.read_text()) // 2])
        with pytest.raises(SchemaError):
            load_instance(p)

    def test_unknown_field_named(self, tmp_path):
        from stclear.cli_io import instance_to_dict as to_dict

        doc = to_dict(two_var_market())
        doc["surprise"] = 1
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            load_instance(p)
        assert "surprise" in str(err.value)

    def test_unknown_stakeholder_field_named(self, tmp_path):
        doc = instance_to_dict(two_var_market())
        doc["suppliers"][0]["weird"] = True
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            load_instance(p)
        assert "weird" in str(err.value)

    def test_semantic_violation_is_validation_error(self, tmp_path):
        doc = instance_to_dict(two_var_market())
        doc["suppliers"][0]["capacity"] = -4.0
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(InvalidInstance):
            load_instance(p)

    def test_missing_file_is_os_error(self, tmp_path):
        with pytest.raises(OSError):
            load_instance(tmp_path / "absent.json")

    @settings(max_examples=20, deadline=None)
    @given(hst.integers(min_value=0, max_value=5000))
    def test_round_trip_random_instances(self, seed):
        from _markets import random_instance

        inst = random_instance(seed)
        doc = json.dumps(instance_to_dict(inst), sort_keys=True)
        from stclear.cli_io import instance_from_dict

        again = instance_from_dict(json.loads(doc))
        assert instance_to_dict(again) == instance_to_dict(inst)


class TestGenerateCli:
    @pytest.mark.parametrize("variant", ["base", "nostorage", "unlimited", "triple"])
    def test_variants_accepted(self, tmp_path, variant):
        out = tmp_path / f"{variant}.json"
        code = main(
            [
                "generate", "--farms", "3", "--processors", "2", "--hours", "4",
                "--seed", "5", "--variant", variant, "--out", str(out),
            ]
        )
        assert code == 0
        assert load_instance(out).stakeholder_count() > 0

    def test_bad_variant_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--variant", "bogus", "--out", str(tmp_path / "x.json")])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_byte_identical_runs(self, tmp_path):
        args = ["generate", "--farms", "3", "--processors", "2", "--hours", "6", "--seed", "9"]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestClearCli:
    def test_two_var_market(self, tmp_path):
        inst = tmp_path / "m.json"
        save_instance(two_var_market(), inst)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst), "--out-dir", str(out)]) == 0
        alloc = {r["stakeholder"]: r for r in read_csv(out / "allocations.csv")}
        assert float(alloc["i1"]["allocation"]) == pytest.approx(5.0)
        assert float(alloc["j1"]["allocation"]) == pytest.approx(5.0)
        assert alloc["j1"]["saturation"] == "at_capacity"
        prices = read_csv(out / "prices.csv")
        assert len(prices) == 1
        assert float(prices[0]["price"]) == pytest.approx(2.0)

    def test_storage_market_streams_grand_total(self, tmp_path):
        inst = tmp_path / "m.json"
        save_instance(storage_market(), inst)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst), "--out-dir", str(out)]) == 0
        rows = {r["stream"]: r["total"] for r in read_csv(out / "streams.csv")}
        assert rows["Grand Total"] == "0.000000000"
        assert rows["Transport (temporal) total"] == "2.500000000"
        assert "Transport (spatiotemporal) total" not in rows

    def test_empty_instance(self, tmp_path):
        inst = tmp_path / "m.json"
        save_instance(empty_market(), inst)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst), "--out-dir", str(out)]) == 0
        assert read_csv(out / "allocations.csv") == []
        assert read_csv(out / "prices.csv") == []

    def test_iteration_limit_exits_4(self, tmp_path):
        inst = tmp_path / "m.json"
        save_instance(storage_market(), inst)
        out = tmp_path / "sol"
        code = main(
            ["clear", "--instance", str(inst), "--out-dir", str(out), "--max-iters", "1"]
        )
        assert code == 4
        assert not (out / "allocations.csv").exists()

    def test_mixed_arc_gets_its_own_stream_line(self, tmp_path):
        from stclear.market_model import Consumer, MarketInstance, Supplier, TransportProvider
        from stclear.stgraph import Arc, SpaceTimeNode, TimeGrid, build_graph

        grid = TimeGrid.hourly(2)
        s0, s1 = SpaceTimeNode("a", 0), SpaceTimeNode("b", 1)
        arc = Arc(s0, s1)
        mixed = MarketInstance(
            products=("p1",),
            grid=grid,
            graph=build_graph(["a", "b"], grid, [arc]),
            suppliers=(Supplier("i1", s0, "p1", 5.0, 1.0),),
            consumers=(Consumer("j1", s1, "p1", 5.0, 9.0),),
            transporters=(TransportProvider("l1", arc, "p1", 5.0, 2.0),),
            technologies=(),
        )
        inst = tmp_path / "m.json"
        save_instance(mixed, inst)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst), "--out-dir", str(out)]) == 0
        rows = {r["stream"]: r["total"] for r in read_csv(out / "streams.csv")}
        assert "Transport (spatiotemporal) total" in rows
        assert rows["Grand Total"] == "0.000000000"


class TestAuditCli:
    def test_generated_case_passes(self, tmp_path):
        inst = tmp_path / "m.json"
        assert (
            main(
                [
                    "generate", "--farms", "2", "--processors", "1", "--hours", "6",
                    "--seed", "3", "--out", str(inst),
                ]
            )
            == 0
        )
        out = tmp_path / "audit.json"
        code = main(["audit", "--instance", str(inst), "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["status"] == "pass"

    def test_strict_flag_accepted(self, tmp_path):
        inst = tmp_path / "m.json"
        save_instance(storage_market(), inst)
        assert main(["audit", "--instance", str(inst), "--strict"]) == 0

    def test_corrupted_solution_fails(self, tmp_path):
        inst_path = tmp_path / "m.json"
        save_instance(storage_market(), inst_path)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst_path), "--out-dir", str(out)]) == 0
        # tamper with the consumer allocation: breaks the product balance
        rows = read_csv(out / "allocations.csv")
        for r in rows:
            if r["stakeholder"] == "j1":
                r["allocation"] = "3.000000000"
        with open(out / "allocations.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=rows[0].keys())
            w.writeheader()
            w.writerows(rows)
        code = main(
            ["audit", "--instance", str(inst_path), "--solution-dir", str(out)]
        )
        assert code == 1

    def test_solution_dir_round_trip_passes(self, tmp_path):
        inst_path = tmp_path / "m.json"
        save_instance(storage_market(), inst_path)
        out = tmp_path / "sol"
        assert main(["clear", "--instance", str(inst_path), "--out-dir", str(out)]) == 0
        sol = load_solution(out, load_instance(inst_path))
        assert sol.surplus == pytest.approx(42.5, abs=1e-9)
        assert (
            main(["audit", "--instance", str(inst_path), "--solution-dir", str(out)]) == 0
        )


class TestCompareCli:
    def test_storage_fixture(self, tmp_path):
        inst = tmp_path / "store.json"
        save_instance(storage_market(), inst)
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", str(inst), "--out", str(out)]) == 0
        rows = {r["case"]: r for r in read_csv(out / "store" / "surplus.csv")}
        assert float(rows["ST"]["surplus"]) == pytest.approx(42.5)
        assert float(rows["QSS"]["surplus"]) == pytest.approx(0.0)

    def test_no_temporal_arcs_delta_zero(self, tmp_path):
        inst = tmp_path / "flat.json"
        save_instance(transport_market(), inst)
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", str(inst), "--out", str(out)]) == 0
        for row in read_csv(out / "flat" / "price_delta.csv"):
            assert float(row["delta"]) == 0.0

    def test_multiple_instances(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        save_instance(storage_market(), a)
        save_instance(transport_market(), b)
        out = tmp_path / "cmp"
        code = main(
            ["compare", "--instance", str(a), "--instance", str(b), "--out", str(out)]
        )
        assert code == 0
        assert (out / "a" / "surplus.csv").exists()
        assert (out / "b" / "surplus.csv").exists()

    def test_parallel_jobs(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        save_instance(storage_market(), a)
        save_instance(transport_market(), b)
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        base = ["compare", "--instance", str(a), "--instance", str(b)]
        assert main(base + ["--out", str(serial)]) == 0
        assert main(base + ["--out", str(parallel), "--jobs", "2"]) == 0
        for stem in ("a", "b"):
            for name in ("surplus.csv", "price_delta.csv"):
                assert (serial / stem / name).read_bytes() == (
                    parallel / stem / name
                ).read_bytes()

    def test_waste_case_peak_delta_nonnegative(self, tmp_path):
        inst = tmp_path / "waste.json"
        assert (
            main(
                [
                    "generate", "--farms", "3", "--processors", "2", "--hours", "24",
                    "--seed", "4", "--out", str(inst),
                ]
            )
            == 0
        )
        out = tmp_path / "cmp"
        assert main(["compare", "--instance", str(inst), "--out", str(out)]) == 0
        rows = read_csv(out / "waste" / "price_delta.csv")
        hub = [r for r in rows if r["node"] == "hub" and r["product"] == "electricity"]
        assert hub
        peak = max(hub, key=lambda r: float(r["price_qss"]))
        assert float(peak["delta"]) >= -1e-9
