import pytest
from hypothesis import given, strategies as st

from netod.ingest import (IngestError, format_time, parse_rates, parse_segments, parse_stops,
                          parse_time, parse_zones, stops_from_gtfs, write_rates, write_segments,
                          write_stops, write_zones)
from netod.model import Stop, StopRegistry, TransferRates, TripSegment, ZoneMap


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def registry():
    return StopRegistry([Stop("A", 42.28, -83.74), Stop("B", 42.29, -83.74),
                         Stop("BTC", 42.28, -83.75, True), Stop("YTC", 42.24, -83.61, True)])


def test_parse_stops_two_rows(tmp_path):
    p = write(tmp_path, "s.csv", "stop_id,lat,lon,is_transit_center\nBTC,42.28,-83.74,TRUE\nA,42.3,-83.7,0\n")
    reg = parse_stops(p)
    assert len(reg) == 2
    assert reg.centers == ("BTC",)


def test_parse_stops_duplicate(tmp_path):
    p = write(tmp_path, "s.csv", "stop_id,lat,lon,is_transit_center\nBTC,42,-83,1\nBTC,42,-83,1\n")
    with pytest.raises(IngestError, match="BTC"):
        parse_stops(p)


def test_parse_stops_latitude_range(tmp_path):
    p = write(tmp_path, "s.csv", "stop_id,lat,lon,is_transit_center\nA,42,-83,0\nB,95.0,-83,0\n")
    with pytest.raises(IngestError) as exc:
        parse_stops(p)
    assert exc.value.line == 3


def test_parse_stops_bad_coordinate_and_header(tmp_path):
    with pytest.raises(IngestError, match=r"a\.csv:2:"):
        parse_stops(write(tmp_path, "a.csv", "stop_id,lat,lon,is_transit_center\nA,x,-83,0\n"))
    with pytest.raises(IngestError, match="header"):
        parse_stops(write(tmp_path, "b.csv", "id,lat,lon\nA,1,2\n"))


def test_parse_segments_times(tmp_path, registry):
    p = write(tmp_path, "g.csv", "segment_id,route_id,board_stop,alight_stop,board_time,alight_time\n"
              "s1,R4,A,B,08:00:00,08:17:00\ns2,R4,A,B,25:10:00,25:20:00\n")
    s1, s2 = parse_segments(p, registry)
    assert (s1.board_time, s1.alight_time) == (28800, 29820)
    assert s2.board_time == 90600


def test_parse_segments_unknown_stop(tmp_path, registry):
    p = write(tmp_path, "g.csv", "segment_id,route_id,board_stop,alight_stop,board_time,alight_time\n"
              "s1,R4,ZZZ,B,08:00:00,08:17:00\n")
    with pytest.raises(IngestError, match="ZZZ"):
        parse_segments(p, registry)


def test_parse_segments_alight_before_board(tmp_path, registry):
    p = write(tmp_path, "g.csv", "segment_id,route_id,board_stop,alight_stop,board_time,alight_time\n"
              "s1,R4,A,B,08:00:00,07:17:00\n")
    with pytest.raises(IngestError, match="precedes"):
        parse_segments(p, registry)


def test_parse_rates_go_pass(tmp_path, registry):
    p = write(tmp_path, "r.csv", "scope,stop_id,rate\ncenter,BTC,0.232\ncenter,YTC,0.591\nother,,0.062\n")
    rates = parse_rates(p, registry)
    assert rates.p1 == {"BTC": 0.232, "YTC": 0.591}
    assert rates.p2 == 0.062


def test_parse_rates_period_pass(tmp_path, registry):
    p = write(tmp_path, "r.csv", "scope,stop_id,rate\ncenter,BTC,0.588\ncenter,YTC,0.554\nother,,0.143\n")
    rates = parse_rates(p, registry)
    assert rates.rate_for("BTC") == 0.588 and rates.rate_for(None) == 0.143


@pytest.mark.parametrize("body, match", [
    ("center,BTC,-0.1\nother,,0.1\n", "outside"),
    ("center,A,0.1\nother,,0.1\n", "transit center"),
    ("center,BTC,0.1\n", "missing 'other'"),
])
def test_parse_rates_errors(tmp_path, registry, body, match):
    with pytest.raises(IngestError, match=match):
        parse_rates(write(tmp_path, "r.csv", "scope,stop_id,rate\n" + body), registry)


def test_parse_zones(tmp_path):
    reg = StopRegistry([Stop("A", 0, 0), Stop("B", 0, 0.01), Stop("C", 0, 0.02)])
    zm = parse_zones(write(tmp_path, "z.csv", "stop_id,zone_id\nA,z1\nB,z1\nC,z2\n"), reg)
    assert len(zm.zones) == 2
    with pytest.raises(IngestError, match="C"):
        parse_zones(write(tmp_path, "y.csv", "stop_id,zone_id\nA,z1\nB,z1\n"), reg)
    with pytest.raises(IngestError, match="duplicate"):
        parse_zones(write(tmp_path, "x.csv", "stop_id,zone_id\nA,z1\nA,z1\nB,z\nC,z\n"), reg)
    ident = parse_zones(write(tmp_path, "w.csv", "stop_id,zone_id\nA,A\nB,B\nC,C\n"), reg)
    assert ident == ZoneMap.identity(reg)


def test_boolean_column_case_insensitive(tmp_path):
    p = write(tmp_path, "s.csv", "stop_id,lat,lon,is_transit_center\nA,1,1,True\nB,1,1,FALSE\nC,1,1,1\n")
    assert parse_stops(p).centers == ("A", "C")


@given(st.integers(0, 40 * 3600))
def test_time_round_trip(sec):
    assert parse_time(format_time(sec)) == sec


def test_write_then_parse_round_trip(tmp_path, registry):
    write_stops(tmp_path / "s.csv", registry)
    reg = parse_stops(tmp_path / "s.csv")
    assert reg == registry
    segs = [TripSegment("x", "R1", "A", "B", 100, 200, "2017-10-02"),
            TripSegment("y", "R2", "BTC", "A", 90000, 90600, "2017-10-03")]
    write_segments(tmp_path / "g.csv", segs)
    assert parse_segments(tmp_path / "g.csv", reg) == segs
    rates = TransferRates({"BTC": 0.232, "YTC": 0.591}, 0.062)
    write_rates(tmp_path / "r.csv", rates)
    assert parse_rates(tmp_path / "r.csv", reg) == rates
    zm = ZoneMap.from_labels({"A": "z", "B": "z", "BTC": "c", "YTC": "y"})
    write_zones(tmp_path / "z.csv", zm, reg)
    assert parse_zones(tmp_path / "z.csv", reg) == zm
    assert (tmp_path / "g.csv").read_bytes().count(b"\r") == 0


def test_stops_from_gtfs(tmp_path):
    p = write(tmp_path, "stops.txt", "stop_id,stop_name,stop_lat,stop_lon\nBTC,Blake,42.279,-83.744\n"
              "X,Main,42.28,-83.75\n")
    reg = stops_from_gtfs(p, centers=["BTC"])
    assert reg.centers == ("BTC",) and len(reg) == 2
    with pytest.raises(IngestError):
        stops_from_gtfs(p, centers=["NOPE"])
