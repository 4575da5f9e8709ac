import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mhdlab.dss import standard_generator
from mhdlab.energy import LEDGER_TERMS, EnergyLedger
from mhdlab.evolution import SimConfig, solve_mhdg
from mhdlab.initial import ForcingSpec, InitialSpec
from mhdlab.io import (
    FORMAT_MAJOR,
    FORMAT_MINOR,
    LEDGER_COLUMNS,
    SnapshotFormatError,
    read_fields,
    read_ledgers,
    read_snapshot,
    write_dss_generator,
    write_fields,
    write_ledgers,
    write_snapshot,
)
from mhdlab.spectral import Grid


@pytest.fixture(scope="module")
def state():
    cfg = SimConfig(
        Grid(8), epsilon=1.0, dt=1e-3, t_end=0.002,
        initial=InitialSpec("orszag_tang"), forcing=ForcingSpec("mode", amplitude=1.0),
    )
    return solve_mhdg(cfg).states[-1]


def _patch_version(path, major, minor):
    data = bytearray(path.read_bytes())
    struct.pack_into("<HH", data, 4, major, minor)
    path.write_bytes(bytes(data))


class TestSnapshots:
    def test_bitwise_roundtrip(self, state, tmp_path):
        p = tmp_path / "s.mhdw"
        write_snapshot(state, p, {"run": "x"})
        back = read_snapshot(p)
        assert back.t == state.t
        for name in ("u", "b", "p", "q", "F", "G", "v", "c"):
            np.testing.assert_array_equal(getattr(back, name).physical, getattr(state, name).physical)
        _, _, fields, meta = read_fields(p)
        assert meta["run"] == "x"
        assert list(fields)[:3] == ["u1", "u2", "u3"]

    def test_layout_is_x1_fastest(self, tmp_path):
        g = Grid(8)
        a = np.arange(512, dtype=float).reshape(8, 8, 8)
        p = tmp_path / "a.mhdw"
        write_fields(p, g, 0.5, {"a": a})
        payload = np.frombuffer(p.read_bytes()[-512 * 8 :], dtype="<f8")
        assert payload[1] == a[1, 0, 0]
        assert payload[8] == a[0, 1, 0]

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.mhdw"
        p.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(SnapshotFormatError):
            read_fields(p)

    def test_short_file(self, tmp_path):
        p = tmp_path / "short.mhdw"
        p.write_bytes(b"MHDW")
        with pytest.raises(SnapshotFormatError):
            read_fields(p)

    def test_newer_minor_warns(self, state, tmp_path):
        p = tmp_path / "s.mhdw"
        write_snapshot(state, p)
        _patch_version(p, FORMAT_MAJOR, FORMAT_MINOR + 1)
        with pytest.warns(UserWarning):
            read_snapshot(p)

    def test_unknown_major_refused(self, state, tmp_path):
        p = tmp_path / "s.mhdw"
        write_snapshot(state, p)
        _patch_version(p, FORMAT_MAJOR + 1, 0)
        with pytest.raises(SnapshotFormatError):
            read_snapshot(p)

    def test_truncated_payload(self, state, tmp_path):
        p = tmp_path / "s.mhdw"
        write_snapshot(state, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(SnapshotFormatError):
            read_snapshot(p)

    def test_missing_velocity(self, tmp_path):
        g = Grid(8)
        p = tmp_path / "p.mhdw"
        write_fields(p, g, 0.0, {"p": np.zeros(g.shape)})
        with pytest.raises(SnapshotFormatError):
            read_snapshot(p)

    def test_shape_checked_on_write(self, tmp_path):
        with pytest.raises(ValueError):
            write_fields(tmp_path / "x.mhdw", Grid(8), 0.0, {"a": np.zeros((4, 4, 4))})

    def test_dss_generator_file(self, tmp_path):
        p = tmp_path / "g.mhdw"
        write_dss_generator(standard_generator(), p, n=16)
        grid, _, fields, meta = read_fields(p)
        assert meta["lambda"] == 2.0 and meta["kind"] == "dss_generator"
        assert grid.box_length == 4.0
        assert set(fields) == {"g1", "g2", "g3"}
        assert fields["g1"][8, 8, 8] == 0.0


class TestLedgerCsv:
    def test_header_only(self, tmp_path):
        p = tmp_path / "l.csv"
        write_ledgers([], p)
        assert p.read_text().strip().split(",") == list(LEDGER_COLUMNS)
        assert read_ledgers(p) == []

    def test_zero_row(self, tmp_path):
        p = tmp_path / "l.csv"
        write_ledgers([EnergyLedger.zero(0.0, 0.1)], p)
        (back,) = read_ledgers(p)
        assert back.slack == 0.0 and back.t_b == 0.1

    @given(vals=st.lists(st.floats(-1e12, 1e12, allow_nan=False), min_size=len(LEDGER_TERMS), max_size=len(LEDGER_TERMS)))
    def test_seventeen_digit_roundtrip(self, vals, tmp_path_factory):
        p = tmp_path_factory.mktemp("csv") / "l.csv"
        led = EnergyLedger(0.1, 0.2, dict(zip(LEDGER_TERMS, vals)))
        write_ledgers([led], p)
        (back,) = read_ledgers(p)
        assert back.terms == led.terms
        assert back.slack == led.slack

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_ledgers(p)
