import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgflow.errors import InvalidArgument
from pgflow.experiments import _cosine_control
from pgflow.fields import ControlField, ScalarField, SpaceTimeGrid
from pgflow.io import (
    canonical_config,
    config_digest,
    field_to_csv,
    read_batch,
    read_csv,
    read_field,
    write_batch,
    write_csv,
    write_field,
)
from pgflow.problem import TorusGeometry
from pgflow.problems import build_problem
from pgflow.sampler import simulate

DIGEST = "0123456789abcdef0123456789abcdef"


@pytest.mark.parametrize("role", ["generic", "value", "density"])
def test_scalar_field_round_trip(tmp_path, role):
    g = SpaceTimeGrid(TorusGeometry(2, 1, 2), 0.3, 4, 5)
    f = ScalarField(g, np.random.default_rng(0).normal(size=(g.n_t, g.n_nodes)), role)
    back, dig = read_field(write_field(tmp_path / "f.fld", f, DIGEST))
    assert dig == DIGEST and back.role == role and back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_reader_takes_the_geometry_the_dump_cannot_carry(tmp_path):
    # the header stores n and n', not the noise dimension
    g = SpaceTimeGrid(TorusGeometry(2, 1, 1), 0.3, 2, 4)
    p = write_field(tmp_path / "f.fld", ScalarField(g, np.zeros((2, 16))))
    assert read_field(p)[0].grid.geometry.n_noise == 2
    assert read_field(p, g.geometry)[0].grid == g


def test_control_field_round_trip(tmp_path):
    geom = TorusGeometry(1, 3, 1)
    g = SpaceTimeGrid(geom, 0.5, 3, 8)
    u = ControlField(g, np.random.default_rng(1).normal(size=(g.n_t, g.n_nodes, 3)))
    back, dig = read_field(write_field(tmp_path / "u.fld", u))
    assert dig == "0" * 32
    np.testing.assert_array_equal(back.values, u.values)


def test_batch_round_trip(tmp_path):
    sp = build_problem("quartic_trap")
    u = _cosine_control(SpaceTimeGrid(sp.geometry, 0.2, 5, 8))
    b = simulate(sp, u, 13, 7, 2**40 + 3)
    back, dig = read_batch(write_batch(tmp_path / "b.trj", b, DIGEST))
    assert dig == DIGEST and back.seed == b.seed and back.T == b.T
    for name in ("states", "unwrapped_displacement", "noise", "controls"):
        np.testing.assert_array_equal(getattr(back, name), getattr(b, name))


def test_bad_magic_is_rejected(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"NOTADUMP" + bytes(64))
    with pytest.raises(InvalidArgument):
        read_field(p)
    with pytest.raises(InvalidArgument):
        read_batch(p)


def test_digest_must_be_sixteen_bytes(tmp_path):
    g = SpaceTimeGrid(TorusGeometry(1), 0.3, 2, 4)
    with pytest.raises(InvalidArgument):
        write_field(tmp_path / "f", ScalarField(g, np.zeros((2, 4))), "abcd")


@given(st.dictionaries(st.text("abcdefgh._", min_size=1, max_size=8), st.one_of(st.integers(), st.floats(allow_nan=False), st.text("xyz", max_size=4))))
def test_digest_ignores_key_order(cfg):
    flipped = dict(reversed(list(cfg.items())))
    assert config_digest(cfg) == config_digest(flipped)
    assert len(config_digest(cfg)) == 32


def test_digest_is_stable_and_sensitive():
    cfg = {"problem": "quartic_trap", "n_t": 64, "dtau": 0.5}
    assert canonical_config(cfg) == "dtau=0.5\nn_t=64\nproblem=quartic_trap\n"
    assert config_digest(cfg) == config_digest(dict(cfg))
    assert config_digest(cfg) != config_digest({**cfg, "n_t": 65})


def test_csv_carries_the_digest_line(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 0.1], {"a": 2, "b": None}], DIGEST)
    assert p.read_text().splitlines()[0] == f"# config_digest={DIGEST}"
    dig, header, rows = read_csv(p)
    assert dig == DIGEST and header == ["a", "b"] and rows == [["1", "0.1"], ["2", ""]]


def test_floats_in_csv_round_trip_exactly(tmp_path):
    vals = [0.1 + 0.2, np.pi, 1e-300, -2.5e17]
    _, _, rows = read_csv(write_csv(tmp_path / "f.csv", ["v"], [[v] for v in vals]))
    assert [float(r[0]) for r in rows] == vals


def test_field_csv_is_long_format(tmp_path):
    g = SpaceTimeGrid(TorusGeometry(2), 0.3, 3, 4)
    f = ScalarField(g, np.arange(g.n_t * g.n_nodes, dtype=float).reshape(g.n_t, g.n_nodes))
    _, header, rows = read_csv(field_to_csv(tmp_path / "f.csv", f))
    assert header == ["t", "x1", "x2", "value"]
    assert len(rows) == g.n_t * g.n_nodes
    assert float(rows[-1][-1]) == f.values[-1, -1]
