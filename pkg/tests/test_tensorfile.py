import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatforge.errors import CorruptFile, DuplicateName, MissingFile, ShapeMismatch
from splatforge.params import BlockSpec, ParamStore, init_params
from splatforge.tensors import read_tsf1, tsf1_bytes, write_tsf1


def test_round_trip_bytes_identical(tmp_path, rng):
    arr = rng.standard_normal((3, 5, 7)).astype(np.float32).astype(np.float64)
    p = tmp_path / "a.tsf"
    write_tsf1(p, arr)
    first = p.read_bytes()
    back = read_tsf1(p)
    assert np.array_equal(back, arr)
    write_tsf1(p, back)
    assert p.read_bytes() == first


@settings(max_examples=60, deadline=None)
@given(
    dims=st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=4),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_round_trip_any_rank(tmp_path_factory, dims, seed):
    arr = np.random.default_rng(seed).standard_normal(dims).astype(np.float32)
    data = tsf1_bytes(arr.astype(np.float64))
    p = tmp_path_factory.mktemp("tsf") / "x.tsf"
    p.write_bytes(data)
    assert np.array_equal(read_tsf1(p), arr.astype(np.float64))


def test_missing_file():
    with pytest.raises(MissingFile):
        read_tsf1("/nonexistent/path/v.tsf")


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.tsf"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CorruptFile):
        read_tsf1(p)


def test_truncated_payload(tmp_path, rng):
    p = tmp_path / "t.tsf"
    write_tsf1(p, rng.standard_normal((2, 3)))
    blob = p.read_bytes()
    p.write_bytes(blob[:-3])
    with pytest.raises(CorruptFile):
        read_tsf1(p)


def test_trailing_garbage_rejected(tmp_path, rng):
    p = tmp_path / "t.tsf"
    write_tsf1(p, rng.standard_normal((2, 3)))
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(CorruptFile):
        read_tsf1(p)


# ---------------------------------------------------------------------------
# parameter store / weights archive
# ---------------------------------------------------------------------------


def _specs():
    return [
        BlockSpec("m.a.w", (4, 3, 3, 3), "uniform_fanin", fan_in=27),
        BlockSpec("m.a.b", (4,), "zeros"),
        BlockSpec("m.ln.g", (4,), "ones"),
    ]


def test_init_deterministic(tmp_path):
    s1 = init_params(_specs(), 5)
    s2 = init_params(_specs(), 5)
    p1, p2 = tmp_path / "a.tsa", tmp_path / "b.tsa"
    s1.save(p1)
    s2.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_init_seed_changes_weights():
    a = init_params(_specs(), 1).get("m.a.w")
    b = init_params(_specs(), 2).get("m.a.w")
    assert not np.array_equal(a, b)


def test_init_kinds():
    store = init_params(_specs(), 9)
    w = store.get("m.a.w")
    assert np.all(np.abs(w) <= 1.0 / np.sqrt(27) + 1e-12)
    assert np.all(store.get("m.a.b") == 0.0)
    assert np.all(store.get("m.ln.g") == 1.0)


def test_fan_in_100_bound():
    spec = [BlockSpec("x.w", (10, 100), "uniform_fanin", fan_in=100)]
    w = init_params(spec, 0).get("x.w")
    assert np.all(np.abs(w) <= 0.1)


def test_empty_spec_empty_store():
    store = init_params([], 0)
    assert list(store.names()) == []


def test_store_round_trip(tmp_path):
    store = init_params(_specs(), 3)
    p = tmp_path / "w.tsa"
    store.save(p)
    back = ParamStore.load(p)
    assert sorted(back.names()) == sorted(store.names())
    for name in store.names():
        assert np.array_equal(back.get(name), store.get(name))
    # reserialization is byte identical
    p2 = tmp_path / "w2.tsa"
    back.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_store_duplicate_name():
    store = ParamStore()
    store.add("n", np.zeros(3))
    with pytest.raises(DuplicateName):
        store.add("n", np.zeros(3))


def test_store_shape_check():
    store = init_params(_specs(), 3)
    with pytest.raises(ShapeMismatch):
        store.get("m.a.w", (1, 2))


def test_store_corrupt_archive(tmp_path):
    p = tmp_path / "w.tsa"
    init_params(_specs(), 3).save(p)
    blob = bytearray(p.read_bytes())
    blob[:4] = b"JUNK"
    p.write_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        ParamStore.load(p)
