import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from grtc.formats import (
    DataFormatError,
    atomic_write,
    format_tns,
    load_tns,
    read_factors,
    read_graph,
    read_tns,
    read_triples,
    time_bin_edges,
    write_factors,
    write_graph,
    write_tns,
)
from grtc.graph import chain_graph, community_graph
from grtc.tensor_core import CPFactors, SparseObservations


def test_single_line_tns(tmp_path):
    p = tmp_path / "a.tns"
    p.write_text("1 1 1 5.0\n")
    obs = load_tns(p, shape=(2, 2, 2))
    assert obs.shape == (2, 2, 2) and obs.nnz == 1
    assert tuple(obs.indices[0]) == (0, 0, 0) and obs.values[0] == 5.0


def test_tns_shape_inference_and_header(tmp_path):
    p = tmp_path / "a.tns"
    p.write_text("# shape 3 4\n2 4 1.5\n")
    assert read_tns(p).shape == (3, 4)
    p.write_text("2 4 1.5\n3 1 -1\n")
    assert read_tns(p).shape == (3, 4)
    with pytest.raises(DataFormatError):
        read_tns(p, shape=(2, 4))


@pytest.mark.parametrize(
    "text, where",
    [
        ("1 1 x\n", ":1:"),
        ("1 1 1.0\n1 1 1 2.0\n", ":2:"),
        ("0 1 1.0\n", ":1:"),
        ("1 1.0\n", ":1:"),
        ("1 1 1.0\n1 1 2.0\n", "duplicate"),
    ],
)
def test_tns_errors_name_the_line(tmp_path, text, where):
    p = tmp_path / "bad.tns"
    p.write_text(text)
    with pytest.raises(DataFormatError, match=where):
        read_tns(p)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**32 - 1))
def test_tns_roundtrip(tmp_path_factory, shape, seed):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal(shape) * 10 ** rng.uniform(-5, 5, size=shape)
    obs = SparseObservations.from_dense(T, rng.random(shape) < 0.4)
    p = tmp_path_factory.mktemp("tns") / "x.tns"
    write_tns(p, obs)
    assert read_tns(p).equals(obs)
    assert format_tns(read_tns(p)) == p.read_text()


def test_graph_roundtrip(tmp_path):
    for W in [chain_graph(5), community_graph(30, 3, 0.5, 0.05, seed=1)]:
        W = W.multiply(np.random.default_rng(0).uniform(0.1, 2, W.shape))
        W = sp.csr_matrix(W + W.T)
        p = tmp_path / "g.txt"
        write_graph(p, W)
        R = read_graph(p)
        assert (R != W).nnz == 0
    p.write_text("# nodes 4\n1 2 1.0\n")
    assert read_graph(p).shape == (4, 4)
    assert read_graph(p, n=6).shape == (6, 6)


@pytest.mark.parametrize(
    "text",
    ["1 2\n", "1 1 1.0\n", "1 2 -1\n", "1 2 1\n2 1 1\n", "1 2 1\n1 2 3\n", "# nodes 2\n1 3 1.0\n", "a b c\n"],
)
def test_graph_errors(tmp_path, text):
    p = tmp_path / "g.txt"
    p.write_text(text)
    with pytest.raises(DataFormatError):
        read_graph(p)


def test_time_bin_edges():
    np.testing.assert_allclose(time_bin_edges(0.0, 70.0, 7), np.arange(0, 71, 10))


def test_triples_binning_and_latest_wins(tmp_path):
    p = tmp_path / "r.txt"
    # timestamps 0..70 span 7 bins of width 10; ts=70 falls in the last bin
    p.write_text("1 1 0 1.0\n1 1 5 2.0\n2 1 10 3.0\n1 2 69.9 4.0\n2 2 70 5.0\n")
    obs = read_triples(p, time_bins=7)
    assert obs.shape == (2, 2, 7)
    d = {tuple(i): v for i, v in zip(obs.indices, obs.values)}
    assert d[(0, 0, 0)] == 2.0
    assert d[(1, 0, 1)] == 3.0
    assert d[(0, 1, 6)] == 4.0
    assert d[(1, 1, 6)] == 5.0
    assert obs.nnz == 4


def test_triples_errors(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("1 1 0\n")
    with pytest.raises(DataFormatError, match=":1:"):
        read_triples(p)
    p.write_text("3 1 0 1.0\n")
    with pytest.raises(DataFormatError):
        read_triples(p, shape=(2, 2))
    p.write_text("")
    with pytest.raises(DataFormatError):
        read_triples(p)


def test_factor_roundtrip_and_errors(tmp_path):
    F = CPFactors.random((3, 4, 2), 2, 0)
    p = tmp_path / "f.npz"
    write_factors(p, F)
    G = read_factors(p)
    for a, b in zip(F, G):
        np.testing.assert_array_equal(a, b)
    (tmp_path / "bad.npz").write_text("nope")
    with pytest.raises(DataFormatError):
        read_factors(tmp_path / "bad.npz")


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "out.txt"
    atomic_write(p, "hello")
    assert p.read_text() == "hello"
    atomic_write(p, "again")
    assert p.read_text() == "again"
    assert sorted(x.name for x in p.parent.iterdir()) == ["out.txt"]
