import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jobtitles.embed import PretrainedVectors, build_embedding_matrix, load_vectors, save_vectors
from jobtitles.errors import ParseError
from jobtitles.textpipe import PAD, Vocabulary


def write(tmp_path, text, name="v.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_with_header(tmp_path):
    pv = load_vectors(write(tmp_path, "2 3\na 1 0 0\nb 0 1 0\n"))
    assert pv.dim == 3 and len(pv) == 2
    assert pv.vectors["b"].tolist() == [0.0, 1.0, 0.0]


def test_load_without_header(tmp_path):
    pv = load_vectors(write(tmp_path, "x 0.1 0.2 0.3 0.4\ny 1 2 3 4\n"))
    assert pv.dim == 4


def test_row_width_mismatch(tmp_path):
    with pytest.raises(ParseError) as err:
        load_vectors(write(tmp_path, "2 3\na 1 0 0\nb 0 1\n"))
    assert err.value.line == 3


def test_non_numeric(tmp_path):
    with pytest.raises(ParseError):
        load_vectors(write(tmp_path, "a 1 zero 0\n"))


def test_embedding_copies_known_rows():
    vocab = Vocabulary(("<pad>", "<unk>", "a"), 1)
    pv = PretrainedVectors(3, {"a": np.array([1.0, 0.0, 0.0])})
    table = build_embedding_matrix(vocab, pv, seed=1)
    assert table.matrix[2].tolist() == [1.0, 0.0, 0.0]
    assert table.matrix[PAD].tolist() == [0.0, 0.0, 0.0]
    assert table.oov_count == 1
    assert np.all(np.abs(table.matrix[1]) <= 0.25)


def test_embedding_all_oov():
    vocab = Vocabulary(("<pad>", "<unk>", "a", "b"), 1)
    table = build_embedding_matrix(vocab, PretrainedVectors(5), seed=0)
    assert table.oov_count == len(vocab) - 1
    assert np.all(table.matrix[PAD] == 0)
    assert np.all(table.matrix[1:] != 0)
    assert np.all(np.abs(table.matrix) <= 0.25)


def test_embedding_deterministic():
    vocab = Vocabulary(("<pad>", "<unk>", "a", "b"), 1)
    a = build_embedding_matrix(vocab, PretrainedVectors(4), seed=5).matrix
    b = build_embedding_matrix(vocab, PretrainedVectors(4), seed=5).matrix
    assert np.array_equal(a, b)


decimals = st.decimals(min_value=-10, max_value=10, places=6, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(
    st.dictionaries(st.text(alphabet="abcxyz_", min_size=1, max_size=6), st.lists(decimals, min_size=3, max_size=3),
                    min_size=1, max_size=8),
    st.booleans(),
)
def test_rows_equal_file_vectors_exactly(tmp_path_factory, table, header):
    lines = [f"{tok} " + " ".join(str(d) for d in vec) for tok, vec in table.items()]
    if header:
        lines.insert(0, f"{len(table)} 3")
    p = tmp_path_factory.mktemp("vec") / "v.txt"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    pv = load_vectors(p)
    tokens = sorted(table)
    vocab = Vocabulary(("<pad>", "<unk>", *tokens, "zz_oov"), 1)
    m = build_embedding_matrix(vocab, pv, seed=0).matrix
    for tok in tokens:
        expected = np.array([float(str(d)) for d in table[tok]])
        assert np.array_equal(m[vocab.lookup(tok)], expected)


def test_save_load_roundtrip(tmp_path):
    pv = PretrainedVectors(2, {"a": np.array([0.1, -1 / 3]), "b": np.array([1e-8, 2.5])})
    p = tmp_path / "v.txt"
    save_vectors(pv, p)
    back = load_vectors(p)
    assert all(np.array_equal(back.vectors[k], v) for k, v in pv.vectors.items())
