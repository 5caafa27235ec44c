"""Round trips and failure diagnostics for the stream/tensor file formats."""

import numpy as np
import pytest

from lowprec.streams import (
    StreamFormatError,
    read_stream,
    read_tensors,
    write_stream,
    write_tensors,
)


def test_binary_round_trip(tmp_path):
    chunks = [
        np.arange(12.0).reshape(3, 4),
        np.ones((2, 4)) * 0.5,
        np.array([[65504.0, -65504.0, 1e-7, 0.0]]),
    ]
    path = tmp_path / "acts.bin"
    write_stream(path, chunks)
    back = read_stream(path)
    assert len(back) == 3
    for a, b in zip(chunks, back):
        np.testing.assert_array_equal(a, b)
        assert b.dtype == np.float64


def test_binary_supports_higher_rank_chunks(tmp_path):
    chunks = [np.random.default_rng(0).normal(size=(2, 3, 5, 7))]
    path = tmp_path / "acts.bin"
    write_stream(path, chunks)
    np.testing.assert_array_equal(read_stream(path)[0], chunks[0])


def test_csv_round_trip(tmp_path):
    chunks = [np.array([[1.5, -2.25], [0.1, 1e-12]]), np.array([[3.0, 4.0]])]
    path = tmp_path / "acts.csv"
    write_stream(path, chunks)
    back = read_stream(path)
    assert len(back) == 2
    np.testing.assert_array_equal(back[0], chunks[0])  # repr() round-trips floats
    np.testing.assert_array_equal(back[1], chunks[1])


def test_csv_ignores_comment_lines(tmp_path):
    path = tmp_path / "acts.csv"
    path.write_text("# peak values per row\n1.0,2.0\n\n3.0,4.0\n")
    back = read_stream(path)
    assert len(back) == 2 and back[1][0, 1] == 4.0


def test_csv_rejects_ragged_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(StreamFormatError, match="line 2"):
        read_stream(path)


def test_csv_rejects_non_numeric(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,two\n")
    with pytest.raises(StreamFormatError, match="line 1"):
        read_stream(path)


def test_truncated_binary_payload(tmp_path):
    path = tmp_path / "acts.bin"
    write_stream(path, [np.ones((4, 4))])
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(StreamFormatError, match="truncated"):
        read_stream(path)


def test_garbage_header(tmp_path):
    path = tmp_path / "acts.bin"
    path.write_bytes(b"{not json\n")
    with pytest.raises(StreamFormatError, match="bad header"):
        read_stream(path)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(StreamFormatError):
        read_stream(tmp_path / "nope.bin")
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(StreamFormatError):
        read_stream(empty)


def test_out_of_order_chunks_are_rejected(tmp_path):
    path = tmp_path / "acts.bin"
    arr = np.zeros(2)
    header = b'{"chunk":5,"dtype":"<f8","shape":[2]}\n'
    path.write_bytes(header + arr.tobytes())
    with pytest.raises(StreamFormatError, match="labelled 5"):
        read_stream(path)


def test_writes_are_byte_deterministic(tmp_path):
    chunks = [np.linspace(0, 1, 7).reshape(1, 7)]
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_stream(a, chunks)
    write_stream(b, chunks)
    assert a.read_bytes() == b.read_bytes()


def test_rewrite_replaces_whole_file(tmp_path):
    path = tmp_path / "acts.bin"
    write_stream(path, [np.ones((8, 8))])
    write_stream(path, [np.zeros((1, 2))])
    back = read_stream(path)
    assert len(back) == 1 and back[0].shape == (1, 2)


def test_named_tensors_round_trip(tmp_path):
    tensors = {
        "conv0.weight": np.random.default_rng(1).normal(size=(4, 1, 3, 3)),
        "conv0.bias": np.zeros(4),
        "out.weight": np.eye(3),
    }
    path = tmp_path / "weights.bin"
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)  # order preserved
    for name in tensors:
        np.testing.assert_array_equal(back[name], tensors[name])


def test_tensor_file_is_not_a_stream(tmp_path):
    path = tmp_path / "weights.bin"
    write_tensors(path, {"w": np.ones(3)})
    with pytest.raises(StreamFormatError, match="missing 'chunk'"):
        read_stream(path)
