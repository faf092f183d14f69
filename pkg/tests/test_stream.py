import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulstream.errors import ConfigError, IntegrityError, SchemaError
from simulstream.stream import (Manifest, ManifestRecord, SourceStream, TargetLanguage,
                                iter_manifest, load_manifest, manifest_from_utterances, packetize,
                                read_features, read_manifest, summarize_frames, write_features,
                                write_manifest)


def frames(n, dim=3):
    return np.arange(n * dim, dtype=np.float32).reshape(n, dim) / 1000


def test_packetize_exact_multiple():
    packets = packetize(frames(14), 7)
    assert [len(p) for p in packets] == [7, 7]
    assert [p.index for p in packets] == [1, 2]


def test_packetize_empty():
    assert packetize(np.zeros((0, 80), dtype=np.float32), 7) == []


def test_packetize_short_tail():
    packets = packetize(frames(15), 7)
    assert [len(p) for p in packets] == [7, 7, 1]
    np.testing.assert_array_equal(np.concatenate([p.frames for p in packets]), frames(15))


@pytest.mark.parametrize("q", [0, -3])
def test_packetize_rejects_bad_q(q):
    with pytest.raises(ConfigError):
        packetize(frames(4), q)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(0, 1000), q=st.integers(1, 50))
def test_packetize_roundtrip_and_count(n, q):
    data = frames(n, 2)
    packets = packetize(data, q)
    assert len(packets) == -(-n // q)
    assert all(len(p) == q for p in packets[:-1])
    if packets:
        np.testing.assert_array_equal(SourceStream(tuple(packets)).frames(), data)


def test_stream_rejects_non_finite():
    bad = frames(4)
    bad[2, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        SourceStream.from_frames(bad, 2)


def test_lang_token_spelling():
    assert TargetLanguage("es").lang_token == "<2es>"
    with pytest.raises(ConfigError):
        TargetLanguage("e s")


def test_summary_recovers_bucket():
    f = np.full((7, 2), 0.3125, dtype=np.float32)
    assert summarize_frames(f) == bytes([2, 2])


def _write_three_row_manifest(tmp_path, dim=4):
    records = []
    for i, n in enumerate([5, 7, 3]):
        write_features(tmp_path / f"f{i}.f32", frames(n, dim))
        records.append(ManifestRecord(f"u{i}", f"f{i}.f32", n, f"hello world {i}",
                                      {"es": f"hola mundo {i}", "fr": f"bonjour {i}"}))
    path = tmp_path / "test.tsv"
    write_manifest(path, Manifest(path, ["es", "fr"], records))
    return path


def test_load_manifest_three_rows(tmp_path):
    path = _write_three_row_manifest(tmp_path)
    utts = load_manifest(path, ["es", "fr"], q=2, dim=4)
    assert [u.id for u in utts] == ["u0", "u1", "u2"]
    assert all(len(u.references) == 2 for u in utts)
    assert utts[1].references["es"] == ("hola", "mundo", "1")
    assert not utts[1].loaded
    assert utts[1].n_packets == 4
    assert len(utts[1].stream) == 4
    np.testing.assert_array_equal(utts[1].stream.frames(), frames(7, 4))


def test_header_and_split(tmp_path):
    path = _write_three_row_manifest(tmp_path)
    m = read_manifest(path)
    assert path.read_text().splitlines()[0] == "id\tfeatures\tn_frames\ttranscript\tref_es\tref_fr"
    assert m.split == "test"
    assert m.languages == ["es", "fr"]


def test_missing_language_column(tmp_path):
    path = _write_three_row_manifest(tmp_path)
    with pytest.raises(SchemaError, match="ref_de"):
        load_manifest(path, ["es", "de"], dim=4)


def test_frame_count_mismatch_names_record(tmp_path):
    path = _write_three_row_manifest(tmp_path)
    write_features(tmp_path / "f1.f32", frames(6, 4))
    with pytest.raises(IntegrityError, match="u1"):
        load_manifest(path, ["es"], dim=4)


def test_manifest_roundtrip_byte_identical(tmp_path):
    path = _write_three_row_manifest(tmp_path)
    utts = load_manifest(path, dim=4)
    out = tmp_path / "copy.tsv"
    write_manifest(out, manifest_from_utterances(utts, ["es", "fr"], out))
    assert out.read_bytes() == path.read_bytes()


def test_feature_file_is_little_endian_f32(tmp_path):
    data = frames(3, 2)
    write_features(tmp_path / "x.f32", data)
    raw = (tmp_path / "x.f32").read_bytes()
    assert raw == data.astype("<f4").tobytes()
    np.testing.assert_array_equal(read_features(tmp_path / "x.f32", 3, 2), data)


def test_table1_sized_manifest_streams(tmp_path):
    """171K rows iterate lazily: no feature matrix is materialized."""
    write_features(tmp_path / "shared.f32", frames(7, 80))
    n_rows = 171_000
    lines = ["id\tfeatures\tn_frames\ttranscript\tref_es\tref_fr"]
    lines += [f"u{i}\tshared.f32\t7\t\thola\tbonjour" for i in range(n_rows)]
    path = tmp_path / "train.tsv"
    path.write_text("\n".join(lines) + "\n")
    tracemalloc.start()
    count = 0
    for utt in iter_manifest(path, ["es", "fr"]):
        assert not utt.loaded
        count += 1
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == n_rows
    # 171K feature matrices would need ~380 MB
    assert peak < 150 * 2**20
