import struct

import numpy as np
import pytest

from wormbody import formats
from wormbody.errors import CheckpointFormatError


class TestPgm:
    def test_image_round_trip_16bit(self, tmp_path, rng):
        image = rng.random((17, 23))
        path = tmp_path / "img.pgm"
        formats.write_pgm(path, image)
        back, maxval = formats.read_pgm(path)
        assert maxval == 65535
        np.testing.assert_allclose(back, image, atol=0.5 / 65535)

    def test_samples_are_big_endian(self, tmp_path):
        path = tmp_path / "one.pgm"
        formats.write_pgm(path, np.array([[1.0]]))
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n1 1\n65535\n")
        assert raw[-2:] == struct.pack(">H", 65535)

    def test_mask_round_trip(self, tmp_path):
        mask = np.zeros((9, 9), dtype=np.uint8)
        mask[2:5, 3:8] = 1
        path = tmp_path / "mask.pgm"
        formats.write_mask_pgm(path, mask)
        np.testing.assert_array_equal(formats.read_mask_pgm(path), mask)

    def test_header_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = np.array([[3, 2], [1, 0]], dtype=np.uint8).tobytes()
        path.write_bytes(b"P5\n# comment\n2 2\n# more\n255\n" + payload)
        image, maxval = formats.read_pgm(path)
        assert maxval == 255
        np.testing.assert_allclose(image * 255, [[3, 2], [1, 0]], atol=1e-9)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "nope.pgm"
        path.write_bytes(b"P6\n1 1\n255\nx")
        with pytest.raises(ValueError):
            formats.read_pgm(path)


class TestUvRaster:
    def test_round_trip(self, tmp_path, rng):
        field = rng.normal(size=(11, 5)).astype(np.float32)
        path = tmp_path / "u.cguv"
        formats.write_uv_raster(path, field)
        np.testing.assert_array_equal(formats.read_uv_raster(path), field)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "u.cguv"
        formats.write_uv_raster(path, np.zeros((3, 7), dtype=np.float32))
        raw = path.read_bytes()
        assert raw[:4] == b"CGUV"
        assert struct.unpack("<III", raw[4:16]) == (3, 7, 0)
        assert len(raw) == 16 + 4 * 21

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "u.cguv"
        formats.write_uv_raster(path, np.ones((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            formats.read_uv_raster(path)


class TestKv:
    def test_round_trip_sorted(self, tmp_path):
        path = tmp_path / "meta.txt"
        formats.write_kv(path, {"b": "2", "a": "1", "age_hours": "37.5"})
        assert path.read_text() == "a=1\nage_hours=37.5\nb=2\n"
        assert formats.read_kv(path) == {"a": "1", "b": "2", "age_hours": "37.5"}

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "meta.txt"
        path.write_text("# header\n\nseed=7  # trailing\n")
        assert formats.read_kv(path) == {"seed": "7"}

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "meta.txt"
        path.write_text("not a pair\n")
        with pytest.raises(ValueError):
            formats.read_kv(path)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = {
            "encoder.stem.weight": rng.normal(size=(8, 1, 3, 3)).astype(np.float32),
            "encoder.stem.bias": rng.normal(size=(8,)).astype(np.float32),
            "scalar": np.float32(3.25),
        }
        path = tmp_path / "model.cgsr"
        formats.save_checkpoint(path, tensors, config_echo="kind=coarse\n")
        loaded, echo = formats.load_checkpoint(path)
        assert echo == "kind=coarse\n"
        assert list(loaded) == list(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], np.asarray(tensors[name], np.float32))

    def test_save_is_deterministic(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(4, 4)).astype(np.float32)}
        p1, p2 = tmp_path / "a.cgsr", tmp_path / "b.cgsr"
        formats.save_checkpoint(p1, tensors, "x=1\n")
        formats.save_checkpoint(p2, tensors, "x=1\n")
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.cgsr"
        formats.save_checkpoint(path, {"a": np.zeros(3, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            formats.load_checkpoint(path)

    def test_truncated_tensor_rejected(self, tmp_path):
        path = tmp_path / "trunc.cgsr"
        formats.save_checkpoint(path, {"a": np.zeros((4, 4), dtype=np.float32)})
        head = path.read_bytes()[:20]
        path.write_bytes(head)
        with pytest.raises(CheckpointFormatError):
            formats.load_checkpoint(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "v9.cgsr"
        formats.save_checkpoint(path, {})
        raw = bytearray(path.read_bytes())
        raw[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            formats.load_checkpoint(path)
