import numpy as np
import pytest

from voxelworld.imageio import ImageFormatError, read_pfm, read_png, write_pfm, write_png


class TestPNG:
    @pytest.mark.parametrize("dtype,maxval", [(np.uint8, 255), (np.uint16, 65535)])
    def test_rgb_round_trip(self, tmp_path, dtype, maxval):
        rng = np.random.default_rng(0)
        img = rng.integers(0, maxval + 1, (13, 17, 3)).astype(dtype)
        write_png(tmp_path / "x.png", img)
        assert np.array_equal(read_png(tmp_path / "x.png"), img)

    @pytest.mark.parametrize("dtype,maxval", [(np.uint8, 255), (np.uint16, 65535)])
    def test_gray_round_trip(self, tmp_path, dtype, maxval):
        rng = np.random.default_rng(1)
        img = rng.integers(0, maxval + 1, (9, 22)).astype(dtype)
        write_png(tmp_path / "g.png", img)
        assert np.array_equal(read_png(tmp_path / "g.png"), img)

    def test_deterministic_bytes(self, tmp_path):
        img = (np.arange(60).reshape(5, 4, 3) % 256).astype(np.uint8)
        write_png(tmp_path / "a.png", img)
        write_png(tmp_path / "b.png", img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_filtered_png_decodes(self, tmp_path):
        # hand-build a 2x2 gray PNG using sub (1) and up (2) filters
        import struct
        import zlib

        rows = b"\x01" + bytes([7, 3]) + b"\x02" + bytes([1, 2])
        ihdr = struct.pack(">IIBBBBB", 2, 2, 8, 0, 0, 0, 0)

        def chunk(tag, data):
            return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))

        blob = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(rows)) + chunk(b"IEND", b"")
        (tmp_path / "f.png").write_bytes(blob)
        img = read_png(tmp_path / "f.png")
        assert img.tolist() == [[7, 10], [8, 12]]

    def test_bad_signature_rejected(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"nope")
        with pytest.raises(ImageFormatError):
            read_png(tmp_path / "bad.png")

    def test_float_input_rejected(self, tmp_path):
        with pytest.raises(ImageFormatError):
            write_png(tmp_path / "f.png", np.zeros((2, 2), dtype=np.float32))


class TestPFM:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.standard_normal((7, 11)).astype(np.float32) * 100
        write_pfm(tmp_path / "d.pfm", img)
        assert np.array_equal(read_pfm(tmp_path / "d.pfm"), img)

    def test_rejects_color(self, tmp_path):
        with pytest.raises(ImageFormatError):
            write_pfm(tmp_path / "c.pfm", np.zeros((2, 2, 3), dtype=np.float32))
