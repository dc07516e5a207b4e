import struct

import numpy as np
import pytest

from hsrect.cube import (CubeFormatError, HsiCube, export_spectra_csv, pseudo_rgb,
                         read_cube, write_cube, write_pgm, write_ppm)

RNG = np.random.default_rng(111)


def random_cube(h=4, w=5, s=7, ident="cube"):
    return HsiCube(RNG.uniform(size=(h, w, s)), id=ident)


class TestCubeRoundTrip:
    def test_roundtrip_within_f32_quantization(self, tmp_path):
        cube = random_cube()
        path = tmp_path / "c.hsc"
        write_cube(cube, path)
        back = read_cube(path)
        assert back.id == "c"
        assert back.data.shape == cube.data.shape
        assert np.max(np.abs(back.data - cube.data)) <= 2.0**-23

    def test_two_writes_byte_identical(self, tmp_path):
        cube = random_cube()
        p1, p2 = tmp_path / "a.hsc", tmp_path / "b.hsc"
        write_cube(cube, p1)
        write_cube(cube, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_single_voxel_layout(self, tmp_path):
        path = tmp_path / "one.hsc"
        write_cube(HsiCube(np.array([[[0.5]]]), id="one"), path)
        raw = path.read_bytes()
        assert len(raw) == 21
        assert raw[:4] == b"HSC1"
        assert struct.unpack("<III", raw[4:16]) == (1, 1, 1)
        assert raw[16] == 0
        assert struct.unpack("<f", raw[17:]) == (0.5,)

    def test_zero_byte_file_rejected(self, tmp_path):
        path = tmp_path / "empty.hsc"
        path.write_bytes(b"")
        with pytest.raises(CubeFormatError, match="truncated header"):
            read_cube(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.hsc"
        header = struct.pack("<4sIIIB", b"HSC1", 4, 4, 2, 0)
        path.write_bytes(header + b"\x00" * 16)  # needs 128 bytes
        with pytest.raises(CubeFormatError, match="truncated payload"):
            read_cube(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.hsc"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(CubeFormatError, match="magic"):
            read_cube(path)

    def test_nan_payload_rejected(self, tmp_path):
        path = tmp_path / "nan.hsc"
        header = struct.pack("<4sIIIB", b"HSC1", 1, 1, 1, 0)
        path.write_bytes(header + struct.pack("<f", float("nan")))
        with pytest.raises(CubeFormatError, match="NaN"):
            read_cube(path)

    def test_read_clamps_to_unit_interval(self, tmp_path):
        path = tmp_path / "wide.hsc"
        header = struct.pack("<4sIIIB", b"HSC1", 1, 1, 2, 0)
        path.write_bytes(header + struct.pack("<ff", -0.5, 1.5))
        cube = read_cube(path)
        assert cube.data.min() == 0.0 and cube.data.max() == 1.0

    def test_band_sequential_order(self, tmp_path):
        # band 0 written in full before band 1
        data = np.zeros((1, 2, 2))
        data[0, :, 0] = [0.1, 0.2]
        data[0, :, 1] = [0.3, 0.4]
        path = tmp_path / "bsq.hsc"
        write_cube(HsiCube(data, id="bsq"), path)
        vals = struct.unpack("<4f", path.read_bytes()[17:])
        assert vals == pytest.approx([0.1, 0.2, 0.3, 0.4])


class TestPseudoRgb:
    def test_constant_cube_all_zero(self):
        cube = HsiCube(np.full((3, 3, 31), 0.4), id="const")
        assert pseudo_rgb(cube).sum() == 0

    def test_pure_red_extreme(self):
        data = np.zeros((2, 2, 31))
        data[:, :, 24] = 1.0  # band 25, 1-indexed
        cube = HsiCube(data, id="red")
        raster = pseudo_rgb(cube)
        assert np.array_equal(raster[0, 0], [255, 0, 0])
        assert np.all(raster[:, :, 0] == 255) and raster[:, :, 1:].sum() == 0

    def test_matches_pixelwise_oracle(self):
        cube = HsiCube(RNG.uniform(size=(4, 4, 31)), id="r")
        raster = pseudo_rgb(cube)
        sel = np.stack([cube.data[:, :, 24], cube.data[:, :, 14], cube.data[:, :, 4]], axis=2)
        lo, hi = sel.min(), sel.max()
        expected = np.zeros_like(raster)
        for i in range(4):
            for j in range(4):
                for c in range(3):
                    v = min(max((sel[i, j, c] - lo) / (hi - lo), 0.0), 1.0)
                    expected[i, j, c] = int(np.floor(v * 255.0 + 0.5))
        assert np.array_equal(raster, expected)

    def test_affine_rescaling_invariance(self):
        cube = HsiCube(RNG.uniform(0.2, 0.8, size=(5, 5, 31)), id="x")
        shifted = HsiCube(np.clip(cube.data * 0.25 + 0.1, 0, 1), id="x")
        assert np.array_equal(pseudo_rgb(cube), pseudo_rgb(shifted))

    def test_band_out_of_range(self):
        cube = random_cube(s=7)
        with pytest.raises(ValueError, match="out of range"):
            pseudo_rgb(cube, bands=(8, 1, 1))
        with pytest.raises(ValueError, match="out of range"):
            pseudo_rgb(cube, bands=(0, 1, 1))

    def test_ppm_header(self, tmp_path):
        raster = pseudo_rgb(random_cube(3, 2, 31))
        path = tmp_path / "x.ppm"
        write_ppm(raster, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n2 3\n255\n")
        assert len(raw) == len(b"P6\n2 3\n255\n") + 3 * 2 * 3

    def test_pgm_header(self, tmp_path):
        path = tmp_path / "x.pgm"
        write_pgm(np.zeros((2, 3), dtype=np.uint8), path)
        assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")


class TestSpectraCsv:
    def test_single_cube_single_pixel_shape(self):
        cube = random_cube(3, 3, 5)
        text = export_spectra_csv([("gt", cube)], [(1, 2)])
        lines = text.strip().split("\n")
        assert len(lines) == 6  # header + 5 bands
        assert lines[0] == "band,gt@1:2"
        assert all(len(line.split(",")) == 2 for line in lines[1:])

    def test_same_cube_two_labels_identical_columns(self):
        cube = random_cube(3, 3, 4)
        text = export_spectra_csv([("a", cube), ("b", cube)], [(0, 0)])
        for line in text.strip().split("\n")[1:]:
            cells = line.split(",")
            assert cells[1] == cells[2]

    def test_known_values_hand_enumerated(self):
        data = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3) / 12.0
        cube = HsiCube(data, id="k")
        text = export_spectra_csv([("k", cube)], [(1, 0)])
        lines = text.strip().split("\n")
        # pixel (1,0) spectra = data[1,0,:] = [6,7,8]/12
        for b, line in enumerate(lines[1:]):
            cells = line.split(",")
            assert cells[0] == str(b + 1)
            assert float(cells[1]) == data[1, 0, b]

    def test_out_of_range_pixel(self):
        with pytest.raises(ValueError, match="out of range"):
            export_spectra_csv([("a", random_cube(2, 2, 3))], [(2, 0)])

    def test_band_count_mismatch(self):
        with pytest.raises(ValueError, match="bands"):
            export_spectra_csv([("a", random_cube(s=3)), ("b", random_cube(s=4))], [(0, 0)])

    def test_lf_line_endings(self):
        text = export_spectra_csv([("a", random_cube())], [(0, 0)])
        assert "\r" not in text and text.endswith("\n")


class TestHsiCubeType:
    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            HsiCube(np.zeros((4, 4)))

    def test_rejects_zero_bands(self):
        with pytest.raises(ValueError):
            HsiCube(np.zeros((4, 4, 0)))

    def test_dims(self):
        cube = random_cube(3, 4, 5)
        assert (cube.height, cube.width, cube.bands) == (3, 4, 5)
