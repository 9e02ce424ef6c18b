import json

import numpy as np
import pytest

from conftest import make_mask, make_volume
from oracles import write_minimal_nifti
from relict.errors import (
    ConstantInputWarning,
    CorpusError,
    DataError,
    DegenerateInputError,
    DimensionError,
    FormatError,
)
from relict.volio import (
    Corpus,
    EmbeddingVector,
    FeatureMap4D,
    Volume3D,
    load_corpus,
    load_embedding,
    load_feature_map,
    load_mask,
    load_volume,
    write_embedding,
    write_feature_map,
    write_mask,
    write_volume,
    zscore_normalize,
)


class TestNiftiRead:
    def test_zero_volume(self, tmp_path):
        path = tmp_path / "zeros.nii"
        write_minimal_nifti(path, np.zeros((4, 4, 4)), spacing=(1, 1, 1))
        vol = load_volume(path)
        assert vol.dims == (4, 4, 4)
        assert vol.voxels.size == 64
        assert np.all(vol.voxels == 0.0)
        assert vol.spacing == (1.0, 1.0, 1.0)
        assert vol.id == "zeros"

    def test_payload_shorter_than_header(self, tmp_path):
        path = tmp_path / "short.nii"
        write_minimal_nifti(path, np.zeros((2, 2, 2)), voxel_count_override=7)
        with pytest.raises(DimensionError):
            load_volume(path)

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "garbage.nii"
        path.write_bytes(b"\x01" * 400)
        with pytest.raises(FormatError):
            load_volume(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "trunc.nii"
        path.write_bytes(b"\x5c\x01\x00\x00")  # sizeof_hdr only
        with pytest.raises(FormatError):
            load_volume(path)

    def test_non_3d_rejected(self, tmp_path, rng):
        path = tmp_path / "vol4d.nii"
        write_minimal_nifti(path, rng.random((3, 3, 3)))
        blob = bytearray(path.read_bytes())
        blob[40:42] = (4).to_bytes(2, "little")  # dim[0] = 4
        path.write_bytes(bytes(blob))
        with pytest.raises(DimensionError):
            load_volume(path)

    def test_nan_voxels_rejected(self, tmp_path):
        arr = np.zeros((3, 3, 3), dtype=np.float32)
        arr[1, 1, 1] = np.nan
        path = tmp_path / "nan.nii"
        write_minimal_nifti(path, arr)
        with pytest.raises(DataError):
            load_volume(path)

    def test_nonpositive_spacing_rejected(self, tmp_path):
        path = tmp_path / "span.nii"
        write_minimal_nifti(path, np.zeros((3, 3, 3)), spacing=(1.0, 0.0, 1.0))
        with pytest.raises(DataError):
            load_volume(path)

    def test_flat_order_x_fastest(self, tmp_path):
        arr = np.arange(8, dtype=np.float32).reshape((2, 2, 2), order="F")
        path = tmp_path / "order.nii"
        write_minimal_nifti(path, arr)
        vol = load_volume(path)
        # on-disk order 0..7 runs x fastest: voxels[1,0,0] is the 2nd value
        assert vol.voxels[1, 0, 0] == 1.0
        assert vol.voxels[0, 1, 0] == 2.0
        assert vol.voxels[0, 0, 1] == 4.0

    @staticmethod
    def _write_big_endian_scaled(path, arr, spacing, slope, inter):
        import struct

        arr = np.asarray(arr, dtype=np.int16)
        nx, ny, nz = arr.shape
        header = bytearray(348)
        struct.pack_into(">i", header, 0, 348)
        struct.pack_into(">8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
        struct.pack_into(">2h", header, 70, 4, 16)  # int16
        struct.pack_into(">8f", header, 76, 1.0, *spacing, 0, 0, 0, 0)
        struct.pack_into(">f", header, 108, 352.0)
        struct.pack_into(">f", header, 112, slope)
        struct.pack_into(">f", header, 116, inter)
        header[344:348] = b"n+1\x00"
        payload = arr.astype(">i2").tobytes(order="F")
        path.write_bytes(bytes(header) + b"\x00" * 4 + payload)

    def test_big_endian_with_intensity_scaling(self, tmp_path):
        arr = np.arange(27).reshape(3, 3, 3)
        path = tmp_path / "be.nii"
        self._write_big_endian_scaled(path, arr, (0.5, 1.5, 2.5), 2.0, -1.0)
        vol = load_volume(path)
        assert vol.spacing == (0.5, 1.5, 2.5)
        assert np.array_equal(vol.voxels, arr * 2.0 - 1.0)

    def test_zero_slope_means_unscaled(self, tmp_path):
        arr = np.arange(8).reshape(2, 2, 2)
        path = tmp_path / "noslope.nii"
        self._write_big_endian_scaled(path, arr, (1, 1, 1), 0.0, 99.0)
        vol = load_volume(path)
        assert np.array_equal(vol.voxels, arr)


class TestNiftiRoundTrip:
    @pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
    def test_bit_identical(self, tmp_path, rng, suffix):
        for trial in range(5):
            vol = make_volume(
                rng.standard_normal((8, 8, 8)),
                vol_id=f"t{trial}",
                spacing=(0.62, 0.62, 0.62),
            )
            path = tmp_path / f"rt{trial}{suffix}"
            write_volume(vol, path)
            loaded = load_volume(path)
            assert np.array_equal(loaded.voxels, vol.voxels)
            assert loaded.dims == vol.dims
            assert loaded.spacing == pytest.approx(vol.spacing)

    def test_deterministic_load(self, tmp_path, rng):
        vol = make_volume(rng.standard_normal((6, 5, 4)))
        path = tmp_path / "det.nii.gz"
        write_volume(vol, path)
        first = load_volume(path)
        second = load_volume(path)
        assert np.array_equal(first.voxels, second.voxels)
        assert first == second

    def test_mask_round_trip(self, tmp_path, rng):
        mask = make_mask(rng.integers(0, 4, size=(6, 6, 6)), spacing=(2.0, 1.0, 1.0))
        path = tmp_path / "mask.nii.gz"
        write_mask(mask, path)
        loaded = load_mask(path)
        assert np.array_equal(loaded.labels, mask.labels)
        assert loaded.label_set == mask.label_set

    def test_mask_rejects_non_integral(self, tmp_path):
        path = tmp_path / "frac.nii"
        write_minimal_nifti(path, np.full((3, 3, 3), 0.5, dtype=np.float32))
        with pytest.raises(DataError):
            load_mask(path)

    def test_mask_rejects_negative(self, tmp_path):
        path = tmp_path / "neg.nii"
        write_minimal_nifti(path, np.full((3, 3, 3), -1.0, dtype=np.float32))
        with pytest.raises(DataError):
            load_mask(path)


class TestDomainTypes:
    def test_volume_immutable(self, rng):
        vol = make_volume(rng.random((3, 3, 3)))
        with pytest.raises(ValueError):
            vol.voxels[0, 0, 0] = 5.0

    def test_volume_rejects_nan(self):
        arr = np.zeros((2, 2, 2))
        arr[0, 0, 0] = np.inf
        with pytest.raises(DataError):
            Volume3D(id="bad", voxels=arr)

    def test_volume_rejects_2d(self):
        with pytest.raises(DimensionError):
            Volume3D(id="flat", voxels=np.zeros((4, 4)))

    def test_mask_label_set(self):
        mask = make_mask([[[0, 2], [1, 2]], [[0, 0], [5, 1]]])
        assert mask.label_set == (1, 2, 5)

    def test_embedding_validation(self):
        with pytest.raises(DataError):
            EmbeddingVector(id="e", values=np.array([1.0, np.nan]))
        with pytest.raises(DimensionError):
            EmbeddingVector(id="e", values=np.zeros((2, 2)))

    def test_feature_map_validation(self):
        with pytest.raises(DimensionError):
            FeatureMap4D(id="f", values=np.zeros((2, 2, 2)))


class TestZscore:
    def test_moments(self, rng):
        vol = make_volume(rng.random((6, 6, 6)) * 100 + 17)
        normed = zscore_normalize(vol)
        assert abs(normed.voxels.mean()) < 1e-9
        assert abs(normed.voxels.std() - 1.0) < 1e-9
        assert normed.id == vol.id
        assert normed.dims == vol.dims
        assert normed.spacing == vol.spacing

    def test_two_point_case(self):
        vol = make_volume(np.array([0.0, 2.0]).reshape(2, 1, 1))
        normed = zscore_normalize(vol)
        assert np.array_equal(normed.voxels.ravel(), [-1.0, 1.0])

    def test_constant_returns_zeros_with_warning(self):
        vol = make_volume(np.full((3, 3, 3), 5.0))
        with pytest.warns(ConstantInputWarning):
            normed = zscore_normalize(vol)
        assert np.all(normed.voxels == 0.0)

    def test_idempotent(self, rng):
        vol = make_volume(rng.standard_normal((5, 5, 5)) * 3 + 2)
        once = zscore_normalize(vol)
        twice = zscore_normalize(once)
        np.testing.assert_allclose(twice.voxels, once.voxels, atol=1e-9)

    def test_single_voxel_rejected(self):
        with pytest.raises(DegenerateInputError):
            zscore_normalize(make_volume(np.zeros((1, 1, 1))))


class TestRvec:
    def test_simple_read(self, tmp_path):
        path = tmp_path / "unit.rvec"
        write_embedding(EmbeddingVector(id="u", values=np.array([1.0, 0.0, 0.0])), path)
        emb = load_embedding(path)
        assert emb.dim == 3
        assert np.array_equal(emb.values, [1.0, 0.0, 0.0])

    def test_round_trip_bit_identical(self, tmp_path, rng):
        # float32-exact values survive the on-disk float32 encoding bit-for-bit
        values = rng.standard_normal(2048 * 64).astype(np.float32).astype(np.float64)
        path = tmp_path / "big.rvec"
        write_embedding(EmbeddingVector(id="big", values=values), path)
        loaded = load_embedding(path)
        assert np.array_equal(loaded.values, values)

    def test_truncated(self, tmp_path):
        path = tmp_path / "cut.rvec"
        write_embedding(EmbeddingVector(id="u", values=np.arange(4.0)), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DimensionError):
            load_embedding(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rvec"
        path.write_bytes(b"NOPE!" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_embedding(path)


class TestRmap:
    def test_round_trip(self, tmp_path, rng):
        values = rng.standard_normal((3, 2, 4, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "map.rmap"
        write_feature_map(FeatureMap4D(id="m", values=values), path)
        loaded = load_feature_map(path)
        assert loaded.values.shape == (3, 2, 4, 5)
        assert np.array_equal(loaded.values, values)

    def test_channel_major_order(self, tmp_path):
        values = np.arange(2 * 1 * 1 * 2, dtype=np.float64).reshape(2, 1, 1, 2)
        path = tmp_path / "order.rmap"
        write_feature_map(FeatureMap4D(id="m", values=values), path)
        raw = np.frombuffer(path.read_bytes()[21:], dtype="<f4")
        assert np.array_equal(raw, [0, 1, 2, 3])

    def test_truncated(self, tmp_path):
        path = tmp_path / "cut.rmap"
        write_feature_map(
            FeatureMap4D(id="m", values=np.zeros((1, 2, 2, 2))), path
        )
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DimensionError):
            load_feature_map(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rmap"
        path.write_bytes(b"RMAPX" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_feature_map(path)


class TestCorpus:
    def _write_manifest(self, tmp_path, entries, role="training"):
        manifest = tmp_path / "corpus.json"
        manifest.write_text(json.dumps({"role": role, "entries": entries}))
        return manifest

    def test_load_ok(self, tmp_path, rng):
        for name in ("a", "b"):
            write_volume(make_volume(rng.random((3, 3, 3))), tmp_path / f"{name}.nii")
        manifest = self._write_manifest(
            tmp_path,
            [
                {"id": "a", "volume": "a.nii", "mask": None},
                {"id": "b", "volume": "b.nii"},
            ],
        )
        corpus = load_corpus(manifest)
        assert corpus.role == "training"
        assert corpus.ids == ("a", "b")
        assert corpus.entry("a").volume.exists()

    def test_atomic_failure_on_missing_file(self, tmp_path, rng):
        write_volume(make_volume(rng.random((3, 3, 3))), tmp_path / "a.nii")
        manifest = self._write_manifest(
            tmp_path,
            [
                {"id": "a", "volume": "a.nii"},
                {"id": "b", "volume": "nonexistent.nii"},
            ],
        )
        with pytest.raises(CorpusError, match="nonexistent"):
            load_corpus(manifest)

    def test_duplicate_ids(self, tmp_path, rng):
        write_volume(make_volume(rng.random((3, 3, 3))), tmp_path / "a.nii")
        manifest = self._write_manifest(
            tmp_path,
            [{"id": "a", "volume": "a.nii"}, {"id": "a", "volume": "a.nii"}],
        )
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(manifest)

    def test_bad_role(self, tmp_path):
        manifest = self._write_manifest(tmp_path, [], role="validation")
        with pytest.raises(CorpusError):
            load_corpus(manifest)

    def test_corpus_type_role_check(self):
        with pytest.raises(CorpusError):
            Corpus(role="other", entries=())
