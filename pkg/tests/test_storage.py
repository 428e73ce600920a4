import numpy as np
import pytest

from vortexsde import storage


class TestGridFiles:
    def test_roundtrip(self, tmp_path):
        ax = np.linspace(-3.0, 3.0, 41)
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        values = np.exp(-(gx**2 + gy**2))
        path = tmp_path / "grid.vsde"
        storage.write_grid(path, values, (3.0, 3.0))
        back, axes = storage.read_grid(path)
        np.testing.assert_array_equal(back, values)
        np.testing.assert_allclose(axes[0], ax)
        np.testing.assert_allclose(axes[1], ax)

    def test_extent_count_mismatch(self, tmp_path):
        with pytest.raises(storage.FormatError):
            storage.write_grid(tmp_path / "g", np.zeros((4, 4)), (1.0,))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOTVSX" + b"\0" * 100)
        with pytest.raises(storage.FormatError):
            storage.read_grid(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "grid.vsde"
        storage.write_grid(path, np.ones((8, 8)), (1.0, 1.0))
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(storage.FormatError):
            storage.read_grid(path)


class TestEnsembleFiles:
    def test_roundtrip_with_metadata(self, tmp_path):
        rng = np.random.default_rng(0)
        times = np.linspace(0.0, 0.5, 6)
        snaps = rng.standard_normal((6, 17, 2))
        path = tmp_path / "ens.vsde"
        storage.write_ensemble_series(path, times, snaps, {"seed": 7, "hash": "abc"})
        t2, s2, meta = storage.read_ensemble_series(path)
        np.testing.assert_array_equal(t2, times)
        np.testing.assert_array_equal(s2, snaps)
        assert meta == {"seed": "7", "hash": "abc"}

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "grid.vsde"
        storage.write_grid(path, np.ones((4, 4)), (1.0, 1.0))
        with pytest.raises(storage.FormatError):
            storage.read_ensemble_series(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "ens.vsde"
        storage.write_ensemble_series(
            path, np.array([0.0, 0.1]), np.zeros((2, 5, 2)), {}
        )
        path.write_bytes(path.read_bytes()[:-24])
        with pytest.raises(storage.FormatError):
            storage.read_ensemble_series(path)


class TestReports:
    def test_csv_quoting_roundtrip(self, tmp_path):
        path = tmp_path / "report.csv"
        rows = [["a", 'quote "x", comma', 1.5], ["b", "plain", -2.0]]
        storage.write_report(path, ["name", "note", "value"], rows)
        header, body = storage.read_report(path)
        assert header == ["name", "note", "value"]
        assert body[0] == ["a", 'quote "x", comma', "1.5"]
        assert body[1] == ["b", "plain", "-2.0"]


class TestManifest:
    def test_verify_clean(self, tmp_path):
        art = tmp_path / "data.bin"
        art.write_bytes(b"payload")
        manifest_path = tmp_path / "manifest.json"
        storage.write_manifest(manifest_path, {"k": 1}, [art], extra={"summary": {"ok": True}})
        manifest = storage.verify_manifest(manifest_path)
        assert manifest["config"] == {"k": 1}
        assert manifest["summary"] == {"ok": True}
        assert manifest["artifacts"][0]["path"] == "data.bin"
        assert manifest["artifacts"][0]["sha256"] == storage.file_sha256(art)

    def test_tamper_detected(self, tmp_path):
        art = tmp_path / "data.bin"
        art.write_bytes(b"payload")
        manifest_path = tmp_path / "manifest.json"
        storage.write_manifest(manifest_path, {}, [art])
        art.write_bytes(b"tampere")  # same size, different bytes
        with pytest.raises(storage.IntegrityError):
            storage.verify_manifest(manifest_path)

    def test_missing_artifact(self, tmp_path):
        art = tmp_path / "data.bin"
        art.write_bytes(b"payload")
        manifest_path = tmp_path / "manifest.json"
        storage.write_manifest(manifest_path, {}, [art])
        art.unlink()
        with pytest.raises(storage.IntegrityError):
            storage.verify_manifest(manifest_path)
