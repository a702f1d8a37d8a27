import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from protodiff import pipeline
from protodiff.containers import read_psmp
from protodiff.corpus import CorpusManifest
from protodiff.errors import ConfigError, DependencyError

import toyfix


def digest_tree(root):
    out = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return out


@pytest.fixture(scope="module")
def toy_env(tmp_path_factory):
    base = tmp_path_factory.mktemp("toy")
    emb_dir = base / "embeddings"
    bags_dir = base / "bags"
    toyfix.write_embeddings(emb_dir)
    toyfix.write_bags(bags_dir)
    return base, emb_dir, bags_dir


class TestSingleStage:
    def test_curate_emits_prototypes_and_wcss(self, toy_env, tmp_path):
        base, emb_dir, bags_dir = toy_env
        config = toyfix.toy_config(emb_dir, bags_dir, tmp_path)
        run_dir = pipeline.run_pipeline(config, stages=["curate"],
                                        out_root=tmp_path)
        curate = run_dir / "curate"
        assert (curate / "prototypes.pdck").exists()
        assert (curate / "prototypes_manifest.txt").exists()
        assert (curate / "wcss_alpha.csv").exists()
        assert (curate / "wcss_beta.csv").exists()
        prov = json.loads((curate / "provenance.json").read_text())
        assert prov["stage"] == "curate"
        assert prov["config_hash"] == pipeline.config_hash(config)
        # two well-separated blobs per cohort: the elbow lands on k=2
        assert prov["chosen_k"]["alpha"]["k"] == 2
        assert prov["chosen_k"]["beta"]["k"] == 2

    def test_dependency_error_names_stage(self, toy_env, tmp_path):
        base, emb_dir, bags_dir = toy_env
        config = toyfix.toy_config(emb_dir, bags_dir, tmp_path)
        with pytest.raises(DependencyError, match="train-ae"):
            pipeline.run_pipeline(config, stages=["train-diffusion"],
                                  out_root=tmp_path)

    def test_unknown_stage_rejected(self, toy_env, tmp_path):
        base, emb_dir, bags_dir = toy_env
        config = toyfix.toy_config(emb_dir, bags_dir, tmp_path)
        with pytest.raises(ConfigError):
            pipeline.run_pipeline(config, stages=["nope"], out_root=tmp_path)


@pytest.fixture(scope="module")
def completed(tmp_path_factory):
    base = tmp_path_factory.mktemp("full")
    emb_dir = base / "embeddings"
    bags_dir = base / "bags"
    toyfix.write_embeddings(emb_dir)
    toyfix.write_bags(bags_dir)
    config = toyfix.toy_config(emb_dir, bags_dir, base / "out")
    run_dir = pipeline.run_pipeline(config, out_root=base / "out")
    return config, run_dir


class TestFullToyPipeline:
    def test_all_stage_artifacts_exist(self, completed):
        _, run_dir = completed
        for stage in pipeline.STAGE_ORDER:
            assert (run_dir / stage / "provenance.json").exists(), stage
        assert (run_dir / "evaluate" / "report.json").exists()
        assert (run_dir / "evaluate" / "report.txt").exists()

    def test_manifest_arithmetic_and_sources(self, completed):
        _, run_dir = completed
        manifest = CorpusManifest.from_json(
            (run_dir / "build-dataset" / "manifest.json").read_text()
        )
        prototypes = {e["prototype"] for e in manifest.entries}
        n_per = 10
        synth = manifest.by_source("synthetic")
        real = manifest.by_source("real")
        assert len(synth) == n_per * len(prototypes)
        assert len(synth) + len(real) == len(manifest)
        assert len(real) == len(synth)  # pools suffice in the toy

    def test_psmp_samples_decode_dim(self, completed):
        _, run_dir = completed
        files = sorted((run_dir / "build-dataset").glob("samples_p*.psmp"))
        assert files
        tag, data, ids, refs = read_psmp(files[0])
        assert tag == "synthetic"
        assert data.shape == (10, 2)
        assert (ids == ids[0]).all()

    def test_fid_reported_finite(self, completed):
        _, run_dir = completed
        fid_payload = json.loads(
            (run_dir / "build-dataset" / "fid.json").read_text()
        )
        assert np.isfinite(fid_payload["fid"])
        assert fid_payload["fid"] >= -1e-9

    def test_report_has_all_tasks_and_metrics(self, completed):
        _, run_dir = completed
        payload = json.loads((run_dir / "evaluate" / "report.json").read_text())
        by_task = {(r["task"], r["metric"]) for r in payload["reports"]}
        assert ("subtype_toy", "auroc") in by_task
        assert ("subtype_toy", "macro_f1") in by_task
        assert ("survival_toy", "c_index") in by_task
        for r in payload["reports"]:
            assert 0.0 <= r["value"] <= 1.0

    def test_config_hash_embedded_in_outputs(self, completed):
        config, run_dir = completed
        h = pipeline.config_hash(config)
        for csv in run_dir.rglob("*.csv"):
            assert csv.read_text().splitlines()[0] == f"# config_hash={h}"
        from protodiff.checkpoint import load_checkpoint
        meta, _ = load_checkpoint(run_dir / "train-ae" / "ae.pdck")
        assert meta["config_hash"] == h

    def test_rerun_is_byte_identical(self, completed, tmp_path_factory):
        config, run_dir = completed
        other_root = tmp_path_factory.mktemp("rerun")
        rerun_dir = pipeline.run_pipeline(dict(config), out_root=other_root)
        assert digest_tree(run_dir) == digest_tree(rerun_dir)
