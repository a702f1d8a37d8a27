"""Pipeline orchestration: one declarative JSON config drives
curate -> train-ae -> train-diffusion -> train-classifier -> build-dataset
-> train-mil -> evaluate.

Every stage writes only into its own directory under
<out_root>/run-<run_id>/, where the run id is a content hash of the config
and the code version, so identical configs land in the same run directory
and reruns are byte-identical. Each stage emits a provenance record with
the config hash, its seed, and digests of the artifacts it consumed.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from . import containers, corpus, metrics, mil, prototypes
from . import autoencoder as ae_mod
from . import diffusion as diff_mod
from . import rng as rngmod
from .checkpoint import load_checkpoint
from .errors import ConfigError, DependencyError
from .optim import optimizer_metadata

STAGE_ORDER = [
    "curate",
    "train-ae",
    "train-diffusion",
    "train-classifier",
    "build-dataset",
    "train-mil",
    "evaluate",
]

STAGE_DEPS = {
    "curate": [],
    "train-ae": [],
    "train-diffusion": [("train-ae", "ae.pdck")],
    "train-classifier": [("curate", "prototypes.pdck"), ("train-ae", "ae.pdck")],
    "build-dataset": [
        ("curate", "prototypes.pdck"),
        ("train-ae", "ae.pdck"),
        ("train-diffusion", "denoiser.pdck"),
        ("train-classifier", "classifier.pdck"),
    ],
    "train-mil": [],
    "evaluate": [("train-mil", "predictions")],
}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def run_id_for(config):
    tag = canonical_json(config) + "|" + __version__
    return hashlib.sha256(tag.encode()).hexdigest()[:16]


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def thread_count():
    try:
        return max(1, int(os.environ.get("PROTODIFF_THREADS", "1")))
    except ValueError:
        return 1


def load_config(path):
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


class PipelineRun:
    def __init__(self, config, out_root=None):
        self.config = config
        self.hash = config_hash(config)
        self.run_id = run_id_for(config)
        root = Path(out_root or config.get("out_root", "runs"))
        self.run_dir = root / f"run-{self.run_id}"
        self.seed = int(config.get("seed", 0))

    def stage_dir(self, stage, create=False):
        d = self.run_dir / stage
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, stage):
        """Check a stage's upstream artifacts; returns their digests."""
        digests = {}
        for dep_stage, name in STAGE_DEPS[stage]:
            path = self.stage_dir(dep_stage) / name
            if name == "predictions":
                hits = sorted(self.stage_dir(dep_stage).glob("predictions_*.csv"))
                if not hits:
                    raise DependencyError(
                        f"stage {stage!r} requires predictions from "
                        f"{dep_stage!r}; run it first"
                    )
                for h in hits:
                    digests[str(h.name)] = file_digest(h)
            elif not path.exists():
                raise DependencyError(
                    f"stage {stage!r} requires {dep_stage}/{name}; run "
                    f"{dep_stage!r} first"
                )
            else:
                digests[f"{dep_stage}/{name}"] = file_digest(path)
        return digests

    def section(self, name):
        value = self.config.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        return value

    def stage_seed(self, stage):
        section = self.section(_section_name(stage))
        return int(section.get("seed", rngmod.derive_seed(self.seed, stage)))

    def write_provenance(self, stage, inputs, outputs, extra=None):
        record = {
            "stage": stage,
            "config_hash": self.hash,
            "run_id": self.run_id,
            "seed": self.stage_seed(stage),
            "inputs": inputs,
            "outputs": sorted(outputs),
        }
        record.update(extra or {})
        path = self.stage_dir(stage, create=True) / "provenance.json"
        path.write_text(canonical_json(record) + "\n")


def _section_name(stage):
    return {
        "curate": "curate",
        "train-ae": "autoencoder",
        "train-diffusion": "diffusion",
        "train-classifier": "classifier",
        "build-dataset": "dataset",
        "train-mil": "mil",
        "evaluate": "evaluate",
    }[stage]


def _load_cohorts(embeddings_dir):
    paths = sorted(Path(embeddings_dir).glob("*.pemb"))
    if not paths:
        raise DependencyError(f"no .pemb files in {embeddings_dir}")
    return [containers.read_pemb(p) for p in paths], paths


def _csv_with_hash(path, header, rows, cfg_hash):
    with open(path, "w") as f:
        f.write(f"# config_hash={cfg_hash}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(row + "\n")


# -- stages -------------------------------------------------------------------


def stage_curate(run):
    section = run.section("curate")
    emb_dir = section.get("embeddings_dir")
    if not emb_dir:
        raise ConfigError("curate.embeddings_dir is required")
    cohorts, paths = _load_cohorts(emb_dir)
    seed = run.stage_seed("curate")
    k_min = int(section.get("k_min", 1))
    k_max = int(section.get("k_max", 8))
    restarts = int(section.get("restarts", 32))
    subsample = int(section.get("subsample", 10_000))
    out = run.stage_dir("curate", create=True)
    sets = []
    chosen = {}
    outputs = []
    for col in cohorts:
        m = min(subsample, col.rows)
        sub = prototypes.subsample_uniform(col, m, seed)
        hi = min(k_max, sub.rows - 1)
        curve = prototypes.wcss_curve(sub, k_min, hi, seed, restarts=restarts)
        elbow = prototypes.select_elbow(curve)
        result = prototypes.kmeans(sub, elbow.k, seed, restarts=restarts)
        sets.append(result)
        chosen[col.cohort_id] = {"k": elbow.k, "distinct_elbow": elbow.distinct}
        csv_path = out / f"wcss_{col.cohort_id}.csv"
        _csv_with_hash(csv_path, "k,wcss",
                       [f"{k},{w!r}" for k, w in curve.entries], run.hash)
        outputs.append(csv_path.name)
    table = prototypes.merge_prototype_sets(sets)
    from .checkpoint import save_checkpoint
    params = {}
    meta = {"config_hash": run.hash, "seed": str(seed)}
    for s in sets:
        params[f"{s.cohort_id}.centroids"] = s.centroids
        params[f"{s.cohort_id}.member_counts"] = s.member_counts.astype(np.float64)
        meta[f"wcss.{s.cohort_id}"] = repr(s.wcss)
    save_checkpoint(out / "prototypes.pdck", meta, params)
    outputs.append("prototypes.pdck")
    manifest_lines = [
        f"{gidx},{cohort},{local},{int(table.member_counts[gidx])}"
        for gidx, (cohort, local) in enumerate(table.ids)
    ]
    _csv_with_hash(out / "prototypes_manifest.txt",
                   "global_id,cohort_id,local_index,member_count",
                   manifest_lines, run.hash)
    outputs.append("prototypes_manifest.txt")
    run.write_provenance("curate", {p.name: file_digest(p) for p in paths},
                         outputs, {"chosen_k": chosen})


def load_prototype_table(stage_dir):
    meta, params = load_checkpoint(Path(stage_dir) / "prototypes.pdck")
    sets = []
    cohorts = sorted({name.split(".")[0] for name in params})
    for cohort in cohorts:
        sets.append(prototypes.PrototypeSet(
            cohort_id=cohort,
            centroids=params[f"{cohort}.centroids"],
            wcss=float(meta[f"wcss.{cohort}"]),
            seed=int(meta["seed"]),
            member_counts=params[f"{cohort}.member_counts"].astype(np.int64),
        ))
    return prototypes.merge_prototype_sets(sets), sets


def _all_embeddings(cohorts):
    return np.vstack([c.data for c in cohorts])


def stage_train_ae(run):
    section = run.section("autoencoder")
    emb_dir = run.section("curate").get("embeddings_dir")
    if not emb_dir:
        raise ConfigError("curate.embeddings_dir is required")
    cohorts, paths = _load_cohorts(emb_dir)
    data = _all_embeddings(cohorts)
    latent = section.get("latent", [1, 1, max(1, data.shape[1] // 4)])
    cfg = ae_mod.AutoencoderConfig(
        input_dim=data.shape[1],
        latent=ae_mod.LatentGrid(*latent),
        hidden=tuple(section.get("hidden", [])),
        epochs=int(section.get("epochs", 200)),
        batch_size=int(section.get("batch_size", 64)),
        lr=float(section.get("lr", 1e-4)),
        weight_decay=float(section.get("weight_decay", 1e-5)),
        seed=run.stage_seed("train-ae"),
        val_fraction=float(section.get("val_fraction", 0.0)),
    )
    model, log = ae_mod.train_autoencoder(data, cfg)
    out = run.stage_dir("train-ae", create=True)
    meta = {"config_hash": run.hash, "seed": str(cfg.seed)}
    meta.update(optimizer_metadata(cfg.lr, cfg.weight_decay,
                                   f"cosine({cfg.epochs})"))
    ae_mod.save_autoencoder(out / "ae.pdck", model, meta)
    _csv_with_hash(out / "loss.csv", "epoch,train_loss,val_loss,lr",
                   [f"{e['epoch']},{e['train_loss']!r},"
                    f"{'' if e['val_loss'] is None else repr(e['val_loss'])},"
                    f"{e['lr']!r}" for e in log.entries], run.hash)
    run.write_provenance("train-ae", {p.name: file_digest(p) for p in paths},
                         ["ae.pdck", "loss.csv"],
                         {"final_train_loss": log.train_losses()[-1]})


def _encode_all(model, cohorts):
    return [model.encode(c.data).data for c in cohorts]


def stage_train_diffusion(run):
    inputs = run.require("train-diffusion")
    section = run.section("diffusion")
    emb_dir = run.section("curate").get("embeddings_dir")
    cohorts, _ = _load_cohorts(emb_dir)
    model_ae, _ = ae_mod.load_autoencoder(run.stage_dir("train-ae") / "ae.pdck")
    latents = np.vstack(_encode_all(model_ae, cohorts))
    schedule = diff_mod.build_schedule(
        int(section.get("T", 1000)),
        float(section.get("beta_min", 1e-4)),
        float(section.get("beta_max", 0.02)),
        section.get("kind", "linear"),
    )
    cfg = diff_mod.DiffusionTrainConfig(
        steps=int(section.get("steps", 2000)),
        batch_size=int(section.get("batch_size", 64)),
        lr=float(section.get("lr", 1e-4)),
        weight_decay=float(section.get("weight_decay", 1e-5)),
        hidden=tuple(section.get("hidden", [64, 64])),
        temb_dim=int(section.get("temb_dim", 16)),
        seed=run.stage_seed("train-diffusion"),
    )
    model, losses = diff_mod.train_denoiser(latents, schedule, cfg)
    out = run.stage_dir("train-diffusion", create=True)
    meta = {"config_hash": run.hash, "seed": str(cfg.seed)}
    meta.update(optimizer_metadata(cfg.lr, cfg.weight_decay))
    diff_mod.save_denoiser(out / "denoiser.pdck", model, schedule, meta)
    _csv_with_hash(out / "loss.csv", "step,loss",
                   [f"{i},{v!r}" for i, v in enumerate(losses)], run.hash)
    run.write_provenance("train-diffusion", inputs,
                         ["denoiser.pdck", "loss.csv"],
                         {"final_loss": losses[-1]})


def _global_labels(cohorts, table):
    """Per-row global prototype ids for each cohort's embeddings."""
    blocks = []
    offsets = {}
    for gidx, (cohort, local) in enumerate(table.ids):
        offsets.setdefault(cohort, gidx)
    for col in cohorts:
        base = offsets[col.cohort_id]
        k = sum(1 for c, _ in table.ids if c == col.cohort_id)
        local = prototypes.assign_prototypes(col, table.centroids[base:base + k])
        blocks.append(base + local)
    return np.concatenate(blocks)


def stage_train_classifier(run):
    inputs = run.require("train-classifier")
    section = run.section("classifier")
    emb_dir = run.section("curate").get("embeddings_dir")
    cohorts, _ = _load_cohorts(emb_dir)
    model_ae, _ = ae_mod.load_autoencoder(run.stage_dir("train-ae") / "ae.pdck")
    table, _ = load_prototype_table(run.stage_dir("curate"))
    latents = np.vstack(_encode_all(model_ae, cohorts))
    labels = _global_labels(cohorts, table)
    diff_section = run.section("diffusion")
    schedule = diff_mod.build_schedule(
        int(diff_section.get("T", 1000)),
        float(diff_section.get("beta_min", 1e-4)),
        float(diff_section.get("beta_max", 0.02)),
        diff_section.get("kind", "linear"),
    )
    cfg = diff_mod.DiffusionTrainConfig(
        steps=int(section.get("steps", 2000)),
        batch_size=int(section.get("batch_size", 64)),
        lr=float(section.get("lr", 1e-4)),
        weight_decay=float(section.get("weight_decay", 1e-5)),
        hidden=tuple(section.get("hidden", [64])),
        temb_dim=int(section.get("temb_dim", 16)),
        seed=run.stage_seed("train-classifier"),
    )
    model, losses, clean_acc = diff_mod.train_guidance_classifier(
        latents, labels, schedule, cfg
    )
    out = run.stage_dir("train-classifier", create=True)
    meta = {"config_hash": run.hash, "seed": str(cfg.seed),
            "clean_accuracy": repr(clean_acc)}
    meta.update(optimizer_metadata(cfg.lr, cfg.weight_decay))
    diff_mod.save_classifier(out / "classifier.pdck", model, schedule, meta)
    _csv_with_hash(out / "loss.csv", "step,loss",
                   [f"{i},{v!r}" for i, v in enumerate(losses)], run.hash)
    run.write_provenance("train-classifier", inputs,
                         ["classifier.pdck", "loss.csv"],
                         {"clean_accuracy": clean_acc})


def build_dataset_artifacts(cohorts, table, model_ae, denoiser, classifier,
                            schedule, out, mode, n_per, guidance_w, seed,
                            cfg_hash):
    """Sample per-prototype PSMP files, write the corpus manifest, and
    score fidelity against the real embeddings. Returns
    (manifest, fid value, output names)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    decoded_blocks = []

    def engine_sampler(prototype, count, sample_seed):
        req = diff_mod.SampleRequest(prototype_id=prototype, count=count,
                                     guidance_w=guidance_w, seed=sample_seed)
        batch = diff_mod.sample(req, denoiser, classifier, schedule, model_ae)
        decoded_blocks.append(batch.decoded)
        name = f"samples_p{prototype:04d}.psmp"
        refs = [f"{name}:{i}" for i in range(count)]
        containers.write_psmp(out / name, "synthetic", batch.decoded,
                              np.full(count, prototype, dtype=np.uint32), refs)
        outputs.append(name)
        return refs

    manifest = corpus.build_synthetic_corpus(table, n_per, engine_sampler, seed)
    if mode == "hybrid":
        pools = corpus.real_pools_from_collections(cohorts, table)
        manifest = corpus.build_hybrid_corpus(manifest, pools, n_per, seed)
    elif mode != "synthetic":
        raise ConfigError(f"dataset.mode must be synthetic or hybrid, got {mode!r}")
    manifest.seeds["config_hash"] = cfg_hash
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    outputs.append("manifest.json")
    synth_stats = corpus.feature_stats(np.vstack(decoded_blocks))
    real_stats = corpus.feature_stats(_all_embeddings(cohorts))
    fid_value = corpus.fid(synth_stats, real_stats)
    (out / "fid.json").write_text(canonical_json(
        {"config_hash": cfg_hash, "fid": fid_value,
         "feature_space": "embedding",
         "n_synthetic": len(manifest.by_source("synthetic")),
         "n_real_reference": int(_all_embeddings(cohorts).shape[0])}
    ) + "\n")
    outputs.append("fid.json")
    return manifest, fid_value, outputs


def stage_build_dataset(run):
    inputs = run.require("build-dataset")
    section = run.section("dataset")
    emb_dir = run.section("curate").get("embeddings_dir")
    cohorts, _ = _load_cohorts(emb_dir)
    table, _ = load_prototype_table(run.stage_dir("curate"))
    model_ae, _ = ae_mod.load_autoencoder(run.stage_dir("train-ae") / "ae.pdck")
    denoiser, schedule, _ = diff_mod.load_denoiser(
        run.stage_dir("train-diffusion") / "denoiser.pdck"
    )
    classifier, _, _ = diff_mod.load_classifier(
        run.stage_dir("train-classifier") / "classifier.pdck"
    )
    manifest, fid_value, outputs = build_dataset_artifacts(
        cohorts, table, model_ae, denoiser, classifier, schedule,
        run.stage_dir("build-dataset", create=True),
        section.get("mode", "hybrid"),
        int(section.get("n_per", 100)),
        float(section.get("guidance_w", 2.0)),
        run.stage_seed("build-dataset"),
        run.hash,
    )
    run.write_provenance("build-dataset", inputs, outputs,
                         {"total_entries": len(manifest), "fid": fid_value})


def _read_bags(bags_dir, labels_rows, survival):
    bags = []
    targets = []
    for row in labels_rows:
        path = Path(bags_dir) / f"{row['slide_id']}.pemb"
        if not path.exists():
            raise DependencyError(f"missing bag file {path}")
        col = containers.read_pemb(path)
        record = mil.SurvivalRecord(row["duration"], row["event"]) if survival else None
        bags.append(mil.SlideBag(
            slide_id=row["slide_id"], patient_id=row["patient_id"],
            embeddings=col.data,
            label=None if survival else row["label"],
            survival=record,
        ))
        targets.append(record if survival else row["label"])
    return bags, targets


def stage_train_mil(run):
    section = run.section("mil")
    tasks = section.get("tasks")
    if not tasks:
        raise ConfigError("mil.tasks must list at least one task")
    out = run.stage_dir("train-mil", create=True)
    outputs = []
    inputs = {}
    ratios = tuple(section.get("ratios", [0.7, 0.1, 0.2]))
    for task in tasks:
        name = task["name"]
        survival = task.get("task", "subtype") == "survival"
        labels_rows = containers.read_labels_csv(task["labels_csv"])
        inputs[Path(task["labels_csv"]).name] = file_digest(task["labels_csv"])
        bags, targets = _read_bags(task["bags_dir"], labels_rows, survival)
        seed = int(task.get("seed", run.stage_seed("train-mil")))
        strat_labels = (
            [int(r.event) for r in targets] if survival
            else [int(t) for t in targets]
        )
        train_idx, val_idx, test_idx = mil.stratified_split(
            [b.patient_id for b in bags], strat_labels, ratios, seed
        )
        cfg = mil.TrainConfig(
            epochs=int(task.get("epochs", 20)),
            patience=int(task.get("patience", 10)),
            lr=float(task.get("lr", 1e-4)),
            weight_decay=float(task.get("weight_decay", 1e-5)),
            hidden=int(task.get("hidden", 256)),
            attn_dim=int(task.get("attn_dim", 128)),
            dropout=float(task.get("dropout", 0.25)),
            seed=seed,
            survival_bins=int(task.get("survival_bins", 4)),
        )
        pick = lambda idx: ([bags[i] for i in idx], [targets[i] for i in idx])
        train_bags, train_targets = pick(train_idx)
        val_bags, val_targets = pick(val_idx)
        test_bags, test_targets = pick(test_idx)
        if survival:
            model, log, _ = mil.train_survival(train_bags, train_targets,
                                               val_bags, val_targets, cfg)
        else:
            model, log = mil.train_subtyping(train_bags, train_targets,
                                             val_bags, val_targets, cfg)
        ckpt = f"abmil_{name}.pdck"
        meta = {"config_hash": run.hash, "task": name, "seed": str(seed)}
        meta.update(optimizer_metadata(cfg.lr, cfg.weight_decay,
                                       f"cosine({cfg.epochs})"))
        mil.save_abmil(out / ckpt, model, meta)
        outputs.append(ckpt)
        pred_name = f"predictions_{name}.csv"
        if survival:
            rows = [
                f"{b.slide_id},{mil.predict_risk(model, b)!r},"
                f"{b.survival.duration!r},{int(b.survival.event)}"
                for b in test_bags
            ]
            _csv_with_hash(out / pred_name, "slide_id,risk,duration,event",
                           rows, run.hash)
        else:
            n_classes = model.config.n_out
            header = "slide_id,label," + ",".join(
                f"score_{c}" for c in range(n_classes)
            )
            rows = []
            for b, t in zip(test_bags, test_targets):
                probs = mil.predict_proba(model, b)
                rows.append(f"{b.slide_id},{int(t)}," +
                            ",".join(repr(float(p)) for p in probs))
            _csv_with_hash(out / pred_name, header, rows, run.hash)
        outputs.append(pred_name)
        _csv_with_hash(out / f"log_{name}.csv", "epoch,train_loss,val_loss,lr",
                       [f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r}"
                        for r in log], run.hash)
        outputs.append(f"log_{name}.csv")
    run.write_provenance("train-mil", inputs, outputs)


def read_predictions_csv(path):
    lines = Path(path).read_text().splitlines()
    lines = [l for l in lines if not l.startswith("#")]
    header = lines[0].split(",")
    rows = [dict(zip(header, l.split(","))) for l in lines[1:]]
    return header, rows


def evaluate_predictions(path, task_name, baselines=None):
    """MetricReports for one predictions file; optional paired tests
    against baseline prediction files keyed by name."""
    header, rows = read_predictions_csv(path)
    reports = []
    if "risk" in header:
        risks = np.array([float(r["risk"]) for r in rows])
        durations = np.array([float(r["duration"]) for r in rows])
        events = np.array([r["event"] == "1" for r in rows])
        value = metrics.c_index(risks, durations, events)
        rep = metrics.MetricReport(task=task_name, metric="c_index",
                                   value=value, sample_count=len(rows))
        for bname, bpath in (baselines or {}).items():
            _, brows = read_predictions_csv(bpath)
            brisk = np.array([float(r["risk"]) for r in brows])
            _, _, _, p = metrics.delong_test(risks, brisk, events)
            rep.add_comparison(bname, "delong-event-discrimination", p)
        rep.notes["delong_caveat"] = (
            "paired test applies to event-vs-censored discrimination of "
            "the risk scores, not to the c-index itself"
        )
        reports.append(rep)
    else:
        score_cols = [h for h in header if h.startswith("score_")]
        labels = np.array([int(r["label"]) for r in rows])
        scores = np.array([[float(r[c]) for c in score_cols] for r in rows])
        preds = scores.argmax(axis=1)
        if len(score_cols) == 2:
            auc = metrics.auroc(scores[:, 1], labels == 1)
        else:
            auc = metrics.auroc_macro_ovr(scores, labels)
        rep_auc = metrics.MetricReport(task=task_name, metric="auroc",
                                       value=auc, sample_count=len(rows))
        rep_f1 = metrics.MetricReport(
            task=task_name, metric="macro_f1",
            value=metrics.macro_f1(preds, labels, num_classes=len(score_cols)),
            sample_count=len(rows),
        )
        for bname, bpath in (baselines or {}).items():
            _, brows = read_predictions_csv(bpath)
            bscores = np.array([[float(r[c]) for c in score_cols] for r in brows])
            mine = scores[np.arange(len(rows)), labels]
            theirs = bscores[np.arange(len(rows)), labels]
            try:
                _, p = metrics.wilcoxon_signed_rank(mine, theirs)
            except Exception:
                p = 1.0
            rep_auc.add_comparison(bname, "wilcoxon-signed-rank", p)
        reports.extend([rep_auc, rep_f1])
    return reports


def stage_evaluate(run):
    inputs = run.require("evaluate")
    section = run.section("evaluate")
    mil_dir = run.stage_dir("train-mil")
    out = run.stage_dir("evaluate", create=True)
    baselines = section.get("baselines", {})
    all_reports = []
    for pred in sorted(mil_dir.glob("predictions_*.csv")):
        task_name = pred.stem.replace("predictions_", "")
        all_reports.extend(evaluate_predictions(pred, task_name, baselines))
    payload = {
        "config_hash": run.hash,
        "reports": [json.loads(r.to_json()) for r in all_reports],
    }
    (out / "report.json").write_text(canonical_json(payload) + "\n")
    (out / "report.txt").write_text(
        f"# config_hash={run.hash}\n" + metrics.format_table(all_reports) + "\n"
    )
    run.write_provenance("evaluate", inputs, ["report.json", "report.txt"])


STAGE_FUNCS = {
    "curate": stage_curate,
    "train-ae": stage_train_ae,
    "train-diffusion": stage_train_diffusion,
    "train-classifier": stage_train_classifier,
    "build-dataset": stage_build_dataset,
    "train-mil": stage_train_mil,
    "evaluate": stage_evaluate,
}


def run_pipeline(config, stages=None, out_root=None):
    """Run the requested stages (all by default) in dependency order;
    returns the run directory."""
    run = PipelineRun(config, out_root=out_root)
    wanted = list(STAGE_ORDER) if stages is None else list(stages)
    for s in wanted:
        if s not in STAGE_FUNCS:
            raise ConfigError(
                f"unknown stage {s!r}; valid stages: {', '.join(STAGE_ORDER)}"
            )
    for s in STAGE_ORDER:
        if s in wanted:
            STAGE_FUNCS[s](run)
    return run.run_dir
