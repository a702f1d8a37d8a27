"""Command-line entry points.

`protodiff run --config cfg.json [--stages a,b,c]` drives the whole
pipeline from one declarative config; the remaining subcommands run single
stages against explicit paths. Exit codes: 0 success, 2 config error,
3 dependency error, 4 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, containers, corpus, metrics, mil, pipeline, prototypes
from . import autoencoder as ae_mod
from . import diffusion as diff_mod
from .errors import ConfigError, DependencyError, NumericError, ProtodiffError


def _cmd_run(args):
    config = pipeline.load_config(args.config)
    stages = args.stages.split(",") if args.stages else None
    run_dir = pipeline.run_pipeline(config, stages=stages, out_root=args.out_root)
    print(f"run complete: {run_dir}")


def _cmd_curate(args):
    config = {
        "seed": args.seed,
        "curate": {
            "embeddings_dir": args.embeddings,
            "k_min": args.k_min,
            "k_max": args.k_max,
            "restarts": args.restarts,
            "subsample": args.subsample,
            "seed": args.seed,
        },
    }
    run = pipeline.PipelineRun(config, out_root=args.out)
    pipeline.stage_curate(run)
    print(f"prototypes written under {run.stage_dir('curate')}")


def _cmd_train_ae(args):
    col = containers.read_pemb(args.data)
    h, w, c = (int(x) for x in args.latent_dims.split(","))
    cfg = ae_mod.AutoencoderConfig(
        input_dim=col.dim,
        latent=ae_mod.LatentGrid(h, w, c),
        hidden=tuple(int(x) for x in args.hidden.split(",") if x),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
    )
    model, log = ae_mod.train_autoencoder(col.data, cfg)
    ae_mod.save_autoencoder(args.out, model, {"seed": str(args.seed)})
    print(f"final train loss {log.train_losses()[-1]:.6g}; saved {args.out}")


def _cmd_train_diffusion(args):
    model_ae, _ = ae_mod.load_autoencoder(args.ae)
    col = containers.read_pemb(args.data)
    latents = model_ae.encode(col.data).data
    schedule = diff_mod.build_schedule(args.timesteps, args.beta_min,
                                       args.beta_max, args.kind)
    cfg = diff_mod.DiffusionTrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr,
        hidden=tuple(int(x) for x in args.hidden.split(",") if x),
        temb_dim=args.temb_dim, seed=args.seed,
    )
    model, losses = diff_mod.train_denoiser(latents, schedule, cfg)
    diff_mod.save_denoiser(args.out, model, schedule, {"seed": str(args.seed)})
    print(f"final loss {losses[-1]:.6g}; saved {args.out}")


def _cmd_train_classifier(args):
    model_ae, _ = ae_mod.load_autoencoder(args.ae)
    table, _ = pipeline.load_prototype_table(args.prototypes)
    cohorts, _ = pipeline._load_cohorts(args.embeddings)
    latents = np.vstack([model_ae.encode(c.data).data for c in cohorts])
    labels = pipeline._global_labels(cohorts, table)
    denoiser, schedule, _ = diff_mod.load_denoiser(args.denoiser)
    cfg = diff_mod.DiffusionTrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr,
        hidden=tuple(int(x) for x in args.hidden.split(",") if x),
        temb_dim=args.temb_dim, seed=args.seed,
    )
    model, losses, acc = diff_mod.train_guidance_classifier(
        latents, labels, schedule, cfg
    )
    diff_mod.save_classifier(args.out, model, schedule,
                             {"seed": str(args.seed),
                              "clean_accuracy": repr(acc)})
    print(f"clean accuracy {acc:.4f}; saved {args.out}")


def _cmd_sample(args):
    denoiser, schedule, _ = diff_mod.load_denoiser(args.denoiser)
    classifier = None
    if args.classifier:
        classifier, _, _ = diff_mod.load_classifier(args.classifier)
    model_ae = None
    if args.ae:
        model_ae, _ = ae_mod.load_autoencoder(args.ae)
    req = diff_mod.SampleRequest(prototype_id=args.prototype, count=args.count,
                                 guidance_w=args.guidance_w, seed=args.seed)
    batch = diff_mod.sample(req, denoiser, classifier, schedule, model_ae)
    data = batch.decoded if batch.decoded is not None else batch.latents
    refs = [f"{Path(args.out).name}:{i}" for i in range(args.count)]
    containers.write_psmp(args.out, "synthetic", data,
                          np.full(args.count, args.prototype, dtype=np.uint32),
                          refs)
    print(f"wrote {args.count} samples for prototype {args.prototype} to {args.out}")


def _cmd_build_dataset(args):
    cohorts, _ = pipeline._load_cohorts(args.embeddings)
    table, _ = pipeline.load_prototype_table(args.prototypes)
    model_ae, _ = ae_mod.load_autoencoder(args.ae)
    denoiser, schedule, _ = diff_mod.load_denoiser(args.denoiser)
    classifier = None
    if args.classifier:
        classifier, _, _ = diff_mod.load_classifier(args.classifier)
    manifest, fid_value, _ = pipeline.build_dataset_artifacts(
        cohorts, table, model_ae, denoiser, classifier, schedule, args.out,
        args.mode, args.n_per, args.guidance_w, args.seed, "cli",
    )
    print(f"{len(manifest)} entries ({args.mode}); fid {fid_value:.6g}; "
          f"wrote {args.out}")


def _cmd_train_mil(args):
    task = {
        "name": args.name,
        "task": args.task,
        "labels_csv": args.labels,
        "bags_dir": args.bags,
        "hidden": args.hidden,
        "seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
    }
    config = {"seed": args.seed, "mil": {"tasks": [task]}}
    run = pipeline.PipelineRun(config, out_root=args.out)
    pipeline.stage_train_mil(run)
    print(f"checkpoint and predictions under {run.stage_dir('train-mil')}")


def _cmd_evaluate(args):
    baselines = {}
    for spec in args.baseline or []:
        name, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--baseline expects name=path, got {spec!r}")
        baselines[name] = path
    reports = pipeline.evaluate_predictions(args.pred, args.task, baselines)
    payload = [json.loads(r.to_json()) for r in reports]
    text = metrics.format_table(reports)
    if args.out:
        Path(args.out).write_text(
            json.dumps({"reports": payload}, sort_keys=True) + "\n"
        )
    print(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="protodiff",
        description="prototype-guided latent diffusion pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run pipeline stages from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma-separated subset, e.g. curate,train-ae")
    p.add_argument("--out-root")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("curate", help="discover prototypes from embeddings")
    p.add_argument("--embeddings", required=True, help="directory of .pemb files")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--subsample", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("train-ae", help="train the latent autoencoder")
    p.add_argument("--data", required=True, help="a .pemb file")
    p.add_argument("--latent-dims", default="1,1,4", help="h,w,c")
    p.add_argument("--hidden", default="")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_ae)

    p = sub.add_parser("train-diffusion", help="train the latent denoiser")
    p.add_argument("--data", required=True, help="a .pemb file")
    p.add_argument("--ae", required=True, help="autoencoder checkpoint")
    p.add_argument("--timesteps", type=int, default=1000)
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.02)
    p.add_argument("--kind", choices=["linear", "cosine"], default="linear")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--temb-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_diffusion)

    p = sub.add_parser("train-classifier",
                       help="train the prototype guidance classifier")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--denoiser", required=True,
                   help="denoiser checkpoint (fixes the noise schedule)")
    p.add_argument("--prototypes", required=True,
                   help="curate output directory")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden", default="64")
    p.add_argument("--temb-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("sample", help="guided sampling for one prototype")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--classifier")
    p.add_argument("--ae")
    p.add_argument("--prototype", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--guidance-w", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("build-dataset",
                       help="assemble a synthetic or hybrid corpus")
    p.add_argument("--mode", choices=["synthetic", "hybrid"], required=True)
    p.add_argument("--n-per", type=int, required=True,
                   help="samples per prototype (e.g. 3000 at full scale)")
    p.add_argument("--embeddings", required=True,
                   help="directory of real cohort .pemb files")
    p.add_argument("--prototypes", required=True,
                   help="curate output directory")
    p.add_argument("--ae", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--classifier")
    p.add_argument("--guidance-w", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train-mil", help="train an attention-MIL model")
    p.add_argument("--task", choices=["subtype", "survival"], required=True)
    p.add_argument("--name", default="task")
    p.add_argument("--bags", required=True, help="directory of per-slide .pemb")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--hidden", type=int, choices=[256, 512], default=256)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_mil)

    p = sub.add_parser("evaluate", help="metrics and paired tests")
    p.add_argument("--pred", required=True, help="predictions CSV")
    p.add_argument("--truth", help="labels CSV (accepted for compatibility; "
                                   "predictions files carry their truth)")
    p.add_argument("--task", default="task")
    p.add_argument("--baseline", action="append",
                   help="name=path of a baseline predictions CSV")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except ProtodiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
