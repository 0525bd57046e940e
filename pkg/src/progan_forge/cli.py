"""Command-line entry point.

One binary, one subcommand per pipeline step: prepare, augment, synth,
train, sample, swd, iscore, survey serve / survey report. Exit codes:
0 success, 1 usage error, 2 data error. ``PROGAN_FORGE_HOME`` supplies
the default output root when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datapipe, metrics, networks, survey, training

ENV_HOME = "PROGAN_FORGE_HOME"


class CliError(Exception):
    """Data-level failure; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _out_dir(args, *fallback) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    home = os.environ.get(ENV_HOME)
    if home:
        return Path(home).joinpath(*fallback)
    raise CliError(
        f"--out is required (or set {ENV_HOME} for a default output root)"
    )


@contextlib.contextmanager
def _thread_cap(threads):
    if threads is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=threads):
        yield


def _parse_stages(text: str):
    stages = []
    for part in text.split(","):
        res, _, iters = part.partition(":")
        if not iters:
            raise CliError(f"bad stage {part!r}: expected RESOLUTION:ITERATIONS")
        stages.append((int(res), int(iters)))
    return tuple(stages)


def build_parser() -> _Parser:
    parser = _Parser(prog="progan-forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("prepare", help="manifest + centre crop + resolution store")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--src", help="directory of convention-named source images")
    src.add_argument("--manifest", help="existing manifest CSV")
    p.add_argument("--out", help="store root (default: $PROGAN_FORGE_HOME/store)")
    p.add_argument("--max-resolution", type=int, default=1024,
                   help="largest resolution folder to build")
    p.add_argument("--mode", choices=["downsample", "crop"], default="downsample",
                   help="lower resolutions via box-mean pyramid or literal centre crops")
    p.add_argument("--save-manifest", help="also write the scanned manifest CSV here")

    p = sub.add_parser("augment", help="write the 9-transform suite per image")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--src", help="directory of convention-named source images")
    src.add_argument("--manifest", help="manifest CSV")
    p.add_argument("--out", help="output directory (default under $PROGAN_FORGE_HOME)")
    p.add_argument("--seed", type=int, default=0, help="augmentation seed")
    p.add_argument("--threads", type=int, default=None, help="worker cap (serial when unset)")

    p = sub.add_parser("synth", help="procedural synthetic river corpus")
    p.add_argument("--out", help="output directory (default under $PROGAN_FORGE_HOME)")
    p.add_argument("--count", type=int, default=100, help="number of images")
    p.add_argument("--resolution", type=int, default=64, help="square image side, power of two")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--style", choices=list(datapipe.STYLES), default=None,
                   help="fix one palette (random mix when unset)")
    p.add_argument("--masks", action="store_true", help="also write ground-truth masks")

    p = sub.add_parser("train", help="progressive WGAN-GP training")
    p.add_argument("--preset", choices=["paper", "desk"], default="desk",
                   help="stage/iteration schedule preset")
    p.add_argument("--data", required=True, help="resolution store root")
    p.add_argument("--out", help="run directory (default under $PROGAN_FORGE_HOME)")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--batch-size", type=int, default=None, help="override preset batch size")
    p.add_argument("--stages", default=None,
                   help="override stage budgets, e.g. 4:2000,8:3000")
    p.add_argument("--net-spec", default=None, help="network spec key-value file")
    p.add_argument("--from-checkpoint", default=None, help="resume from checkpoint dir")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")

    p = sub.add_parser("sample", help="tile a grid of generator samples")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--out", help="output PNG (default under $PROGAN_FORGE_HOME)")
    p.add_argument("--count", type=int, default=64, help="images in the grid")
    p.add_argument("--seed", type=int, default=0, help="latent seed")

    p = sub.add_parser("swd", help="per-resolution Laplacian SWD report")
    p.add_argument("--real", required=True, help="real resolution-store root")
    p.add_argument("--fake", required=True, help="fake resolution-store root")
    p.add_argument("--resolutions", default=None,
                   help="comma list (default: every shared folder >= 8)")
    p.add_argument("--out", help="CSV path (default under $PROGAN_FORGE_HOME)")
    p.add_argument("--seed", type=int, default=0, help="projection/patch seed")
    p.add_argument("--projections", type=int, default=512, help="random directions")
    p.add_argument("--patches", type=int, default=128, help="patches per image")
    p.add_argument("--patch-side", type=int, default=7, help="square patch side")

    p = sub.add_parser("iscore", help="Inception Score from a ProbMatrix CSV or images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--probs", help="ProbMatrix CSV (img_id,p0..pK-1)")
    src.add_argument("--images", help="directory of images for the bundled classifier")
    p.add_argument("--splits", type=int, default=1, help="row splits to average over")
    p.add_argument("--resolution", type=int, default=32,
                   help="bundled classifier input resolution")
    p.add_argument("--seed", type=int, default=0, help="classifier training seed")
    p.add_argument("--save-probs", help="write the classified ProbMatrix CSV here")

    p = sub.add_parser("survey", help="real-vs-fake survey service")
    ssub = p.add_subparsers(dest="survey_command", parser_class=_Parser)
    serve = ssub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--real", required=True, help="directory of real images")
    serve.add_argument("--fake", required=True, help="directory of fake images")
    serve.add_argument("--log", help="event log JSONL (default under $PROGAN_FORGE_HOME)")
    serve.add_argument("--host", default="127.0.0.1", help="bind address")
    serve.add_argument("--port", type=int, default=8000, help="bind port")
    serve.add_argument("--ui", default=None, help="static UI directory to serve at /")
    report = ssub.add_parser("report", help="confusion matrix from the event log")
    report.add_argument("--log", required=True, help="event log JSONL")
    report.add_argument("--json", action="store_true", help="machine-readable output")

    return parser


def _load_records(args):
    if args.manifest:
        return datapipe.load_manifest(args.manifest)
    return datapipe.build_manifest(args.src)


def cmd_prepare(args) -> int:
    records = _load_records(args)
    if not records:
        raise CliError("no source images found")
    out = _out_dir(args, "store")
    if args.save_manifest:
        datapipe.save_manifest(args.save_manifest, records)
    store = datapipe.build_resolution_store(records, out, args.max_resolution, args.mode)
    counts = store.counts()
    print(f"store at {out}: {len(counts)} resolution folders, {counts[args.max_resolution]} images each")
    return 0


def cmd_augment(args) -> int:
    records = _load_records(args)
    if not records:
        raise CliError("no source images found")
    out = _out_dir(args, "augmented")
    spec = datapipe.AugmentSpec(seed=args.seed)
    total = datapipe.augment_corpus(records, out, spec, n_jobs=args.threads or 1)
    print(f"{total} images in {out} ({len(records)} originals x 10)")
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args, "synth")
    masks_dir = (out / "masks") if args.masks else None
    records = datapipe.synth_corpus(
        out, args.count, args.resolution, seed=args.seed,
        style=args.style, masks_dir=masks_dir,
    )
    for rec in records:  # manifest is part of the output tree: keep it relocatable
        rec.path = Path(rec.path).name
    datapipe.save_manifest(out / "manifest.csv", records)
    print(f"{len(records)} synthetic images at {out}")
    return 0


def _network_spec_for(args, plan) -> networks.NetworkSpec:
    if args.net_spec:
        return networks.load_network_spec(args.net_spec)
    if args.preset == "paper":
        return networks.NetworkSpec(max_resolution=plan.max_resolution)
    return networks.desk_spec(max_resolution=plan.max_resolution)


def cmd_train(args) -> int:
    out = _out_dir(args, "train")
    store = datapipe.ResolutionStore(args.data)
    if args.from_checkpoint:
        trainer = training.ProgressiveTrainer.from_checkpoint(args.from_checkpoint, out)
    else:
        overrides = {"seed": args.seed}
        if args.batch_size:
            overrides["batch_size"] = args.batch_size
        if args.stages:
            overrides["stages"] = _parse_stages(args.stages)
        plan = training.make_plan(args.preset, **overrides)
        spec = _network_spec_for(args, plan)
        g = networks.build_generator(spec, seed=args.seed + 1)
        d = networks.build_discriminator(spec, seed=args.seed + 2)
        trainer = training.ProgressiveTrainer(plan, g, d, out)
    final = trainer.fit(store)
    print(
        f"finished at stage {final.stage_index} "
        f"({final.global_iteration} iterations); run dir {out}"
    )
    return 0


def cmd_sample(args) -> int:
    ckpt = training.Checkpoint.load(args.checkpoint)
    g = networks.build_generator(ckpt.net_spec, ckpt.g_seed)
    g.load_state(ckpt.g_params)
    images = training.sample_images(
        g, args.count, seed=args.seed, stage=ckpt.stage_index, alpha=ckpt.alpha
    )
    cols = int(np.ceil(np.sqrt(args.count)))
    rows = int(np.ceil(args.count / cols))
    grid = training.tile_grid(images, rows, cols)
    out = Path(args.out) if args.out else _out_dir(args, "samples.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    Image.fromarray(grid).save(out)
    print(f"{args.count} samples tiled to {out}")
    return 0


def cmd_swd(args) -> int:
    real = datapipe.ResolutionStore(args.real)
    fake = datapipe.ResolutionStore(args.fake)
    if args.resolutions:
        resolutions = [int(r) for r in args.resolutions.split(",")]
    else:
        shared = sorted(real.resolutions & fake.resolutions)
        resolutions = [r for r in shared if r >= max(8, args.patch_side)]
        if not resolutions:
            raise CliError("stores share no resolution folders big enough to sample")
    config = metrics.SwdConfig(
        patches_per_image=args.patches, patch_side=args.patch_side,
        n_projections=args.projections, seed=args.seed,
    )
    report = metrics.swd_report(real, fake, resolutions, config)
    out = Path(args.out) if args.out else _out_dir(args, "swd.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save_csv(out)
    for res in sorted(report.scores):
        print(f"{res}x{res}: {report.scores[res]:.6g}")
    print(f"report written to {out}")
    return 0


def cmd_iscore(args) -> int:
    if args.probs:
        _, probs = metrics.load_prob_matrix(args.probs)
    else:
        from .classifier import bundled_classifier

        images_dir = Path(args.images)
        paths = sorted(
            p for p in images_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not paths:
            raise CliError(f"no images in {images_dir}")
        images = np.stack([datapipe.load_rgb(p) for p in paths])
        if images.shape[1] != args.resolution:
            raise CliError(
                f"images are {images.shape[1]}x{images.shape[2]}, "
                f"bundled classifier expects {args.resolution}"
            )
        clf = bundled_classifier(resolution=args.resolution, seed=args.seed)
        probs = metrics.classify(clf, images)
        if args.save_probs:
            metrics.save_prob_matrix(args.save_probs, probs, ids=[p.stem for p in paths])
    score = metrics.inception_score(probs, splits=args.splits)
    print(f"inception score: {score:.5f} ({probs.shape[0]} images, {probs.shape[1]} classes)")
    return 0


def cmd_survey(args) -> int:
    if args.survey_command == "serve":
        import uvicorn

        pool = survey.ImagePool.from_dirs(args.real, args.fake)
        log = Path(args.log) if args.log else _out_dir(args, "survey.jsonl")
        app = survey.create_app(pool, log, ui_dir=args.ui)
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0
    if args.survey_command == "report":
        matrix, per_image, skipped = survey.aggregate(args.log)
        payload = matrix.as_dict()
        payload["skipped_records"] = skipped
        if args.json:
            print(json.dumps(payload, indent=1))
        else:
            print(f"              guessed real   guessed fake")
            print(f"actually real {matrix.tp:>12} {matrix.fn:>14}")
            print(f"actually fake {matrix.fp:>12} {matrix.tn:>14}")
            print(f"total {matrix.total}, accuracy {matrix.accuracy:.4f}, "
                  f"skipped {skipped} corrupt record(s)")
        return 0
    raise CliError("survey needs a subcommand: serve or report")


COMMANDS = {
    "prepare": cmd_prepare,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "swd": cmd_swd,
    "iscore": cmd_iscore,
    "survey": cmd_survey,
}

DATA_ERRORS = (
    CliError,
    FileNotFoundError,
    datapipe.FilenameError,
    datapipe.ImageSizeError,
    metrics.ProbMatrixError,
    metrics.PyramidError,
    training.PlanError,
    training.TrainingDiverged,
    survey.SurveyError,
    ValueError,
    KeyError,
)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1
    try:
        with _thread_cap(getattr(args, "threads", None)):
            return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        sys.stderr.write(f"progan-forge {args.command}: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
