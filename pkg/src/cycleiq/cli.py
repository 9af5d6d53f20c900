"""Command line entry point.

One subcommand per pipeline stage: synthesize data, train, translate,
score, fit the naturalness model, build reports, run the rating service.

Exit codes: 0 success, 1 runtime failure, 2 usage error. stdout carries
results only; the resolved configuration is echoed to stderr as
``config: key=value`` lines so every run can be reproduced from its log.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from cycleiq import harness, imgio, training
from cycleiq.datasets import TASKS, DatasetSpec, load_dataset, make_synthetic_dataset
from cycleiq.iqa import METRICS, NiqeModel, compute_metric, fit_niqe
from cycleiq.nets import CycleModel, translate_image


class UsageError(Exception):
    """Bad flag combination that argparse alone cannot express."""


def _echo(pairs):
    for key, value in pairs:
        print(f"config: {key}={value}", file=sys.stderr)


def _note(message):
    print(message, file=sys.stderr)


def _image_names(directory):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(
        n for n in os.listdir(directory) if n.lower().endswith((".png", ".ppm"))
    )


# -- subcommands --------------------------------------------------------


def cmd_dataset(args) -> int:
    spec = DatasetSpec(args.task, args.size, args.noise_var)
    _echo([
        ("task", spec.task), ("size", spec.size),
        ("noise_var", spec.noise_var), ("seed", args.seed), ("out", args.out),
    ])
    paths = make_synthetic_dataset(spec, args.seed, args.out)
    for split in ("train_u", "train_v", "eval_u", "eval_v"):
        print(paths[split])
    return 0


_TRAIN_FLAG_KEYS = (
    "variant", "iterations", "batch_size", "critic_iters", "learning_rate",
    "clip", "seed", "checkpoint_interval", "dataset_task", "dataset_size",
    "noise_var",
)


def _resolve_train_config(args) -> training.TrainConfig:
    # precedence: flags > config file > defaults
    mapping = training.parse_config_text(
        training.config_to_text(training.TrainConfig())
    )
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            mapping.update(training.parse_config_text(fh.read()))
    for key in _TRAIN_FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            mapping[key] = value
    return training.config_from_mapping(mapping)


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    _echo(
        line.split(" = ", 1)
        for line in training.config_to_text(cfg).strip().split("\n")
    )
    if args.data:
        data = load_dataset(args.data)
    else:
        from cycleiq.datasets import generate_dataset

        data = generate_dataset(cfg.dataset, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(training.config_to_text(cfg))
    result = training.train(cfg, data, checkpoint_dir=args.out)
    log_path = os.path.join(args.out, "log.csv")
    result.log.to_csv(log_path)
    for path in result.checkpoints:
        print(path)
    print(log_path)
    return 0


def cmd_translate(args) -> int:
    _echo([
        ("checkpoint", args.checkpoint), ("direction", args.direction),
        ("round_trip", args.round_trip), ("input", args.input),
        ("out", args.out),
    ])
    model, _ = CycleModel.load(args.checkpoint)

    def run(image):
        if args.round_trip:
            domain = "u" if args.direction == "u2v" else "v"
            return harness.round_trip(model, image, domain=domain)
        params = model.g_u if args.direction == "u2v" else model.g_v
        return translate_image(params, model.gen_cfg, image)

    if os.path.isdir(args.input):
        os.makedirs(args.out, exist_ok=True)
        for name in _image_names(args.input):
            img = imgio.load_image(os.path.join(args.input, name)).data
            out_path = os.path.join(args.out, name)
            imgio.save_image(imgio.Image(run(img)), out_path)
            print(out_path)
    else:
        img = imgio.load_image(args.input).data
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        imgio.save_image(imgio.Image(run(img)), args.out)
        print(args.out)
    return 0


def cmd_iqa(args) -> int:
    _echo([
        ("metric", args.metric), ("ref", args.ref), ("test", args.test),
        ("model", args.model),
    ])
    model = None
    if args.metric == "niqe":
        if not args.model:
            raise UsageError("--model is required for the niqe metric")
        model = NiqeModel.load(args.model)
    elif args.ref is None:
        raise UsageError(f"--ref is required for the {args.metric} metric")
    ref = imgio.load_image(args.ref) if args.ref else None
    test = imgio.load_image(args.test)
    score = compute_metric(args.metric, ref=ref, test=test, model=model)
    print(f"{score.value:.6f}")
    return 0


def cmd_niqe_fit(args) -> int:
    _echo([
        ("images", args.images), ("patch_size", args.patch_size),
        ("threshold", args.threshold), ("out", args.out),
    ])
    names = _image_names(args.images)
    if not names:
        raise FileNotFoundError(f"no images in {args.images}")
    grays = [
        imgio.load_image(os.path.join(args.images, n)).gray() for n in names
    ]
    model = fit_niqe(
        grays, patch_size=args.patch_size, sharpness_threshold=args.threshold
    )
    model.save(args.out)
    _note(f"fitted on {len(grays)} images")
    print(args.out)
    return 0


def _emit(report, fmt, out) -> int:
    text = harness.emit_report(report, fmt)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    _echo([
        ("generated", args.generated), ("truth", args.truth),
        ("label", args.label), ("format", args.format), ("out", args.out),
    ])
    row = harness.score_pairs(
        args.generated, args.truth, label=args.label,
        dataset=os.path.basename(os.path.normpath(args.truth)),
    )
    return _emit(harness.EvalReport([row]), args.format, args.out)


def cmd_noise_exp(args) -> int:
    _echo([
        ("checkpoint_a", args.checkpoint_a), ("checkpoint_c", args.checkpoint_c),
        ("data", args.data), ("noise_var", args.noise_var),
        ("seed", args.seed), ("format", args.format), ("out", args.out),
    ])
    data = load_dataset(args.data)
    report = harness.noise_experiment(
        args.checkpoint_a, args.checkpoint_c, data.eval_u,
        args.noise_var, noise_seed=args.seed,
    )
    for label, delta in sorted(harness.fsim_degradation(report).items()):
        _note(f"fsim degradation {label}: {delta:.6f}")
    return _emit(report, args.format, args.out)


def cmd_mos_serve(args) -> int:
    import uvicorn

    from cycleiq.service import StudyStore, create_app

    _echo([
        ("store", args.store), ("images", args.images),
        ("host", args.host), ("port", args.port),
    ])
    store = StudyStore.load(args.store)
    app = create_app(store, images_dir=args.images)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_mos_report(args) -> int:
    from cycleiq.service import StudyStore

    _echo([
        ("store", args.store), ("study", args.study), ("format", args.format),
    ])
    store = StudyStore.load(args.store)
    if args.study:
        study_id = args.study
    else:
        if len(store._studies) != 1:
            raise UsageError(
                f"--study is required unless the store holds exactly one "
                f"study, found {len(store._studies)}"
            )
        study_id = next(iter(store._studies))
    report = store.report(study_id)
    _note(f"raters kept={report.rater_count} removed={report.removed_count}")
    payload = report.to_dict()
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    elif args.format == "csv":
        print("method,task,mean,ratings")
        for row in payload["rows"]:
            print(f"{row['method']},{row['task']},{row['mean']!r},{row['ratings']}")
    else:
        print("| Method | Task | MOS | n |")
        print("|---|---|---|---|")
        for row in payload["rows"]:
            print(
                f"| {row['method']} | {row['task']} | {row['mean']:.2f} "
                f"| {row['ratings']} |"
            )
    return 0


# -- wiring -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cycleiq",
        description="Quality-aware unpaired image translation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("dataset", help="write a synthetic two-domain dataset")
    p.add_argument("--task", choices=TASKS, default="shapes_inverted")
    p.add_argument("--size", type=int, default=200,
                   help="training images per domain (default 200)")
    p.add_argument("--noise-var", type=float, default=0.001, dest="noise_var")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--variant", default=None, dest="variant")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--critic-iters", type=int, default=None, dest="critic_iters")
    p.add_argument("--lr", type=float, default=None, dest="learning_rate")
    p.add_argument("--clip", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-interval", type=int, default=None,
                   dest="checkpoint_interval")
    p.add_argument("--task", default=None, dest="dataset_task")
    p.add_argument("--dataset-size", type=int, default=None, dest="dataset_size")
    p.add_argument("--noise-var", type=float, default=None, dest="noise_var")
    p.add_argument("--data", default=None,
                   help="existing dataset directory; defaults to generating "
                        "one in memory from the resolved config")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="run images through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--direction", choices=("u2v", "v2u"), default="u2v")
    p.add_argument("--round-trip", action="store_true", dest="round_trip",
                   help="map to the other domain and back")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("iqa", help="score one image against another")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--ref", default=None)
    p.add_argument("--test", required=True)
    p.add_argument("--model", default=None, help="fitted niqe model file")
    p.set_defaults(func=cmd_iqa)

    p = sub.add_parser("niqe-fit", help="fit a naturalness model on photos")
    p.add_argument("--images", required=True, help="directory of photos")
    p.add_argument("--patch-size", type=int, default=96, dest="patch_size")
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_niqe_fit)

    p = sub.add_parser("eval", help="score same-named generated/truth pairs")
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--label", default="")
    p.add_argument("--format", choices=harness.FORMATS, default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-exp", help="noise robustness of two checkpoints")
    p.add_argument("--checkpoint-a", required=True, dest="checkpoint_a")
    p.add_argument("--checkpoint-c", required=True, dest="checkpoint_c")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--noise-var", type=float, default=0.001, dest="noise_var")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=harness.FORMATS, default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_noise_exp)

    p = sub.add_parser("mos-serve", help="run the rating service")
    p.add_argument("--store", required=True, help="event log directory")
    p.add_argument("--images", default=None, help="image directory to serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_mos_serve)

    p = sub.add_parser("mos-report", help="aggregate a study from its log")
    p.add_argument("--store", required=True)
    p.add_argument("--study", default=None,
                   help="study id; optional when the store holds exactly one")
    p.add_argument("--format", choices=("json", "csv", "markdown-table"),
                   default="json")
    p.set_defaults(func=cmd_mos_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
