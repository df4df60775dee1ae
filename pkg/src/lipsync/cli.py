"""Command-line pipeline: corpus generation, training, inference, evaluation.

Exit codes: 0 success, 1 usage error, 2 data/format error. Every subcommand
taking --seed is bit-reproducible across runs on the same platform.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from . import audio, evaluation, features, mesh, model, synthdata, training
from .errors import LipSyncError, UsageError

TRAIN_DEFAULTS = {
    "epochs": 10,
    "lr": 1e-4,
    "w_pos": 1.0,
    "w_vel": 0.5,
    "seed": 0,
    "checkpoint_every": 0,
    "batch_size": 1,
    "clip_norm": 5.0,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path) -> dict:
    """Plain key=value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {text!r}")
        key, val = (part.strip() for part in text.split("=", 1))
        values[key] = val
    return values


def _build_parser() -> _Parser:
    parser = _Parser(prog="lipsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-corpus", parents=[], help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sentences", type=int, default=20)
    p.add_argument("--vertices", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-dur", type=float, default=0.8)
    p.add_argument("--max-dur", type=float, default=1.6)

    p = sub.add_parser("features", help="extract a feature file from a WAV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=["surrogate", "mfcc"], default="surrogate")

    p = sub.add_parser("train", help="train on a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", help="CSV metrics log path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--arch", choices=["conv-lstm", "lstm"], default="conv-lstm")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--w-pos", type=float)
    p.add_argument("--w-vel", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--checkpoint-dir")

    p = sub.add_parser("infer", help="run a checkpoint over audio or features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav")
    p.add_argument("--features")
    p.add_argument("--out", required=True, help="animation (.lsa1) path to write")
    p.add_argument("--seed", type=int, default=0, help="feature provider seed")

    p = sub.add_parser("eval", help="landmark error metrics on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--self-test", action="store_true", help="score ground truth against itself")
    p.add_argument("--split", default="test")
    p.add_argument("--px-per-unit", type=float, default=100.0)
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("export-obj-seq", help="write one OBJ per animation frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("traj", help="export a lip landmark trajectory CSV")
    p.add_argument("--anim", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--landmark-index", type=int, help="defaults to the upper-lip-middle landmark")
    p.add_argument("--px-per-unit", type=float, default=100.0)

    return parser


def _cmd_gen_corpus(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    head = synthdata.make_head(args.vertices, seed=args.seed)
    mesh.save_obj(head, out_dir / "template.obj", landmark_path=out_dir / "template.landmarks.txt")
    provider = features.SurrogateProvider.seeded(args.seed)
    oracle = synthdata.OracleArticulator.seeded(head, seed=args.seed)
    manifest = synthdata.generate_corpus(
        out_dir,
        args.sentences,
        duration_range=(args.min_dur, args.max_dur),
        provider=provider,
        oracle=oracle,
        seed=args.seed,
    )
    n_train = len(manifest.split("train"))
    n_val = len(manifest.split("val"))
    n_test = len(manifest.split("test"))
    print(f"wrote {len(manifest.items)} sentences ({n_train}/{n_val}/{n_test} train/val/test) to {out_dir}")
    return 0


def _cmd_features(args) -> int:
    w = audio.load_wav(args.wav)
    if w.sample_rate != audio.CANONICAL_RATE:
        w = audio.resample(w, audio.CANONICAL_RATE)
    frames = audio.mfcc(w)
    if args.kind == "surrogate":
        seq = features.surrogate_features(frames, features.SurrogateProvider.seeded(args.seed))
    else:
        seq = features.mfcc_features(frames)
    features.save_features(seq, args.out)
    print(f"wrote {seq.n_frames} x {seq.dim} feature frames to {args.out}")
    return 0


def _resolve_train_config(args) -> dict:
    merged = dict(TRAIN_DEFAULTS)
    if args.config:
        file_vals = _load_config_file(args.config)
        casts = {k: type(v) for k, v in TRAIN_DEFAULTS.items()}
        for key, raw in file_vals.items():
            if key not in casts:
                raise UsageError(f"unknown config key {key!r}")
            try:
                merged[key] = casts[key](raw)
            except ValueError:
                raise UsageError(f"bad value for config key {key!r}: {raw!r}")
    for key in TRAIN_DEFAULTS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    return merged


def _cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    if cfg["epochs"] < 1:
        raise UsageError("--epochs must be >= 1")
    if cfg["lr"] <= 0:
        raise UsageError("--lr must be positive")

    manifest = synthdata.CorpusManifest.load(args.manifest)
    train_items = synthdata.load_split(manifest, "train")
    val_items = synthdata.load_split(manifest, "val")
    if not train_items:
        raise UsageError("manifest has no training items")

    vertex_count = train_items[0].displacements.n_vertices
    arch = model.ArchConfig(use_conv=(args.arch == "conv-lstm"))
    net = model.init_params(cfg["seed"], vertex_count, arch)

    loss_cfg = training.LossConfig(w_position=cfg["w_pos"], w_velocity=cfg["w_vel"])
    train_cfg = training.TrainConfig(
        learning_rate=cfg["lr"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
        batch_size=cfg["batch_size"],
        clip_norm=cfg["clip_norm"],
    )

    def sink(event):
        if event["event"] == "epoch":
            print(
                f"epoch {event['epoch']:4d} {event['split']:5s} "
                f"lp={event['lp']:.6g} lv={event['lv']:.6g}"
            )

    result = training.train(
        train_items,
        net,
        loss_cfg,
        train_cfg,
        val_items=val_items,
        sink=sink,
        checkpoint_dir=args.checkpoint_dir,
    )
    chosen = result.best_params if val_items else result.params
    model.save_checkpoint(chosen, args.out)
    if args.metrics:
        training.write_metrics_csv(result.metrics, args.metrics)
    print(f"saved checkpoint to {args.out} (best epoch {result.best_epoch})")
    return 0


def _infer_features(args) -> features.FeatureSequence:
    if bool(args.wav) == bool(args.features):
        raise UsageError("provide exactly one of --wav or --features")
    if args.wav:
        return features.features_from_wav(args.wav, features.SurrogateProvider.seeded(args.seed))
    return features.load_features(args.features)


def _cmd_infer(args) -> int:
    net = model.load_checkpoint(args.checkpoint)
    seq = _infer_features(args)
    disp = model.forward(net, seq)
    mesh.save_anim(disp, args.out)
    print(f"wrote {disp.n_frames} frames x {disp.n_vertices} vertices to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    manifest = synthdata.CorpusManifest.load(args.manifest)
    head = mesh.load_obj(args.template, landmark_path=args.landmarks)
    samples = synthdata.load_split(manifest, args.split)
    cfg = evaluation.ProjectionConfig(px_per_unit=args.px_per_unit)

    if args.self_test:
        report = evaluation.evaluate_self(head, samples, cfg)
        label = "ground truth"
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint (or --self-test)")
        net = model.load_checkpoint(args.checkpoint)
        report = evaluation.evaluate(net, head, samples, cfg)
        label = Path(args.checkpoint).stem

    print(evaluation.format_table({label: report}))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _cmd_export_obj_seq(args) -> int:
    net = model.load_checkpoint(args.checkpoint)
    head = mesh.load_obj(args.template, landmark_path=args.landmarks)
    if head.n_vertices != net.vertex_count:
        from .errors import TopologyError

        raise TopologyError(
            f"template has {head.n_vertices} vertices but checkpoint decodes {net.vertex_count}; "
            "the topology must match the training template"
        )
    seq = features.features_from_wav(args.wav, features.SurrogateProvider.seeded(args.seed))
    disp = model.forward(net, seq)
    posed = mesh.apply_displacements(head, disp)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in range(len(posed)):
        frame_mesh = mesh.TemplateMesh(
            vertices=posed[t],
            faces=head.faces,
            landmarks=head.landmarks,
            lip_mask=head.lip_mask,
        )
        mesh.save_obj(frame_mesh, out_dir / f"frame_{t:04d}.obj")
    print(f"wrote {len(posed)} OBJ frames to {out_dir}")
    return 0


def _cmd_traj(args) -> int:
    head = mesh.load_obj(args.template, landmark_path=args.landmarks)
    anim = mesh.load_anim(args.anim)
    cfg = evaluation.ProjectionConfig(px_per_unit=args.px_per_unit)
    traj = evaluation.project_landmarks(head, anim, cfg=cfg)
    landmark = args.landmark_index
    if landmark is None:
        landmark = evaluation.default_lip_landmark(head)
    evaluation.lip_trajectory_csv(traj, landmark, args.out)
    print(f"wrote {len(traj)}-frame trajectory of landmark {landmark} to {args.out}")
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "features": _cmd_features,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "export-obj-seq": _cmd_export_obj_seq,
    "traj": _cmd_traj,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (LipSyncError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
