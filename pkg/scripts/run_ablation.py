#!/usr/bin/env python3
"""Four-model comparison on a synthetic corpus.

Trains {lstm, lstm+v, conv, conv+v} over several seeds on one generated
corpus and prints the landmark error table per seed plus a trend summary:
whether the velocity loss lowers velocity error and whether the temporal
convolution front end lowers positional error.

Example:
    python3 scripts/run_ablation.py --out /tmp/ablation --epochs 80
"""

import argparse
import sys
import time
from pathlib import Path


sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lipsync import evaluation, model, synthdata, training
from lipsync.features import SurrogateProvider
from lipsync.model import ArchConfig
from lipsync.training import LossConfig, TrainConfig

VARIANTS = {
    "lstm": (False, 0.0),
    "lstm+v": (False, 0.5),
    "conv": (True, 0.0),
    "conv+v": (True, 0.5),
}


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True, help="working directory for the corpus")
    p.add_argument("--seeds", default="0,1,2,3", help="comma-separated training seeds")
    p.add_argument("--corpus-seed", type=int, default=100)
    p.add_argument("--sentences", type=int, default=14)
    p.add_argument("--vertices", type=int, default=40)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--smoothing", type=float, default=0.75)
    p.add_argument("--anticipation", type=int, default=2)
    return p.parse_args()


def main():
    args = parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)

    head = synthdata.make_head(args.vertices, seed=args.corpus_seed)
    provider = SurrogateProvider.seeded(args.corpus_seed)
    oracle = synthdata.OracleArticulator.seeded(
        head, seed=args.corpus_seed, smoothing=args.smoothing, anticipation=args.anticipation
    )
    manifest = synthdata.generate_corpus(
        out,
        args.sentences,
        duration_range=(0.7, 1.1),
        provider=provider,
        oracle=oracle,
        seed=args.corpus_seed,
        split_ratio=(8, 2, 4),
    )
    train_items = synthdata.load_split(manifest, "train")
    test_items = synthdata.load_split(manifest, "test")
    print(
        f"corpus: {len(train_items)} train / {len(test_items)} test sentences, "
        f"V={args.vertices}, smoothing={args.smoothing}, anticipation={args.anticipation}"
    )

    per_seed = {}
    for seed in seeds:
        reports = {}
        for label, (use_conv, w_vel) in VARIANTS.items():
            t0 = time.time()
            net = model.init_params(seed, args.vertices, ArchConfig(use_conv=use_conv))
            result = training.train(
                train_items,
                net,
                LossConfig(w_velocity=w_vel),
                TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=seed),
            )
            reports[label] = evaluation.evaluate(result.params, head, test_items)
            print(f"  seed {seed} {label}: trained in {time.time() - t0:.0f}s")
        per_seed[seed] = reports
        print(f"\nseed {seed}")
        print(evaluation.format_table(reports))
        print()

    n = len(seeds)
    vel_conv = sum(per_seed[s]["conv+v"].vel_all < per_seed[s]["conv"].vel_all for s in seeds)
    vel_lstm = sum(per_seed[s]["lstm+v"].vel_all < per_seed[s]["lstm"].vel_all for s in seeds)
    mouth_conv = sum(per_seed[s]["conv+v"].vel_lip < per_seed[s]["conv"].vel_lip for s in seeds)
    pos = sum(per_seed[s]["conv"].pos_all <= per_seed[s]["lstm"].pos_all for s in seeds)
    print("trend summary")
    print(f"  velocity error lower with velocity loss (conv pair, facial): {vel_conv}/{n}")
    print(f"  velocity error lower with velocity loss (conv pair, mouth):  {mouth_conv}/{n}")
    print(f"  velocity error lower with velocity loss (lstm pair, facial): {vel_lstm}/{n}")
    print(f"  positional error conv <= lstm:                               {pos}/{n}")


if __name__ == "__main__":
    main()
