"""Judge synthetic Hénon series by MMD and train-on-synthetic prediction.

    python3 demos/generation_quality.py --epochs 30 --pointcloud pc.csv

Training uses the raw series; both real and generated windows are mapped to
[0, 1] with the real series' column ranges before scoring.
"""

import argparse

from crvae import TrainConfig, gen_henon, mmd, train, tstr
from crvae.evaluate import export_pointcloud, sample_windows
from crvae.numcore import Rng
from crvae.pipeline import generate_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--windows", type=int, default=100)
    ap.add_argument("--pointcloud", help="write labelled windows here for t-SNE/PCA")
    args = ap.parse_args()

    ds = gen_henon(rng=Rng(args.seed))
    x = ds.observations
    lo, hi = x.min(axis=0), x.max(axis=0)

    def unit(a):
        return (a - lo) / (hi - lo)

    model = train(x, TrainConfig(seed=args.seed, epochs_phase1=args.epochs)).model
    real = unit(sample_windows(x, 20, args.windows, Rng(args.seed).child("windows")))
    for comp in (True, False):
        synth = unit(generate_batch(model, 20, args.windows, Rng(1).child("generate"),
                                    compensation=comp))
        label = "with" if comp else "without"
        print(f"MMD {label} compensation: {mmd(real, synth):.4f}")
        if comp and args.pointcloud:
            n = export_pointcloud(real, synth, args.pointcloud)
            print(f"wrote {n} windows to {args.pointcloud}")

    synth = unit(generate_batch(model, 20, 200, Rng(2).child("generate")))
    print(f"TSTR RMSE {tstr(synth, unit(x), seed=args.seed):.4f}")
    print(f"TRTR RMSE {tstr(unit(x), unit(x), seed=args.seed):.4f}")


if __name__ == "__main__":
    main()
