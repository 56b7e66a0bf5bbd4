"""Command line entry: search, prune, and export an engine-ready network."""

import argparse
import json
import sys
from pathlib import Path

from .export import export_manifest
from .train import NasConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_ERROR = 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="nas-train",
        description="Train the searchable supernet on the synthetic task, "
                    "select and prune an architecture, and export it as a "
                    "quantized manifest + weight blob.")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, metavar="F",
                   help="complexity weight in the objective (default 0)")
    p.add_argument("--seed", type=int, default=0, metavar="N",
                   help="seed for init, data, and calibration (default 0)")
    p.add_argument("--epochs", type=int, default=4, metavar="N",
                   help="epochs per stage (default 4)")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for model.json/model.bin/training_log.json")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_ERROR
    if args.epochs < 1:
        print("error: --epochs must be at least 1", file=sys.stderr)
        return EXIT_ERROR

    cfg = NasConfig(lam=args.lam, seed=args.seed, epochs=args.epochs)
    try:
        result = train(cfg)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    out_dir = Path(args.out)
    summary = export_manifest(result.net, out_dir, name="model",
                              input_hw=cfg.input_hw, seed=cfg.seed)
    log_doc = {
        "lambda": cfg.lam,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "selection": list(result.selection),
        "search": {
            "initial_complexity": result.search_initial_complexity,
            "epochs": result.search_log,
        },
        "prune": {
            "initial_complexity": result.prune_initial_complexity,
            "epochs": result.prune_log,
        },
        "export": {
            "weight_params": summary["weight_params"],
            "n_layers": summary["n_layers"],
            "manifest": Path(summary["manifest"]).name,
            "weights": Path(summary["blob"]).name,
        },
    }
    (out_dir / "training_log.json").write_text(json.dumps(log_doc, indent=2) + "\n")
    print(f"wrote {summary['manifest']} ({summary['weight_params']} weight params)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
