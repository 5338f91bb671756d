"""Service entry points: serve the API, train the seat classifier,
generate the toy dataset."""

from __future__ import annotations

import argparse
import json
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moto-helmet-service")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--detector", choices=("blob", "owlv2"), default="blob")
    p.add_argument("--seat-model", help="trained seat_model.pt (default: untrained)")

    p = sub.add_parser("train-seat", help="train the seat-role classifier")
    p.add_argument("--data", required=True, help="dataset root with <role>/ subdirs")
    p.add_argument("--out", required=True, help="directory for seat_model.pt + report.json")
    p.add_argument("--lr", type=float, default=0.0001)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--weights", default="1,10,800,3000",
                   help="comma list of 4 class weights")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("toy-data", help="write the synthetic 4-role crop dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=24)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_serve(args) -> int:
    import uvicorn

    from .app import create_app
    from .detectors import BlobDetector, Owlv2Detector
    from .seat import load_model

    detector = BlobDetector() if args.detector == "blob" else Owlv2Detector()
    seat = load_model(args.seat_model) if args.seat_model else None
    uvicorn.run(create_app(detector, seat), host=args.host, port=args.port)
    return 0


def _cmd_train_seat(args) -> int:
    from .seat import SeatTrainConfig, train_seat_classifier

    weights = tuple(float(w) for w in args.weights.split(","))
    if len(weights) != 4:
        print("error: --weights needs exactly 4 values", file=sys.stderr)
        return 2
    cfg = SeatTrainConfig(learning_rate=args.lr, epochs=args.epochs,
                          class_weights=weights, batch_size=args.batch_size,
                          seed=args.seed)
    report = train_seat_classifier(args.data, cfg, args.out)
    print(json.dumps({k: report[k] for k in
                      ("best_epoch", "best_val_loss", "train_accuracy",
                       "test_accuracy")}, indent=2))
    return 0


def _cmd_toy_data(args) -> int:
    from .toydata import make_toy_dataset

    root = make_toy_dataset(args.out, per_class=args.per_class,
                            size=args.size, seed=args.seed)
    print(f"wrote toy dataset under {root}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    handlers = {"serve": _cmd_serve, "train-seat": _cmd_train_seat,
                "toy-data": _cmd_toy_data}
    try:
        return handlers[args.verb](args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
