"""Print the distillation weight ramp and confidence threshold over training.

    python scripts/schedule_table.py --every 10
"""

import argparse

from granbridge.distill import KdConfig, conf_threshold_at, lambda_at


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--every", type=int, default=10)
    parser.add_argument("--warmup", type=float, default=KdConfig.warmup_epochs)
    parser.add_argument("--epochs", type=float, default=KdConfig.total_epochs)
    args = parser.parse_args()
    cfg = KdConfig(warmup_epochs=args.warmup, total_epochs=args.epochs)

    epochs = sorted({*range(0, int(cfg.total_epochs) + 1, args.every), int(cfg.warmup_epochs),
                     int(cfg.total_epochs)})
    print(f"{'epoch':>5}  {'lambda':>6}  {'threshold':>9}")
    for e in epochs:
        print(f"{e:5d}  {lambda_at(e, cfg):6.3f}  {conf_threshold_at(e, cfg):9.3f}")


if __name__ == "__main__":
    main()
