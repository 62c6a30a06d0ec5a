"""Stdin/stdout worker serving the built-in segmenters over the plug-in
protocol.

    python -m lesionloop.plugin_worker --segmenter conservative

``echo-prev`` (returns the previous-mask channel unchanged) and
``wrong-shape`` (returns a misshapen plane) exist for protocol testing.
"""

from __future__ import annotations

import argparse

import numpy as np

from .segmenters import (
    ConservativeRefiner,
    ThresholdInitialSegmenter,
    ZeroSegmenter,
    serve_plugin,
)


class _EchoPrevRefiner:
    def refine(self, window, prev_mask, pos_mask, neg_mask):
        return np.asarray(prev_mask, dtype=np.float32)


class _WrongShapeRefiner:
    def refine(self, window, prev_mask, pos_mask, neg_mask):
        h, w = window.shape
        return np.zeros((h + 1, w), dtype=np.float32)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--segmenter",
        default="conservative",
        choices=["conservative", "threshold", "echo-prev", "wrong-shape"],
    )
    parser.add_argument("--growth-radius", type=float, default=15.0)
    parser.add_argument("--tau", type=float, default=0.1)
    parser.add_argument("--removal-radius", type=float, default=10.0)
    parser.add_argument("--level", type=float, default=0.6)
    parser.add_argument("--min-area", type=int, default=4)
    args = parser.parse_args(argv)

    if args.segmenter == "conservative":
        initial = ThresholdInitialSegmenter(level=args.level, min_area=args.min_area)
        refiner = ConservativeRefiner(
            growth_radius=args.growth_radius, tau=args.tau,
            removal_radius=args.removal_radius,
        )
    elif args.segmenter == "threshold":
        initial = ThresholdInitialSegmenter(level=args.level, min_area=args.min_area)
        refiner = None
    elif args.segmenter == "echo-prev":
        initial = ZeroSegmenter()
        refiner = _EchoPrevRefiner()
    else:
        initial = ZeroSegmenter()
        refiner = _WrongShapeRefiner()

    serve_plugin(initial=initial, refiner=refiner)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
