#!/usr/bin/env python3
"""One-shot: create the seeded checkpoint and pin its hash."""

import argparse

from maskforge_export.checkpoint import make_checkpoint


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="checkpoints/promptable_small.pt")
    args = ap.parse_args()
    digest = make_checkpoint(args.seed, args.out)
    print(f"wrote {args.out} (sha256 {digest})")


if __name__ == "__main__":
    main()
