#!/usr/bin/env python3
"""One-shot: export a pinned checkpoint to graphs + manifest + fixtures."""

import argparse

from maskforge_export.export import export


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", default="checkpoints/promptable_small.pt")
    ap.add_argument("--sha256", default=None,
                    help="expected hash (default: read the pins file)")
    ap.add_argument("--out", default="../golden")
    ap.add_argument("--fixture-seed", type=int, default=0)
    args = ap.parse_args()
    info = export(args.checkpoint, args.out, args.sha256, args.fixture_seed)
    print(f"exported to {info['out_dir']}: encoder {info['encoder_bytes']}B, "
          f"decoder {info['decoder_bytes']}B, fixtures {info['fixtures']}")


if __name__ == "__main__":
    main()
