"""Leave-one-protocol-out evaluation of mention and property extraction.

Writes intrinsic.json, intrinsic.txt and the logged config to --out-dir.

    python3 scripts/run_intrinsic.py --out-dir out/intrinsic
"""
import argparse
import sys
from pathlib import Path

from rfcfuzz import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out/intrinsic")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--epochs", default="50")
    args = ap.parse_args()
    return cli.main(["eval-nlp", "--corpus-dir", str(ROOT / "corpus"), "--seed", args.seed,
                     "--epochs", args.epochs, "--out-dir", args.out_dir])


if __name__ == "__main__":
    sys.exit(main())
