"""Coverage and attack-discovery sweep: Random, Manual and NLPBased on ToyTCP and ToyDCCP.

Grammar configs use the fixtures in corpus/grammars/ (regenerate them with
build_grammars.py). Writes per-run logs, summaries and report.txt to --out-dir.

    python3 scripts/run_fuzz.py --out-dir out/fuzz
"""
import argparse
import sys
import time
from pathlib import Path

from rfcfuzz import cli

ROOT = Path(__file__).resolve().parent.parent
GRAMMARS = ROOT / "corpus" / "grammars"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out/fuzz")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--strategies", default="1000", help="budget per configuration")
    args = ap.parse_args()
    t0 = time.perf_counter()
    for proto in ("tcp", "dccp"):
        for conf, grammar in (("Random", None), ("Manual", f"{proto}_manual.json"),
                              ("NLPBased", f"{proto}_nlp.json")):
            argv = ["fuzz", "--protocol", proto, "--configuration", conf, "--seed", args.seed,
                    "--strategies", args.strategies, "--out-dir", args.out_dir]
            if grammar:
                argv += ["--grammar", str(GRAMMARS / grammar)]
            rc = cli.main(argv)
            if rc:
                return rc
    print(f"sweep took {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return cli.main(["report", "--out-dir", args.out_dir])


if __name__ == "__main__":
    sys.exit(main())
