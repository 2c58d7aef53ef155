#!/usr/bin/env python3
"""Print aggregate metric JSONs from `shadefield evaluate` side by side."""
import argparse
import json


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("files", nargs="+")
    ap.add_argument("--names", nargs="+")
    args = ap.parse_args()
    names = args.names or args.files
    runs = [json.load(open(f)) for f in args.files]
    conds = list(runs[0]["count"])
    for metric in ("fmae", "fpsnr", "fssim"):
        print(f"\n{metric}")
        print(f"{'':>12}" + "".join(f"{c:>10}" for c in conds))
        for name, run in zip(names, runs):
            print(f"{name:>12}" + "".join(f"{run[metric].get(c, float('nan')):10.4f}" for c in conds))
    print("\ncount " + "  ".join(f"{c}={runs[0]['count'][c]}" for c in conds))


if __name__ == "__main__":
    main()
