"""Reference MAC design knobs against ratio and delay at two transmitter ratios.

Shows how retry breadth (rediscover), PCP exclusivity and the cycle cap move the
scheduled ratio and the delay to the first neighbour.
"""
import argparse
from dataclasses import replace

from macsim import presets
from macsim.engine import run

VARIANTS = {
    "default": {},
    "rediscover": {"rediscover": True},
    "no-pcp-exclusive": {"pcp_exclusive": False},
    "one-cycle": {"max_cycles": 1},
    "five-cycles": {"max_cycles": 5},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replications", type=int, default=5)
    ap.add_argument("--rtx", type=float, nargs="+", default=[0.15, 0.40])
    args = ap.parse_args()
    base = presets.load("paper-highway-125", ["run.mac=ref-ad"])
    base = replace(base, replications=args.replications, min_replications=args.replications)
    print(f"{'variant':18s}" + "".join(f"  ratio@{r:.2f}  delay1@{r:.2f}" for r in args.rtx))
    for name, knobs in VARIANTS.items():
        cfg = replace(base, ad=replace(base.ad, **knobs))
        cells = []
        for r in args.rtx:
            rep = run(replace(cfg, r_tx=r)).report
            cells.append(f"  {rep.scheduled_ratio:10.3f}  {rep.delay_to_nth[1]['mean']:9.1f}")
        print(f"{name:18s}" + "".join(cells), flush=True)


if __name__ == "__main__":
    main()
