"""Large Monte Carlo run of the mixture experiments; writes the values the tests compare against.

    python scripts/freeze_oracle_values.py --chains 100000 --out tests/data/oracle_frozen.json
"""
import argparse
import json
import time

from skipguide.experiments import diversity_sweeps, restart_moments, sharpening_run
from skipguide.sampler import RestartConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--out", default="tests/data/oracle_frozen.json")
    args = ap.parse_args()

    t0 = time.time()
    rows = diversity_sweeps(args.chains, args.seed)
    div = {k: [r.to_dict() for r in v] for k, v in rows.items()}
    cfg_top, stg_top = rows["cfg"][-1], rows["aligned"][-1]
    sharp = sharpening_run(args.chains, args.seed)
    plain = restart_moments(None, args.chains, args.seed)
    k2 = restart_moments(RestartConfig(20, 60, 2), args.chains, args.seed)
    out = {
        "chains": args.chains,
        "seed": args.seed,
        "diversity": div,
        "mmd_gap_top_scale": cfg_top.mmd - stg_top.mmd,
        "sharpening": sharp,
        "restart": {"plain": plain, "K2": k2},
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    print(json.dumps(out, indent=2))
    print(f"{time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()
