"""Deep rotation-plus-whitening experiment on the toy dataset families.

Profiles: ``desk`` (D=16, 16 layers, 8 rotations, 16 members per family) and
``full`` (D=48, 32 layers, 32 rotations, 128 members). Set COVFLOW_WORKERS to
parallelize; the output does not depend on it.

    python scripts/run_deep.py --profile desk --out-dir runs/deep
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from covflow.bounds import gamma_limit
from covflow.cli import main, read_csv

PROFILES = {
    "desk": {"dim": 16, "layers": 16, "n_rot": 8, "n_vary": 16},
    "full": {"dim": 48, "layers": 32, "n_rot": 32, "n_vary": 128},
}


def parse():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    ap.add_argument("--out-dir", default="runs/deep")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--group", choices=("orthogonal", "unitary"), default="orthogonal")
    ap.add_argument("--bound-table", action="store_true", help="also write bounds_per_layer.csv")
    return ap.parse_args()


def summarize(path: Path, dim: int):
    _, rows = read_csv(path)
    ratios = np.array([float(r["ratio"]) for r in rows if r["ratio"] and float(r["s_value"]) > 0])
    s = np.array([float(r["s_value"]) for r in rows if r["ratio"]])
    late = ratios[s < 0.01 * dim]
    print(f"rows {len(rows)}; per-block ratio mean {ratios.mean():.4f}; "
          f"late-layer mean {late.mean() if late.size else float('nan'):.4f} over {late.size} blocks; "
          f"gamma limit {gamma_limit(dim):.4f}")


if __name__ == "__main__":
    a = parse()
    prof = PROFILES[a.profile]
    argv = ["deep", "--seed", str(a.seed), "--out-dir", a.out_dir, "--group", a.group]
    for k, v in prof.items():
        argv += [f"--{k.replace('_', '-')}", str(v)]
    if a.bound_table:
        argv.append("--retain-spectra")
    code = main(argv)
    if code == 0:
        summarize(Path(a.out_dir) / "deep.csv", prof["dim"])
    sys.exit(code)
