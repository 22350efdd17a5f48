"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time from PLANAR_P4PFR_DISABLE_JIT.

    python benchmarks/bench_backends.py --n 2000
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, sys
from planar_p4pfr import BACKEND, SceneConfig, benchmark_histogram
r = benchmark_histogram(int(sys.argv[1]), SceneConfig(seed=int(sys.argv[2])))
print(json.dumps({"backend": BACKEND, "median_us": r.median_solve_us, "mean_us": r.mean_solve_us,
                  "median_log10_err": r.median_log10_err, "fail_rate": r.fail_rate}))
"""


def run(n: int, seed: int, disable_jit: bool) -> dict:
    env = dict(os.environ, PLANAR_P4PFR_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(n), str(seed)], env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.splitlines()[-1])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rows = [run(args.n, args.seed, flag) for flag in (False, True)]
    print(f"{'backend':8} {'median_us':>10} {'mean_us':>10} {'median_log10_err':>17} {'fail_rate':>10}")
    for r in rows:
        print(f"{r['backend']:8} {r['median_us']:10.1f} {r['mean_us']:10.1f} {r['median_log10_err']:17.3f} {r['fail_rate']:10.4f}")
    print(f"speedup (median): {rows[1]['median_us'] / rows[0]['median_us']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
