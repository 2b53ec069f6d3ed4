"""Time the numba and numpy kernel backends on the two hot loops.

    python3 benchmarks/bench_kernels.py [--batch 20000] [--repeat 5] [--json out.json]

Both backends are called directly, so the result does not depend on
PARACSI_DISABLE_NUMBA. The first numba call (JIT compile) is excluded.
"""

import argparse
import json
import sys
import time

import numpy as np

from paracsi import _kernels_numpy
from paracsi._accel import HAS_NUMBA
from paracsi.channel import ScenarioConfig
from paracsi.perturbation import sample_distortions, sample_params
from paracsi.quantizer import BitAllocation


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-tx", type=int, default=16)
    ap.add_argument("--n-subcarriers", type=int, default=32)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    cfg = ScenarioConfig(n_tx=args.n_tx, n_subcarriers=args.n_subcarriers)
    rng = np.random.default_rng(0)
    p = sample_params(cfg, args.batch, rng)
    dp = sample_distortions(cfg, BitAllocation.uniform(6), args.batch, rng)
    freqs, kd = cfg.frequencies, cfg.phase_constant
    cases = {
        "assemble": lambda k: k.assemble(p, freqs, cfg.n_tx, kd),
        "linearized_sq": lambda k: k.linearized_sq(p, dp, freqs, cfg.n_tx, kd),
    }
    backends = {"numpy": _kernels_numpy}
    if HAS_NUMBA:
        from paracsi import _kernels_numba

        backends["numba"] = _kernels_numba
    results = []
    for name, call in cases.items():
        ref = call(_kernels_numpy)
        row = {"kernel": name, "batch": args.batch}
        for bname, mod in backends.items():
            out = call(mod)  # warm-up, compiles numba
            row[f"max_abs_diff_{bname}"] = float(np.max(np.abs(out - ref)))
            row[f"{bname}_s"] = best_of(lambda: call(mod), args.repeat)
        if "numba_s" in row:
            row["speedup"] = row["numpy_s"] / row["numba_s"]
        results.append(row)
    for row in results:
        line = f"{row['kernel']:<14} numpy {row['numpy_s'] * 1e3:8.1f} ms"
        if "numba_s" in row:
            line += f"  numba {row['numba_s'] * 1e3:8.1f} ms  x{row['speedup']:.1f}"
            line += f"  (max |diff| {row['max_abs_diff_numba']:.1e})"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
