"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--rows 20000] [--repeat 5]

Each kernel runs on identical inputs under both implementations; the
script checks the outputs agree bit for bit before timing them.
"""

from __future__ import annotations

import argparse
import random
import sys
import timeit

import numpy as np

from cogos.vectors.embed import tokenize
from cogos.vectors.kernels import available

WORDS = ("red can cup apple keys drawer kitchen table juice orange book shelf "
         "user robot basket cat sofa door garden water").split()


def inputs(rows: int, dim: int, seed: int):
    rng = random.Random(seed)
    tokens = tokenize(" ".join(rng.choice(WORDS) for _ in range(2000)))
    matrix = np.ascontiguousarray(np.random.default_rng(seed).random((rows, dim)))
    query = np.zeros(dim)
    nz = np.array(sorted(rng.sample(range(dim), 8)), dtype=np.intp)
    query[nz] = 1 / np.sqrt(len(nz))
    return tokens, matrix, query, nz


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    impls = available()
    if "cython" not in impls:
        print("compiled kernels are not built; only the fallback is available", file=sys.stderr)
    tokens, matrix, query, nz = inputs(args.rows, args.dim, args.seed)
    words = [t.encode("utf-8") for t in tokens]
    cases = {
        "fnv1a_64 (x2000 tokens)": lambda m: [m.fnv1a_64(w) for w in words],
        "bucket_counts (2000 tokens)": lambda m: m.bucket_counts(tokens, args.dim),
        f"scan_scores ({args.rows} rows)": lambda m: m.scan_scores(matrix, query, nz),
    }

    names = list(impls)
    print(f"{'kernel':<30}" + "".join(f"{n + ' (ms)':>16}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for label, fn in cases.items():
        outputs = [fn(impls[n]) for n in names]
        for other in outputs[1:]:
            if not np.array_equal(np.asarray(outputs[0]), np.asarray(other)):
                print(f"{label}: implementations disagree", file=sys.stderr)
                return 1
        times = [min(timeit.repeat(lambda m=impls[n]: fn(m), number=1, repeat=args.repeat)) * 1e3
                 for n in names]
        row = f"{label:<30}" + "".join(f"{t:>16.3f}" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>10.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
