"""Compiled vs numpy kernel throughput on the planted benchmark.

    python3 benchmarks/bench_kernels.py [--requests 300] [--repeat 5]

Checks that both backends return identical arrays before timing them.
"""

import argparse
import timeit

import numpy as np

from rectune.benchmark import planted_scenario, planted_skill
from rectune.simpipeline import _kernels_py
from rectune.simpipeline.evaluate import request_stack, stage_params
from rectune.simpipeline.pipeline import position_bias

try:
    from rectune.simpipeline import _kernels as _compiled
except ImportError:
    _compiled = None


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--requests", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    scenario, skill = planted_scenario(), planted_skill()
    st = request_stack(scenario, tuple(range(args.requests)))
    p = stage_params(scenario, skill.initial_config)
    call_args = (st.pre, st.rank, st.topics, st.click_appeal, st.heart_appeal, st.u_click, st.u_heart,
                 p["w_pre"], p["w_rank"], p["K1"], p["K2"], p["penalty"], p["cap"], p["N"],
                 position_bias(p["N"]), scenario.num_topics)

    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled extension not built; timing the numpy fallback only")

    outputs = {name: np.asarray(mod.evaluate_batch(*call_args)) for name, mod in backends.items()}
    if len(outputs) == 2:
        same = np.array_equal(outputs["python"], outputs["cython"])
        print(f"outputs identical: {same}")
        if not same:
            raise SystemExit(1)

    times = {}
    for name, mod in backends.items():
        best = min(timeit.repeat(lambda: mod.evaluate_batch(*call_args), number=1, repeat=args.repeat))
        times[name] = best
        print(f"{name:>7}: {best * 1e3:8.2f} ms for {args.requests} requests "
              f"({best / args.requests * 1e6:.1f} us/request)")
    if len(times) == 2:
        print(f"speedup: {times['python'] / times['cython']:.1f}x")


if __name__ == "__main__":
    main()
