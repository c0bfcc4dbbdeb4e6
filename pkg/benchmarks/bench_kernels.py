"""Compare the compiled and pure-Python kernel backends.

Run from the repository root after installing the package::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is timed with every available backend; results must agree
bitwise, the table reports the best of ``--repeat`` runs.
"""

import argparse
import timeit

import numpy as np

from diffincl import kernels
from diffincl.exprdsl import compile_expr, parse
from diffincl.integrate import integrate_filippov
from diffincl.models import PendulumParams, build_pendulum


def case_eval_batch():
    prog = compile_expr(parse("sin(x1 + 0.1*sin(t)) - 0.2 + 0.1*sin(t)"), {"t": 0, "x1": 1})
    envs = np.random.default_rng(0).uniform(-3, 3, (20_000, 2))
    return lambda: kernels.eval_batch(prog, envs)


def case_stick_slip():
    f = build_pendulum(PendulumParams(K="0.2", omega="0.1*cos(t)", Phi="0.1*sin(t)",
                                      K_star=0.2, Phi_star=0.1, eps=0.1))
    return lambda: integrate_filippov(f, (0.0, [0.3], [0.5]), 20.0).x


def case_wrap_time():
    ts = np.random.default_rng(1).uniform(-1e3, 1e3, 50_000)
    return lambda: np.array([kernels.wrap_time(t, 7.0) for t in ts])


CASES = {"eval_batch 20k": case_eval_batch, "filippov pendulum T=20": case_stick_slip,
         "wrap_time 50k": case_wrap_time}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    names = kernels.available()
    prev = kernels.backend()
    print(f"{'case':<26}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    try:
        for label, make in CASES.items():
            times, outs = [], []
            for name in names:
                kernels.use(name)
                fn = make()
                outs.append(np.asarray(fn()))
                times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
            for o in outs[1:]:
                if not np.array_equal(o, outs[0]):
                    raise SystemExit(f"{label}: backends disagree")
            speed = f"{times[0] / min(times):>9.1f}x" if len(times) > 1 else f"{'-':>10}"
            print(f"{label:<26}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times) + speed)
    finally:
        kernels.use(prev)


if __name__ == "__main__":
    main()
