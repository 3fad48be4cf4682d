"""Small-mass fraction and crossing time against the lower grid edge.

Extends the shipped sweep to more cut-offs and several probe times, for the
shattering kernel and its alpha > 0 control.
"""
import argparse

from collbreak import config as C
from collbreak import experiments as E


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x-min", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4, 1e-5])
    ap.add_argument("--probes", type=float, nargs="+", default=[0.1, 0.25, 0.5, 1.0])
    args = ap.parse_args()
    for name in ("shattering-sweep", "shattering-control"):
        base = C.load_preset(name)
        print(f"{name}: alpha={base.kernel.alpha:g}, eps={E.shatter_size(base):g}")
        print("  x_min     onset     " + "  ".join(f"frac@{t:<6g}" for t in args.probes))
        for x in args.x_min:
            ex = E.run(base.with_value("grid.x_min", x), extra_times=args.probes)
            onset = ex.result.event_times.get("shatter", float("nan"))
            fr = [E.small_fraction(ex, t) for t in args.probes]
            print(f"  {x:<8.0e}  {onset:<8.4f}  " + "  ".join(f"{f:<11.8f}" for f in fr))


if __name__ == "__main__":
    main()
