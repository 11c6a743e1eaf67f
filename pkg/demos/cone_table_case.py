"""A 10 degree cone at Mach 2 and zero incidence, compared with the NASA tables.

The solve starts from free stream everywhere, lowers the wall-normal velocity
to zero over the continuation increments and converges each increment with
Newton's method.  A coarse mesh keeps this demo under a minute; the acceptance
suite uses 40x60.

    python demos/cone_table_case.py [width height]
"""

import sys

from conical.cases import CaseConfig, nasa_value, run_case

W, H = (int(sys.argv[1]), int(sys.argv[2])) if len(sys.argv) > 2 else (20, 30)
cfg = CaseConfig(name="cone10_M2", mach=2.0, half_angle_deg=10.0, width=W, height=H,
                 write_fields=False)


def show(rec):
    if rec.iteration == 0 and rec.increment % 5 == 0:
        print(f"  increment {rec.increment:2d}  wall fraction {rec.fraction:.2f}  "
              f"|R| {rec.residual_l2:.2e}")


print(f"solving {W}x{H} mesh ...")
res = run_case(cfg, callback=show)
print(res.message, f"({res.elapsed:.0f} s)\n")

names = {"shock_angle": "shock angle (rad)", "density_ratio": "surface density ratio",
         "pressure_ratio": "surface pressure ratio", "surface_mach": "surface Mach"}
for key, value in res.report.summary().items():
    ref = nasa_value(key, 10, 2.0)
    print(f"{names[key]:>24}: {value:.4f}   NASA {ref:.3f}   ({100 * (value - ref) / ref:+.1f}%)")
