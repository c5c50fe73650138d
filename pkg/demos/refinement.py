"""Self-convergence in space and time from shared smooth initial data.

Initial data are generated on the finest grid and restricted to the
coarser ones, so the observed orders measure the scheme alone.
"""

from nlchns.fields import Grid
from nlchns.harness import RefinementStudy, run_refinement
from nlchns.integrator import InitSpec, SimConfig


def show(table):
    print(f"{table.kind} levels {list(table.levels)}")
    for name in ("diff_phi", "diff_u", "order_phi", "order_u"):
        print(f"  {name:10s} " + "  ".join(f"{v:.4g}" for v in getattr(table, name)))


def main():
    init = InitSpec(u="taylor_green", u_amp=0.5, phi="cosine_mix", phi_amp=0.2, phi_kmax=2)
    show(run_refinement(RefinementStudy(SimConfig(grid=Grid(32, 32), dt=1e-3, init=init), "space",
                                        (32, 64, 128), 0.02)))
    show(run_refinement(RefinementStudy(SimConfig(grid=Grid(32, 32), init=init), "time",
                                        (1e-3, 5e-4, 2.5e-4), 0.2)))


if __name__ == "__main__":
    main()
