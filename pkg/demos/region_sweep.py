"""Small convergence-region sweep at reduced resolution.

Prints the atlas and the region report.  Run with
``python3 demos/region_sweep.py``; about a minute on one core.
"""

from nspicard.sweep import SweepPlan, region_report, run_sweep


def main():
    plan = SweepPlan(F_values=(0.25, 1.0, 4.0), mu_values=(1.0,), nu_values=(0.5, 1.0),
                     n_per_axis=16, substeps=16)
    records = run_sweep(plan)
    print("   F    mu    nu   ratio  status        iters  max alpha")
    for r in records:
        p = r.params
        print(f"{p.F:5.2f} {p.mu:5.2f} {p.nu:5.2f} {r.estimate_ratio:7.3f}  {r.status:12s} {r.iterations_used:5d}"
              f"  {r.max_alpha:.3g}")
    print()
    print("\n".join(region_report(records, plan=plan).lines()))


if __name__ == "__main__":
    main()
