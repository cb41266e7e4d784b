"""Smoke test for the Python bindings.

Build first:  pip install maturin && pip install --no-build-isolation -e crates/py
Run:          python python/smoke_test.py
"""

import math
import pathlib
import sys

import druopf_py as d

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIX = ROOT / "fixtures"


def main():
    farm = d.load_farm(str(FIX / "farm2.json"))
    assert farm.n_wt == 2, farm
    assert farm.turbine_ids == ["WT1", "WT2"]
    again = d.Farm.from_json(farm.to_json())
    assert again.n_wt == farm.n_wt

    rows = d.demand_curves(farm, [0.2, 0.4], [0.995, 1.0, 1.005])
    assert len(rows) == 6 and all(math.isfinite(r[2]) for r in rows)

    line = d.fit_demand_line(farm, 0.4)
    assert abs(line["d1"] * 1.0 + line["d2"] - farm.demand(1.0, 0.4)) <= line["max_abs_err"] + 1e-12

    pf = d.power_flow(farm, [0.2, 0.2], [0.0, 0.0])
    assert pf["converged"]
    assert abs(pf["conservation_residual"]) < 1e-9

    rec = d.solve_interval(farm, [20.0, 16.0])
    assert rec["status"] == "converged", rec["message"]
    assert rec["optimized_losses_mw"] <= rec["baseline_losses_mw"]

    orc = d.grid_search_oracle(farm, [0.2, 0.16])
    assert orc["losses"] * farm.s_base_mva >= rec["objective_mw"] - 1e-6

    try:
        d.Farm.from_json("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("schema error not raised")

    profile = (FIX / "profile24.csv").read_text()
    big = d.load_farm(str(FIX / "farm12.json"))
    report = d.run_day(big, "\n".join(profile.splitlines()[:13]) + "\n")
    assert report["summary"]["intervals"] == 1

    print("smoke test ok:", f"{rec['loss_reduction']:.4%} reduction at hour 0, omega {rec['omega_star']:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
