"""
Searching the design space
==========================

Use the surrogate from the previous script to pick the array size and
clock that maximize TOPs/s/W under a power budget, then export heatmaps.
Run ``03_surrogate.py`` first.
"""

from pathlib import Path

from reramdse.dse import (AdcEnergyModel, Constraints, Grid, NoFeasiblePoint, explore, export_heatmaps)
from reramdse.surrogate import SurrogateModel

model = SurrogateModel.load("tutorial_surrogate.model")
adc = AdcEnergyModel.from_anchor(14, 39.19e-12)  # Walden scaling from one anchor
grid = Grid.from_ranges(n=(16, 48, 1), f=(10e6, 500e6, 5e6), bits=10)

res = explore(model, adc, grid, Constraints(max_power=0.02), v=0.2)
opt = res.optimum
print(f"optimum: N={opt.point.n}, f={opt.point.f / 1e6:.0f} MHz, {opt.metrics['efficiency']:.2f} TOPs/s/W")
print(f"power {opt.metrics['power'] * 1e3:.2f} mW, binding: {opt.binding}")

# Largest feasible clock per size traces the power boundary.
for n, f in list(zip(grid.n, res.boundary_f()))[::8]:
    print(f"  N={n}: f <= {f / 1e6:.0f} MHz")

written = export_heatmaps(res, Path("tutorial_heatmaps"))
print(f"{len(written)} files in tutorial_heatmaps/")

try:
    explore(model, adc, grid, Constraints(max_power=1e-6), v=0.2)
except NoFeasiblePoint as exc:
    print("tight budget:", exc)
