"""
IR drop in a single crossbar solve
==================================

Drive one row of a 64x64 all-LRS array and watch the column currents fall
off with distance from the driver.
"""

import numpy as np

from reramdse import CellArray, CrossbarConfig, DeviceParams, NodalSystem, cell_current, solve_dc

device = DeviceParams()  # 48 uS LRS, 100x HRS ratio, read at 0.2 V
n = 64
cells = CellArray.uniform(n, device.lrs)

for r_seg in (0.0, 0.5, 2.0):
    system = NodalSystem(CrossbarConfig(n, r_seg=r_seg), cells)
    v = np.zeros(n)
    v[n - 1] = device.v_read  # the row farthest from the column readout
    sol = solve_dc(system, v)
    ideal = cell_current(device.lrs, device.v_read)
    cols = sol.column_currents
    print(f"r_seg = {r_seg:3.1f} Ohm: near column {cols[0] / ideal:.4f}, far column {cols[-1] / ideal:.4f} "
          f"of the isolated cell current ({sol.newton_iterations} Newton steps)")

# Every row at once: the same system solves a batch of drive vectors.
system = NodalSystem(CrossbarConfig(n, r_seg=2.0), cells)
batch = system.solve_batch(np.eye(n) * device.v_read)
geff = batch.column_currents / device.v_read
print("G_eff / g_lrs at the four corners:")
print(np.round(geff[[0, 0, -1, -1], [0, -1, 0, -1]] / device.g_lrs, 4))
