"""
Characterizing one array size
=============================

Sweep a triangle wave through every row, compare each column against the
parasitic-free reference and quantize with ADCs of several resolutions.
"""

import numpy as np

from reramdse import CrossbarConfig, DeviceParams, TestbenchConfig, characterize

device = DeviceParams()
tb = TestbenchConfig(samples_per_segment=9, error_state="LRS")
res = characterize(CrossbarConfig(32, r_seg=1.0), device, tb, bits_list=[6, 8, 10, 12])

print(f"sum of G_eff over the 32x32 array: {res.cumulative_conductance:.5f} S "
      f"(ideal {32 * 32 * device.g_lrs:.5f} S)")

# Normalized RMSE: error divided by the full-scale reference current.
print("analog RMSE_max:", f"{res.rmse_max():.4f}")
for b in res.bits:
    print(f"{b:2d}-bit RMSE_max: {res.rmse_max(b):.4f}")

# The worst cell sits in the corner farthest from both drivers and readout.
worst = np.unravel_index(np.argmax(res.rmse[None]), res.rmse[None].shape)
print("worst cell:", worst)

# More resolutions later reuse the stored currents instead of re-solving.
res.add_bits([14])
print(f"14-bit RMSE_max: {res.rmse_max(14):.4f}")
