"""
From a few sizes to a surrogate
===============================

Characterize three small arrays, interpolate RMSE_max and the summed
conductance in between, and check that the normalized error profiles of the
different sizes fall on one curve.
"""

from reramdse import CrossbarConfig, DeviceParams, TestbenchConfig, characterize
from reramdse.surrogate import (build_surrogate, normalized_profile_collapse, predict_rmse_max,
                                predict_sum_g)

device = DeviceParams()
tb = TestbenchConfig(samples_per_segment=9, error_state="LRS")
results = [characterize(CrossbarConfig(n, r_seg=1.0), device, tb, bits_list=range(6, 13))
           for n in (16, 32, 48)]

model = build_surrogate(results)
print("knots:", model.sizes)
for n in (16, 24, 32, 40, 48):
    print(f"N={n:2d}: sum G {predict_sum_g(model, n):.5f} S, analog RMSE_max {predict_rmse_max(model, n):.5f}, "
          f"8-bit {predict_rmse_max(model, n, 8):.4f}")

report = normalized_profile_collapse(model)
for line in report.lines():
    print(line)

path = model.save("tutorial_surrogate.model")
print("saved", path)
