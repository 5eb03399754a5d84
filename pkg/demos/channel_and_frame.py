"""Build a pilot frame, push it through a fractional-Doppler channel, look at the result.

Run: python3 demos/channel_and_frame.py
"""

import numpy as np

from otfs_sbl.dd_channel import (PilotLayout, SystemParams, channel_to_grid, data_mask,
                                 gen_channel, guard_mask, make_pilot_frame, synthesize_rx)
from otfs_sbl.estimator import build_measurement

params = SystemParams.desk()
layout = PilotLayout.centered(params)
print(f"grid {params.N}x{params.M}, Q = {layout.Q} observations, R = {layout.R} unknowns")
print(f"guard cells {guard_mask(params, layout).sum()}, data cells {data_mask(params, layout).sum()}")

rng = np.random.default_rng(7)
channel = gen_channel(params, 4, fractional=True, rng=rng)
for p in channel.paths:
    print(f"  path: delay {p.l_tau}, Doppler {p.k_nu}{p.kappa:+.3f}, |gain| {abs(p.gain):.3f}")

pilot = make_pilot_frame(params, layout)
rx = synthesize_rx(pilot, channel, 0.0, params)

# fractional Doppler smears each path along the Doppler axis
k0, l0 = layout.pilot_rows[0], layout.pilot_cols[0]
energy = np.abs(rx) ** 2
print("received energy per delay column next to the pilot:",
      np.round(energy[:, l0:l0 + params.l_max + 1].sum(axis=0), 3))

# the linear model y = Phi h reproduces the noiseless observation window exactly
m = build_measurement(rx, pilot, layout, params)
h = channel_to_grid(channel, params, layout)
print(f"||y - Phi h|| / ||y|| = {np.linalg.norm(m.y - m.Phi @ h) / np.linalg.norm(m.y):.1e}")
