"""Detect 4-QAM data with perfect and with estimated channel knowledge.

Run: python3 demos/detection.py
"""

import numpy as np

from otfs_sbl.dd_channel import (PilotLayout, SystemParams, apply_channel, data_mask,
                                 gen_channel, make_pilot_frame, noise_var_from_snr)
from otfs_sbl.detector import EffectiveChannel, detect_lmmse, detect_mp, qam4
from otfs_sbl.estimator import SblHyper, build_measurement, ifsblt_estimate

params = SystemParams.desk()
layout = PilotLayout.centered(params)
const = qam4()
rng = np.random.default_rng(11)

channel = gen_channel(params, 4, rng=rng)
n_data = int(data_mask(params, layout).sum())
bits = rng.integers(0, 2, 2 * n_data).astype(np.int8)
pilot = make_pilot_frame(params, layout)
tx = make_pilot_frame(params, layout, const.modulate(bits))

for snr in (6.0, 12.0, 18.0):
    nv = noise_var_from_snr(snr)
    noise = np.sqrt(nv / 2) * (rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape))
    rx = apply_channel(tx, channel.paths, params) + noise
    perfect = EffectiveChannel.from_channel(channel)
    mp = detect_mp(rx, perfect, nv, params, layout, pilot, bits)
    lm = detect_lmmse(rx, perfect, nv, params, layout, pilot, bits)
    # estimate the channel from the pilot region with the noise level known
    m = build_measurement(rx, pilot, layout, params, nv)
    h = ifsblt_estimate(m, SblHyper(noise_precision=1 / nv)).h_hat
    est = detect_mp(rx, EffectiveChannel.from_estimate(h, params, layout), nv,
                    params, layout, pilot, bits)
    print(f"SNR {snr:4.1f} dB: MP {mp.ber:.4f} ({mp.iterations} it), LMMSE {lm.ber:.4f}, "
          f"MP with estimated CSI {est.ber:.4f}")

# A unit-power pilot sees the same noise as a data symbol, so the estimate is
# poor. Boosting the pilot by 20 dB (amplitude 10) changes the picture.
strong = PilotLayout.centered(params, amplitude=10.0)
pilot = make_pilot_frame(params, strong)
tx = make_pilot_frame(params, strong, const.modulate(bits))
for snr in (6.0, 12.0, 18.0):
    nv = noise_var_from_snr(snr)
    noise = np.sqrt(nv / 2) * (rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape))
    rx = apply_channel(tx, channel.paths, params) + noise
    h = ifsblt_estimate(build_measurement(rx, pilot, strong, params, nv),
                        SblHyper(noise_precision=1 / nv)).h_hat
    est = detect_mp(rx, EffectiveChannel.from_estimate(h, params, strong), nv,
                    params, strong, pilot, bits)
    print(f"SNR {snr:4.1f} dB, 20 dB pilot: MP with estimated CSI {est.ber:.4f}")
