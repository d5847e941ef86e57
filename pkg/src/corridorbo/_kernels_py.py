"""Pure numpy versions of the hot simulator kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when the
extension is not built or when CORRIDORBO_PURE_PYTHON=1.
"""
import numpy as np


def compose_gain_db(base_db, att_h_db, elev_deg, tilt_deg, vhpbw_deg, max_gain_dbi, slope, floor_db):
    """base + max_gain + max(A_H + A_V, -floor) for a (cells, ues) table."""
    off = (elev_deg - tilt_deg[:, None]) / vhpbw_deg[:, None]
    att_v = -np.minimum(slope * off * off, floor_db)
    return base_db + max_gain_dbi[:, None] + np.maximum(att_h_db + att_v, -floor_db)


def mc_mean_log2_sinr(rx_w, fading, assoc, noise_w, is_uav):
    """Mean over fading draws of log2(1 + SINR) per UE.

    rx_w: (C, K) received power in watts without small-scale fading.
    fading: (D, C, K) power gains |h|^2, ones on UAV columns.
    """
    n_ue = rx_w.shape[1]
    cols = np.arange(n_ue)
    out = np.empty(n_ue)
    uav = np.asarray(is_uav, dtype=bool)
    if uav.any():
        r = rx_w[:, uav]
        sig = r[assoc[uav], cols[: uav.sum()]]
        interf = r.sum(axis=0) - sig
        out[uav] = np.log2(1.0 + sig / (interf + noise_w))
    gue = ~uav
    if gue.any():
        r = rx_w[:, gue][None, :, :] * fading[:, :, gue]
        sig = r[:, assoc[gue], np.arange(gue.sum())]
        interf = r.sum(axis=1) - sig
        out[gue] = np.log2(1.0 + sig / (interf + noise_w)).mean(axis=0)
    return out
