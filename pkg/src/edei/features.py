"""Per-node predictive features shared by the environment and the predictor."""

from __future__ import annotations

import numpy as np

N_FEATURES = 4


def vulnerability(assets: np.ndarray, severity: np.ndarray, incident: np.ndarray,
                  dist: np.ndarray) -> np.ndarray:
    """``w_i * sum_{j incident} f_j / max(d_ij, 1)`` for every node i."""
    d = np.maximum(dist, 1.0)
    inv = np.where(np.isfinite(d), 1.0 / d, 0.0)
    f = np.where(incident, severity, 0.0)
    return assets * (inv @ f)


def vulnerability_feature(assets, severity, incident, dist, i: int) -> float:
    return float(vulnerability(np.asarray(assets, float), np.asarray(severity, float),
                               np.asarray(incident, bool), np.asarray(dist, float))[i])


def feature_matrix(severity: np.ndarray, incident: np.ndarray, categories: np.ndarray,
                   assets: np.ndarray, dist: np.ndarray, w_max: float, xi_scale: float) -> np.ndarray:
    """n x 4 rows ``[f_i, category/2, w_i/w_max, F_xi/xi_scale]``."""
    f = np.where(incident, severity, 0.0)
    xi = vulnerability(assets.astype(float), severity, incident, dist)
    return np.column_stack([f, categories / 2.0, assets / w_max, xi / xi_scale])
