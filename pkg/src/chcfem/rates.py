"""Log-log least squares fits of convergence orders."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class RateFit:
    """OLS fit ``log(error) = intercept + slope * log(resolution)``."""

    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    n_points: int
    log_corrected: bool = False

    @property
    def constant(self) -> float:
        return float(np.exp(self.intercept))

    def predict(self, resolution) -> np.ndarray:
        r = np.asarray(resolution, dtype=float)
        out = self.constant * r**self.slope
        return out * np.abs(np.log(r)) if self.log_corrected else out

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(resolutions, errors, log_corrected: bool = False) -> RateFit:
    """Fit the order of ``errors`` against ``resolutions`` (h, k or t).

    With ``log_corrected`` the model is ``C r^s |ln r|``, i.e. the regression
    runs on ``log(error / |ln r|)``.  Requires at least three distinct
    resolutions and strictly positive errors.
    """
    r = np.asarray(resolutions, dtype=float)
    e = np.asarray(errors, dtype=float)
    if r.shape != e.shape or r.ndim != 1:
        raise ValueError("resolutions and errors must be 1-D arrays of equal length")
    if r.size < 3:
        raise ValueError(f"need at least 3 rows for a rate fit, got {r.size}")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("rate fit needs finite, strictly positive errors")
    if np.any(r <= 0):
        raise ValueError("resolutions must be positive")
    if np.unique(r).size != r.size:
        raise ValueError("duplicate resolutions make the regression degenerate")
    x = np.log(r)
    y = np.log(e)
    if log_corrected:
        if np.any(np.isclose(r, 1.0)):
            raise ValueError("log-corrected fit undefined at resolution 1")
        y = y - np.log(np.abs(x))
    res = stats.linregress(x, y)
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue**2),
                   float(res.stderr), int(r.size), log_corrected)
