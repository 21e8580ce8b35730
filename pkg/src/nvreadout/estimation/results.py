"""Fit result container and uncertainty helpers."""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy import stats

__all__ = ["FitResult", "Z65", "Z95", "covariance_from_jacobian"]

# two-sided Gaussian quantiles
Z65 = float(stats.norm.ppf(0.5 + 0.65 / 2))
Z95 = float(stats.norm.ppf(0.5 + 0.95 / 2))


@dataclass
class FitResult:
    """Best-fit values with covariance, 65%/95% half-widths and R^2.

    ``flags`` carries diagnostics such as ``degenerate`` or
    ``lifetime_unidentifiable``.
    """

    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    r2: float = float("nan")
    units: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        self.covariance = 0.5 * (cov + cov.T)

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def ci65(self):
        return Z65 * self.stderr

    @property
    def ci95(self):
        return Z95 * self.stderr

    @property
    def params(self):
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def error(self, name):
        return float(self.stderr[self.names.index(name)])

    def to_dict(self):
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        return {
            "parameters": [
                {"name": n, "value": clean(float(v)), "unit": self.units.get(n, ""),
                 "stderr": clean(float(s)), "ci65": clean(float(c65)), "ci95": clean(float(c95))}
                for n, v, s, c65, c95 in zip(self.names, self.values, self.stderr,
                                              self.ci65, self.ci95)
            ],
            "covariance": [[clean(float(c)) for c in row] for row in self.covariance],
            "r2": clean(float(self.r2)),
            "flags": self.flags,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def covariance_from_jacobian(J, residuals, *, absolute_sigma, n_params=None):
    """Covariance ``(J^T J)^-1`` of weighted residuals.

    With ``absolute_sigma=False`` it is scaled by the reduced chi-square. A
    singular normal matrix gives infinite variance on the null directions.
    """
    n_params = J.shape[1] if n_params is None else n_params
    A = J.T @ J
    try:
        cov = np.linalg.inv(A)
        if not np.all(np.isfinite(cov)) or np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(A)
        null = np.abs(np.diag(A)) < 1e-300
        _, s, vt = np.linalg.svd(A)
        weak = vt[s < s.max() * 1e-14] if s.size else vt[:0]
        for v in weak:
            null |= np.abs(v) > 1e-3
        cov[null, :] = np.inf
        cov[:, null] = np.inf
    if not absolute_sigma:
        dof = len(residuals) - n_params
        scale = float(residuals @ residuals) / dof if dof > 0 else np.inf
        with np.errstate(invalid="ignore"):
            cov = cov * scale
    return cov
