"""Theory-versus-simulation comparison reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cpgf.errors import GridMismatchError


@dataclass
class CompareReport:
    """Pointwise comparison of a theory curve with a simulated mean.

    Attributes
    ----------
    t, theory, mean, stderr, z : ndarray
        Per theory time point; ``z = (mean - theory) / stderr``.
    in_window : ndarray of bool
    tol : float
        Relative tolerance of the pass rule.
    abs_floor : float
        Absolute slack added to the relative tolerance.
    fit : dict
        Optional slope estimates.
    """

    t: np.ndarray
    theory: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    z: np.ndarray
    in_window: np.ndarray
    tol: float
    abs_floor: float = 0.0
    fit: dict = field(default_factory=dict)

    @property
    def rel_dev(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.mean - self.theory) / np.abs(self.theory)

    @property
    def max_rel_dev(self) -> float:
        return float(np.max(self.rel_dev[self.in_window])) if self.in_window.any() else 0.0

    @property
    def max_abs_z(self) -> float:
        z = np.abs(self.z[self.in_window])
        z = z[np.isfinite(z)]
        return float(np.max(z)) if z.size else 0.0

    @property
    def point_ok(self) -> np.ndarray:
        return np.abs(self.mean - self.theory) <= self.tol * np.abs(self.theory) + self.abs_floor

    @property
    def passed(self) -> bool:
        return bool(np.all(self.point_ok[self.in_window]))

    def to_csv(self) -> str:
        from cpgf.simulator import format_float

        lines = ["t,theory,mean,stderr,z,in_window"]
        for row in zip(self.t, self.theory, self.mean, self.stderr, self.z, self.in_window):
            lines.append(",".join([format_float(v) for v in row[:5]] + [str(int(row[5]))]))
        lines.append(f"# max_abs_z={format_float(self.max_abs_z)}")
        lines.append(f"# max_rel_dev={format_float(self.max_rel_dev)}")
        for k, v in sorted(self.fit.items()):
            lines.append(f"# {k}={format_float(v)}")
        lines.append(f"# tol={format_float(self.tol)} abs_floor={format_float(self.abs_floor)}")
        lines.append(f"# result={'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"


def resample_nearest(t_target, t_source, values):
    """Values at the source times nearest to each target time.

    Raises
    ------
    GridMismatchError
        If a target time is further than half a source step from every
        source time.
    """
    t_target = np.asarray(t_target, dtype=float)
    t_source = np.asarray(t_source, dtype=float)
    order = np.argsort(t_source)
    ts = t_source[order]
    if ts.size == 0:
        raise GridMismatchError("empty source grid")
    step = float(np.min(np.diff(ts))) if ts.size > 1 else 0.0
    pos = np.clip(np.searchsorted(ts, t_target), 0, ts.size - 1)
    left = np.clip(pos - 1, 0, ts.size - 1)
    nearest = np.where(np.abs(ts[left] - t_target) <= np.abs(ts[pos] - t_target), left, pos)
    gap = np.abs(ts[nearest] - t_target)
    slack = 0.5 * step + 1e-12 * max(1.0, float(np.max(np.abs(ts))))
    if np.any(gap > slack):
        bad = t_target[np.argmax(gap)]
        raise GridMismatchError(f"time {bad} has no simulated step within {slack:g}")
    return np.asarray(values)[order][nearest]


def compare_curves(t, theory, t_sim, mean, stderr, tol: float = 0.05, window=None,
                   abs_floor: float = 0.0) -> CompareReport:
    """Compare a theory curve with a simulated mean resampled onto its grid.

    Parameters
    ----------
    t, theory : array
        Theory grid and values.
    t_sim, mean, stderr : array
        Simulated grid, mean and standard error.
    tol : float
        A point passes when ``|mean - theory| <= tol |theory| + abs_floor``.
    window : (float, float), optional
        Closed time interval where the rule is enforced; default everywhere.
    """
    t = np.asarray(t, dtype=float)
    theory = np.asarray(theory, dtype=float)
    m = resample_nearest(t, t_sim, mean)
    e = resample_nearest(t, t_sim, stderr)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (m - theory) / e
    if window is None:
        in_window = np.ones(t.shape, dtype=bool)
    else:
        lo, hi = sorted(window)
        in_window = (t >= lo) & (t <= hi)
    return CompareReport(t, theory, m, e, z, in_window, tol, abs_floor)


def fit_powerlaw(t, y) -> float:
    """Exponent ``b`` of ``|y| ~ |t|^b`` by least squares in log-log coordinates."""
    t, y = np.abs(np.asarray(t, dtype=float)), np.abs(np.asarray(y, dtype=float))
    ok = (t > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        raise ValueError("need at least two positive points for a power-law fit")
    return float(np.polyfit(np.log(t[ok]), np.log(y[ok]), 1)[0])


def fit_exponential(t, y) -> float:
    """Rate ``r`` of ``y ~ exp(-r t)`` by least squares on ``log y``."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    ok = (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        raise ValueError("need at least two positive points for an exponential fit")
    return -float(np.polyfit(t[ok], np.log(y[ok]), 1)[0])


def shifted_powerlaw_exponent(t, y, c: float) -> float:
    """Exponent ``b`` of ``y ~ A (1 + c t)^(-b)`` with ``c`` given and ``A`` free."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    ok = (y > 0) & np.isfinite(y) & (1 + c * t > 0)
    if ok.sum() < 2:
        raise ValueError("need at least two usable points")
    return -float(np.polyfit(np.log1p(c * t[ok]), np.log(y[ok]), 1)[0])
