"""Data ingestion and preprocessing.

Pipeline order is fixed: CSV levels -> log differences -> optional
AR(1)-GARCH(1,1) filtering (Gaussian quasi-ML, per column) -> median-norm
scaling -> model. The scale factor is kept so shift and weight estimates
can be reported in the original units.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels

__all__ = ["ReturnSeries", "ingest_csv", "garch_filter", "median_scale",
           "write_matrix_csv"]


@dataclass
class ReturnSeries:
    values: np.ndarray            # (n, d) log-differences (or residuals)
    labels: list[str]
    scale_factor: float = 1.0     # median row norm divided out so far
    n_dropped: int = 0
    garch_params: list[dict] = field(default_factory=list)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(v)):
            raise ValueError("return series contains non-finite entries")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def ingest_csv(path, date_column: str | None = None) -> ReturnSeries:
    """Read a CSV of price levels and convert to log differences.

    The header row names the columns; an optional date column is carried
    past, not modelled. Rows with missing values are dropped (counted), as
    are return rows that come out non-finite (non-positive levels). Fewer
    than 50 usable return rows is an error.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        skip = set()
        if date_column is not None:
            if date_column not in header:
                raise ValueError(f"{path}: no column named {date_column!r}")
            skip.add(header.index(date_column))
        labels = [h for i, h in enumerate(header) if i not in skip]

        rows = []
        dropped = 0
        for r, rec in enumerate(reader, start=2):
            vals = []
            missing = False
            for i, cell in enumerate(rec):
                if i in skip:
                    continue
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    missing = True
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell at row {r}, column "
                        f"{header[i]!r}: {cell!r}") from None
            if missing or len(vals) != len(labels):
                dropped += 1
                continue
            rows.append(vals)

    levels = np.asarray(rows, dtype=float)
    if levels.shape[0] < 2:
        raise ValueError(f"{path}: need at least two usable rows")
    with np.errstate(divide="ignore", invalid="ignore"):
        rets = np.diff(np.log(levels), axis=0)
    good = np.all(np.isfinite(rets), axis=1)
    dropped += int(np.sum(~good))
    rets = rets[good]
    if rets.shape[0] < 50:
        raise ValueError(
            f"{path}: only {rets.shape[0]} usable return rows (need 50)")
    return ReturnSeries(rets, labels, n_dropped=dropped)


def _garch_unpack(theta):
    c = theta[0]
    phi = math.tanh(theta[1])
    omega = math.exp(theta[2])
    persist = 1.0 / (1.0 + math.exp(-theta[3]))   # a + b in (0, 1)
    frac = 1.0 / (1.0 + math.exp(-theta[4]))      # a / (a + b)
    a = persist * frac
    b = persist * (1.0 - frac)
    return c, phi, omega, a, b


def fit_garch11(x: np.ndarray, max_iter: int = 4000):
    """Gaussian QML fit of AR(1)-GARCH(1,1); returns (params dict, z, sig2).

    Stationarity a + b < 1 is enforced through the reparameterisation.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 observations per column")
    v = float(np.var(x))

    def nll(theta):
        try:
            c, phi, omega, a, b = _garch_unpack(theta)
        except OverflowError:
            return 1e100
        val, _, _ = kernels.garch11_recursion(x, c, phi, omega, a, b)
        return val if math.isfinite(val) else 1e100

    theta0 = np.array([float(np.mean(x)), 0.0, math.log(max(v, 1e-10) * 0.1),
                       math.log(0.85 / 0.15), math.log(0.1 / 0.9)])
    res = minimize(nll, theta0, method="Nelder-Mead",
                   options={"maxiter": max_iter, "xatol": 1e-6,
                            "fatol": 1e-8, "adaptive": True})
    if not res.success:
        raise RuntimeError(f"GARCH fit did not converge: {res.message}")
    c, phi, omega, a, b = _garch_unpack(res.x)
    _, eps, sig2 = kernels.garch11_recursion(x, c, phi, omega, a, b)
    z = eps / np.sqrt(sig2)
    return ({"c": c, "phi": phi, "omega": omega, "a": a, "b": b,
             "persistence": a + b}, z, sig2)


def garch_filter(series: ReturnSeries, strict: bool = False) -> ReturnSeries:
    """Standardised AR(1)-GARCH(1,1) residuals, column by column.

    A column whose fit fails is passed through demeaned/rescaled with a
    warning (or an error under strict). The AR lag costs one leading row.
    """
    n, d = series.values.shape
    out = np.empty((n - 1, d))
    fitted = []
    for j in range(d):
        x = series.values[:, j]
        try:
            params, z, _ = fit_garch11(x)
            out[:, j] = z
            fitted.append(params)
        except (RuntimeError, ValueError) as exc:
            if strict:
                raise
            warnings.warn(f"GARCH fit failed for column "
                          f"{series.labels[j]!r} ({exc}); passing the "
                          "column through standardised only")
            xc = x[1:] - np.mean(x[1:])
            out[:, j] = xc / max(np.std(xc), 1e-12)
            fitted.append({"passthrough": True})
    return ReturnSeries(out, list(series.labels),
                        scale_factor=series.scale_factor,
                        n_dropped=series.n_dropped, garch_params=fitted)


def median_scale(series: ReturnSeries) -> ReturnSeries:
    """Divide all rows by the median row norm; the factor is recorded.

    Idempotent up to floating point: after scaling the median row norm is
    exactly 1.
    """
    norms = np.linalg.norm(series.values, axis=1)
    med = float(np.median(norms))
    if med <= 0.0:
        raise ValueError("median row norm is zero; cannot scale")
    return ReturnSeries(series.values / med, list(series.labels),
                        scale_factor=series.scale_factor * med,
                        n_dropped=series.n_dropped,
                        garch_params=list(series.garch_params))


def write_matrix_csv(path, values: np.ndarray, labels: list[str]) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(labels)
        for row in values:
            writer.writerow([repr(float(x)) for x in row])
