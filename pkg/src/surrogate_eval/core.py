"""Trial data model, CSV I/O and analysis configuration.

Potential outcomes are stored artifact-wide in the column order
``(Y1, S1, Y0, S0)``; the treated arm observes columns 0-1 and the control
arm observes columns 2-3.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Y1, S1, Y0, S0 = 0, 1, 2, 3
TREATED_COLS = (Y1, S1)
CONTROL_COLS = (Y0, S0)


class TrialDataError(ValueError):
    """Base class for invalid trial input."""


class SchemaError(TrialDataError):
    pass


class ParseError(TrialDataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class ValidationError(TrialDataError):
    pass


class TieWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrialRecord:
    y: float
    s: float
    z: int
    x: tuple[float, ...] = ()
    id: str | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialData:
    """Observed trial: one (y, s, z[, x]) row per unit.

    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    x: np.ndarray = None
    ids: tuple[str, ...] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        s = np.asarray(self.s, dtype=float).ravel()
        z_raw = np.asarray(self.z).ravel()
        n = y.shape[0]
        if s.shape[0] != n or z_raw.shape[0] != n:
            raise ValidationError("y, s and z must have the same length")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
            bad = int(np.flatnonzero(~(np.isfinite(y) & np.isfinite(s)))[0])
            raise ValidationError(f"y and s must be finite (unit index {bad})")
        zf = z_raw.astype(float)
        if not np.all((zf == 0) | (zf == 1)):
            bad = int(np.flatnonzero(~((zf == 0) | (zf == 1)))[0])
            raise ValidationError(f"z ∈ {{0,1}} violated at unit index {bad} (z={z_raw[bad]})")
        z = zf.astype(np.int8)
        if self.x is None:
            x = np.zeros((n, 0))
        else:
            x = np.asarray(self.x, dtype=float)
            if x.ndim == 1:
                x = x.reshape(n, -1) if n else x.reshape(0, 0)
            if x.shape[0] != n:
                raise ValidationError("covariate matrix must have one row per unit")
            if not np.all(np.isfinite(x)):
                raise ValidationError("covariates must be finite")
        n1 = int(z.sum())
        if n1 == 0:
            raise ValidationError("treated arm (z=1) is empty")
        if n1 == n:
            raise ValidationError("control arm (z=0) is empty")
        ids = self.ids
        if ids is None:
            ids = tuple(str(i + 1) for i in range(n))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != n:
                raise ValidationError("ids must have one entry per unit")
            if len(set(ids)) != n:
                dup = next(i for i in ids if ids.count(i) > 1)
                raise ValidationError(f"duplicate unit identifier {dup!r}")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "s", _frozen(s))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.z == 1

    @property
    def records(self) -> list[TrialRecord]:
        return [
            TrialRecord(float(self.y[i]), float(self.s[i]), int(self.z[i]), tuple(self.x[i].tolist()), self.ids[i])
            for i in range(self.n)
        ]

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "TrialData":
        records = list(records)
        dims = {len(r.x) for r in records}
        if len(dims) > 1:
            raise ValidationError(f"inconsistent covariate dimension across records: {sorted(dims)}")
        d = dims.pop() if dims else 0
        ids = None if any(r.id is None for r in records) else [r.id for r in records]
        return cls(
            y=[r.y for r in records],
            s=[r.s for r in records],
            z=[r.z for r in records],
            x=np.asarray([r.x for r in records], dtype=float).reshape(len(records), d),
            ids=ids,
        )

    def has_ties(self) -> dict[str, bool]:
        return {
            "y": bool(np.unique(self.y).size < self.n),
            "s": bool(np.unique(self.s).size < self.n),
        }


@dataclass
class PotentialTable:
    """Completed ``(Y1, S1, Y0, S0)`` table with the observed arm per row."""

    values: np.ndarray
    treated: np.ndarray

    @classmethod
    def from_trial(cls, data: TrialData) -> "PotentialTable":
        vals = np.full((data.n, 4), np.nan)
        t = data.treated
        vals[t, Y1] = data.y[t]
        vals[t, S1] = data.s[t]
        vals[~t, Y0] = data.y[~t]
        vals[~t, S0] = data.s[~t]
        return cls(values=vals, treated=np.array(t, copy=True))

    @property
    def observed_mask(self) -> np.ndarray:
        mask = np.zeros(self.values.shape, dtype=bool)
        mask[self.treated, Y1] = mask[self.treated, S1] = True
        mask[~self.treated, Y0] = mask[~self.treated, S0] = True
        return mask

    def matches_observed(self, data: TrialData) -> bool:
        t = self.treated
        v = self.values
        return bool(
            np.array_equal(v[t, Y1], data.y[t])
            and np.array_equal(v[t, S1], data.s[t])
            and np.array_equal(v[~t, Y0], data.y[~t])
            and np.array_equal(v[~t, S0], data.s[~t])
        )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} in column {col!r}", row) from None
    return val


def load_trial_csv(path, has_covariates: bool | None = None) -> TrialData:
    """Read ``id,y,s,z[,x1..xd]``.

    ``has_covariates=None`` picks up any ``x*`` columns present; ``False``
    ignores them; ``True`` requires at least one. Row indices in errors are
    1-based data rows (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in ("y", "s", "z") if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        xcols = sorted(
            (h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        if xcols and [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise SchemaError(f"{path}: covariate columns must be x1..xd, got {xcols}")
        if has_covariates and not xcols:
            raise SchemaError(f"{path}: covariates requested but no x1..xd columns")
        if has_covariates is False:
            xcols = []
        pos = {h: i for i, h in enumerate(header)}
        ids, ys, ss, zs, xs = [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row_no)
            ids.append(row[pos["id"]].strip() if "id" in pos else str(row_no))
            ys.append(_parse_float(row[pos["y"]], row_no, "y"))
            ss.append(_parse_float(row[pos["s"]], row_no, "s"))
            zval = _parse_float(row[pos["z"]], row_no, "z")
            if zval not in (0.0, 1.0):
                raise ValidationError(f"row {row_no}: z ∈ {{0,1}} violated (z={row[pos['z']].strip()})")
            zs.append(int(zval))
            for col, v in (("y", ys[-1]), ("s", ss[-1])):
                if not math.isfinite(v):
                    raise ValidationError(f"row {row_no}: {col} must be finite")
            xs.append([_parse_float(row[pos[c]], row_no, c) for c in xcols])
    if not ys:
        raise ValidationError(f"{path}: no data rows")
    data = TrialData(y=ys, s=ss, z=zs, x=np.asarray(xs, dtype=float).reshape(len(ys), len(xcols)), ids=ids)
    ties = data.has_ties()
    if ties["y"] or ties["s"]:
        which = ", ".join(k for k, v in ties.items() if v)
        warnings.warn(f"{path}: tied values in {which}", TieWarning, stacklevel=2)
    return data


def write_trial_csv(data: TrialData, path) -> None:
    """Write with ``repr`` floats so a read gives back identical doubles."""
    path = Path(path)
    header = ["id", "y", "s", "z"] + [f"x{j + 1}" for j in range(data.d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow(
                [data.ids[i], repr(float(data.y[i])), repr(float(data.s[i])), int(data.z[i])]
                + [repr(float(v)) for v in data.x[i]]
            )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

AUTO = "auto"


@dataclass(frozen=True)
class ModelPriors:
    """Hyperparameters for both parametric models.

    ``mu_beta``/``sigma_beta`` default to zero mean and ``10 I`` sized to the
    design (intercept included) when left as ``None``.
    """

    mu0: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    sigma0: tuple[tuple[float, ...], ...] = tuple(tuple(10.0 if i == j else 0.0 for j in range(4)) for i in range(4))
    mu_beta: tuple[float, ...] | None = None
    sigma_beta: tuple[tuple[float, ...], ...] | None = None
    beta_scale: float = 10.0
    s: float = 2.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.s > 0 and self.tau > 0):
            raise ValueError("half-normal scale s and LKJ shape tau must be positive")
        if np.asarray(self.mu0).shape != (4,):
            raise ValueError("mu0 must have length 4")
        if np.linalg.eigvalsh(np.asarray(self.sigma0))[0] <= 0:
            raise ValueError("sigma0 must be positive definite")
        if self.sigma_beta is not None and np.linalg.eigvalsh(np.asarray(self.sigma_beta))[0] <= 0:
            raise ValueError("sigma_beta must be positive definite")

    def coefficient_prior(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        mu = np.zeros(dim) if self.mu_beta is None else np.asarray(self.mu_beta, dtype=float)
        cov = self.beta_scale * np.eye(dim) if self.sigma_beta is None else np.asarray(self.sigma_beta, dtype=float)
        if mu.shape != (dim,) or cov.shape != (dim, dim):
            raise ValueError(f"coefficient prior must match design dimension {dim}")
        return mu, cov


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    threshold: float | str = AUTO
    iters: int = 500
    burnin: int = 125
    seed: int = 0
    priors: ModelPriors = field(default_factory=ModelPriors)
    beta: float = 0.2
    prior_a: float = 1.0
    prior_b: float = 1.0
    intercept: bool = True
    mh_steps: int = 5

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if not 0 <= self.burnin < self.iters:
            raise ValueError(f"burnin must satisfy 0 <= b < T (b={self.burnin}, T={self.iters})")
        if self.threshold != AUTO:
            try:
                float(self.threshold)
            except (TypeError, ValueError):
                raise ValueError(f"threshold must be a number or {AUTO!r}") from None
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.mh_steps < 1:
            raise ValueError("mh_steps must be positive")

    @property
    def auto_threshold(self) -> bool:
        return self.threshold == AUTO
