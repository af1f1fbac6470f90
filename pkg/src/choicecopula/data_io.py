"""Datasets: schema, CSV ingestion and validation, and a synthetic generator.

Alternatives are 1-based in files and 0-based everywhere in the library API.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DataParseError,
    DataRangeError,
    DecompositionError,
    DomainError,
    SchemaError,
    ShapeError,
)
from .ghk import exchangeable_cov
from .stats_core import RngStream, cholesky
from .unobs_test import LatentCovSpec, simulate_latent

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "."})

_LIST_ROLES = ("z", "x", "first_stage", "earnings_extra", "hours_extra", "proxy")


@dataclass(frozen=True)
class Schema:
    """Mapping from model roles to column names.

    ``z`` are the choice-equation covariates, ``x`` the outcome-equation ones.
    ``first_stage`` lists the student characteristics in the earnings and hours
    regressions; ``earnings_extra``/``hours_extra`` the additional exogenous
    variables of each regression. No intercept is ever added implicitly.
    """

    choice: str
    outcome: str
    n_alternatives: int
    z: tuple = ()
    x: tuple = ()
    earnings: str | None = None
    hours: str | None = None
    first_stage: tuple = ()
    earnings_extra: tuple = ()
    hours_extra: tuple = ()
    proxy: tuple = ()
    group: str | None = None

    def __post_init__(self):
        for role in _LIST_ROLES:
            value = getattr(self, role)
            if isinstance(value, str):
                value = (value,)
            object.__setattr__(self, role, tuple(value or ()))
        if int(self.n_alternatives) < 2:
            raise SchemaError("n_alternatives must be at least 2")
        object.__setattr__(self, "n_alternatives", int(self.n_alternatives))
        if not self.z:
            raise SchemaError("schema needs at least one choice covariate (z)")

    @classmethod
    def from_dict(cls, d) -> "Schema":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema roles: {sorted(unknown)}")
        missing = {"choice", "outcome", "n_alternatives"} - set(d)
        if missing:
            raise SchemaError(f"schema lacks required roles: {sorted(missing)}")
        return cls(**d)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def has_first_stage(self) -> bool:
        return self.earnings is not None and self.hours is not None

    def columns(self) -> list:
        """Every referenced column, each once, in role order."""
        seen = []
        singles = [self.choice, self.outcome, self.earnings, self.hours, self.group]
        for name in singles[:2] + list(self.z) + list(self.x) + singles[2:4] + list(
            self.first_stage) + list(self.earnings_extra) + list(self.hours_extra) + list(
                self.proxy) + singles[4:]:
            if name is not None and name not in seen:
                seen.append(name)
        return seen


@dataclass
class Dataset:
    """Validated numeric data; ``columns`` keeps file values (choice 1-based)."""

    schema: Schema
    columns: dict
    dropped_lines: tuple = ()

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ShapeError("columns differ in length")
        missing = [c for c in self.schema.columns() if c not in self.columns]
        if missing:
            raise SchemaError(f"columns missing from dataset: {missing}")

    @property
    def n(self) -> int:
        return len(self.columns[self.schema.choice])

    @property
    def n_alternatives(self) -> int:
        return self.schema.n_alternatives

    @property
    def choice(self) -> np.ndarray:
        return np.asarray(self.columns[self.schema.choice]).astype(int) - 1

    @property
    def outcome(self) -> np.ndarray:
        return np.asarray(self.columns[self.schema.outcome], dtype=float)

    def matrix(self, names) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([np.asarray(self.columns[c], dtype=float) for c in names])

    @property
    def z(self) -> np.ndarray:
        return self.matrix(self.schema.z)

    @property
    def x(self) -> np.ndarray:
        return self.matrix(self.schema.x)

    @property
    def z_only(self) -> list:
        return [c for c in self.schema.z if c not in self.schema.x]

    @property
    def x_only(self) -> list:
        return [c for c in self.schema.x if c not in self.schema.z]

    def is_constant(self, name) -> bool:
        col = np.asarray(self.columns[name], dtype=float)
        return bool(col.size == 0 or np.all(col == col[0]))

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.schema, {k: np.asarray(v)[rows] for k, v in self.columns.items()})

    def groups(self):
        """Distinct values of the group column, sorted."""
        if self.schema.group is None:
            raise SchemaError("schema defines no group column")
        return sorted(set(np.asarray(self.columns[self.schema.group]).tolist()))

    def filter_group(self, value) -> "Dataset":
        col = np.asarray(self.columns[self.schema.group])
        return self.take(np.flatnonzero(col == value))


def _parse_cell(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataParseError(
            f"line {line}, column {column!r}: cannot parse {text!r} as a number", line, column
        ) from None
    if not math.isfinite(value):
        raise DataParseError(f"line {line}, column {column!r}: non-finite value {text!r}", line, column)
    return value


def _read_rows(reader, path, schema, wanted):
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: empty file, header row required") from None
    absent = [c for c in wanted if c not in header]
    if absent:
        raise SchemaError(f"{path}: schema columns not in header: {absent}")
    index = {c: header.index(c) for c in wanted}
    values = {c: [] for c in wanted}
    dropped = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataParseError(
                f"line {line}: expected {len(header)} fields, found {len(row)}", line
            )
        cells = {c: row[index[c]].strip() for c in wanted}
        if any(cells[c] in MISSING_TOKENS for c in wanted):
            dropped.append(line)
            continue
        parsed = {c: _parse_cell(cells[c], line, c) for c in wanted}
        ch = parsed[schema.choice]
        if ch != int(ch) or not 1 <= ch <= schema.n_alternatives:
            raise DataRangeError(
                f"line {line}: choice {cells[schema.choice]} outside 1..{schema.n_alternatives}",
                line, schema.choice,
            )
        if parsed[schema.outcome] not in (0.0, 1.0):
            raise DataRangeError(
                f"line {line}: outcome {cells[schema.outcome]} is not 0 or 1", line, schema.outcome
            )
        for c in wanted:
            values[c].append(parsed[c])
    return values, dropped


def load_dataset(path, schema: Schema) -> Dataset:
    """Read a comma-delimited UTF-8 file with a header row.

    Rows with a missing value in any schema column are dropped; their 1-based file
    line numbers are kept in ``dropped_lines``.

    Raises
    ------
    SchemaError
        The header lacks a column referenced by the schema, or is absent.
    DataError
        The file cannot be opened.
    DataParseError
        A non-missing cell is not a finite number, a row has the wrong number of
        fields, or the file is not UTF-8.
    DataRangeError
        The choice lies outside ``1..J`` or the outcome is not 0/1.
    """
    wanted = schema.columns()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open data file {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            values, dropped = _read_rows(reader, path, schema, wanted)
        except UnicodeDecodeError as exc:
            raise DataParseError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
        except csv.Error as exc:
            raise DataParseError(f"{path}, line {reader.line_num}: {exc}", reader.line_num) from None
    columns = {c: np.asarray(v, dtype=float) for c, v in values.items()}
    columns[schema.choice] = columns[schema.choice].astype(int)
    return Dataset(schema, columns, tuple(dropped))


def _format(value):
    if float(value).is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(float(value))


def save_dataset(dataset: Dataset, path) -> None:
    """Write the schema columns as CSV; floats use shortest round-trip repr."""
    names = dataset.schema.columns()
    cols = [np.asarray(dataset.columns[c]) for c in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(dataset.n):
            writer.writerow([_format(col[i]) for col in cols])


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class DgpConfig:
    """Synthetic data-generating process.

    Column layout (all covariates i.i.d. standard normal):

    * ``z`` = ``const, zo1..zoA, sh1..shB``: the constant, choice-only covariates
      and covariates shared with the outcome equation;
    * ``x`` = ``sh1..shB, xo1..xoC``: shared and outcome-only covariates;
    * first stage: characteristics ``sh1..shB``, extra variables ``we1`` (earnings)
      and ``he1`` (hours).

    ``beta`` is ``J x (1 + A + B)`` and its ``base`` row must be zero. Utilities
    are ``vl + z beta_j + u_j``; the outcome is ``1(x gamma + tau_I + eps > 0)``.
    Earnings and hours for the chosen alternative are linear in
    ``[sh, alternative dummy, extra]`` with normal noise, and ``vl`` is the ratio of
    their true conditional means.
    """

    n: int
    beta: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    rho_star: np.ndarray
    a: float = 0.0
    n_z_only: int = 1
    n_shared: int = 1
    n_x_only: int = 1
    base: int | None = None
    kappa_w: np.ndarray | None = None
    kappa_h: np.ndarray | None = None
    delta_w: np.ndarray | None = None
    delta_h: np.ndarray | None = None
    lambda_w: float = 1.0
    lambda_h: float = 0.05
    sd_w: float = 2.0
    sd_h: float = 0.2
    non_normal_eps: bool = False
    seed: int = 0

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.rho_star = np.atleast_1d(np.asarray(self.rho_star, dtype=float))
        J = self.beta.shape[0]
        if J < 2:
            raise ConfigError("need J >= 2 alternatives")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.base is None:
            self.base = J - 1
        kz = 1 + self.n_z_only + self.n_shared
        if self.beta.shape != (J, kz):
            raise ConfigError(f"beta must be {J}x{kz}, got {self.beta.shape}")
        if np.any(self.beta[self.base] != 0.0):
            raise ConfigError("the base alternative's beta row must be zero")
        if self.gamma.size != self.n_shared + self.n_x_only:
            raise ConfigError(f"gamma must have {self.n_shared + self.n_x_only} entries")
        if self.tau.size != J or self.rho_star.size != J:
            raise ConfigError("tau and rho_star need one entry per alternative")
        defaults = {
            "kappa_w": 30.0 + np.arange(J) - 0.5 * (J - 1),
            "kappa_h": np.full(J, 2.0),
            "delta_w": np.full(self.n_shared, 1.5),
            "delta_h": np.full(self.n_shared, 0.05),
        }
        for name, default in defaults.items():
            value = getattr(self, name)
            setattr(self, name, default if value is None else np.atleast_1d(np.asarray(value, float)))
        if self.kappa_w.size != J or self.kappa_h.size != J:
            raise ConfigError("kappa_w and kappa_h need one entry per alternative")
        try:
            self.latent = LatentCovSpec(self.rho_star, self.a)
        except (DecompositionError, DomainError) as exc:
            raise ConfigError(f"implied latent covariance is not positive definite: {exc}") from exc

    @property
    def n_alternatives(self) -> int:
        return self.beta.shape[0]

    def names(self):
        zo = [f"zo{i + 1}" for i in range(self.n_z_only)]
        sh = [f"sh{i + 1}" for i in range(self.n_shared)]
        xo = [f"xo{i + 1}" for i in range(self.n_x_only)]
        return zo, sh, xo

    def schema(self) -> Schema:
        zo, sh, xo = self.names()
        return Schema(
            choice="major", outcome="married", n_alternatives=self.n_alternatives,
            z=["const"] + zo + sh, x=sh + xo, earnings="earnings", hours="hours",
            first_stage=sh, earnings_extra=["we1"], hours_extra=["he1"],
        )

    @classmethod
    def from_dict(cls, d) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dgp keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class TruthRecord:
    """Latent draws behind a simulated dataset; never written into the data file.

    ``xi[:, j]`` is the best utility among alternatives other than ``j`` minus
    ``u_j``, for every individual and every ``j``.
    """

    eps: np.ndarray
    u: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    systematic: np.ndarray
    vl: np.ndarray
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        np.savez(path, eps=self.eps, u=self.u, y=self.y, xi=self.xi,
                 systematic=self.systematic, vl=self.vl)

    @classmethod
    def load(cls, path) -> "TruthRecord":
        with np.load(path) as f:
            return cls(f["eps"], f["u"], f["y"], f["xi"], f["systematic"], f["vl"])


def xi_all(y, u):
    """``max_{k != j} y_k - u_j`` for every column ``j``."""
    n, J = y.shape
    order = np.argsort(-y, axis=1, kind="stable")
    top = np.take_along_axis(y, order[:, :1], axis=1)[:, 0]
    second = np.take_along_axis(y, order[:, 1:2], axis=1)[:, 0]
    best_other = np.where(np.arange(J)[None, :] == order[:, :1], second[:, None], top[:, None])
    return best_other - u


def simulate_dgp(cfg: DgpConfig):
    """Draw a dataset and its truth record; deterministic given ``cfg.seed``.

    Independent sub-streams feed covariates, first-stage noise and latent errors.
    """
    n = cfg.n
    zo, sh, xo = cfg.names()
    root = RngStream(cfg.seed, 0)
    cov_rng = root.child(1).generator()
    Z_only = cov_rng.standard_normal((n, cfg.n_z_only))
    S = cov_rng.standard_normal((n, cfg.n_shared))
    X_only = cov_rng.standard_normal((n, cfg.n_x_only))
    we = cov_rng.standard_normal(n)
    he = cov_rng.standard_normal(n)

    mean_w = (S @ cfg.delta_w)[:, None] + cfg.kappa_w[None, :] + cfg.lambda_w * we[:, None]
    mean_h = (S @ cfg.delta_h)[:, None] + cfg.kappa_h[None, :] + cfg.lambda_h * he[:, None]
    if np.any(mean_h <= 0.0):
        raise ConfigError("hours model produces non-positive expected hours")
    vl = mean_w / mean_h

    Z = np.column_stack([np.ones(n), Z_only, S])
    X = np.column_stack([S, X_only])
    V = vl + Z @ cfg.beta.T

    eps_dist = "exponential" if cfg.non_normal_eps else "normal"
    eps, u = simulate_latent(cfg.latent, n, root.child(2), eps_dist=eps_dist)
    y = V + u
    chosen = np.argmax(y, axis=1)
    married = (X @ cfg.gamma + cfg.tau[chosen] + eps > 0.0).astype(float)

    noise = root.child(3).generator().standard_normal((n, 2))
    earnings = mean_w[np.arange(n), chosen] + cfg.sd_w * noise[:, 0]
    hours = mean_h[np.arange(n), chosen] + cfg.sd_h * noise[:, 1]

    columns = {"major": chosen + 1, "married": married, "const": np.ones(n)}
    for i, name in enumerate(zo):
        columns[name] = Z_only[:, i]
    for i, name in enumerate(sh):
        columns[name] = S[:, i]
    for i, name in enumerate(xo):
        columns[name] = X_only[:, i]
    columns.update({"earnings": earnings, "hours": hours, "we1": we, "he1": he})
    data = Dataset(cfg.schema(), columns)
    truth = TruthRecord(eps, u, y, xi_all(y, u), V, vl, {"seed": cfg.seed})
    return data, truth


@dataclass
class MomentReport:
    """Sample moments of the latent draws.

    ``cov_eps_xi[j]`` and ``se_eps_xi[j]`` refer to ``xi_j`` over all individuals;
    ``second_place[j, k]`` is the share of individuals choosing ``j`` whose
    runner-up is ``k``.
    """

    cov_eps_u: np.ndarray
    se_eps_u: np.ndarray
    cov_eps_xi: np.ndarray
    se_eps_xi: np.ndarray
    cov_eps_xi_chosen: np.ndarray
    second_place: np.ndarray
    choice_counts: np.ndarray


def _cov_with_se(a, B):
    ac = a - a.mean()
    Bc = B - B.mean(axis=0)
    prod = ac[:, None] * Bc
    n = a.size
    return prod.sum(axis=0) / (n - 1), prod.std(axis=0, ddof=1) / np.sqrt(n)


def empirical_moments(dataset: Dataset, truth: TruthRecord) -> MomentReport:
    """Covariances of eps with the utility errors and with every ``xi_j``."""
    if truth.eps.size != dataset.n:
        raise ShapeError("truth record does not match the dataset")
    J = dataset.n_alternatives
    chosen = dataset.choice
    cov_u, se_u = _cov_with_se(truth.eps, truth.u)
    cov_xi, se_xi = _cov_with_se(truth.eps, truth.xi)
    cond = np.full(J, np.nan)
    second = np.zeros((J, J))
    counts = np.bincount(chosen, minlength=J)
    others = truth.y.copy()
    others[np.arange(dataset.n), chosen] = -np.inf
    runner_up = np.argmax(others, axis=1)
    for j in range(J):
        rows = chosen == j
        if rows.sum() > 1:
            cond[j] = np.cov(truth.eps[rows], truth.xi[rows, j])[0, 1]
        if rows.any():
            second[j] = np.bincount(runner_up[rows], minlength=J) / rows.sum()
    return MomentReport(cov_u, se_u, cov_xi, se_xi, cond, second, counts)


def default_dgp(n=4000, rho_star=(0.5, 0.0, 0.0), seed=0, **overrides) -> DgpConfig:
    """The three-alternative design used by the recovery and size experiments.

    Each choice-only covariate moves one non-base alternative, so every choice
    probability, including the base one, varies across individuals. Without
    that variation the correlation for an alternative is barely identified.
    """
    params = dict(
        n=n,
        beta=[[0.9, 1.5, 0.0, -0.2], [0.4, 0.0, 1.5, 0.3], [0.0, 0.0, 0.0, 0.0]],
        gamma=[0.5, -0.6],
        tau=[0.4, -0.3, 0.1],
        rho_star=list(rho_star),
        n_z_only=2,
        seed=seed,
    )
    params.update(overrides)
    return DgpConfig(**params)


def covariance_is_pd(rho_star, a) -> bool:
    try:
        J = len(rho_star)
        S = np.eye(J + 1)
        S[0, 1:] = S[1:, 0] = rho_star
        S[1:, 1:] = exchangeable_cov(J, a)
        cholesky(S)
        return True
    except (DecompositionError, DomainError):
        return False
