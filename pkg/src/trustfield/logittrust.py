"""LogitTrust: per-pair dynamic trust from packet-forwarding evidence.

Trust in a subject is the logistic score of its behavior vector
x = [PFR, PFD] (centered to [-1, 1]) under a coefficient vector fitted to
the observer's evidence history by robit (Student-t latent) regression.
The fit is the EM/IRLS iteration

    u = x'b
    w = F_{nu+2}(s' c u) / F_nu(s' u)            s' = 2s - 1, c = sqrt(1 + 2/nu)
    z = u + s' f_nu(u) / F_{nu+2}(s' c u)
    b <- (sum w x x' + ridge I)^-1 sum w x z

started from b = (1, 1).  The first contact with a subject has no history
and scores x directly against b = (1, 1).
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ._backend import kernels
from .errors import ConfigError, DomainError, FormatError, NumericalError, ParseError
from .netsim import WindowMetrics

BETA0 = (1.0, 1.0)
U_CLAMP = 30.0
DENOM_FLOOR = 1e-12
LABELERS = ("self", "pfr")


# ------------------------------------------------------------ special functions


def _check_nu(nu):
    if not nu > 0 or not math.isfinite(nu):
        raise DomainError(f"degrees of freedom must be positive and finite, got {nu!r}")


def student_t_pdf(x: float, nu: float) -> float:
    """Density of the standard Student-t distribution with ``nu`` dof."""
    _check_nu(nu)
    return kernels.t_pdf(float(x), float(nu))


def student_t_cdf(x: float, nu: float) -> float:
    """Student-t CDF via the regularized incomplete beta function.

    Integer ``nu <= 64`` uses the exact finite trigonometric series outside
    the left tail; both routes agree to ~1e-15.
    """
    _check_nu(nu)
    return kernels.t_cdf(float(x), float(nu))


def betainc_reg(a: float, b: float, x: float) -> float:
    return kernels.betainc_reg(float(a), float(b), float(x))


# ------------------------------------------------------------------ data model


@dataclass(frozen=True)
class BehaviorVector:
    pfr_norm: float
    pfd_norm: float
    pfr: float = math.nan
    pfd: float = math.nan

    def __post_init__(self):
        if not (-1.0 <= self.pfr_norm <= 1.0 and -1.0 <= self.pfd_norm <= 1.0):
            raise ValueError(f"behavior features must lie in [-1, 1], got "
                             f"({self.pfr_norm}, {self.pfd_norm})")

    def as_tuple(self) -> tuple[float, float]:
        return (self.pfr_norm, self.pfd_norm)


@dataclass(frozen=True)
class EvidenceRecord:
    window_index: int
    x: BehaviorVector
    s: int

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"evidence outcome must be 0 or 1, got {self.s!r}")


@dataclass
class EvidenceHistory:
    """Rolling (x, s) evidence one observer holds about one subject."""

    observer_id: int
    subject_id: int
    capacity: int = 50
    records: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("history capacity must be >= 1")
        self.records = deque(self.records, maxlen=self.capacity)

    def __len__(self):
        return len(self.records)

    def append(self, record: EvidenceRecord) -> None:
        if self.records and record.window_index <= self.records[-1].window_index:
            raise ValueError("evidence must arrive in ascending window order")
        self.records.append(record)

    @property
    def window_indices(self) -> list[int]:
        return [r.window_index for r in self.records]

    def design(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([r.x.as_tuple() for r in self.records], dtype=float).reshape(-1, 2)
        s = np.array([r.s for r in self.records], dtype=float)
        return X, s


@dataclass(frozen=True)
class TrustParams:
    nu0: float = 5.0
    threshold: float = 0.5
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    ridge: float = 1e-6
    history_capacity: int = 50
    kappa: float = 100.0
    labeler: str = "self"

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ConfigError("nu0 must be > 0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be > 0")
        if not self.ridge >= 0:
            raise ConfigError("ridge must be >= 0")
        if self.history_capacity < 1:
            raise ConfigError("history_capacity must be >= 1")
        if not self.kappa > 0:
            raise ConfigError("kappa must be > 0")
        if self.labeler not in LABELERS:
            raise ConfigError(f"labeler must be one of {LABELERS}")


@dataclass(frozen=True)
class TrustEstimate:
    theta: float
    beta: tuple[float, float]
    iterations_used: int
    converged: bool
    stale: bool = False


@dataclass(frozen=True)
class FitResult:
    beta: tuple[float, float]
    iterations: int
    converged: bool


# ------------------------------------------------------------------ operations


def normalize_behavior(metrics: WindowMetrics, kappa: float = 100.0) -> BehaviorVector | None:
    """Map raw (PFR, PFD) onto [-1, 1]^2; ``None`` when nothing was received.

    PFD is squashed with 1 - exp(-pfd / kappa) before centering.
    """
    if not kappa > 0:
        raise ConfigError("kappa must be > 0")
    if metrics.packets_received <= 0:
        return None
    pfd_unit = -math.expm1(-metrics.pfd / kappa)
    pfr_c = min(1.0, max(-1.0, 2.0 * metrics.pfr - 1.0))
    pfd_c = min(1.0, max(-1.0, 2.0 * pfd_unit - 1.0))
    return BehaviorVector(pfr_c, pfd_c, metrics.pfr, metrics.pfd)


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict_trust(beta, x_next: BehaviorVector | tuple[float, float]) -> float:
    x = x_next.as_tuple() if isinstance(x_next, BehaviorVector) else x_next
    return _logistic(x[0] * beta[0] + x[1] * beta[1])


def initial_trust(x: BehaviorVector | tuple[float, float], beta0=BETA0) -> TrustEstimate:
    """First-contact score: logistic of x'beta0 with no history to fit."""
    beta = (float(beta0[0]), float(beta0[1]))
    return TrustEstimate(predict_trust(beta, x), beta, 0, True)


def classify(theta: float, threshold: float = 0.5) -> int:
    """1 (trustworthy) iff theta is strictly greater than the threshold."""
    return 1 if theta > threshold else 0


def robit_weight(u: float, s: int, nu: float) -> float:
    """IRLS weight w^t for latent mean ``u`` and outcome ``s``."""
    sg = 2 * s - 1
    num = s - sg * student_t_cdf(-math.sqrt(1.0 + 2.0 / nu) * u, nu + 2.0)
    den = s - sg * student_t_cdf(-u, nu)
    return max(num, DENOM_FLOOR) / max(den, DENOM_FLOOR)


def robit_working_response(u: float, s: int, nu: float) -> float:
    """Working response s*^t for latent mean ``u`` and outcome ``s``."""
    sg = 2 * s - 1
    num = s - sg * student_t_cdf(-math.sqrt(1.0 + 2.0 / nu) * u, nu + 2.0)
    return u + sg * student_t_pdf(u, nu) / max(num, DENOM_FLOOR)


def irls_step(X, s, beta, nu: float, ridge: float = 0.0) -> tuple[float, float]:
    """One EM/IRLS update written out with numpy; reference for the kernels."""
    X = np.asarray(X, dtype=float)
    S0 = ridge * np.eye(2)
    S1 = np.zeros(2)
    for xt, st in zip(X, s):
        u = min(U_CLAMP, max(-U_CLAMP, float(xt @ np.asarray(beta))))
        w = robit_weight(u, int(st), nu)
        S0 += w * np.outer(xt, xt)
        S1 += w * xt * robit_working_response(u, int(st), nu)
    b = np.linalg.solve(S0, S1)
    return float(b[0]), float(b[1])


def fit_beta(history: EvidenceHistory, params: TrustParams) -> FitResult:
    """Fit the subject's coefficient vector to the observer's evidence."""
    if not len(history):
        raise ValueError("fit_beta needs a non-empty evidence history")
    X, s = history.design()
    if not np.all(np.isfinite(X)):
        raise ValueError("evidence features must be finite")
    b0, b1, iters, converged, status = kernels.fit_robit(
        X, s, float(params.nu0), float(params.ridge), float(params.convergence_tol),
        int(params.max_iterations))
    if status == kernels.STATUS_SINGULAR:
        raise NumericalError(
            f"singular weighted Gram matrix for observer {history.observer_id} -> subject "
            f"{history.subject_id}, windows {history.window_indices}")
    if status != kernels.STATUS_OK:
        raise NumericalError(
            f"non-positive IRLS weight for observer {history.observer_id} -> subject "
            f"{history.subject_id}, windows {history.window_indices}")
    if not (math.isfinite(b0) and math.isfinite(b1)):
        raise NumericalError(f"non-finite coefficients for windows {history.window_indices}")
    return FitResult((b0, b1), int(iters), bool(converged))


def update_step(history: EvidenceHistory, new_metrics: WindowMetrics, params: TrustParams,
                previous: TrustEstimate | None = None,
                ) -> tuple[TrustEstimate | None, EvidenceHistory]:
    """Score the subject for this window and record the labelled evidence.

    ``history`` is updated in place and also returned.  A window without
    received packets yields ``previous`` flagged stale (``None`` if there is
    no previous estimate) and leaves the history alone.
    """
    x = normalize_behavior(new_metrics, params.kappa)
    if x is None:
        return (replace(previous, stale=True) if previous is not None else None), history
    if not len(history):
        est = initial_trust(x, BETA0)
    else:
        fit = fit_beta(history, params)
        est = TrustEstimate(predict_trust(fit.beta, x), fit.beta, fit.iterations, fit.converged)
    if params.labeler == "pfr":
        s = 1 if new_metrics.pfr > 0.5 else 0
    else:
        s = classify(est.theta, params.threshold)
    history.append(EvidenceRecord(new_metrics.window_index, x, s))
    return est, history


# ---------------------------------------------------------- pairwise tracking


@dataclass(frozen=True)
class TrustLogRow:
    window_index: int
    observer_id: int
    subject_id: int
    theta: float
    s: int
    converged: bool
    iterations_used: int


class TrustTracker:
    """Keeps one evidence history per (observer, subject) pair."""

    def __init__(self, params: TrustParams | None = None):
        self.params = params or TrustParams()
        self.histories: dict[tuple[int, int], EvidenceHistory] = {}
        self.latest: dict[tuple[int, int], TrustEstimate] = {}

    def observe(self, m: WindowMetrics) -> TrustLogRow | None:
        key = (m.observer_id, m.subject_id)
        hist = self.histories.get(key)
        if hist is None:
            hist = self.histories[key] = EvidenceHistory(
                m.observer_id, m.subject_id, self.params.history_capacity)
        est, hist = update_step(hist, m, self.params, self.latest.get(key))
        if est is None or est.stale:
            return None
        self.latest[key] = est
        return TrustLogRow(m.window_index, m.observer_id, m.subject_id, est.theta,
                           hist.records[-1].s, est.converged, est.iterations_used)

    def run(self, metrics: Iterable[WindowMetrics]) -> Iterator[TrustLogRow]:
        for m in metrics:
            row = self.observe(m)
            if row is not None:
                yield row


TRUST_HEADER = ("window_index", "observer_id", "subject_id", "theta", "s", "converged",
                "iterations_used")


def write_trust_csv(rows: Iterable[TrustLogRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUST_HEADER)
        for r in rows:
            w.writerow((r.window_index, r.observer_id, r.subject_id, repr(r.theta), r.s,
                        int(r.converged), r.iterations_used))
    return path


def read_trust_csv(path) -> list[TrustLogRow]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRUST_HEADER if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column {missing[0]!r}")
        for rownum, row in enumerate(reader, start=2):
            try:
                out.append(TrustLogRow(int(row["window_index"]), int(row["observer_id"]),
                                       int(row["subject_id"]), float(row["theta"]),
                                       int(row["s"]), bool(int(row["converged"])),
                                       int(row["iterations_used"])))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: row {rownum} is malformed") from None
    return out
