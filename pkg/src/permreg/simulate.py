"""Data generation under the shuffled-regression model and the Monte Carlo runner.

A scenario fixes ``X`` and ``Pi0`` once (drawn from the scenario seed) and
redraws only the noise ``U`` per replication.  Every random quantity comes
from its own stream of the scenario seed, so replications can run in any
order (or in parallel) and still produce identical records.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .candidates import DesignVariant, ReproConfig, generate_candidates, matching_fraction
from .errors import BudgetExceeded, DomainError, InfeasibleWindow, LengthMismatch
from .inference import SparsityTestConfig, coef_region, region_volume_mc, sparsity_test
from .numerics import RngStream, as_matrix, as_vector, gaussian_vector
from .permutations import PermutationClass, SparsePermutation, random_k_sparse
from .tuning import DEFAULT_FALLBACK_SCALE

DEFAULT_BETA = (0.5, -1.0, 2.0)
BUDGET_ENV = "PERMREG_BUDGET_SECONDS"
DEFAULT_BUDGET_SECONDS = 3600.0
# seconds per unit of reps * L * n^3 (one surrogate solve ~ n^3), measured on a single core
SECONDS_PER_UNIT = 3e-7
METRICS = ("candidates", "test", "coef", "volume")


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 30
    p: int = 3
    k_true: int = 2
    k_search: int = 2
    sigma0: float = 0.05
    L: int = 100
    M: int = 200
    alpha_test: float = 0.05
    alpha_coef: float = 0.95
    reps: int = 200
    seed: int = 0
    beta0: tuple[float, ...] | None = None
    design: np.ndarray | None = field(default=None, compare=False)  # None -> iid N(0, 1) entries
    variant: DesignVariant | None = field(default=None, compare=False)
    k0: int = 0
    lam1: float | None = None  # None -> auto-tuned per draw
    lam2: float | None = None
    fallback_scale: float = DEFAULT_FALLBACK_SCALE
    volume_samples: int = 2000
    metrics: tuple[str, ...] = METRICS

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if self.k_true < 0 or self.k_true == 1 or self.k_true > self.n:
            raise DomainError("k_true must be 0 or lie in 2..n")
        if self.sigma0 < 0:
            raise DomainError("sigma0 must be >= 0")
        beta = DEFAULT_BETA if self.beta0 is None and self.p == 3 else self.beta0
        if beta is None:
            beta = (1.0,) * self.p
        beta = tuple(float(b) for b in beta)
        if len(beta) != self.p:
            raise LengthMismatch(f"beta0 has length {len(beta)}, expected p = {self.p}")
        object.__setattr__(self, "beta0", beta)
        if self.design is not None:
            X = as_matrix(self.design)
            if X.shape != (self.n, self.p):
                raise LengthMismatch(f"design must be {self.n} x {self.p}")
            object.__setattr__(self, "design", X)
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise DomainError(f"unknown metrics {sorted(unknown)}")

    def scenario_hash(self) -> int:
        """64-bit digest of every field that changes the data or the procedure (not ``seed``/``reps``)."""
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("seed", "reps")}
        payload["design"] = None if self.design is None else self.design.tobytes().hex()
        payload["variant"] = None if self.variant is None else _variant_key(self.variant)
        text = json.dumps(payload, sort_keys=True, default=list)
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")

    def stream(self, *ids: int) -> RngStream:
        return RngStream(self.seed ^ self.scenario_hash(), ids)

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("design", "variant")}
        out["beta0"] = list(self.beta0)
        out["metrics"] = list(self.metrics)
        out["design"] = "gaussian-iid" if self.design is None else "fixed"
        out["variant"] = None if self.variant is None else _variant_key(self.variant)
        return out


def _variant_key(v: DesignVariant):
    return {
        "kind": v.kind,
        "ridge_lambda": v.ridge_lambda,
        "Z": None if v.Z is None else v.Z.tobytes().hex(),
    }


def _seed_from(stream: RngStream) -> int:
    return int(stream.generator().integers(0, 2**63))


def scenario_design(cfg: ScenarioConfig) -> tuple[np.ndarray, SparsePermutation]:
    """The fixed ``(X, Pi0)`` of a scenario."""
    if cfg.design is not None:
        X = cfg.design
    else:
        X = cfg.stream(0).generator().standard_normal((cfg.n, cfg.p))
    pi0 = random_k_sparse(cfg.stream(1), PermutationClass(cfg.n, max(cfg.k_true, 0)), cfg.k_true)
    return X, pi0


def generate_instance(cfg: ScenarioConfig, rep: int) -> tuple[np.ndarray, np.ndarray, SparsePermutation, np.ndarray]:
    """``(Y, X, Pi0, u_rel)`` with ``Y = Pi0 X beta0 + sigma0 u_rel``."""
    X, pi0 = scenario_design(cfg)
    u = gaussian_vector(cfg.stream(2, rep), cfg.n)
    Y = pi0.apply(X @ np.asarray(cfg.beta0)) + cfg.sigma0 * u
    return Y, X, pi0, u


RECORD_FIELDS = (
    "rep",
    "cs_size",
    "contains_truth",
    "psi",
    "flagged_draws",
    "d_obs",
    "c_hat",
    "p_value",
    "reject",
    "degenerate_null",
    "covered",
    "volume",
    "volume_stderr",
)


def run_rep(cfg: ScenarioConfig, rep: int) -> dict:
    """One replication; skipped metrics are recorded as ``None``."""
    Y, X, pi0, _ = generate_instance(cfg, rep)
    rec = dict.fromkeys(RECORD_FIELDS)
    rec["rep"] = rep
    repro = ReproConfig(
        L=cfg.L,
        k=cfg.k_search,
        lam1=cfg.lam1,
        lam2=cfg.lam2,
        fallback_scale=cfg.fallback_scale,
        seed=_seed_from(cfg.stream(3, rep)),
    )
    cs = generate_candidates(Y, X, cfg.variant, repro)
    rec["cs_size"] = len(cs)
    rec["contains_truth"] = pi0 in cs
    rec["psi"] = matching_fraction(cs, pi0)
    rec["flagged_draws"] = sum(d.violation for d in cs.draws)
    if "test" in cfg.metrics:
        test_cfg = SparsityTestConfig(k0=cfg.k0, alpha=cfg.alpha_test, M=cfg.M, seed=_seed_from(cfg.stream(4, rep)))
        rep_test = sparsity_test(Y, X, cs, test_cfg)
        rec.update(
            d_obs=rep_test.d_obs,
            c_hat=rep_test.c_hat,
            p_value=rep_test.p_value,
            reject=rep_test.reject,
            degenerate_null=rep_test.degenerate_null,
        )
    if "coef" in cfg.metrics or "volume" in cfg.metrics:
        region = coef_region(Y, X, cs, cfg.alpha_coef)
        rec["covered"] = region.contains(np.asarray(cfg.beta0))
        if "volume" in cfg.metrics:
            rec["volume"], rec["volume_stderr"] = region_volume_mc(region, cfg.stream(5, rep), cfg.volume_samples)
    return rec


def _mean_stderr(values: list, binary: bool) -> tuple[float | None, float | None]:
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    m = math.fsum(vals) / len(vals)
    if binary:
        return m, math.sqrt(m * (1 - m) / len(vals))
    if len(vals) < 2:
        return m, 0.0
    var = math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1)
    return m, math.sqrt(var / len(vals))


AGGREGATES = {
    "cs_size": ("mean_cs_size", False),
    "contains_truth": ("inclusion_rate", True),
    "psi": ("mean_psi", False),
    "reject": ("rejection_rate", True),
    "covered": ("coverage", True),
    "volume": ("mean_volume", False),
}


def aggregate(records: list[dict]) -> dict:
    out = {}
    for key, (name, binary) in AGGREGATES.items():
        m, se = _mean_stderr([r[key] for r in records], binary)
        out[name] = m
        out[name + "_stderr"] = se
    out["reps"] = len(records)
    return out


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    records: tuple[dict, ...]
    aggregates: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        for rec in self.records:
            w.writerow({k: _csv_cell(v) for k, v in rec.items()})
        return buf.getvalue()

    def to_json(self, metadata: dict | None = None) -> dict:
        out = {
            "kind": "scenario_result",
            "config": self.config.to_json(),
            "aggregates": self.aggregates,
            "records": list(self.records),
        }
        if metadata is not None:
            out["metadata"] = metadata
        return out


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def estimated_seconds(cfg: ScenarioConfig) -> float:
    return SECONDS_PER_UNIT * cfg.reps * cfg.L * cfg.n**3


def budget_seconds() -> float:
    raw = os.environ.get(BUDGET_ENV)
    if raw is None or raw == "":
        return DEFAULT_BUDGET_SECONDS
    try:
        return float(raw)
    except ValueError as exc:
        raise DomainError(f"{BUDGET_ENV} must be a number, got {raw!r}") from exc


def run_scenario(cfg: ScenarioConfig, n_jobs: int = 1) -> ScenarioResult:
    """All replications of a scenario, merged by replication index.

    Raises :class:`BudgetExceeded` before any work when the work estimate
    ``reps * L * n^3`` exceeds ``$PERMREG_BUDGET_SECONDS`` (default one hour).
    """
    est, budget = estimated_seconds(cfg), budget_seconds()
    if est > budget:
        raise BudgetExceeded(f"estimated {est:.0f} s exceeds the budget of {budget:.0f} s ({BUDGET_ENV})")
    if n_jobs == 1:
        records = [run_rep(cfg, r) for r in range(cfg.reps)]
    else:
        from joblib import Parallel, delayed

        records = Parallel(n_jobs=n_jobs)(delayed(run_rep)(cfg, r) for r in range(cfg.reps))
    records.sort(key=lambda r: r["rep"])
    return ScenarioResult(cfg, tuple(records), aggregate(records))


# ---------------------------------------------------------------------------
# windowed mismatch injection and a synthetic air-quality-style fixture


def inject_local_mismatch(
    Y, timestamps, rate: float, window: float, rng: RngStream, groups=None
) -> tuple[np.ndarray, SparsePermutation]:
    """Swap ``floor(rate * n)`` (rounded down to even) rows in disjoint pairs.

    Partners satisfy ``|t_i - t_j| <= window`` and, when ``groups`` is given
    (e.g. calendar day), share a group.  Returns the shuffled response and the
    permutation ``Pi`` with ``Y_shuffled = Pi Y``.
    """
    Y = as_vector(Y)
    n = Y.shape[0]
    t = as_vector(timestamps, n)
    if not 0 <= rate <= 1:
        raise DomainError("rate must lie in [0, 1]")
    if window < 1:
        raise DomainError("window must be >= 1")
    if np.any(np.diff(t) < 0):
        raise DomainError("timestamps must be sorted")
    grp = np.zeros(n, dtype=np.int64) if groups is None else np.asarray(groups)
    if grp.shape[0] != n:
        raise LengthMismatch("groups must have length n")
    n_moved = int(math.floor(rate * n)) // 2 * 2
    if n_moved == 0:
        return Y.copy(), SparsePermutation.identity(n)

    g = rng.generator()
    free = np.ones(n, dtype=bool)
    pairs: list[tuple[int, int]] = []
    for i in g.permutation(n):
        if len(pairs) == n_moved // 2:
            break
        if not free[i]:
            continue
        ok = free & (np.abs(t - t[i]) <= window) & (grp == grp[i])
        ok[i] = False
        partners = np.flatnonzero(ok)
        if partners.size == 0:
            continue
        j = int(g.choice(partners))
        free[i] = free[j] = False
        pairs.append((int(i), j))
    if len(pairs) < n_moved // 2:
        raise InfeasibleWindow(f"could only form {len(pairs)} of {n_moved // 2} pairs within the window")
    moved = [(a, b) for a, b in pairs] + [(b, a) for a, b in pairs]
    pi = SparsePermutation(n, tuple(moved))
    return pi.apply(Y), pi


AIR_QUALITY_COVARIATES = ("PM10", "SO2", "NO2", "CO", "O3", "TEMP", "DEWP", "PRES", "RAIN", "WSPM")
AIR_QUALITY_RESPONSE = "PM2.5"


def air_quality_fixture(n_hours: int = 240, noise: float = 1e-4, seed: int = 0, missing: int = 0) -> dict[str, list]:
    """Synthetic hourly table shaped like a single-station air-quality record.

    Columns: ``hour`` (0-based index), ``day``, the response ``PM2.5`` and ten
    covariates.  Covariates are correlated AR(1)-style series; the response
    is linear in them plus ``noise`` (in standardised units).  ``missing``
    blanks that many random covariate cells (for exercising ingestion).
    """
    rs = RngStream(seed, (7,))
    g = rs.generator()
    p = len(AIR_QUALITY_COVARIATES)
    latent = np.zeros((n_hours, p))
    shocks = g.standard_normal((n_hours, p))
    for t in range(n_hours):
        latent[t] = (0.8 * latent[t - 1] if t else 0.0) + shocks[t]
    mix = np.eye(p) + 0.3 * g.standard_normal((p, p))
    Xc = latent @ mix
    Xs = (Xc - Xc.mean(axis=0)) / Xc.std(axis=0)
    beta = g.uniform(-1.0, 1.0, p)
    beta[0] = 1.5  # PM2.5 tracks PM10 closely
    signal = Xs @ beta
    y = (signal - signal.mean()) / signal.std() + noise * g.standard_normal(n_hours)
    table: dict[str, list] = {
        "hour": list(range(n_hours)),
        "day": [h // 24 for h in range(n_hours)],
        AIR_QUALITY_RESPONSE: [float(v) for v in y],
    }
    for j, name in enumerate(AIR_QUALITY_COVARIATES):
        table[name] = [float(v) for v in Xc[:, j]]
    if missing:
        cells = g.choice(n_hours * p, size=missing, replace=False)
        for c in cells:
            table[AIR_QUALITY_COVARIATES[c % p]][c // p] = None
    return table


def fixture_to_csv(table: dict[str, list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(table)
    w.writerow(cols)
    for row in zip(*(table[c] for c in cols)):
        w.writerow(["NA" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def sweep(base: ScenarioConfig, name: str, values, n_jobs: int = 1) -> list[ScenarioResult]:
    """Run ``base`` with ``name`` set to each of ``values``."""
    out = []
    for v in values:
        kw = asdict_shallow(base)
        kw[name] = v
        out.append(run_scenario(ScenarioConfig(**kw), n_jobs))
    return out


def asdict_shallow(cfg: ScenarioConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
