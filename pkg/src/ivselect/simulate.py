"""Monte Carlo designs with planted invalid instruments and the study runner.

Every replication draws from its own Philox streams keyed by
``(seed, rep, variable block)``, so replication ``r`` produces the same data
no matter how many workers run or in which order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .alasso import AdaptiveWeights, build_ztilde, lars_weighted_path
from .data import BlockStructure, Dataset, TruthInfo, partial_out_covariates
from .errors import IVSelectError, StudyError, ValidationError
from .iv import fit_2sls
from .median import (
    alpha_from_beta,
    block_median_of_medians,
    enumerate_just_identified,
    median_of_medians,
)
from .selection import cv_select, downward_testing

ESTIMATORS = (
    "oracle_2sls",
    "naive_2sls",
    "mm",
    "mm_block",
    "alasso_cv",
    "post_alasso_cv",
    "alasso_cvse",
    "post_alasso_cvse",
    "post_alasso_sargan",
    "post_alasso_sargan_block",
)
TABLE3_ESTIMATORS = (
    "oracle_2sls",
    "naive_2sls",
    "mm",
    "alasso_cv",
    "post_alasso_cv",
    "alasso_cvse",
    "post_alasso_cvse",
    "post_alasso_sargan",
)
TABLE4_ESTIMATORS = (
    "oracle_2sls",
    "naive_2sls",
    "mm",
    "post_alasso_sargan",
    "mm_block",
    "post_alasso_sargan_block",
)
# estimators whose selected set is reported in the selection columns
_SELECTING = {
    "oracle_2sls",
    "naive_2sls",
    "alasso_cv",
    "alasso_cvse",
    "post_alasso_sargan",
    "post_alasso_sargan_block",
}
_STREAMS = {"pi": 1, "z": 2, "errors": 3, "cv": 4}
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class SimConfig:
    """Design of one Monte Carlo study.

    ``pi_spec`` is either ``{"kind": "dense", "low": a, "high": b}`` (every
    first-stage coefficient uniform on [a, b]) or ``{"kind": "block",
    "blocks": [{"length": k_1, "low": a, "high": b}, ...]}`` where block q
    occupies consecutive instruments and is relevant for exposure q only.
    """

    n: int = 2000
    beta: tuple = (0.3, 0.6)
    alpha: tuple = (0.4,) * 9 + (0.0,) * 12
    rho: tuple = (0.25, 0.3)
    sigma_z_decay: float = 0.5
    pi_spec: dict = field(default_factory=lambda: {"kind": "dense", "low": 1.5, "high": 2.5})
    seed: int = 1
    fix_pi: bool = False
    noise_scale: float = 1.0
    cv_folds: int = 10
    p_threshold: float | None = None
    nu: float = 1.0
    sd_ddof: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if len(self.rho) != self.k_x:
            raise ValidationError(f"rho needs {self.k_x} entries, got {len(self.rho)}")
        if any(abs(r) >= 1 for r in self.rho):
            raise ValidationError("error correlations must lie in (-1, 1)")
        if self.k_z < self.k_x:
            raise ValidationError("need at least as many instruments as exposures")
        if self.n <= self.k_x + self.k_z + 1:
            raise ValidationError(f"n = {self.n} is too small for the design")
        if not 0 <= self.sigma_z_decay < 1:
            raise ValidationError("sigma_z_decay must lie in [0, 1)")
        kind = self.pi_spec.get("kind")
        if kind == "block":
            blocks = self.pi_spec["blocks"]
            if len(blocks) != self.k_x:
                raise ValidationError("block pi_spec needs one block per exposure")
            if sum(int(b["length"]) for b in blocks) != self.k_z:
                raise ValidationError("block lengths must add up to k_z")
        elif kind != "dense":
            raise ValidationError(f"unknown pi_spec kind {kind!r}")
        try:
            np.linalg.cholesky(self.error_cov)
        except np.linalg.LinAlgError:
            raise ValidationError("error covariance is not positive definite") from None

    @property
    def k_x(self):
        return len(self.beta)

    @property
    def k_z(self):
        return len(self.alpha)

    @property
    def error_cov(self):
        """Covariance of (U, E_1, ..., E_kx): unit variances, E's uncorrelated."""
        k = self.k_x + 1
        S = np.eye(k)
        S[0, 1:] = self.rho
        S[1:, 0] = self.rho
        return S

    @property
    def sigma_z(self):
        j = np.arange(self.k_z)
        return self.sigma_z_decay ** np.abs(j[:, None] - j[None, :])

    @property
    def blocks(self):
        """Relevance structure implied by a block ``pi_spec`` (None when dense)."""
        if self.pi_spec.get("kind") != "block":
            return None
        sets, start = [], 0
        for b in self.pi_spec["blocks"]:
            sets.append(range(start, start + int(b["length"])))
            start += int(b["length"])
        return BlockStructure.from_sets(sets, self.k_z)

    def to_dict(self):
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["alpha"] = list(self.alpha)
        d["rho"] = list(self.rho)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        base = d.pop("preset", None)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        if base is not None:
            return replace(preset(base), **d)
        return cls(**d)


def preset(name, **overrides):
    """Designs of the two published simulation studies.

    ``table3``: all 21 instruments relevant for both exposures, the first 9
    invalid with direct effect 0.4. ``table4``: the first 10 instruments are
    relevant for exposure 1 only, the last 11 for exposure 2 only; instruments
    1-4 and 11-15 are invalid with direct effect 1.
    """
    if name == "table3":
        cfg = SimConfig()
    elif name == "table4":
        cfg = SimConfig(
            n=1000,
            alpha=(1.0,) * 4 + (0.0,) * 6 + (1.0,) * 5 + (0.0,) * 6,
            pi_spec={
                "kind": "block",
                "blocks": [
                    {"length": 10, "low": 1.5, "high": 2.5},
                    {"length": 11, "low": 1.5, "high": 2.5},
                ],
            },
        )
    else:
        raise ValidationError(f"unknown preset {name!r}; choose table3 or table4")
    return replace(cfg, **overrides) if overrides else cfg


def preset_estimators(name):
    return TABLE4_ESTIMATORS if name == "table4" else TABLE3_ESTIMATORS


def load_config(path):
    """Read a JSON key-value config; an optional ``preset`` key sets the base."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config file must hold a JSON object")
    try:
        return SimConfig.from_dict(raw)
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from None


def _stream(seed, rep, name):
    key = (_STREAMS[name],) if rep is None else (int(rep), _STREAMS[name])
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def draw_pi(config, rng):
    """First-stage coefficient matrix (k_z, k_x) from ``config.pi_spec``."""
    spec = config.pi_spec
    Pi = np.zeros((config.k_z, config.k_x))
    if spec["kind"] == "dense":
        Pi[:] = rng.uniform(spec["low"], spec["high"], size=(config.k_z, config.k_x))
    else:
        start = 0
        for q, b in enumerate(spec["blocks"]):
            k = int(b["length"])
            Pi[start : start + k, q] = rng.uniform(b["low"], b["high"], size=k)
            start += k
    return Pi


def generate_dataset(config, rep):
    """Draw replication ``rep`` of the design; returns ``(Dataset, TruthInfo)``."""
    if config.fix_pi:
        Pi = draw_pi(config, _stream(config.seed, None, "pi"))
    else:
        Pi = draw_pi(config, _stream(config.seed, rep, "pi"))
    n, k_z, k_x = config.n, config.k_z, config.k_x
    Lz = np.linalg.cholesky(config.sigma_z)
    Z = _stream(config.seed, rep, "z").standard_normal((n, k_z)) @ Lz.T
    raw = _stream(config.seed, rep, "errors").standard_normal((n, k_x + 1))
    errs = config.noise_scale * (raw @ np.linalg.cholesky(config.error_cov).T)
    u, E = errs[:, 0], errs[:, 1:]
    beta = np.array(config.beta)
    alpha = np.array(config.alpha)
    X = Z @ Pi + E
    y = X @ beta + Z @ alpha + u
    return Dataset(y, X, Z), TruthInfo(beta, alpha)


# ---------------------------------------------------------------------------
# Study runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyMetrics:
    estimator: str
    mae: float
    sd: float
    mean_invalid: float
    freq_all_invalid: float
    freq_oracle: float
    reps: int
    failures: int = 0


@dataclass(frozen=True)
class StudyResult:
    config: SimConfig
    reps: int
    estimators: tuple
    rows: tuple
    warnings: tuple = ()

    def row(self, name):
        for r in self.rows:
            if r.estimator == name:
                return r
        raise KeyError(name)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = list(StudyMetrics.__dataclass_fields__)
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])
        return buf.getvalue()

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "reps": self.reps,
            "estimators": list(self.estimators),
            "metrics": [
                {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(r).items()}
                for r in self.rows
            ],
            "warnings": list(self.warnings),
        }


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _replicate(config, rep, estimators):
    """Run every requested estimator on replication ``rep``.

    Returns ``{name: (beta or None, invalid set or None, error or None)}``.
    """
    raw, truth = generate_dataset(config, rep)
    data = partial_out_covariates(raw)
    blocks = config.blocks
    p = config.p_threshold
    max_active = data.k_z - data.k_x
    cache = {}

    def mm(block):
        key = ("mm", block)
        if key not in cache:
            if block:
                if blocks is None:
                    raise ValidationError("block estimators need a block pi_spec")
                table = enumerate_just_identified(data, blocks)
                cache[key] = block_median_of_medians(table, blocks).beta_mm
            else:
                cache[key] = median_of_medians(enumerate_just_identified(data)).beta_mm
        return cache[key]

    def weights(block):
        key = ("w", block)
        if key not in cache:
            cache[key] = AdaptiveWeights.from_initial(alpha_from_beta(data, mm(block)), config.nu)
        return cache[key]

    def path(block):
        key = ("path", block)
        if key not in cache:
            cache[key] = lars_weighted_path(
                cache.setdefault("ztilde", build_ztilde(data)), data.y, weights(block), max_active
            )
        return cache[key]

    def cv(rule):
        key = ("cv", rule)
        if key not in cache:
            seed = int(_stream(config.seed, rep, "cv").integers(2**62))
            cache[key] = cv_select(
                data, weights(False), folds=config.cv_folds, rule=rule, seed=seed, path=path(False)
            )
        return cache[key]

    def dt(block):
        key = ("dt", block)
        if key not in cache:
            cache[key] = downward_testing(data, path(block), p)
        return cache[key]

    runners = {
        "oracle_2sls": lambda: (fit_2sls(data, sorted(truth.invalid_set)).beta_hat, truth.invalid_set),
        "naive_2sls": lambda: (fit_2sls(data, ()).beta_hat, frozenset()),
        "mm": lambda: (mm(False), None),
        "mm_block": lambda: (mm(True), None),
        "alasso_cv": lambda: (cv("min").beta_ad, frozenset(cv("min").invalid_set)),
        "post_alasso_cv": lambda: (cv("min").post_fit.beta_hat, frozenset(cv("min").invalid_set)),
        "alasso_cvse": lambda: (cv("one_se").beta_ad, frozenset(cv("one_se").invalid_set)),
        "post_alasso_cvse": lambda: (
            cv("one_se").post_fit.beta_hat,
            frozenset(cv("one_se").invalid_set),
        ),
        "post_alasso_sargan": lambda: (dt(False).post_fit.beta_hat, frozenset(dt(False).invalid_set)),
        "post_alasso_sargan_block": lambda: (
            dt(True).post_fit.beta_hat,
            frozenset(dt(True).invalid_set),
        ),
    }
    out = {}
    for name in estimators:
        try:
            beta, inv = runners[name]()
            out[name] = (np.asarray(beta, dtype=float), inv, None)
        except (IVSelectError, np.linalg.LinAlgError) as exc:
            out[name] = (None, None, f"{type(exc).__name__}: {exc}")
    return rep, out


def _replicate_chunk(args):
    config, reps, estimators = args
    return [_replicate(config, r, estimators) for r in reps]


def aggregate(config, records, estimators, truth_invalid):
    """Fold per-replication records (in replication order) into metrics rows."""
    beta = np.array(config.beta)
    rows, notes = [], []
    reps = len(records)
    for name in estimators:
        betas, sets, fails = [], [], 0
        for _, rec in records:
            b, inv, err = rec[name]
            if err is not None:
                fails += 1
                continue
            betas.append(b)
            sets.append(inv)
        if fails:
            notes.append(f"{name}: {fails} failed replication(s) excluded")
        if reps and fails / reps >= MAX_FAILURE_RATE:
            raise StudyError(
                f"{name} failed in {fails} of {reps} replications (limit {MAX_FAILURE_RATE:.0%})"
            )
        B = np.array(betas).reshape(-1, config.k_x)
        mae = float(np.mean(np.median(np.abs(B - beta), axis=0)))
        sd = float(np.mean(np.std(B, axis=0, ddof=config.sd_ddof))) if len(B) > config.sd_ddof else 0.0
        if name in _SELECTING:
            sizes = [len(s) for s in sets]
            mean_inv = float(np.mean(sizes))
            all_inv = float(np.mean([truth_invalid <= s for s in sets]))
            oracle = float(np.mean([truth_invalid == s for s in sets]))
        else:
            mean_inv = all_inv = oracle = float("nan")
        rows.append(StudyMetrics(name, mae, sd, mean_inv, all_inv, oracle, reps - fails, fails))
    return rows, notes


def run_study(config, reps, estimators=TABLE3_ESTIMATORS, workers=1):
    """Simulate ``reps`` replications and summarise every estimator.

    MAE is the median over replications of ``|beta_hat_q - beta_q|``, SD the
    standard deviation over replications, both averaged over the exposures.
    Results do not depend on ``workers``.
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    estimators = tuple(estimators)
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ValidationError(f"unknown estimator(s): {', '.join(unknown)}")
    if any(e.endswith("block") for e in estimators) and config.blocks is None:
        raise ValidationError("block estimators need a block pi_spec")
    if workers <= 1 or reps == 1:
        records = [_replicate(config, r, estimators) for r in range(reps)]
    else:
        chunks = [list(range(reps))[i::workers] for i in range(workers)]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = pool.map(_replicate_chunk, [(config, c, estimators) for c in chunks if c])
            records = sorted((rec for part in parts for rec in part), key=lambda t: t[0])
    truth_invalid = frozenset(np.flatnonzero(np.array(config.alpha) != 0).tolist())
    rows, notes = aggregate(config, records, estimators, truth_invalid)
    return StudyResult(config, reps, estimators, tuple(rows), tuple(notes))
