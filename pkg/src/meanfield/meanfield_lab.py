"""Experiment orchestration: configs, seeded inputs, N-sweeps and result files."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import BudgetExceeded, ConfigError
from .fock_core import (ModeSpace, QuantizationParams, SectorOperator, build_hamiltonian,
                        expectation, marginal, product_state, quantize, sector_dim, trace_distance,
                        unpack_matrix)
from .hartree_flow import ClassicalObservable, HartreeState, energy, evolve, observable
from .schwinger_dyson import DENSE_BUDGET, ExpansionOrder, expansion_report

PROFILES = ("coherent", "ball")
NORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# seeded inputs
#
# Every random object draws from PCG64 seeded by SeedSequence(seed, spawn_key=...)
# with a spawn key naming the object, so streams never overlap and do not depend
# on the order of generation.

_OBSERVABLE_STREAM = 0
_MODE_SPACE_STREAM = 1
_STATE_STREAM = 2


def _generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    X = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (X + X.conj().T) / 2


def random_observable(seed: int, p: int, M: int) -> SectorOperator:
    """Hermitian p-particle operator with spectral norm 1, fixed by (seed, p, M)."""
    if p < 1:
        raise ValueError("p must be at least 1")
    H = _hermitian(_generator(seed, _OBSERVABLE_STREAM, p, M), sector_dim(M, p))
    H /= np.linalg.norm(H, 2)
    return SectorOperator((H + H.conj().T) / 2, p, M)


def random_mode_space(seed: int, M: int, w_norm: float = 1.0, h_scale: float = 1.0) -> ModeSpace:
    """Random Hermitian h (norm h_scale) and pair interaction W on Sym^2 (norm w_norm)."""
    rng = _generator(seed, _MODE_SPACE_STREAM, M)
    h = _hermitian(rng, M)
    h *= h_scale / max(np.linalg.norm(h, 2), 1e-300)
    W = _hermitian(rng, sector_dim(M, 2))
    W *= w_norm / np.linalg.norm(W, 2)
    return ModeSpace(M, h, W)


def random_state(seed: int, M: int, nu: float = 1.0) -> np.ndarray:
    rng = _generator(seed, _STATE_STREAM, M)
    v = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    return v * math.sqrt(nu) / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# configuration

_PAIRS = {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                     "minItems": 2, "maxItems": 2}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["mode_space", "psi0", "a", "t_grid", "N_list", "nu"],
    "additionalProperties": False,
    "properties": {
        "profile": {"enum": list(PROFILES)},
        "seed": {"type": "integer"},
        "mode_space": {
            "type": "object",
            "required": ["M"],
            "additionalProperties": False,
            "properties": {
                "M": {"type": "integer", "minimum": 1},
                "h": _PAIRS,
                "W": _PAIRS,
                "w_pair": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "v": _PAIRS,
                "seed": {"type": "integer"},
                "w_norm": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "psi0": {"oneOf": [_PAIRS, {"type": "object",
                                    "additionalProperties": False,
                                    "properties": {"seed": {"type": "integer"}}}]},
        "a": {
            "type": "object",
            "required": ["p"],
            "additionalProperties": False,
            "properties": {
                "p": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "matrix": _PAIRS,
            },
        },
        "t_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "N_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                   "minItems": 1},
        "nu": {"type": "number", "exclusiveMinimum": 0},
        "orders": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 0},
                "L": {"type": "integer", "minimum": 1},
                "quad_order": {"type": "integer", "minimum": 2},
            },
        },
        "marginal_p": {"type": "integer", "minimum": 1, "maximum": 2},
        "output_path": {"type": "string"},
    },
}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mode_space: ModeSpace
    psi0: np.ndarray
    a: SectorOperator
    t_grid: tuple
    N_list: tuple
    nu: float
    orders: ExpansionOrder = field(default_factory=lambda: ExpansionOrder(4))
    profile: str = "coherent"
    marginal_p: int = 1
    output_path: str | None = None
    source: dict = field(default_factory=dict, repr=False)

    def params(self, N) -> QuantizationParams:
        return QuantizationParams.from_nu(N, self.nu)

    @property
    def unit_state(self) -> np.ndarray:
        """psi0 / sqrt(nu): the one-particle state of the quantum product state."""
        return self.psi0 / math.sqrt(self.nu)

    @property
    def classical_observable(self) -> ClassicalObservable:
        return ClassicalObservable.from_operator(self.a)


_VALIDATOR = jsonschema.Draft202012Validator(CONFIG_SCHEMA)


def _path(err) -> str:
    parts = [str(x) for x in err.absolute_path]
    if err.validator == "required":
        parts += [r for r in err.validator_value if r not in err.instance][:1]
    return "/".join(parts) or "<root>"


def _complex_vector(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(name, f"expected a list of [re, im] pairs, got shape {arr.shape}")
    return arr[:, 0] + 1j * arr[:, 1]


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document and build the experiment.  Errors name the field."""
    err = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(doc))
    if err is not None:
        raise ConfigError(_path(err), err.message)

    default_seed = doc.get("seed")

    def seed_of(sub: dict, where: str) -> int:
        seed = sub.get("seed", default_seed)
        if seed is None:
            raise ConfigError(f"{where}/seed", "no seed given here and no top-level seed")
        return seed

    ms_doc = doc["mode_space"]
    M = ms_doc["M"]
    try:
        if "h" not in ms_doc:
            if "W" in ms_doc or "w_pair" in ms_doc or "v" in ms_doc:
                raise ConfigError("mode_space/h", "explicit interaction given without h")
            ms = random_mode_space(seed_of(ms_doc, "mode_space"), M, ms_doc.get("w_norm", 1.0))
        else:
            if "W" not in ms_doc and "w_pair" not in ms_doc:
                raise ConfigError("mode_space/W", "explicit h needs W or w_pair")
            ms = ModeSpace.from_dict(ms_doc)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError("mode_space", str(err)) from None

    nu = float(doc["nu"])
    profile = doc.get("profile", "coherent")
    if profile == "coherent" and nu != 1:
        raise ConfigError("nu", "the coherent profile fixes nu = 1 (n = N); use profile 'ball'")

    if isinstance(doc["psi0"], dict):
        psi0 = random_state(seed_of(doc["psi0"], "psi0"), M, nu)
    else:
        psi0 = _complex_vector(doc["psi0"], "psi0")
    if psi0.size != M:
        raise ConfigError("psi0", f"has {psi0.size} entries, mode space has M={M}")
    if abs(np.vdot(psi0, psi0).real - nu) > NORM_TOL * max(1.0, nu):
        raise ConfigError("psi0", f"||psi0||^2 = {np.vdot(psi0, psi0).real:.12g} must equal nu = {nu}")

    a_doc = doc["a"]
    p = a_doc["p"]
    if "seed" in a_doc and "matrix" in a_doc:
        raise ConfigError("a", "give either 'seed' or 'matrix', not both")
    if "matrix" not in a_doc:
        a = random_observable(seed_of(a_doc, "a"), p, M)
    else:
        try:
            a = SectorOperator(unpack_matrix(a_doc["matrix"], sector_dim(M, p), "matrix"), p, M)
        except ValueError as err:
            raise ConfigError("a/matrix", str(err)) from None

    t_grid = tuple(float(t) for t in doc["t_grid"])
    if any(b <= a_ for a_, b in zip(t_grid, t_grid[1:])):
        raise ConfigError("t_grid", "must be strictly increasing")
    N_list = tuple(doc["N_list"])
    for i, N in enumerate(N_list):
        n = N * nu
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError(f"N_list/{i}", f"N*nu = {n} is not a positive integer")

    o = doc.get("orders", {})
    try:
        orders = ExpansionOrder(o.get("K", 4), o.get("L"), o.get("quad_order", 16))
    except ValueError as err:
        raise ConfigError("orders", str(err)) from None
    mp = doc.get("marginal_p", 1)
    return ExperimentConfig(ms, psi0, a, t_grid, N_list, nu, orders, profile, mp,
                            doc.get("output_path"), source=json.loads(json.dumps(doc)))


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read and validate a JSON config; ``seed`` replaces the top-level seed."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError("", f"cannot read {path}: {err.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"invalid JSON at line {err.lineno}: {err.msg}") from None
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = seed
    return parse_config(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully explicit document (seeded parts expanded) that parses back to the same config."""
    pairs = lambda z: [[float(x.real), float(x.imag)] for x in np.ravel(z)]  # noqa: E731
    doc = {
        "profile": cfg.profile,
        "mode_space": cfg.mode_space.to_dict(),
        "psi0": pairs(cfg.psi0),
        "a": {"p": cfg.a.p, "matrix": pairs(cfg.a.mat)},
        "t_grid": list(cfg.t_grid),
        "N_list": list(cfg.N_list),
        "nu": cfg.nu,
        "orders": {"K": cfg.orders.K, "L": cfg.orders.L, "quad_order": cfg.orders.quad_order},
        "marginal_p": cfg.marginal_p,
    }
    if cfg.output_path is not None:
        doc["output_path"] = cfg.output_path
    return doc


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# records and persistence


@dataclass(frozen=True)
class ResultRecord:
    N: float
    n: int
    t: float
    lhs: complex
    rhs: complex
    abs_err: float
    marginal_trace_dist: float | None = None
    wall_ms: float = 0.0

    @classmethod
    def make(cls, N, n, t, lhs, rhs, dist=None, wall_ms=0.0) -> "ResultRecord":
        lhs, rhs = complex(lhs), complex(rhs)
        return cls(N, int(n), float(t), lhs, rhs, abs(lhs - rhs), dist, wall_ms)


CSV_COLUMNS = ("N", "n", "t", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "abs_err",
               "marginal_trace_dist", "wall_ms")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


def _record_row(r: ResultRecord, timing: bool) -> list[str]:
    row = [r.N, r.n, r.t, r.lhs.real, r.lhs.imag, r.rhs.real, r.rhs.imag, r.abs_err,
           r.marginal_trace_dist]
    if timing:
        row.append(r.wall_ms)
    return [_fmt(x) for x in row]


def records_to_csv(records, timing: bool = False) -> str:
    """CSV with the fixed column order; wall_ms is written only when timing=True."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS if timing else CSV_COLUMNS[:-1])
    for r in records:
        w.writerow(_record_row(r, timing))
    return buf.getvalue()


def record_to_json(r: ResultRecord, timing: bool = False) -> dict:
    doc = {"N": r.N, "n": r.n, "t": r.t, "lhs": [r.lhs.real, r.lhs.imag],
           "rhs": [r.rhs.real, r.rhs.imag], "abs_err": r.abs_err,
           "marginal_trace_dist": r.marginal_trace_dist}
    if timing:
        doc["wall_ms"] = r.wall_ms
    return doc


def records_to_json(records, timing: bool = False, extra: dict | None = None) -> str:
    doc = {"records": [record_to_json(r, timing) for r in records]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_results(records, path, fmt: str | None = None, timing: bool = False,
                 extra: dict | None = None) -> None:
    """Write records as CSV or JSON (chosen by fmt or the file suffix).

    Timing columns are off by default so identical inputs give identical bytes.
    """
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    if fmt == "csv":
        text = records_to_csv(records, timing)
    elif fmt == "json":
        text = records_to_json(records, timing, extra)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.write_text(text)


def _num(s: str):
    if s == "":
        return None
    x = float(s)
    return int(x) if x.is_integer() and "." not in s and "e" not in s.lower() else x


def load_results(path) -> list[ResultRecord]:
    """Read records written by emit_results (either format)."""
    path = Path(path)
    text = path.read_text()
    out = []
    if text.lstrip().startswith("{"):
        for d in json.loads(text)["records"]:
            out.append(ResultRecord(d["N"], d["n"], d["t"], complex(*d["lhs"]), complex(*d["rhs"]),
                                    d["abs_err"], d["marginal_trace_dist"], d.get("wall_ms", 0.0)))
        return out
    for row in csv.DictReader(io.StringIO(text)):
        out.append(ResultRecord(
            _num(row["N"]), int(row["n"]), float(row["t"]),
            complex(float(row["lhs_re"]), float(row["lhs_im"])),
            complex(float(row["rhs_re"]), float(row["rhs_im"])),
            float(row["abs_err"]), _num(row["marginal_trace_dist"]),
            float(row.get("wall_ms") or 0.0)))
    return out


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    """Records in (N, t) order plus the fitted log-log slope of abs_err against N per time."""

    records: list
    slopes: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def fit_slope(Ns, errs) -> float | None:
    """Least-squares slope of log err against log N; None with < 4 usable points."""
    pts = [(math.log(N), math.log(e)) for N, e in zip(Ns, errs) if e > 0]
    if len(pts) < 4:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


class _Propagator:
    """Spectral decomposition of H_N on the n-sector, reused across times."""

    def __init__(self, ms: ModeSpace, q: QuantizationParams):
        d = sector_dim(ms.M, q.n)
        if d > DENSE_BUDGET:
            raise BudgetExceeded(f"N={q.N}: sector dimension {d} exceeds the dense budget {DENSE_BUDGET}")
        self.lam, self.E = np.linalg.eigh(build_hamiltonian(ms, q).mat)

    def __call__(self, state, t):
        return self.E @ (np.exp(-1j * t * self.lam) * (self.E.conj().T @ state))


def _check_budget(cfg: ExperimentConfig):
    for N in cfg.N_list:
        n = cfg.params(N).n
        d = sector_dim(cfg.mode_space.M, n)
        if d > DENSE_BUDGET:
            raise BudgetExceeded(f"N={N}: sector dimension {d} exceeds the dense budget {DENSE_BUDGET}")


def _sweep(cfg: ExperimentConfig, with_marginals: bool) -> list[ResultRecord]:
    _check_budget(cfg)
    ms, a = cfg.mode_space, cfg.a
    a_cl = cfg.classical_observable
    s0 = HartreeState(cfg.psi0)
    hartree = {t: evolve(s0, t, ms) for t in cfg.t_grid}
    records = []
    for N in cfg.N_list:
        q = cfg.params(N)
        start = time.perf_counter()
        prop = _Propagator(ms, q)
        A = quantize(a, q)
        state0 = product_state(cfg.unit_state, q.n)
        setup_ms = (time.perf_counter() - start) * 1e3
        for t in cfg.t_grid:
            t0 = time.perf_counter()
            state = prop(state0, t)
            lhs = expectation(A, state) if q.n >= a.p else 0.0
            rhs = observable(a_cl, hartree[t])
            dist = None
            if with_marginals:
                mp = cfg.marginal_p
                if q.n < mp:
                    raise ConfigError("marginal_p", f"exceeds the particle number n={q.n} at N={N}")
                rho = marginal(state, mp, ms.M).mat
                phi = product_state(hartree[t].psi / math.sqrt(cfg.nu), mp)
                dist = trace_distance(rho, np.outer(phi, phi.conj()))
            wall = (time.perf_counter() - t0) * 1e3 + setup_ms / len(cfg.t_grid)
            records.append(ResultRecord.make(N, q.n, t, lhs, rhs, dist, wall))
    return records


def run_egorov_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Quantum expectation in the evolved product state against the Hartree value.

    lhs = <phi^{(x)n}, e^{itH_N} A_N(a) e^{-itH_N} phi^{(x)n}>, phi = psi0/sqrt(nu);
    rhs = A(a)(psi(t)) with psi solving the Hartree equation from psi0.
    """
    records = _sweep(cfg, with_marginals=False)
    slopes = {}
    for t in cfg.t_grid:
        rows = [r for r in records if r.t == t]
        slopes[t] = fit_slope([r.N for r in rows], [r.abs_err for r in rows])
    return SweepResult(records, slopes)


def run_marginal_convergence(cfg: ExperimentConfig) -> SweepResult:
    """Trace distance between the evolved p-particle marginal and the Hartree product."""
    if cfg.marginal_p > 2:
        raise ConfigError("marginal_p", "only p <= 2 is supported")
    records = _sweep(cfg, with_marginals=True)
    slopes = {}
    for t in cfg.t_grid:
        rows = [r for r in records if r.t == t]
        slopes[t] = fit_slope([r.N for r in rows], [r.marginal_trace_dist for r in rows])
    return SweepResult(records, slopes)


def run_expansion(cfg: ExperimentConfig) -> list[dict]:
    """Truncated loop expansion against exact evolution for every (N, t)."""
    _check_budget(cfg)
    out = []
    for N in cfg.N_list:
        q = cfg.params(N)
        for t in cfg.t_grid:
            out.append(expansion_report(cfg.a, q, cfg.mode_space, t, cfg.orders))
    return out


def trajectory_rows(cfg: ExperimentConfig) -> list[dict]:
    """Hartree trajectory on t_grid: amplitudes, norm and energy."""
    s0 = HartreeState(cfg.psi0)
    rows = []
    for t in cfg.t_grid:
        s = evolve(s0, t, cfg.mode_space)
        row = {"t": t}
        for i, z in enumerate(s.psi):
            row[f"re{i}"] = float(z.real)
            row[f"im{i}"] = float(z.imag)
        row["norm"] = s.norm
        row["energy"] = energy(s, cfg.mode_space)
        rows.append(row)
    return rows


def trajectory_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


__all__ = [
    "ExperimentConfig", "ResultRecord", "SweepResult", "CONFIG_SCHEMA", "CSV_COLUMNS",
    "random_observable", "random_mode_space", "random_state", "parse_config", "load_config",
    "config_to_dict", "canonical_json", "emit_results", "load_results", "records_to_csv",
    "records_to_json", "fit_slope", "run_egorov_sweep", "run_marginal_convergence",
    "run_expansion", "trajectory_rows", "trajectory_csv",
]
