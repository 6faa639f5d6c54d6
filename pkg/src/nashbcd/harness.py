"""Experiment runner, verification battery and gradient check behind the command line."""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .bestresponse import abr_iters_for, exact_best_responses, gap
from .diagnostics import (
    abr_accuracy_violations,
    estimate_smoothness,
    fit_rate,
    kappa_global_bound_check,
    sample_points,
    sandwich_violations,
    verify_contraction_theorems,
)
from .game import GameProblem, _flat, finite_diff_gradient, gradient_error, stationarity_residual, sum_F
from .problems import PROBLEM_NAMES, ProblemSpec, UnknownProblemError, registry_get
from .solvers import VARIANTS, SolverConfig, SolverResult, run, theorem_step_sizes

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNKNOWN = 3
EXIT_VIOLATION = 4

CSV_HEADER = ("iter", "block", "case", "k", "gap", "grad_sq")
GRADCHECK_TOL = 1e-6
NE_GAP_TOL = 1e-10
NE_RESIDUAL_TOL = 1e-9


class ConfigError(ValueError):
    pass


class UnknownNameError(KeyError):
    pass


# ---------------------------------------------------------------------------
# config file: one ``key = value`` per line, ``#`` comments, dotted keys


def _parse_scalar(text: str):
    t = text.strip()
    if t in ("none", "None", ""):
        return None
    if t in ("true", "false"):
        return t == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text: str):
    """Scalar, comma-separated list (``x,`` for one item), or an ``a..b`` integer range."""
    t = text.strip()
    if "," in t:
        parts = t.split(",")
        if parts[-1].strip() == "":
            parts.pop()
        return [_parse_scalar(part) for part in parts]
    if ".." in t:
        lo, _, hi = t.partition("..")
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(f"bad integer range {t!r}") from None
    return _parse_scalar(t)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        if len(v) == 1:
            return format_value(v[0]) + ","
        return ", ".join(format_value(x) for x in v)
    return str(v)


def parse_config_text(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


SOLVER_KEYS = ("alpha", "beta", "gamma", "C", "T", "T_prime", "tol", "case_tol")
_INT_KEYS = ("T", "T_prime")


@dataclass
class ExperimentConfig:
    problem: str = "f4"
    problem_params: dict = field(default_factory=dict)
    variants: list[str] = field(default_factory=lambda: ["rbcd"])
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"
    x0: Optional[list[float]] = None
    alpha: float = 0.05
    beta: Optional[float] = None
    gamma: float = 0.5
    C: float = 0.5
    T: int = 1000
    T_prime: int = 0
    tol: float = 1e-9
    case_tol: float = 1e-18

    def __post_init__(self):
        for v in self.variants:
            if v not in VARIANTS:
                raise UnknownNameError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
        if not self.variants:
            raise ConfigError("no solver variants given")
        if not self.seeds:
            raise ConfigError("no seeds given")
        try:
            self.solver_config(self.variants[0], self.seeds[0])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def solver_config(self, variant: str, seed: int) -> SolverConfig:
        return SolverConfig(alpha=self.alpha, beta=self.beta, gamma=self.gamma, C=self.C, T=self.T,
                            T_prime=self.T_prime, seed=seed, variant=variant, tol=self.tol,
                            case_tol=self.case_tol)

    # -- serialization

    @classmethod
    def from_dict(cls, d: dict[str, object]) -> "ExperimentConfig":
        d = dict(d)
        kw: dict[str, object] = {}
        name = d.pop("problem.name", None) or d.pop("problem", None)
        if name is None:
            raise ConfigError("missing 'problem.name'")
        kw["problem"] = str(name)
        # problem parameters: ``problem.<param>`` or ``<family>.<param>``
        family = str(name).split("-")[0]
        params = {}
        for key in list(d):
            head, dot, rest = key.partition(".")
            if dot and head in ("problem", str(name), family):
                params[rest] = d.pop(key)
        kw["problem_params"] = params
        if "variants" in d:
            kw["variants"] = _as_list(d.pop("variants"), str)
        if "seeds" in d:
            kw["seeds"] = _as_list(d.pop("seeds"), _as_int)
        if "output_dir" in d:
            kw["output_dir"] = str(d.pop("output_dir"))
        if "x0" in d:
            kw["x0"] = _as_list(d.pop("x0"), float)
        for key in SOLVER_KEYS:
            for full in (key, f"solver.{key}"):
                if full in d:
                    v = d.pop(full)
                    kw[key] = None if v is None else (_as_int(v) if key in _INT_KEYS else _as_float(v))
        if d:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(d))}")
        return cls(**kw)

    def to_dict(self) -> dict[str, object]:
        d: dict[str, object] = {"problem.name": self.problem}
        for k, v in self.problem_params.items():
            d[f"problem.{k}"] = v
        d["variants"] = list(self.variants)
        d["seeds"] = list(self.seeds)
        d["output_dir"] = self.output_dir
        if self.x0 is not None:
            d["x0"] = list(self.x0)
        for key in SOLVER_KEYS:
            v = getattr(self, key)
            if v is not None:
                d[f"solver.{key}"] = v
        return d

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(parse_config_text(text))

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.to_dict().items())


def _as_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(v)


def _as_float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _as_list(v, conv: Callable) -> list:
    items = v if isinstance(v, list) else [v]
    return [conv(x) for x in items]


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return ExperimentConfig.from_text(text)


# ---------------------------------------------------------------------------
# run


def format_number(v) -> str:
    if v is None:
        return ""
    return "%.17g" % v


def trace_csv(result: SolverResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.records:
        w.writerow([r.iter, r.block, r.tag or "", format_number(r.k), format_number(r.gap), format_number(r.grad_sq)])
    return buf.getvalue()


def start_point(spec: ProblemSpec, cfg: ExperimentConfig, seed: int) -> np.ndarray:
    """Configured start, or a draw from the problem's test box on a stream separate from block sampling."""
    if cfg.x0 is not None:
        x = np.asarray(cfg.x0, dtype=np.float64)
        if x.size != spec.game.layout.total_dim:
            raise ConfigError(f"x0 has {x.size} coordinates, problem needs {spec.game.layout.total_dim}")
        return x
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    return np.asarray(spec.sample(rng), dtype=np.float64)


def resolve_solver(spec: ProblemSpec, cfg: ExperimentConfig, variant: str, seed: int) -> SolverConfig:
    """Fill in ``beta = 1/L`` and an ABR budget for the variants that need them."""
    sc = cfg.solver_config(variant, seed)
    if variant not in ("a_rbcd", "bm2"):
        return sc
    p = spec.game
    beta = sc.beta
    if beta is None:
        L = p.constants.L if p.constants.known else estimate_smoothness(spec, 100, 0)
        beta = 1.0 / L
    T_prime = sc.T_prime
    if T_prime == 0:
        if not p.constants.known:
            raise ConfigError(f"problem {p.name!r} has no analytic constants; set solver.T_prime")
        T_prime = abr_iters_for(sc.alpha**2, p.n, p.constants.L, p.constants.mu, beta)
    return sc.replace(beta=beta, T_prime=T_prime)


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    try:
        return registry_get(cfg.problem, **cfg.problem_params)
    except UnknownProblemError as e:
        raise UnknownNameError(str(e)) from None
    except TypeError as e:
        raise ConfigError(f"bad parameters for problem {cfg.problem!r}: {e}") from None


def run_summary(spec: ProblemSpec, result: SolverResult, sc: SolverConfig) -> dict:
    p = spec.game
    x = _flat(result.x)
    with np.errstate(all="ignore"):
        try:
            residual = stationarity_residual(p, x)
            F = sum_F(p, x)
        except (ValueError, ArithmeticError):
            residual, F = math.inf, math.inf
    gaps = result.gaps
    fit = fit_rate(gaps) if len(gaps) >= 50 else None
    return {
        "problem": spec.name,
        "variant": sc.variant,
        "seed": sc.seed,
        "alpha": sc.alpha,
        "beta": sc.beta,
        "T_prime": sc.T_prime,
        "iterations": result.records[-1].iter,
        "stop_reason": result.stop_reason,
        "initial_gap": _json_float(gaps[0]),
        "final_gap": _json_float(gaps[-1]),
        "final_residual": _json_float(residual),
        "final_sum_f": _json_float(F),
        "final_x": [_json_float(v) for v in x],
        "rate_fit": None if fit is None else {k: _json_float(v) if isinstance(v, float) else v
                                              for k, v in fit.to_dict().items()},
        "case_histogram": result.case_histogram(),
    }


def _json_float(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, dict[tuple[str, int], str]]:
    """All (variant, seed) runs; returns the summary and the CSV text per run."""
    spec = build_problem(cfg)
    runs, csvs = [], {}
    for variant in cfg.variants:
        for seed in cfg.seeds:
            sc = resolve_solver(spec, cfg, variant, seed)
            try:
                result = run(spec.game, start_point(spec, cfg, seed), sc)
            except ValueError as e:
                raise ConfigError(str(e)) from None
            csvs[(variant, seed)] = trace_csv(result)
            runs.append(run_summary(spec, result, sc))
    return {"problem": spec.name, "problem_params": cfg.problem_params, "runs": runs}, csvs


def csv_name(variant: str, seed: int) -> str:
    return f"trace_{variant}_seed{seed}.csv"


def cmd_run(cfg: ExperimentConfig, out: Optional[str] = None) -> int:
    out_dir = Path(out or cfg.output_dir)
    summary, csvs = run_experiment(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    for (variant, seed), text in csvs.items():
        (out_dir / csv_name(variant, seed)).write_text(text, encoding="utf-8")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification battery


@dataclass
class Check:
    name: str
    problem: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"check": self.name, "problem": self.problem, "passed": self.passed, **self.detail}


ANALYTIC = ("f1", "f2", "f4", "f6", "resource", "cournot-linear")
# rbcd contraction: problems with a global ratio constant kappa
KAPPA = {"f4": -1.0, "f6": 0.5}
ADAPTIVE = ("f6", "resource")
ABR_DELTAS = (1e-2, 1e-4, 1e-6)


def _first(items: list, k: int = 3) -> list:
    return items[:k]


def check_known_ne(name: str) -> Check:
    spec = registry_get(name)
    p = spec.game
    bad = []
    for x in spec.known_ne:
        xs = _flat(x)
        h = gap(p, xs, exact_best_responses(p, xs)) if p.exact_best_response else 0.0
        r = stationarity_residual(p, xs)
        if not (h <= NE_GAP_TOL and r <= NE_RESIDUAL_TOL):
            bad.append({"x": xs.tolist(), "gap": h, "residual": r})
    return Check("ne", name, not bad, {"checked": len(spec.known_ne), "violations": bad})


def check_sandwich(name: str, samples: int = 1000, seed: int = 0) -> Check:
    spec = registry_get(name)
    bad = sandwich_violations(spec.game, sample_points(spec, samples, seed))
    return Check("sandwich", name, not bad, {"checked": samples, "violations": _first(bad)})


def check_smoothness(name: str, samples: int = 200, seed: int = 0) -> Check:
    spec = registry_get(name)
    L_hat = estimate_smoothness(spec, samples, seed)
    L = spec.game.constants.L
    ok = L_hat <= L * (1 + 1e-6)
    return Check("smoothness", name, ok, {"L_hat": L_hat, "L": L})


def check_kappa(name: str, samples: int = 200, seed: int = 0) -> Check:
    rep = kappa_global_bound_check(registry_get(name), samples, seed)
    return Check("kappa", name, rep.passed, {
        "checked": rep.checked, "max_A_over_D": _json_float(rep.max_A_over_D), "bound_A": rep.bound_A,
        "max_B_over_D": rep.max_B_over_D, "bound_B": rep.bound_B, "violations": _first(rep.violations)})


def check_abr(name: str, samples: int = 100, seed: int = 0) -> Check:
    spec = registry_get(name)
    p, c = spec.game, spec.game.constants
    beta = 1.0 / c.L
    pts = sample_points(spec, samples, seed)
    per_delta, bad = {}, []
    for delta in ABR_DELTAS:
        T_prime = abr_iters_for(delta, p.n, c.L, c.mu, beta)
        v = abr_accuracy_violations(p, pts, delta, beta, T_prime)
        per_delta[repr(delta)] = {"T_prime": T_prime, "violations": len(v)}
        bad += [e | {"delta": delta} for e in v]
    return Check("abr", name, not bad, {"checked": samples, "by_delta": per_delta, "violations": _first(bad)})


def check_contraction(name: str, variant: str, samples: int = 50, seed: int = 0) -> Check:
    spec = registry_get(name)
    p, c = spec.game, spec.game.constants
    steps = theorem_step_sizes(c, p.n, 0.5, 0.5, KAPPA.get(name))
    if variant == "rbcd":
        cfg = SolverConfig(alpha=steps.plain_bcd, variant="rbcd")
        rep = verify_contraction_theorems(p, cfg, sample_points(spec, samples, seed), kappa=KAPPA[name])
    else:
        cfg = SolverConfig(alpha=steps.alpha, variant=variant)
        rep = verify_contraction_theorems(p, cfg, sample_points(spec, samples, seed))
    return Check(f"contraction-{variant}", name, rep.passed, {
        "checked": rep.checked, "by_case": rep.by_case,
        "max_ratio": {k: _json_float(v) for k, v in rep.max_ratio.items()},
        "soft_violations": len(rep.soft_violations), "violations": _first(rep.violations)})


def check_lq_counterexample() -> Check:
    from .lqgame import counterexample, lq_cost

    spec, K1, K1p, K2 = counterexample()
    costs = [lq_cost(spec, [K, K2], 0) for K in (K1, K1p, (K1 + K1p) / 2)]
    ok = math.isfinite(costs[0]) and math.isfinite(costs[1]) and math.isinf(costs[2])
    return Check("lq-counterexample", "lq", ok, {"costs": [_json_float(v) for v in costs]})


def check_lq_gradient(instances: int = 20, points: int = 3, tol: float = 1e-5) -> Check:
    from .lqgame import lq_as_game, random_instance, sample_stable_profiles

    worst, bad = 0.0, []
    for s in range(instances):
        lq = random_instance(n=2, d=2, k=1, seed=s)
        p = lq_as_game(lq)
        rng = np.random.default_rng(s)
        for x in sample_stable_profiles(lq, rng, points):
            for i in range(p.n):
                err = float(np.max(gradient_error(np.asarray(p.full_gradient(i, x)), finite_diff_gradient(p, i, x))))
                worst = max(worst, err)
                if err > tol:
                    bad.append({"instance": s, "player": i, "x": x.tolist(), "rel_err": err})
    return Check("lq-gradient", "lq", not bad, {"checked": instances * points, "max_rel_err": worst,
                                                 "violations": _first(bad)})


def _battery() -> list[tuple[str, str, Callable[[], Check]]]:
    """(check name, problem, thunk) for every hard check."""
    out = []
    for name in PROBLEM_NAMES:
        if registry_get(name).known_ne:
            out.append(("ne", name, lambda n=name: check_known_ne(n)))
    for name in ANALYTIC:
        out.append(("sandwich", name, lambda n=name: check_sandwich(n)))
        out.append(("smoothness", name, lambda n=name: check_smoothness(n)))
        out.append(("kappa", name, lambda n=name: check_kappa(n)))
        out.append(("abr", name, lambda n=name: check_abr(n)))
    for name in KAPPA:
        out.append(("contraction", name, lambda n=name: check_contraction(n, "rbcd")))
    for name in ADAPTIVE:
        out.append(("contraction", name, lambda n=name: check_contraction(n, "ia_rbcd")))
    out.append(("lq-counterexample", "lq", check_lq_counterexample))
    out.append(("lq-gradient", "lq", check_lq_gradient))
    return out


VERIFY_CHECKS = ("ne", "sandwich", "smoothness", "kappa", "abr", "contraction", "lq-counterexample", "lq-gradient")


def verify_scopes() -> tuple[str, ...]:
    return ("all",) + VERIFY_CHECKS + tuple(PROBLEM_NAMES)


def verify(scope: str = "all") -> dict:
    if scope not in verify_scopes():
        raise UnknownNameError(f"unknown verify scope {scope!r}; choose from {', '.join(verify_scopes())}")
    selected = [thunk for check, prob, thunk in _battery() if scope in ("all", check, prob)]
    results = [t().to_dict() for t in selected]
    return {"scope": scope, "passed": all(r["passed"] for r in results), "checks": results}


def cmd_verify(scope: str = "all", out: Optional[str] = None) -> int:
    report = verify(scope)
    text = json.dumps(report, indent=2, default=_json_default) + "\n"
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"verify_{scope}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradcheckRow:
    player: int
    max_rel_err: float
    worst_coordinate: Optional[int]
    worst_x: Optional[list]
    passed: bool


def gradcheck(problem: ProblemSpec | GameProblem, samples: int = 100, seed: int = 0,
              tol: float = GRADCHECK_TOL) -> list[GradcheckRow]:
    """Analytic against central-difference gradients; one row per player."""
    p = problem.game if isinstance(problem, ProblemSpec) else problem
    if samples == 0:
        warnings.warn("gradcheck with zero samples passes vacuously", stacklevel=2)
        return [GradcheckRow(i, 0.0, None, None, True) for i in range(p.n)]
    pts = sample_points(problem, samples, seed)
    rows = []
    for i in range(p.n):
        worst, coord, wx = 0.0, None, None
        for x in pts:
            err = gradient_error(np.asarray(p.full_gradient(i, x), dtype=np.float64), finite_diff_gradient(p, i, x))
            j = int(np.argmax(err))
            if not err[j] <= worst:
                worst, coord, wx = float(err[j]), j, x.tolist()
        rows.append(GradcheckRow(i, worst, coord, wx, worst <= tol))
    return rows


def format_gradcheck(name: str, rows: Sequence[GradcheckRow]) -> str:
    lines = [f"{'problem':<18} {'player':>6} {'max_rel_err':>12} {'coord':>5}  result"]
    for r in rows:
        lines.append(f"{name:<18} {r.player + 1:>6} {r.max_rel_err:>12.3e} "
                     f"{'-' if r.worst_coordinate is None else r.worst_coordinate:>5}  {'pass' if r.passed else 'FAIL'}")
        if not r.passed:
            lines.append(f"  worst point x = {r.worst_x}")
    return "\n".join(lines) + "\n"


def cmd_gradcheck(problem: str, samples: int = 100, seed: int = 0, tol: float = GRADCHECK_TOL) -> int:
    names = PROBLEM_NAMES if problem == "all" else (problem,)
    ok = True
    for name in names:
        try:
            spec = registry_get(name)
        except UnknownProblemError as e:
            raise UnknownNameError(str(e)) from None
        rows = gradcheck(spec, samples, seed, tol)
        sys.stdout.write(format_gradcheck(name, rows))
        ok = ok and all(r.passed for r in rows)
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_list() -> int:
    sys.stdout.write("problems: " + ", ".join(PROBLEM_NAMES) + "\n")
    sys.stdout.write("variants: " + ", ".join(VARIANTS) + "\n")
    sys.stdout.write("verify scopes: " + ", ".join(verify_scopes()) + "\n")
    return EXIT_OK
