"""Command line entry point: config -> spectra -> variance targets ->
simulations -> verdicts, written as ``report.json``, ``replicates.csv`` and
``plotdata.csv``.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 bad input.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import exact_oracle as eo
from .errors import BMCError, ConfigParse
from .function_algebra import (
    FunctionSequence, affine, apply_Q_triangle_power, jointly_centered, mu_triangle, standardized_innovation,
    triangle_mean_matrix,
)
from .kernel_core import SUPER_CRITICAL, TriangleKernel, analyze, build_triangle_kernel, reconstruct
from .stat_verify import (
    Verdict, gaussian_fit_test, independence_check, moment_summary, remainder_diagnostic, variance_convergence,
)
from .tree_simulator import SimulationConfig, monte_carlo_many
from .variance_engine import covariance_pair_matrices, sigma_for_regime, sigma_special

SCHEMA_VERSION = 1
ORACLE_GAP = 1e-11
OUT_DIR_ENV = "BMCTRI_OUT_DIR"


@dataclass
class Experiment:
    kind: str                       # variance | bracket | independence | remainder
    statistic: str = "N"
    depths: tuple = (10,)
    replicates: int = 200
    target: object = "auto"
    n_se: float = 3.0
    check_depths: str = "all"       # all | last
    gaussian: bool = False
    pair: str = "G"
    kernel: Optional[TriangleKernel] = None
    sequence: Optional[FunctionSequence] = None
    label: str = ""


@dataclass
class ExperimentConfig:
    name: str
    kernel: TriangleKernel
    initial_law: object
    sequence: FunctionSequence
    experiments: list
    seed: int = 0
    out_dir: str = "out"
    tol: float = 1e-12
    threads: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


# -- parsing ------------------------------------------------------------------------------

def _kernel(spec) -> TriangleKernel:
    if isinstance(spec, str):
        from . import kernel_core
        named = {"K1": kernel_core.k1, "K2": kernel_core.k2, "K3": kernel_core.k3}
        if spec not in named:
            raise ConfigParse(f"unknown named kernel {spec!r}")
        return named[spec]()
    return build_triangle_kernel(spec)


def _function(spec, P: TriangleKernel) -> np.ndarray:
    if not isinstance(spec, dict):
        return np.asarray(spec, dtype=float)
    kind = spec.get("type", "table")
    if kind == "affine":
        return affine(P.m, spec.get("a", 0.0), spec.get("b", 0.0), spec.get("c", 0.0), spec.get("values"))
    if kind == "table":
        return np.asarray(spec["values"], dtype=float)
    if kind == "zero":
        return np.zeros((P.m,) * 3)
    if kind == "constant":
        return np.full((P.m,) * 3, float(spec["value"]))
    if kind == "standardized_innovation":
        return standardized_innovation(P, _function(spec["of"], P))
    if kind == "jointly_centered":
        return jointly_centered([_kernel(k) for k in spec["kernels"]], int(spec.get("which", 0)))
    raise ConfigParse(f"unknown function type {kind!r}")


def _sequence(spec, P: TriangleKernel) -> FunctionSequence:
    if not isinstance(spec, list) or not spec:
        raise ConfigParse("sequence must be a non-empty list of function specs")
    return FunctionSequence([_function(s, P) for s in spec])


def _law(spec, P: TriangleKernel):
    if spec in (None, "stationary"):
        return analyze(P).mu.real.copy()
    if isinstance(spec, dict) and "point" in spec:
        return int(spec["point"])
    return np.asarray(spec, dtype=float)


def parse_config(raw: dict, source: str = "<dict>") -> ExperimentConfig:
    try:
        P = _kernel(raw["kernel"])
        seq = _sequence(raw["sequence"], P)
        exps = []
        for e in raw.get("experiments", []):
            K = _kernel(e["kernel"]) if "kernel" in e else None
            s = _sequence(e["sequence"], K or P) if "sequence" in e else None
            exps.append(Experiment(
                kind=e.get("kind", "variance"), statistic=e.get("statistic", "N"),
                depths=tuple(int(d) for d in e.get("depths", [10])), replicates=int(e.get("replicates", 200)),
                target=e.get("target", "auto"), n_se=float(e.get("n_se", 3.0)),
                check_depths=e.get("check_depths", "all"), gaussian=bool(e.get("gaussian", False)),
                pair=e.get("pair", "G"), kernel=K, sequence=s, label=e.get("label", ""),
            ))
        return ExperimentConfig(
            name=raw.get("name", Path(source).stem), kernel=P, initial_law=raw.get("initial_law", "stationary"),
            sequence=seq, experiments=exps, seed=int(raw.get("seed", 0)), out_dir=raw.get("out_dir", "out"),
            tol=float(raw.get("tol", 1e-12)), threads=int(raw.get("threads", 1)), raw=raw,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigParse(f"{source}: malformed config ({exc})") from exc


def bundled_configs() -> list:
    root = resources.files("bmctri") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str) -> ExperimentConfig:
    """``ref`` is a path to a JSON file or the name of a bundled config."""
    path = Path(ref)
    if path.is_file():
        text, source = path.read_text(), str(path)
    else:
        res = resources.files("bmctri") / "configs" / f"{ref}.json"
        if not res.is_file():
            raise ConfigParse(f"no config file or bundled config named {ref!r}")
        text, source = res.read_text(), ref
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"{source}: {exc}") from exc
    return parse_config(raw, source)


# -- running ------------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(np.real(x)), "im": float(np.imag(x))}
    if isinstance(x, np.generic):
        return x.item()
    return x


def spectral_summary(sd) -> dict:
    return {
        "provenance": "formula",
        "mu": sd.mu.real, "alpha": sd.alpha, "regime": sd.regime,
        "eigenvalues": list(sd.eigenvalues), "J": list(sd.J), "beta_rate": sd.beta_rate,
        "residual": sd.residual,
        "reconstruction_gap": float(np.max(np.abs(reconstruct(sd) - sd.Q))),
    }


def oracle_suite(P: TriangleKernel, sd, seq: FunctionSequence) -> list:
    """Exact checks that need no sampling; every entry is an ExactReport."""
    m = P.m
    n_max = 3 if m == 2 else (2 if m == 3 else 1)
    reps = []
    ones = np.ones(m)
    for n in range(1, n_max + 1):
        for x in range(m):
            for g in (ones, np.arange(m, dtype=float), np.where(np.arange(m) == 0, 1.0, -1.0)):
                reps.extend(eo.verify_many_to_one(P, x, g, n))
    for n in range(0, 3 if m == 2 else 2):
        _, mass = eo.enumerate_expectation(P, sd.mu.real, n + 1, lambda s: np.zeros(len(s)), return_mass=True)
        reps.append(eo.ExactReport(f"mass n={n}", 1.0, float(mass)))
    f = seq[0]
    for n in (1, 2):
        closed = apply_Q_triangle_power(P, f, n, check=False)
        for start in [(0, 0, 0), (m - 1, 0, m - 1)]:
            reps.append(eo.ExactReport(f"triangle chain n={n} start={start}", float(closed[start]),
                                       eo.triangle_chain_expectation(P, start, f, n)))
    # mu^tri stationarity through the triangle mean matrix
    mu_tri = (sd.mu.real[:, None, None] * P.probs).ravel()
    reps.append(eo.ExactReport("mu_tri stationarity", 0.0,
                               float(np.max(np.abs(mu_tri @ triangle_mean_matrix(P) - mu_tri)))))
    sub = FunctionSequence(list(seq)[:2])
    for n in (1, 2) if m == 2 else (1,):
        e = eo.exact_statistic_moments(P, sd.mu.real, sub, n, sd, method="enumerate")
        r = eo.exact_statistic_moments(P, sd.mu.real, sub, n, sd, method="recursive")
        reps.append(eo.ExactReport(f"Var N_n recursion vs enumeration n={n}", r["variance"], e["variance"]))
        reps.append(eo.ExactReport(f"E N_n n={n}", 0.0, e["mean"]))
    return reps


def _target_for(exp: Experiment, sd, P, seq, tol):
    if isinstance(exp.target, (int, float)):
        return float(exp.target), None
    if exp.statistic == "supercritical_residual":
        return 0.0, None
    if exp.statistic == "N_supercritical":
        if not seq.is_conditionally_centered(P):
            raise ConfigParse("N_supercritical has a zero-limit target only for conditionally centered sequences")
        return 0.0, None
    rep = sigma_for_regime(sd, P, seq, tol)
    return rep.total, rep


def run_experiment(cfg: ExperimentConfig, out_dir: Path, oracle_only: bool = False) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    P = cfg.kernel
    sd = analyze(P)
    report = {
        "schema_version": SCHEMA_VERSION, "config": cfg.name, "config_hash": cfg.digest, "seed": cfg.seed,
        "spectral": spectral_summary(sd), "variance_reports": [], "oracle_reports": [], "verdicts": [],
        "notes": [],
    }
    verdicts = []
    oracle = oracle_suite(P, sd, cfg.sequence)
    report["oracle_reports"] = [r.to_dict() for r in oracle]
    oracle_ok = all(r.gap < ORACLE_GAP for r in oracle)
    verdicts.append({"label": "oracle_gaps", "observed": max(r.gap for r in oracle), "expected": 0.0,
                     "tolerance": ORACLE_GAP, "passed": oracle_ok, "provenance": "oracle"})

    rep_rows, plot_rows = [], []
    if not oracle_only:
        for i, exp in enumerate(cfg.experiments):
            verdicts.extend(_run_one(cfg, exp, i, report, rep_rows, plot_rows))

    report["verdicts"] = verdicts
    report["all_passed"] = all(v["passed"] for v in verdicts)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
    if not oracle_only:
        with open(out_dir / "replicates.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "seed", "statistic", "label"])
            w.writerows(rep_rows)
        with open(out_dir / "plotdata.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["depth", "empirical_var", "se", "theoretical", "regime", "label"])
            w.writerows(plot_rows)
    return 0 if report["all_passed"] else 1


def _run_one(cfg, exp: Experiment, i: int, report: dict, rep_rows: list, plot_rows: list) -> list:
    P = exp.kernel or cfg.kernel
    sd = analyze(P)
    seq = exp.sequence or cfg.sequence
    law = _law(cfg.initial_law, P) if exp.kernel is None else analyze(P).mu.real.copy()
    tag = exp.label or f"{exp.kind}{i}"
    out = []

    if exp.kind == "remainder":
        v = remainder_diagnostic(sd, P, seq[0], exp.depths, label=f"{tag}:remainder")
        return [v.to_dict()]

    if exp.kind == "variance":
        labels = [exp.statistic]
    elif exp.kind == "bracket":
        labels = ["bracket"]
    elif exp.kind == "independence":
        labels = ["pair_G_innovation", "pair_G_mean"] if exp.pair == "G" else ["pair_T_innovation", "pair_T_mean"]
    else:
        raise ConfigParse(f"unknown experiment kind {exp.kind!r}")

    sets = []
    for n in exp.depths:
        sc = SimulationConfig(P, law, n, exp.replicates, cfg.seed, seq, labels[0], cfg.threads)
        res = monte_carlo_many(sc, sd, labels)
        for lab in labels:
            for r, s, v, _ in res[lab].csv_rows():
                rep_rows.append([r, s, v, f"{tag}:{lab}[n={n}]"])
        sets.append(res)

    if exp.kind == "variance":
        target, vrep = _target_for(exp, sd, P, seq, cfg.tol)
        if vrep is not None:
            report["variance_reports"].append({"experiment": tag, **vrep.to_dict()})
        if exp.statistic in ("supercritical_residual",):
            report["notes"].append(f"{tag}: finite-depth projections M_n,j stand in for their limits")
        runs = [s[exp.statistic] for s in sets]
        for n, rs in zip(exp.depths, runs):
            ms = moment_summary(rs)
            obs, se = (ms.second_moment, ms.second_moment_se) if target == 0.0 else (ms.variance, ms.variance_se)
            plot_rows.append([n, format(obs, ".17g"), format(se, ".17g"), format(target, ".17g"), sd.regime, tag])
        if len(runs) >= 2:
            vs = variance_convergence(runs, target, n_se=exp.n_se, label=tag)
            if exp.check_depths == "last" and target != 0.0:
                vs = [v for v in vs if v.label.endswith(f"[n={exp.depths[-1]}]") or v.label.endswith("[trend]")]
        elif target == 0.0:
            report["notes"].append(f"{tag}: a zero target needs at least two depths; no verdict")
            vs = []
        else:
            ms = moment_summary(runs[0])
            vs = [Verdict(f"{tag}[n={exp.depths[0]}]", ms.variance, target, exp.n_se * ms.variance_se)]
        out.extend(v.to_dict() for v in vs)
        if exp.gaussian:
            out.append(gaussian_fit_test(runs[-1], label=f"{tag}:gaussian").to_dict())
        return out

    if exp.kind == "bracket":
        sigma = sigma_special(sd, P, seq).total
        gaps, ses = [], []
        for n, s in zip(exp.depths, sets):
            d = np.abs(s["bracket"].statistics - sigma)
            gaps.append(float(d.mean()))
            ses.append(float(d.std(ddof=1) / np.sqrt(len(d))))
            plot_rows.append([n, format(gaps[-1], ".17g"), format(ses[-1], ".17g"), "0", sd.regime, tag + ":mean_abs_gap"])
        excess = max([0.0] + [gaps[k + 1] - gaps[k] - max(ses[k], ses[k + 1]) for k in range(len(gaps) - 1)])
        out.append(Verdict(f"{tag}:bracket[trend]", excess, 0.0, 0.0, details={"gaps": gaps, "se": ses}).to_dict())
        last = sets[-1]["bracket"].statistics - sigma
        se = float(last.std(ddof=1) / np.sqrt(len(last)))
        out.append(Verdict(f"{tag}:bracket[n={exp.depths[-1]}]", float(last.mean()), 0.0, 3 * se,
                           details={"se": se, "sigma": sigma}).to_dict())
        return out

    # independence
    a, b = sets[-1][labels[0]], sets[-1][labels[1]]
    target = 0.0
    if exp.target == "derived":
        pc = covariance_pair_matrices(sd, P, seq[0], cfg.tol)
        report["variance_reports"].append({"experiment": tag, **pc.to_dict()})
        target = float(pc.derived["SigmaT2" if exp.pair == "T" else "SigmaG2"][0, 1])
    elif isinstance(exp.target, (int, float)):
        target = float(exp.target)
    out.append(independence_check(a, b, target, exp.n_se, label=f"{tag}:cov[{exp.pair}]").to_dict())
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bmctri", description="Run a verification experiment from a JSON config.",
                                epilog="Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 bad input.")
    p.add_argument("--config", required=False, help="config path or bundled name (%s)" % ", ".join(bundled_configs()))
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--depth", type=int, help="run every experiment at this single depth")
    p.add_argument("--oracle-only", action="store_true")
    p.add_argument("--tol", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int, help="worker threads, 0 = auto")
    p.add_argument("--list", action="store_true", help="list bundled configs and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(bundled_configs()))
        return 0
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.tol is not None:
            cfg.tol = args.tol
        if args.threads is not None:
            cfg.threads = args.threads
        for e in cfg.experiments:
            if args.replicates is not None:
                e.replicates = args.replicates
            if args.depth is not None and e.kind != "remainder":
                e.depths = (args.depth,)
        cfg.raw = {**cfg.raw, "seed": cfg.seed, "overrides": {
            "replicates": args.replicates, "depth": args.depth, "tol": cfg.tol}}
        out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or cfg.out_dir)
        code = run_experiment(cfg, out, oracle_only=args.oracle_only)
    except (BMCError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"{cfg.name}: {'PASS' if code == 0 else 'FAIL'} -> {out / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
