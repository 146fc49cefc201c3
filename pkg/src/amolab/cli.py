"""Command-line front end: ``amolab {cf,spectrum,decay,green,lagrange,verify}``.

Configuration precedence, lowest to highest: built-in defaults, the JSON
document given by ``--config``, command-line flags, and finally
``AMOLAB_PRECISION_BITS`` for the working precision.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from amolab.cfrac import DigitBudgetExceeded, Frequency, beta_estimate, build_liouville
from amolab.detkernel import THETA_KINDS, ModelParams
from amolab.xprec import xstr

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    lam: float = 3.0
    theta_kind: str = "0"
    frequency: dict = field(default_factory=lambda: {"kind": "golden", "depth": 30})
    precision: int = 128
    eta: float = 0.01
    N: int = 400
    out: str = "amolab-out"
    seed: int = 0
    jobs: int = 1
    scale: str = "quick"

    def validate(self) -> "RunConfig":
        if self.precision < 64:
            raise ConfigError(f"precision must be >= 64 bits, got {self.precision}")
        if self.N < 5:
            raise ConfigError(f"N must be >= 5, got {self.N}")
        if not 0 < self.eta < 1 / 20:
            raise ConfigError(f"eta must lie in (0, 1/20), got {self.eta}")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.theta_kind not in THETA_KINDS:
            raise ConfigError(f"theta_kind must be one of {sorted(THETA_KINDS)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.scale not in ("quick", "full"):
            raise ConfigError("scale must be quick or full")
        if self.frequency.get("kind") not in ("golden", "coeffs", "liouville"):
            raise ConfigError("frequency.kind must be golden, coeffs or liouville")
        return self

    def build_frequency(self) -> Frequency:
        spec = self.frequency
        try:
            if spec["kind"] == "golden":
                return Frequency.golden(int(spec.get("depth", 30)))
            if spec["kind"] == "coeffs":
                return Frequency.from_coeffs(spec["coeffs"])
            return build_liouville(
                float(spec["beta"]),
                spec.get("levels"),
                seed_coeffs=tuple(spec.get("seed_coeffs", (1,))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad frequency spec {spec}: {exc}") from exc

    def params(self, energy=0.0) -> ModelParams:
        return ModelParams(self.lam, self.build_frequency(), self.theta_kind, energy)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _frequency_from_flags(args) -> dict | None:
    if args.golden is not None:
        return {"kind": "golden", "depth": args.golden}
    if args.coeffs is not None:
        return {"kind": "coeffs", "coeffs": [int(a) for a in args.coeffs.split(",")]}
    if args.liouville is not None:
        return {"kind": "liouville", "beta": args.liouville, "levels": args.levels}
    return None


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **doc)
    for name in ("lam", "theta_kind", "precision", "eta", "N", "out", "seed", "jobs", "scale"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    freq = _frequency_from_flags(args)
    if freq is not None:
        cfg.frequency = freq
    env = os.environ.get("AMOLAB_PRECISION_BITS")
    if env is not None:
        try:
            cfg.precision = int(env)
        except ValueError as exc:
            raise ConfigError(f"AMOLAB_PRECISION_BITS={env!r} is not an integer") from exc
    cfg.validate()
    # one precision source for this process and any worker processes
    os.environ["AMOLAB_PRECISION_BITS"] = str(cfg.precision)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_cf(cfg: RunConfig, args) -> int:
    f = cfg.build_frequency()
    est = beta_estimate(f)
    out = _outdir(cfg)
    (out / "frequency.json").write_text(f.to_json() + "\n")
    doc = {
        "per_level": [[n, xstr(v)] for n, v in est.per_level],
        "running_max": xstr(est.running_max),
        "tail": xstr(est.tail),
        "depth": f.depth,
    }
    _dump(out / "beta.json", doc)
    print(f"depth {f.depth}  beta_hat(tail) {float(est.tail):.6g}  running max {float(est.running_max):.6g}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, args) -> int:
    from amolab.spectral import sturm_eigenvalues

    p = cfg.params()
    window = (args.emin, args.emax) if args.emin is not None and args.emax is not None else None
    ev = sturm_eigenvalues(p, cfg.N, window)
    path = _outdir(cfg) / "spectrum.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "energy"])
        for i, e in enumerate(ev):
            w.writerow([i, xstr(e)])
    print(f"{len(ev)} eigenvalues -> {path}")
    return EXIT_OK


def cmd_decay(cfg: RunConfig, args) -> int:
    from amolab.spectral import (
        LevelTooDeep,
        NotLocalized,
        central_pairs,
        decay_fit,
        decay_profile,
        eigen_solve,
        half_peak_check,
        peak_bound_check,
        peak_level,
        profile_csv,
    )

    p = cfg.params()
    f = p.freq
    beta = float(beta_estimate(f).tail)
    if args.emin is not None and args.emax is not None:
        pairs = eigen_solve(p, cfg.N, (args.emin, args.emax))
    else:
        pairs = central_pairs(p, cfg.N, args.radius)
    out = _outdir(cfg)
    fields = ["energy", "center", "status", "tail", "target", "q_n", "half_c", "bound_c"]
    rows, fits = [], []
    for i, pair in enumerate(pairs):
        row = {"energy": xstr(pair.energy), "center": pair.center}
        try:
            fit = decay_fit(pair, p, beta=beta)
            n = peak_level(f, pair.center, cfg.N, cfg.eta)
        except (NotLocalized, LevelTooDeep) as exc:
            row["status"] = "not localized" if isinstance(exc, NotLocalized) else "no peak level"
            rows.append(row)
            continue
        prof = decay_profile(pair, f, n, cfg.eta)
        h = half_peak_check(prof, p, beta)
        b = peak_bound_check(prof, p, beta)
        ok = fit.tail <= fit.target + 0.1 and h.all_pass and b.all_pass
        row.update(
            status="pass" if ok else "fail",
            tail=repr(fit.tail),
            target=repr(fit.target),
            q_n=prof.q_n,
            half_c=repr(h.c_meas),
            bound_c=repr(b.c_meas),
        )
        rows.append(row)
        fits.append(json.loads(fit.to_json()))
        (out / f"profile_{i:03d}.csv").write_text(profile_csv(prof, p, beta))
    with (out / "decay.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _dump(out / "decay_fits.json", fits)
    print(f"{len(rows)} eigenpairs -> {out / 'decay.csv'}")
    return EXIT_OK


def cmd_green(cfg: RunConfig, args) -> int:
    from amolab.green import IntervalSpec, ResonantInterval, expand_chain, green_cramer, green_direct, is_regular

    p = cfg.params(args.energy)
    I = IntervalSpec(args.x1, args.k)
    y = args.y if args.y is not None else I.x1 + I.k // 2
    doc = {"interval": [I.x1, I.x2], "y": y, "energy": args.energy}
    try:
        d = green_direct(I, p, y)
        c = green_cramer(I, p, y)
        doc["direct"] = [[g.sign, float(g.logmag)] for g in d]
        doc["cramer"] = [[g.sign, float(g.logmag)] for g in c]
    except ResonantInterval as exc:
        doc["resonant"] = str(exc)
    t = p.log_lam - cfg.eta if args.rate is None else args.rate
    if args.k >= 7:
        w = is_regular(y, t, args.k, p)
        doc["regular"] = None if w is None else {"interval": [w.interval.x1, w.interval.x2], "margins": list(w.bound_margins)}
    out = _outdir(cfg)
    if args.chain_level is not None:
        ch = expand_chain(y, p, (args.region_lo, args.region_hi), args.chain_level, eta=cfg.eta, t=args.rate, max_hops=args.max_hops)
        (out / "chain.jsonl").write_text(ch.to_jsonl())
        doc["chain"] = {"status": ch.status, "terminal": ch.terminal, "log_bound": ch.log_bound, "hops": len(ch.hops)}
    _dump(out / "green.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_lagrange(cfg: RunConfig, args) -> int:
    from amolab.interp import ThetaSet, UniformityViolation, desk_n0, la_terms, theta_set_i12, theta_set_j123, uniformity_witness

    p = cfg.params(args.energy)
    f = p.freq
    if args.construction == "offsets":
        ts = ThetaSet.from_offsets(p, range(args.start, args.start + args.count))
    else:
        n = f.level_for(args.qn)
        n0 = args.n0 if args.n0 is not None else desk_n0(f, n, args.s, cfg.eta)
        if args.construction == "i12":
            ts = theta_set_i12(p, n, args.j, args.s, n0, cfg.eta)
        else:
            ts = theta_set_j123(p, n, args.j, args.s, n0)
    la = la_terms(ts)
    out = _outdir(cfg)
    (out / "la_terms.csv").write_text(la.to_csv())
    doc = {"points": len(ts), "provenance": ts.provenance}
    if args.qn:
        doc["la_over_qn"] = la.ratios(f.q(f.level_for(args.qn)))
    try:
        w = uniformity_witness(ts, p, la=la)
        doc["witness"] = {"index": w.index, "offset": w.offset, "label": w.label, "margin": w.margin}
    except UniformityViolation as exc:
        doc["violation"] = {"message": str(exc), "margins": list(exc.margins)}
    _dump(out / "lagrange.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def verdict_json(cfg: RunConfig, results) -> str:
    doc = {
        "config": {"seed": cfg.seed, "scale": cfg.scale, "precision": cfg.precision},
        "checks": [r.to_dict() for r in results],
        "passed": all(r.passed for r in results),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_verify(cfg: RunConfig, args) -> int:
    from amolab.verify import run_suite

    only = tuple(int(x) for x in args.only.split(",")) if args.only else None
    results, elapsed = run_suite(cfg.scale, cfg.seed, cfg.jobs, only)
    text = verdict_json(cfg, results)
    (_outdir(cfg) / "verdict.json").write_text(text)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.id:2d} {r.name} ({elapsed[r.id]:.1f}s)", file=sys.stderr)
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--lam", type=float)
    common.add_argument("--theta-kind", dest="theta_kind", choices=sorted(THETA_KINDS))
    common.add_argument("--precision", type=int)
    common.add_argument("--eta", type=float)
    common.add_argument("-N", type=int, dest="N")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    fq = common.add_mutually_exclusive_group()
    fq.add_argument("--golden", type=int, metavar="DEPTH")
    fq.add_argument("--coeffs", metavar="A1,A2,...")
    fq.add_argument("--liouville", type=float, metavar="BETA")
    common.add_argument("--levels", type=int)

    ap = argparse.ArgumentParser(prog="amolab", description="Almost Mathieu localization laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("cf", parents=[common], help="convergents and beta estimate")
    sp = sub.add_parser("spectrum", parents=[common], help="box eigenvalues")
    sp.add_argument("--emin", type=float)
    sp.add_argument("--emax", type=float)
    dp = sub.add_parser("decay", parents=[common], help="decay fits and peak checks")
    dp.add_argument("--emin", type=float)
    dp.add_argument("--emax", type=float)
    dp.add_argument("--radius", type=int, default=8, help="keep eigenpairs centered within this many sites of 0")
    gp = sub.add_parser("green", parents=[common], help="Green function, regularity, expansion chain")
    gp.add_argument("--energy", type=float, default=0.0)
    gp.add_argument("--x1", type=int, required=True)
    gp.add_argument("--k", type=int, required=True)
    gp.add_argument("--y", type=int)
    gp.add_argument("--rate", type=float)
    gp.add_argument("--chain-level", type=int, dest="chain_level")
    gp.add_argument("--region-lo", type=int, dest="region_lo", default=1)
    gp.add_argument("--region-hi", type=int, dest="region_hi", default=100)
    gp.add_argument("--max-hops", type=int, dest="max_hops")
    lp = sub.add_parser("lagrange", parents=[common], help="La_i terms and the uniformity witness")
    lp.add_argument("--energy", type=float, default=0.0)
    lp.add_argument("--construction", choices=("offsets", "i12", "j123"), default="offsets")
    lp.add_argument("--start", type=int, default=0)
    lp.add_argument("--count", type=int, default=21)
    lp.add_argument("--qn", type=int, default=0)
    lp.add_argument("--j", type=int, default=0)
    lp.add_argument("--s", type=int, default=1)
    lp.add_argument("--n0", type=int)
    vp = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    vp.add_argument("--scale", choices=("quick", "full"))
    vp.add_argument("--only", help="comma-separated check ids")
    return ap


COMMANDS = {
    "cf": cmd_cf,
    "spectrum": cmd_spectrum,
    "decay": cmd_decay,
    "green": cmd_green,
    "lagrange": cmd_lagrange,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DigitBudgetExceeded, ValueError) as exc:
        print(f"amolab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
