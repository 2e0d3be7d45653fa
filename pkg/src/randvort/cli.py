"""Command-line entry point: ``randvort solve|mc|calibrate|verify``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config_file
from .grid import to_physical, write_snapshot
from .noise import GammaMultiplier, fmt, hitting_law_exact, hitting_law_mc, noise_diagnostics, tail_probability_bound
from .scenario import unit_shapes
from .solver import (
    PicardDivergence,
    SmallnessRefused,
    SolutionRecord,
    calibrate,
    picard_solve,
    smallness_check,
    velocity_diagnostics,
    weak_pairing,
)
from .verify import run_suite, write_reports

log = logging.getLogger("randvort")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SMALLNESS = 3
EXIT_DIVERGENCE = 4
EXIT_VERIFY = 5


def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _write_rows(path: Path, header, rows) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else fmt(x) for x in row])


# ----------------------------------------------------------------------------
# solve


def write_kato(path: Path, rec: SolutionRecord) -> None:
    k = rec.kato
    _write_rows(path, ["t", "w0", "w1", "w2", "w3"],
                ([k.times[j], k.w0[j], *k.w[:, j]] for j in range(k.times.size)))


def write_contraction(path: Path, rec: SolutionRecord) -> None:
    rows = []
    for i, d in enumerate(rec.diffs):
        ratio = rec.ratios[i - 1] if i >= 1 else math.nan
        rows.append([str(i + 1), d, ratio])
    _write_rows(path, ["iteration", "diff_znorm", "ratio"], rows)


def write_pairings(path: Path, rec: SolutionRecord, cfg: RunConfig) -> None:
    cols = [weak_pairing(rec, phi.sample(rec.grid)) for phi in cfg.pairings]
    header = ["t"] + [str(phi) for phi in cfg.pairings]
    _write_rows(path, header, ([t] + [c[m] for c in cols] for m, t in enumerate(rec.times)))


def write_velocity(path: Path, rec: SolutionRecord) -> None:
    rep = velocity_diagnostics(rec)
    rows = []
    for j, t in enumerate(rep.times):
        rows.append([t, rep.ratio_X[j], np.max(rep.ratio_DX[:, j]), np.max(rep.ratio_DDX[:, :, j]),
                     rep.weighted_X[j], *rep.weighted_DX[:, j]])
    _write_rows(path, ["t", "ratio_X_r1", "max_ratio_DX", "max_ratio_DDX", "weighted_X", "weighted_DX1",
                       "weighted_DX2", "weighted_DX3"], rows)


def snapshot_nodes(rec: SolutionRecord, spec) -> list[int]:
    if spec == "none":
        return []
    if spec == "final":
        return [rec.times.size - 1]
    if spec == "all":
        return list(range(rec.times.size))
    return sorted({int(np.argmin(np.abs(rec.times - t))) for t in spec})


def write_summary(path: Path, rec: SolutionRecord, prep) -> None:
    div = rec.max_relative_divergence()
    lines = [
        f"seed = {prep.seed}",
        f"u0_norm32 = {prep.u0_norm:.17g}",
        f"iterations = {rec.iterations}",
        f"converged = {rec.converged}",
        f"znorm = {rec.kato.znorm:.17g}",
        f"residual_vorticity_max = {rec.max_residual:.17g}",
        f"residual_mild = {rec.mild_residual:.17g}",
        f"max_rel_divergence_y = {div['y']:.17g}",
        f"max_rel_divergence_U = {div['U']:.17g}",
        f"max_rel_divergence_X = {div['X']:.17g}",
    ]
    path.write_text("\n".join(lines) + "\n")


def run_solve(cfg: RunConfig, out: Path, override: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective.cfg").write_text(cfg.dump())
    scn = cfg.scenario()
    prep = scn.prepare(0)
    print(f"seed = {cfg.seed} (path seed {prep.seed})")
    report = smallness_check(prep.u0_norm, prep.diag, scn.cfg)
    (out / "smallness.txt").write_text(report.text())
    prep.diag.write_csv(out / "noise.csv")
    try:
        rec = picard_solve(prep.U0, prep.gamma, scn.cfg, prep.diag, override=override)
    except SmallnessRefused as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SMALLNESS
    except PicardDivergence as exc:
        print(f"Picard iteration did not converge: {exc}", file=sys.stderr)
        _write_rows(out / "contraction.csv", ["iteration", "diff_znorm", "ratio"],
                    [[str(i + 1), d, exc.ratios[i - 1] if i else math.nan] for i, d in enumerate(exc.diffs)])
        return EXIT_DIVERGENCE
    write_kato(out / "kato.csv", rec)
    write_contraction(out / "contraction.csv", rec)
    write_pairings(out / "pairings.csv", rec, cfg)
    write_velocity(out / "velocity.csv", rec)
    write_summary(out / "summary.txt", rec, prep)
    for m in snapshot_nodes(rec, cfg.snapshots):
        write_snapshot(out / f"U_m{m:04d}.vmf", to_physical(rec.U_at(m)))
        write_snapshot(out / f"X_m{m:04d}.vmf", to_physical(rec.X_at(m)))
    print(f"converged in {rec.iterations} iterations; znorm = {rec.kato.znorm:.6g}; output in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# mc


def _mc_path(args):
    """One Monte-Carlo sample; returns (index, seed, status, reason, eta_inf, znorm, csv texts)."""
    cfg, index, kind = args
    scn = cfg.scenario()
    seed = scn.path_seed(index)
    if kind == "eta":
        diag = noise_diagnostics(GammaMultiplier(scn.model, scn.paths(index)))
        return index, seed, "ok", "", diag.eta_inf_exact, diag.eta_inf_analytic, math.nan, diag
    try:
        prep, rec = scn.solve(index)
    except SmallnessRefused as exc:
        return index, seed, "smallness_refused", str(exc).splitlines()[0], math.nan, math.nan, math.nan, None
    except PicardDivergence as exc:
        return index, seed, "no_convergence", exc.diagnosis, math.nan, math.nan, math.nan, None
    d = prep.diag
    return index, seed, "ok", "", d.eta_inf_exact, d.eta_inf_analytic, rec.kato.znorm, (d, rec.kato)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def tail_table(eta_inf: np.ndarray, cfg: RunConfig) -> list[list]:
    model = cfg.noise_model()
    rows = []
    n = eta_inf.size
    for r in cfg.mc_r:
        frac = float(np.mean(eta_inf > r)) if n else math.nan
        se = math.sqrt(frac * (1 - frac) / n) if n else math.nan
        bound = tail_probability_bound(r, model)
        rows.append([r, frac, se, bound, "pass" if frac <= bound + 3 * se else "FAIL"])
    return rows


def run_mc(cfg: RunConfig, out: Path, n_paths: int, workers: int) -> int:
    if n_paths < 2:
        raise ConfigError(f"mc needs at least 2 paths, got {n_paths}", "mc.paths")
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective.cfg").write_text(cfg.dump())
    print(f"seed = {cfg.seed}")
    if cfg.mc_kind == "hitting":
        est = hitting_law_mc(cfg.hitting_nu, cfg.hitting_r, cfg.hitting_T_max, n_paths, cfg.seed, cfg.hitting_dt)
        exact = hitting_law_exact(cfg.hitting_nu, cfg.hitting_r)
        _write_rows(out / "hitting.csv", ["nu", "r", "T_max", "dt", "n_paths", "estimate", "stderr", "exact"],
                    [[cfg.hitting_nu, cfg.hitting_r, cfg.hitting_T_max, cfg.hitting_dt, str(n_paths), est.value,
                      est.stderr, exact]])
        print(f"P[sup exp(beta - nu t) >= r] ~ {est.value:.4f} +- {est.stderr:.4f} (exact {exact:.4f})")
        return EXIT_OK

    results = _map(_mc_path, [(cfg, i, cfg.mc_kind) for i in range(n_paths)], workers)
    pdir = out / "paths"
    pdir.mkdir(exist_ok=True)
    status_rows = []
    for index, seed, status, reason, e_l2, e_an, z, payload in results:
        status_rows.append([str(index), str(seed), status, reason])
        if payload is None:
            continue
        diag, kato = payload if isinstance(payload, tuple) else (payload, None)
        diag.write_csv(pdir / f"noise_{index:05d}.csv")
        if kato is not None:
            _write_rows(pdir / f"kato_{index:05d}.csv", ["t", "w0", "w1", "w2", "w3"],
                        ([kato.times[j], kato.w0[j], *kato.w[:, j]] for j in range(kato.times.size)))
    _write_rows(out / "status.csv", ["path", "seed", "status", "reason"], status_rows)

    ok = [r for r in results if r[2] == "ok"]
    eta_l2 = np.array([r[4] for r in ok])
    rows = [["paths", n_paths], ["ok", len(ok)], ["failed", n_paths - len(ok)]]
    if cfg.mc_kind == "scenario" and ok:
        z = np.array([r[6] for r in ok])
        for rr in (1, 2, 4):
            v = z**rr
            se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else math.nan
            rows += [[f"znorm_moment_{rr}", float(v.mean())], [f"znorm_moment_{rr}_stderr", se]]
    if eta_l2.size:
        for qq in (0.1, 0.5, 0.9, 0.99):
            rows.append([f"eta_inf_l2_q{qq:g}", float(np.quantile(eta_l2, qq))])
    _write_rows(out / "aggregate.csv", ["statistic", "value"], ([a, b if isinstance(b, float) else str(b)] for a, b in rows))
    tail = tail_table(eta_l2, cfg)
    _write_rows(out / "tail.csv", ["r", "fraction_eta_inf_above_r", "stderr", "bound", "status"], tail)
    print(f"{len(ok)}/{n_paths} paths ok; aggregate in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# calibrate / verify


def run_calibrate(cfg: RunConfig, out: Path | None) -> int:
    scn = cfg.scenario()
    gammas = []
    for i in range(cfg.calibrate_paths):
        G = GammaMultiplier(scn.model, scn.paths(i))
        gammas.append((scn.path_seed(i), G, noise_diagnostics(G)))
    cal = calibrate(unit_shapes(scn.grid, cfg.seed, cfg.u0_band), gammas, scn.cfg, cfg.calibrate_sizes)
    text = cal.text()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def run_verify(cfg: RunConfig, suite: str, report_path: Path) -> int:
    scn = cfg.scenario()
    reports = run_suite(suite, scn, scn, n_paths=cfg.verify_paths)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    write_reports(report_path, reports)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'pass' if r.passed else 'FAIL'} {r.name} [{r.params}] observed={r.observed:.6g} "
              f"bounds=[{r.lower:.6g}, {r.upper:.6g}]")
    return EXIT_VERIFY if failed else EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randvort", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat key = value configuration file")
        p.add_argument("--preset", help="start from a named preset (overrides the file's preset key)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")

    p = sub.add_parser("solve", help="one Picard solve on one sampled noise path")
    common(p)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--override-smallness", action="store_true", help="run even if the smallness precheck fails")

    p = sub.add_parser("mc", help="Monte-Carlo batch over noise paths")
    common(p)
    p.add_argument("--out", type=Path, default=Path("out-mc"))
    p.add_argument("--paths", type=int, help="number of paths (default mc.paths)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("calibrate", help="fit the constants C1, C2 and C*")
    common(p)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("verify", help="run the estimate / oracle / moments suite")
    common(p)
    p.add_argument("--suite", default="all", choices=["all", "estimates", "oracle", "moments"])
    p.add_argument("--out", type=Path, default=Path("report.csv"))
    return parser


def main(argv=None) -> int:
    level = os.environ.get("VM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config_file(args.config, preset=args.preset, seed=args.seed)
        if args.command == "solve":
            return run_solve(cfg, args.out, args.override_smallness)
        if args.command == "mc":
            return run_mc(cfg, args.out, args.paths if args.paths is not None else cfg.mc_paths, args.workers)
        if args.command == "calibrate":
            return run_calibrate(cfg, args.out)
        return run_verify(cfg, args.suite, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
