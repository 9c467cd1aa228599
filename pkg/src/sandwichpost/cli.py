"""Command-line front end.

Subcommands:

- ``study <id>``: run one simulation study and write its tables.
- ``selfcheck``: fast internal consistency checks (matrix identities,
  quadrature golden values, Fisher reduction).
- ``fit <csv>``: fit the global conditional extremes model to a panel CSV
  and write a fit artifact (draws + sandwich estimate).
- ``adjust <fit-artifact>``: apply the posterior adjustment stored in a
  fit artifact and write the adjusted draws.
- ``simulate <model-config>``: simulate panels from the conditional
  extremes model (single-site or one of the two global paths).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjust import SandwichEstimate, adjust_draws, build_C, full_adjustment_pipeline, godambe
from .condextremes import (
    CondExtremesModel,
    CondExtremesParams,
    PARAM_NAMES,
    laplace_threshold,
    simulate_single_site,
)
from .exceptions import ConfigurationError, SandwichPostError
from .experiments.config import STUDY_IDS, default_config
from .experiments.io import read_panel_csv, write_panel_csv
from .experiments.studies import condex_priors, run_study
from .globalsim import self_inconsistency_demo, simulate_global_keef, simulate_global_wadsworth
from .inference import PosteriorDraws
from .likelihoods import ParamVector
from .matrixkit import SpdMatrix
from .fields import SiteSet
from .condextremes import condex_composite


def _fmt(x) -> str:
    return format(float(x), ".12g")


# ----------------------------------------------------------------- study ---


def _cmd_study(args) -> int:
    overrides = {}
    if args.reps is not None:
        overrides["replications"] = args.reps
    cfg = default_config(
        args.study_id,
        seed=args.seed,
        paper_scale=args.paper_scale,
        sampler=args.sampler,
        out_dir=args.out,
        workers=args.workers,
        **overrides,
    )
    result = run_study(cfg)
    requested = cfg.replications
    failed = sum(1 for r in result.records if str(r.get("membership", "")).startswith("FAILED"))
    completed = len(result.records) - failed
    print(f"study {cfg.study}: {completed} completed, {failed} excluded (logged), "
          f"wall time {result.wall_time:.1f} s")
    if result.table is not None:
        rates = result.table.rates()
        for li, level in enumerate(result.table.levels):
            row = ", ".join(
                f"{nm}: {rates[li, pi, 0]:.2f}->{rates[li, pi, 1]:.2f}"
                for pi, nm in enumerate(result.table.param_names)
            )
            print(f"  {int(level * 100)}% coverage (unadjusted->adjusted): {row}")
    if result.extra:
        for k, v in result.extra.items():
            print(f"  {k}: {v}")
    return 0 if completed + failed == requested else 1


# ------------------------------------------------------------- selfcheck ---


def _cmd_selfcheck(args) -> int:
    ok = True
    rng = np.random.default_rng(args.seed)

    def check(name, cond):
        nonlocal ok
        print(f"{'PASS' if cond else 'FAIL'}  {name}")
        ok = ok and cond

    # adjustment defining equation on random SPD pairs
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 9))
        a = rng.standard_normal((dim, dim))
        b = rng.standard_normal((dim, dim))
        h = SpdMatrix(a @ a.T + dim * np.eye(dim))
        g = SpdMatrix(b @ b.T + dim * np.eye(dim))
        c = build_C(h, g)
        h_inv = h.inv().values
        g_inv = g.inv().values
        worst = max(worst, np.linalg.norm(c @ h_inv @ c.T - g_inv) / np.linalg.norm(g_inv))
    check(f"adjustment defining equation (worst residual {worst:.2e})", worst < 1e-8)

    # quadrature golden values
    demo = self_inconsistency_demo(0.0, 1.0, 0.9, 0.8, 4.0)
    check(
        f"integration-path gap ({demo.p_keef:.3f}, {demo.p_wadsworth:.3f})",
        abs(demo.p_keef - 0.17) < 0.005 and abs(demo.p_wadsworth - 0.37) < 0.005,
    )

    # Fisher reduction on a correctly specified Gaussian model
    from .likelihoods import gaussian_fixed_var_loglik
    from .inference import GaussianLinkPrior

    y = rng.standard_normal(10_000)
    pipe = full_adjustment_pipeline(
        gaussian_fixed_var_loglik(y),
        [GaussianLinkPrior("mu", 0.0, 1000.0)],
        ParamVector(("mu",), [0.0]),
        n_s=200,
        rng=np.random.default_rng(args.seed + 1),
        two_step=False,
    )
    c = float(pipe.estimate.c_mat[0, 0])
    check(f"Fisher reduction (C = {c:.3f})", abs(c - 1.0) < 0.1)
    print("selfcheck:", "all passed" if ok else "FAILURES")
    return 0 if ok else 1


# ------------------------------------------------------------------- fit ---


def _write_draws_csv(draws: PosteriorDraws, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(draws.names)
        for row in draws.draws:
            w.writerow([_fmt(v) for v in row])


def _read_draws_csv(path, links):
    rows = list(csv.reader(open(path, newline="")))
    names = tuple(rows[0])
    mat = np.array([[float(v) for v in r] for r in rows[1:]])
    u = mat.copy()
    for k, lk in enumerate(links):
        if lk == "log":
            u[:, k] = np.log(mat[:, k])
    return names, mat, u


def _cmd_fit(args) -> int:
    coords, panel = read_panel_csv(args.csv)
    threshold = laplace_threshold(args.threshold_prob)
    free = tuple(nm for nm in PARAM_NAMES if not (args.fix_rho_b and nm == "rho_b"))
    start = CondExtremesParams(
        lambda_a=args.init_lambda,
        kappa_a=args.init_kappa,
        sigma_b=args.init_sigma_b,
        rho_b=args.init_rho_b,
        rho_z=args.init_rho_z,
        tau=args.init_tau,
    )
    n_side = int(round(np.sqrt(coords.shape[0])))
    stride = args.cond_stride
    cond = tuple(
        int(i) for i in range(coords.shape[0])
        if (i // n_side) % stride == 0 and (i % n_side) % stride == 0
    ) if n_side * n_side == coords.shape[0] else tuple(range(0, coords.shape[0], stride))
    model = CondExtremesModel(
        params=start,
        sites=SiteSet(coords),
        threshold=threshold,
        cond_site_indices=cond,
        selection_radius=args.radius,
        free_names=free,
    )
    cl = condex_composite(model, panel)
    rng = np.random.default_rng(args.seed)
    pipe = full_adjustment_pipeline(
        cl,
        condex_priors(free),
        model.param_vector(),
        n_s=args.n_draws,
        rng=rng,
        seed=args.seed,
        sampler=args.sampler,
        window=args.window,
    )
    out = Path(args.out or "fit-artifact")
    out.mkdir(parents=True, exist_ok=True)
    _write_draws_csv(pipe.unadjusted, out / "draws_unadjusted.csv")
    est = pipe.estimate
    manifest = {
        "kind": "condex-fit",
        "csv": str(args.csv),
        "seed": args.seed,
        "sampler": args.sampler,
        "threshold_prob": args.threshold_prob,
        "threshold": threshold,
        "cond_stride": stride,
        "selection_radius": args.radius,
        "window": est.window,
        "names": list(est.theta_star.names),
        "links": list(est.theta_star.links),
        "theta_star": [float(v) for v in est.theta_star.values],
        "mode_converged": bool(pipe.mode.converged),
        "skewness_unadjusted": [float(v) for v in pipe.unadjusted.skewness()],
        "H": est.h_mat.values.tolist(),
        "J": est.j_mat.values.tolist(),
        "godambe": est.godambe_mat.values.tolist(),
        "C": est.c_mat.tolist(),
        "warnings": list(est.warnings),
        "code_version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "sandwich_report.txt").write_text(est.report() + "\n")
    print(f"fit written to {out} (mode converged: {pipe.mode.converged}, "
          f"{len(cl)} exceedance terms)")
    return 0


# ---------------------------------------------------------------- adjust ---


def _cmd_adjust(args) -> int:
    art = Path(args.artifact)
    manifest = json.loads((art / "manifest.json").read_text())
    names = tuple(manifest["names"])
    links = tuple(manifest["links"])
    _, nat, u = _read_draws_csv(art / "draws_unadjusted.csv", links)
    theta_star = ParamVector(names, manifest["theta_star"], links)
    est = SandwichEstimate(
        theta_star=theta_star,
        h_mat=SpdMatrix(np.array(manifest["H"])),
        j_mat=SpdMatrix(np.array(manifest["J"])),
        godambe_mat=SpdMatrix(np.array(manifest["godambe"])),
        c_mat=np.array(manifest["C"]),
        window=int(manifest["window"]),
        warnings=tuple(manifest.get("warnings", ())),
    )
    draws = PosteriorDraws(
        names=names,
        links=links,
        draws=nat,
        draws_unconstrained=u,
        sampler=manifest.get("sampler", "laplace"),
        seed=manifest.get("seed"),
        mode=theta_star,
    )
    adjusted = adjust_draws(draws, est)
    out = Path(args.out) if args.out else art
    out.mkdir(parents=True, exist_ok=True)
    _write_draws_csv(adjusted, out / "draws_adjusted.csv")
    print(f"adjusted draws written to {out / 'draws_adjusted.csv'}")
    return 0


# -------------------------------------------------------------- simulate ---


def _cmd_simulate(args) -> int:
    spec = json.loads(Path(args.model_config).read_text())
    params = CondExtremesParams(
        lambda_a=spec["lambda"],
        kappa_a=spec["kappa"],
        sigma_b=spec["sigma_b"],
        rho_b=spec["rho_b"],
        rho_z=spec["rho_z"],
        tau=spec["tau"],
    )
    if "coords" in spec:
        coords = np.asarray(spec["coords"], dtype=float)
    else:
        n = int(spec["grid_n"])
        spacing = float(spec.get("grid_spacing", 1.0))
        xs = spacing * np.arange(n)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        coords = np.column_stack([gx.ravel(), gy.ravel()])
    threshold = laplace_threshold(float(spec.get("threshold_prob", 0.9975)))
    model = CondExtremesModel(params=params, sites=SiteSet(coords), threshold=threshold)
    rng = np.random.default_rng(args.seed)
    n_reps = args.reps if args.reps is not None else int(spec.get("n_reps", 100))
    path = spec.get("path", "wadsworth")
    if path == "single-site":
        s0 = int(spec.get("s0", 0))
        panel = simulate_single_site(model, s0, n_reps, rng)
    elif path == "wadsworth":
        panel = simulate_global_wadsworth(model, n_reps, rng).values
    elif path == "keef":
        panel = simulate_global_keef(model, n_reps, rng).values
    else:
        raise ConfigurationError(f"unknown simulation path '{path}'")
    out = Path(args.out or "panel.csv")
    write_panel_csv(out, coords, panel)
    print(f"{n_reps} replicates ({path}) written to {out}")
    return 0


# ------------------------------------------------------------------ main ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandwichpost",
        description="Sandwich-adjusted posteriors for composite likelihoods",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--reps", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--sampler", choices=("laplace", "mcmc"), default="laplace")
        sp.add_argument("--paper-scale", action="store_true")

    sp = sub.add_parser("study", help="run a simulation study")
    sp.add_argument("study_id", choices=STUDY_IDS)
    sp.add_argument("--workers", type=int, default=1)
    add_common(sp)
    sp.set_defaults(fn=_cmd_study)

    sp = sub.add_parser("selfcheck", help="fast internal consistency checks")
    add_common(sp)
    sp.set_defaults(fn=_cmd_selfcheck)

    sp = sub.add_parser("fit", help="fit the conditional extremes model to a panel CSV")
    sp.add_argument("csv")
    add_common(sp)
    sp.add_argument("--threshold-prob", type=float, default=0.9975)
    sp.add_argument("--cond-stride", type=int, default=3)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--window", type=int, default=None)
    sp.add_argument("--n-draws", type=int, default=2000)
    sp.add_argument("--fix-rho-b", action="store_true")
    sp.add_argument("--init-lambda", type=float, default=10.0)
    sp.add_argument("--init-kappa", type=float, default=1.0)
    sp.add_argument("--init-sigma-b", type=float, default=1.5)
    sp.add_argument("--init-rho-b", type=float, default=2.0)
    sp.add_argument("--init-rho-z", type=float, default=8.0)
    sp.add_argument("--init-tau", type=float, default=20.0)
    sp.set_defaults(fn=_cmd_fit)

    sp = sub.add_parser("adjust", help="apply the adjustment in a fit artifact")
    sp.add_argument("artifact")
    add_common(sp)
    sp.set_defaults(fn=_cmd_adjust)

    sp = sub.add_parser("simulate", help="simulate panels from a model config JSON")
    sp.add_argument("model_config")
    add_common(sp)
    sp.set_defaults(fn=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SandwichPostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
