"""Command-line front end: sampling, rendering, limit-shape sweeps,
verification suites, and fluctuation studies, all reproducible from a
JSON config plus a seed.

Exit codes: 0 success / all checks pass, 1 verification failure,
2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import asymptotics as asym
from . import kernels, limitshape, loop_verify, tilings
from .errors import LoopeqError, InvalidInputError

FLOAT_FMT = "%.17g"


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(2, f"config: cannot parse {path}: {exc}")


def _fail(code: int, message: str):
    print(f"error: {message}", file=sys.stderr)
    sys.exit(code)


def _spec_from_config(cfg: dict) -> tilings.TrapezoidSpec:
    for field in ("N", "T", "segments", "q", "kappa_sq"):
        if field not in cfg:
            _fail(2, f"config: missing field '{field}'")
    try:
        return tilings.TrapezoidSpec(
            N=int(cfg["N"]), T=int(cfg["T"]),
            segments=tuple((int(a), int(b)) for a, b in cfg["segments"]),
            q=float(cfg["q"]), kappa_sq=float(cfg["kappa_sq"]))
    except LoopeqError as exc:
        _fail(2, f"config: {exc}")


def _model_from_config(cfg: dict) -> limitshape.ScaledModel:
    try:
        if "epsilon" in cfg:
            spec = _spec_from_config(cfg)
            return asym.scaled_model_of(spec, float(cfg["epsilon"]))
        q = float(cfg["q"])
        if not 0 < q < 1:
            _fail(2, "config: scaled model needs q in (0,1)")
        return limitshape.ScaledModel(
            big_n=float(cfg["N"]), big_t=float(cfg["T"]),
            segments=tuple((float(a), float(b)) for a, b in cfg["segments"]),
            logq=math.log(q), kappa_sq=float(cfg["kappa_sq"]))
    except LoopeqError as exc:
        _fail(2, f"config: {exc}")


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _thread_count(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("LOOPEQ_THREADS")
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec_from_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for rep in range(args.samples):
        traj = tilings.sample_tiling(spec, args.seed, replica=rep)
        name = f"traj_{rep}.csv"
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write("t,i,x\n")
            for t in range(spec.T + 1):
                for i in range(spec.N):
                    fh.write(f"{t},{i},{int(traj.states[t, i])}\n")
        files.append(name)
    manifest = {
        "config": cfg,
        "config_sha256": _config_hash(cfg),
        "seed": args.seed,
        "samples": args.samples,
        "files": files,
        "versions": {"loopeq": __version__, "numpy": np.__version__},
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(files)} trajectories to {args.out}")
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec_from_config(cfg)
    states = np.full((spec.T + 1, spec.N), -10 ** 9, dtype=np.int64)
    with open(args.traj) as fh:
        header = fh.readline().strip()
        if header != "t,i,x":
            _fail(2, f"trajectory file: unexpected header {header!r}")
        for line in fh:
            t, i, x = (int(v) for v in line.split(","))
            states[t, i] = x
    if (states == -10 ** 9).any():
        _fail(2, "trajectory file incomplete")
    traj = tilings.TilingTrajectory(spec, states, seed=-1)
    svg = tilings.render_svg(traj)
    with open(args.out, "w") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def cmd_arctic(args) -> int:
    cfg = _load_config(args.config)
    model = _model_from_config(cfg)
    pts = limitshape.arctic_curve(model, M=args.points)
    if len(pts) > args.points:  # at most one emitted row per sweep point
        idx = np.linspace(0, len(pts) - 1, args.points).astype(int)
        pts = [pts[i] for i in idx]
    with open(args.out, "w") as fh:
        fh.write("t,x,re_u,im_u\n")
        for p in pts:
            fh.write(",".join(FLOAT_FMT % v for v in
                              (p.t, p.x, p.u.real, p.u.imag)) + "\n")
    print(f"wrote {len(pts)} arctic points to {args.out}")
    return 0


def cmd_limitshape(args) -> int:
    cfg = _load_config(args.config)
    model = _model_from_config(cfg)
    try:
        gt, gx = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        _fail(2, f"--grid must look like 24x40, got {args.grid!r}")
    rows = []
    for t in np.linspace(model.big_t / (gt + 1), model.big_t
                         * (1 - 1 / (gt + 1)), gt):
        lo, hi = model.support(float(t))
        h = 0.0
        for x in np.linspace(lo + 1e-9, hi - 1e-9, gx):
            sol = limitshape.solve_slope(model, float(t), float(x))
            h = limitshape.limit_height(model, float(t), float(x))
            if isinstance(sol, limitshape.FrozenVerdict):
                ph, pu, pd = 1.0 - sol.density, float("nan"), float("nan")
            else:
                ph, pu, pd = sol.p_horizontal, sol.p_up, sol.p_down
            rows.append((t, x, h, ph, pu, pd))
    with open(args.out, "w") as fh:
        fh.write("t,x,h,p_h,p_up,p_down\n")
        for row in rows:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    print(f"wrote {len(rows)} grid rows to {args.out}")
    return 0


def _verify_loop(cfg, corrupt: bool) -> list[tuple[str, float, float, bool]]:
    rng = np.random.default_rng(1234)
    checks = []
    for trial in range(10):
        n = int(rng.integers(2, 6))
        theta = float(rng.choice([0.5, 1.0, 2.0]))
        pos = [float(rng.integers(0, 3))]
        for g in theta + rng.integers(0, 3, size=n - 1):
            pos.append(pos[-1] - g)
        x = kernels.ParticleConfig(theta, tuple(pos))
        k = kernels.AscendingKernel(
            theta, kernels.identity_fn(),
            kernels.affine_fn(10 + rng.random() * 5, rng.random() - 0.5),
            kernels.affine_fn(9 + rng.random() * 4, rng.random() - 0.5))
        site = None
        if corrupt:
            site = loop_verify.corrupted_site_factors(n, site=n // 2,
                                                      factor=2.0)
        obs = lambda z, k=k, x=x, site=site: loop_verify.ascending_observable(
            k, x, z, "partition", site_factors=site)
        gap = min(abs(a - b) for a in pos for b in pos if a != b) \
            if n > 1 else 1.0
        rep = loop_verify.holomorphy_scan(obs, pos, radius=gap / 4)
        threshold = 1e-8
        checks.append((f"ascending residue (trial {trial})",
                       rep.max_residue, threshold,
                       rep.max_residue < threshold))
    return checks


def _verify_stability(cfg) -> list:
    spec = _spec_from_config(cfg)
    eps = 1.0 / spec.N
    checks = []
    for t in (0, spec.T // 3, 2 * spec.T // 3):
        traj = tilings.sample_tiling(spec, seed=7)
        x = traj.config(t)
        k = tilings.qk_kernel_at(spec, t)
        dens = asym.EmpiricalDensity.of(x, eps)
        lo, hi = dens.support_bounds()
        from .numerics import rectangle_around
        cont = rectangle_around(lo - 0.05, hi + 0.05, nodes=256)
        wind, minb = asym.verify_stability(k, x, eps, cont)
        checks.append((f"stability winding at t={t}", float(wind), 0.5,
                       wind == 0 and minb > 1e-8))
    return checks


def _verify_identities(cfg) -> list:
    rng = np.random.default_rng(99)
    checks = []
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 5))
        lam = tuple(sorted(rng.integers(0, 5, size=n).tolist(), reverse=True))
        sigma = complex(rng.normal(), rng.normal()) or 0.5 + 0.5j
        _, _, rel = tilings.verify_qracah(n, lam, sigma,
                                          float(rng.uniform(0.2, 0.9)))
        worst = max(worst, rel)
    checks.append(("q-Racah partition identity (50 draws)", worst, 1e-10,
                   worst < 1e-10))
    bad = 0
    for _ in range(25):
        n = int(rng.integers(1, 5))
        lam = tuple(sorted(rng.integers(0, 5, size=n).tolist(), reverse=True))
        s, p = tilings.so_dimension_identity(n, lam)
        if abs(s - p) > 1e-6 * max(1.0, abs(p)):
            bad += 1
    checks.append(("orthogonal dimension identity (25 draws)", float(bad),
                   0.5, bad == 0))
    return checks


def _verify_burgers(cfg) -> list:
    model = _model_from_config(cfg)
    pts = []
    for t in (0.4 * model.big_t, 0.6 * model.big_t):
        for a, b in limitshape.liquid_windows(model, float(t)):
            pts += [(float(t), a + f * (b - a)) for f in (0.35, 0.65)]
    worst, _, skipped = limitshape.burgers_residual(model, pts)
    return [("Burgers residual", worst, 1e-3, worst < 1e-3)]


def _verify_invariant(cfg) -> list:
    model = _model_from_config(cfg)
    rng = np.random.default_rng(5)
    vs = [complex(rng.uniform(5, 40) * s, -rng.uniform(5, 40))
          for s in (1, -1) for _ in range(5)]
    dev = limitshape.verify_invariant_relation(model, 0.55 * model.big_t, vs)
    return [("invariant functional relation", dev, 1e-8, dev < 1e-8)]


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    suites = {
        "loop": lambda: _verify_loop(cfg, args.corrupt),
        "stability": lambda: _verify_stability(cfg),
        "identities": lambda: _verify_identities(cfg),
        "burgers": lambda: _verify_burgers(cfg),
        "invariant": lambda: _verify_invariant(cfg),
    }
    if args.suite not in suites:
        _fail(2, f"unknown verify suite {args.suite!r}")
    try:
        checks = suites[args.suite]()
    except LoopeqError as exc:
        _fail(3, f"numeric failure: {exc}")
    ok = all(c[3] for c in checks)
    if args.json:
        print(json.dumps({
            "suite": args.suite,
            "passed": ok,
            "checks": [{"name": c[0], "value": c[1], "threshold": c[2],
                        "passed": c[3]} for c in checks]}, indent=2))
    else:
        width = max(len(c[0]) for c in checks)
        for name, value, threshold, passed in checks:
            status = "pass" if passed else "FAIL"
            print(f"{name:<{width}}  {value:12.4e}  (< {threshold:g})  {status}")
        print(f"suite {args.suite}: {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_fluctuations(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec_from_config(cfg)
    with open(args.tests) as fh:
        spec_tests = json.load(fh)
    eps = 1.0 / spec.N
    tests = [asym.HeightTest(float(t["t"]) * (eps if t.get("lattice") else 1.0),
                             tuple(t["coeffs"])) for t in spec_tests]
    model = asym.scaled_model_of(spec, eps)
    try:
        cov, se = asym.mc_fluctuations(spec, tests, args.samples, args.seed,
                                       threads=_thread_count(args))
        k = len(tests)
        pred = np.zeros((k, k))
        for i in range(k):
            for j in range(i, k):
                pred[i, j] = pred[j, i] = asym.gff_covariance(
                    model, tests[i], tests[j])
    except LoopeqError as exc:
        _fail(3, f"numeric failure: {exc}")
    with open(args.out, "w") as fh:
        fh.write("i,j,predicted,empirical,stderr,z_score\n")
        for i in range(k):
            for j in range(k):
                z = (cov[i, j] - pred[i, j]) / se[i, j] if se[i, j] else 0.0
                fh.write(f"{i},{j}," + ",".join(
                    FLOAT_FMT % v for v in
                    (pred[i, j], cov[i, j], se[i, j], z)) + "\n")
    print(f"wrote covariance report to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopeq",
                                description=__doc__.split("\n")[0])
    p.add_argument("--threads", type=int, default=None,
                   help="replica pool size (default: LOOPEQ_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample tiling trajectories")
    s.add_argument("config")
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("render", help="render a trajectory CSV as SVG")
    s.add_argument("config")
    s.add_argument("--traj", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("arctic", help="emit arctic-curve points")
    s.add_argument("config")
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_arctic)

    s = sub.add_parser("limitshape", help="limit shape on a grid")
    s.add_argument("config")
    s.add_argument("--grid", default="8x40", help="GtxGx, e.g. 8x40")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_limitshape)

    s = sub.add_parser("verify", help="run a verification suite")
    s.add_argument("suite",
                   choices=["loop", "stability", "identities", "burgers",
                            "invariant"])
    s.add_argument("config")
    s.add_argument("--json", action="store_true")
    s.add_argument("--corrupt", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control hook
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("fluctuations", help="Monte-Carlo field fluctuations")
    s.add_argument("config")
    s.add_argument("--tests", required=True,
                   help="JSON list of {t, coeffs[, lattice]} test functions")
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fluctuations)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        _fail(2, str(exc))
    except LoopeqError as exc:
        _fail(3, str(exc))


if __name__ == "__main__":
    sys.exit(main())
