"""Command-line driver: configuration in, CSV/JSON artifacts out.

Subcommands
    soliton       comoving-solution verification report
    propagate     free-field evolution with the Kirchhoff cross-oracle
    simulate      coupled run (--solver volterra | grid)
    compare       diff two run directories' trajectories
    diagnose      post-process a run directory (asymptotics, scattering)
    bounds-check  decay-slope fits (--what soliton | kernel)
    bench         time the compiled backend against the numpy reference

Every run directory gets a ``manifest.json`` with the canonical config,
its hash, and the code/backend versions, so results are traceable.  Exit
codes: 0 ok, 2 bad config/parameters, 3 solver divergence, 4 accuracy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, backend
from .config import RunConfig, load_config
from .diagnostics import asymptotics_report, decompose_run, jacobian_check
from .errors import (AccuracyError, ConfigError, DivergenceError,
                     InvalidParameterError)
from .gridref import initial_coupled_state, run_simulation
from .initial_data import ModifiedFields, pulse_on_grid
from .propagator import kirchhoff_eval, save_snapshot, spectral_evolve
from .soliton import SolitonField
from .volterra import MemoryKernel, TrajectoryRecord, solve_trajectory


def _respect_thread_cap():
    cap = os.environ.get("ABRAHAM_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _write_json(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path, columns, rows):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    os.replace(tmp, path)


def _write_manifest(outdir, command, cfg: RunConfig, outputs, tolerances=None):
    _write_json(os.path.join(outdir, "manifest.json"), {
        "command": command,
        "version": __version__,
        "backend": backend.name,
        "config_sha256": cfg.sha256(),
        "config": cfg.canonical_text(),
        "outputs": sorted(outputs),
        "tolerances": tolerances or {},
    })


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_run_config(path) -> RunConfig:
    return load_config(path)


# -- subcommands --------------------------------------------------------------------


def _cmd_soliton(args):
    cfg = _load_run_config(args.config)
    out = _outdir(args)
    prof = cfg.profile
    v = cfg["initial.velocity"]
    sol = SolitonField(prof, v, quality=args.quality)
    R = prof.radius
    rng = np.random.default_rng(cfg["seed"])
    shells = []
    all_pts, all_res = [], []
    for r in (3.0 * R, 6.0 * R, 12.0 * R):
        u = rng.normal(size=(8, 3))
        pts = r * u / np.linalg.norm(u, axis=1, keepdims=True)
        fb, faraday, ampere = sol.residual(pts)
        scale = max(np.max(np.abs(sol.fields(pts).E)), 1e-300)
        shells.append({
            "radius": r,
            "ampere_rel": float(np.max(np.abs(ampere)) / scale),
            "faraday_rel": float(np.max(np.abs(faraday)) / scale),
        })
        all_pts.append(pts)
        all_res.append(np.column_stack([faraday, ampere]))
    fb, _, _ = sol.residual(np.zeros((1, 3)))
    radii = np.geomspace(5.0 * R, 50.0 * R, 12)
    scans = {w: sol.decay_scan(radii, which=w)
             for w in ("field", "space_gradient", "velocity_gradient")}
    slopes = {w: s.slope for w, s in scans.items()}

    pts = np.vstack(all_pts)
    order = ("space_gradient",) if args.gradients else "values"
    pack = sol.fields(pts, order=order)
    cols = ["x1", "x2", "x3", "Ex", "Ey", "Ez", "Bx", "By", "Bz"]
    table = [pts, pack.E, pack.B]
    if args.gradients:
        # dE[m, i, j] = d_j E_i flattened row-major: dEx_d1, dEx_d2, ...
        for f in ("E", "B"):
            cols += [f"d{f}{c}_d{j}" for c in "xyz" for j in (1, 2, 3)]
        table += [pack.dE.reshape(len(pts), 9), pack.dB.reshape(len(pts), 9)]
    _write_csv(os.path.join(out, "fields.csv"), cols, np.column_stack(table))
    _write_csv(os.path.join(out, "residuals.csv"),
               ["x1", "x2", "x3", "faraday1", "faraday2", "faraday3",
                "ampere1", "ampere2", "ampere3"],
               np.column_stack([pts, np.vstack(all_res)]))
    _write_csv(os.path.join(out, "decay.csv"),
               ["radius"] + [f"sup_{w}" for w in scans],
               np.column_stack([radii] + [s.sup for s in scans.values()]))

    report = {
        "velocity": list(map(float, v)),
        "shells": shells,
        "force_balance": float(np.linalg.norm(fb)),
        "decay_slopes": slopes,
    }
    _write_json(os.path.join(out, "soliton_report.json"), report)
    _write_manifest(out, "soliton", cfg,
                    ["soliton_report.json", "fields.csv", "residuals.csv",
                     "decay.csv"])
    print(f"soliton: force balance {report['force_balance']:.3e}, "
          f"decay slopes {slopes}")
    return 0


def _cmd_propagate(args):
    cfg = _load_run_config(args.config)
    out = _outdir(args)
    pulse = cfg.pulse
    if pulse is None:
        raise ConfigError("propagate needs initial.pulse_amplitude != 0")
    L, N = cfg["grid.L"], cfg["grid.N"]
    g0 = pulse_on_grid(L, N, pulse)
    T = cfg["dynamics.t_final"]
    outputs = []
    for ts in cfg["grid.snapshot_times"] or [T]:
        snap = spectral_evolve(g0, ts).to_physical()
        name = f"snapshot_{ts:012.6f}.fld"
        save_snapshot(snap, os.path.join(out, name))
        outputs.append(name)
    # pointwise cross-oracle on random points inside the horizon
    rng = np.random.default_rng(cfg["seed"])
    npts = cfg["propagate.points"]
    worst = 0.0
    samplers = (lambda x: pulse.fields(x)[0], lambda x: pulse.fields(x)[1],
                (lambda x: pulse.field_gradients(x)[0],
                 lambda x: pulse.field_gradients(x)[1]))
    # "relative" against the data's field scale; pointwise values vanish
    # identically off the light-cone shell and cannot normalize anything
    scale = float(np.sqrt(np.sum(g0.to_physical().E**2, axis=0)).max())
    from .propagator import point_sample
    for _ in range(npts):
        t = float(rng.uniform(0.2, min(T, 0.25 * L)))
        x = rng.uniform(-0.15 * L, 0.15 * L, size=3)
        gt = spectral_evolve(g0, t)
        Eg, Bg = point_sample(gt, x[None, :])
        Ek, Bk = kirchhoff_eval(samplers[0], samplers[1], samplers[2], x, t)
        worst = max(worst,
                    float(np.max(np.abs(Eg[0] - Ek)) / scale),
                    float(np.max(np.abs(Bg[0] - Bk)) / scale))
    n0 = g0.l2_norms()
    nT = spectral_evolve(g0, T).l2_norms()
    iso = abs(np.hypot(*nT) - np.hypot(*n0)) / np.hypot(*n0)
    report = {"points": npts, "max_rel_pointwise": worst,
              "isometry_rel_drift": float(iso),
              "tolerance": cfg["propagate.tolerance"]}
    _write_json(os.path.join(out, "propagate_report.json"), report)
    outputs.append("propagate_report.json")
    _write_manifest(out, "propagate", cfg, outputs,
                    {"pointwise": cfg["propagate.tolerance"]})
    print(f"propagate: max pointwise rel err {worst:.3e} over {npts} points, "
          f"isometry drift {iso:.3e}")
    if worst > cfg["propagate.tolerance"]:
        raise AccuracyError(
            f"Kirchhoff/spectral disagreement {worst:.3e} exceeds "
            f"{cfg['propagate.tolerance']:.1e}")
    return 0


def _cmd_simulate(args):
    cfg = _load_run_config(args.config)
    out = _outdir(args)
    prof, cons = cfg.profile, cfg.constants
    q0, v0 = cfg["initial.position"], cfg["initial.velocity"]
    outputs = ["trajectory.csv"]
    if args.solver == "volterra":
        modified = ModifiedFields.from_pulse(cfg.pulse, charge=cons.e,
                                             position=q0, velocity=v0,
                                             profile=prof)
        t0 = time.time()
        traj = solve_trajectory(
            modified, prof, cons, q0, v0,
            dt=cfg["dynamics.dt"], t_final=cfg["dynamics.t_final"],
            fixed_point_tol=cfg["dynamics.fixed_point_tol"],
            max_iters=cfg["dynamics.max_iters"],
            tau_cut=cfg["dynamics.tau_cut"], quality=cfg["dynamics.quality"])
        print(f"volterra: {len(traj) - 1} steps in {time.time() - t0:.1f}s, "
              f"max contraction {np.max(traj.contraction):.3f}")
    else:
        state = initial_coupled_state(cfg["grid.L"], cfg["grid.N"], prof,
                                      cons, q0, v0, cfg.pulse)
        t0 = time.time()
        traj, series, snaps = run_simulation(
            state, cfg["dynamics.t_final"], cfg["grid.dt"],
            project_gauss=cfg["grid.project_gauss"],
            allow_wraparound=cfg["grid.allow_wraparound"],
            sample_every=cfg["grid.sample_every"],
            snapshot_times=cfg["grid.snapshot_times"])
        de, dp = series.relative_drift()
        print(f"grid: {len(traj) - 1} steps in {time.time() - t0:.1f}s, "
              f"energy drift {de:.3e}, momentum drift {dp:.3e}, "
              f"gauss {np.max(series.gauss):.3e}")
        series.write_csv(os.path.join(out, "conserved.csv"))
        outputs.append("conserved.csv")
        for snap in snaps:
            name = f"snapshot_{snap.time:012.6f}.fld"
            save_snapshot(snap, os.path.join(out, name))
            outputs.append(name)
    traj.write_csv(os.path.join(out, "trajectory.csv"))
    _write_manifest(out, f"simulate --solver {args.solver}", cfg, outputs,
                    {"fixed_point_tol": cfg["dynamics.fixed_point_tol"]})
    return 0


def _cmd_compare(args):
    a = TrajectoryRecord.read_csv(os.path.join(args.runA, "trajectory.csv"))
    b = TrajectoryRecord.read_csv(os.path.join(args.runB, "trajectory.csv"))
    ra, rb = a, b
    if abs(a.dt - b.dt) > 1e-12:
        ratio = max(a.dt, b.dt) / min(a.dt, b.dt)
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidParameterError(
                f"incommensurate time steps {a.dt} vs {b.dt}")
        r = int(round(ratio))
        if a.dt < b.dt:
            ra = _subsample(a, r)
        else:
            rb = _subsample(b, r)
    n = min(len(ra.t), len(rb.t))
    report = {"steps_compared": n,
              "dt": ra.dt,
              "sup_qdot_diff": float(np.max(np.linalg.norm(
                  ra.qdot[:n] - rb.qdot[:n], axis=1)))}
    cols = {}
    for name in ("q", "p", "qdot", "qddot", "alpha", "beta", "memory"):
        cols[name] = float(np.max(np.abs(getattr(ra, name)[:n]
                                         - getattr(rb, name)[:n])))
    report["per_column_max"] = cols
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        _write_json(args.out, report)
    return 0


def _subsample(rec: TrajectoryRecord, r: int) -> TrajectoryRecord:
    sl = slice(None, None, r)
    return TrajectoryRecord(rec.dt * r, rec.t[sl], rec.q[sl], rec.p[sl],
                            rec.pdot[sl], rec.alpha[sl], rec.beta[sl],
                            rec.memory[sl], rec.contraction[sl],
                            constants=rec.constants)


def _cmd_diagnose(args):
    rundir = args.rundir
    with open(os.path.join(rundir, "manifest.json")) as fh:
        manifest = json.load(fh)
    from .config import parse_config
    cfg = parse_config(manifest["config"])
    traj = TrajectoryRecord.read_csv(os.path.join(rundir, "trajectory.csv"))
    report = {"run": manifest["command"],
              "asymptotics": asymptotics_report(
                  traj, cfg["diagnostics.windows"]).as_dict()}
    worst, skipped = jacobian_check(traj, cfg["diagnostics.jacobian_samples"],
                                    rng=np.random.default_rng(cfg["seed"]))
    report["jacobian"] = {"max_rel_error": worst, "skipped": skipped}
    outputs = ["diagnostics.json"]
    snaps = sorted(f for f in os.listdir(rundir) if f.startswith("snapshot_"))
    if snaps and cfg.pulse is not None:
        from .propagator import load_snapshot
        snapshots = [load_snapshot(os.path.join(rundir, f)) for f in snaps]
        grid0 = pulse_on_grid(snapshots[0].L, snapshots[0].N, cfg.pulse)
        dec = decompose_run(traj, grid0, snapshots, constants=cfg.constants,
                            profile=cfg.profile,
                            ds=cfg["diagnostics.candidate_ds"])
        rows = np.column_stack([dec.times, dec.residuals])
        path = os.path.join(rundir, "residuals.csv")
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("t,residual_E,residual_B\n")
            for row in rows:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
        os.replace(tmp, path)
        outputs.append("residuals.csv")
        report["scattering"] = {
            "v_infinity": dec.v_infinity.tolist(),
            "residual_times": dec.times.tolist(),
            "residuals": dec.residuals.tolist(),
        }
    _write_json(os.path.join(rundir, "diagnostics.json"), report)
    print(json.dumps({k: report[k] for k in report if k != "scattering"},
                     indent=2, sort_keys=True))
    return 0


def _cmd_bounds_check(args):
    cfg = _load_run_config(args.config)
    out = _outdir(args)
    prof = cfg.profile
    R = prof.radius
    if args.what == "soliton":
        sol = SolitonField(prof, cfg["initial.velocity"], quality="accurate")
        radii = np.geomspace(5.0 * R, 50.0 * R, 12)
        scans = {w: sol.decay_scan(radii, which=w)
                 for w in ("field", "space_gradient", "velocity_gradient")}
        report = {w: {"slope": s.slope,
                      "expected": -3.0 if w == "space_gradient" else -2.0,
                      "radii": s.radii.tolist(), "sup": s.sup.tolist()}
                  for w, s in scans.items()}
    else:
        v = cfg["initial.velocity"]
        if not np.any(v):
            v = np.array([0.5, 0.0, 0.0])
        kern = MemoryKernel(prof, cfg["dynamics.quality"])
        taus = np.geomspace(5.0 * R, 50.0 * R, 8)
        norms, gnorms = [], []
        for tau in taus:
            x0 = v * tau
            ME, MB = kern.pair(x0, tau, v)
            GE, GB = kern.gradient_pair(x0, tau, v)
            norms.append(max(np.max(np.abs(ME)), np.max(np.abs(MB))))
            gnorms.append(max(np.max(np.abs(GE)), np.max(np.abs(GB))))
        fit = np.polyfit(np.log(taus), np.log(np.maximum(norms, 1e-300)), 1)
        gfit = np.polyfit(np.log(taus), np.log(np.maximum(gnorms, 1e-300)), 1)
        report = {"taus": taus.tolist(),
                  "pair": {"norms": norms, "slope": float(fit[0]),
                           "bound": -2.0 + 0.15},
                  "gradient": {"norms": gnorms, "slope": float(gfit[0]),
                               "bound": -3.0 + 0.15}}
    name = f"bounds_{args.what}.json"
    _write_json(os.path.join(out, name), report)
    _write_manifest(out, f"bounds-check --what {args.what}", cfg, [name])
    print(json.dumps(report if args.what == "soliton"
                     else {k: report[k] for k in ("pair", "gradient")},
                     indent=2, sort_keys=True))
    return 0


def _cmd_bench(args):
    from .profiles import make_profile
    from . import _ref
    backends = [("python", _ref)]
    try:
        from . import _fast
        backends.append(("compiled", _fast))
    except ImportError:
        pass

    def clocked(fn, *fargs):
        fn(*fargs)                       # warm any caches
        t0, reps = time.time(), 0
        while time.time() - t0 < args.budget:
            fn(*fargs)
            reps += 1
        return (time.time() - t0) / reps

    prof = make_profile("bump", 1.0)
    rows = []                            # (label, {backend: seconds})
    v = np.array([0.5, 0.0, 0.0])
    for qual in ("fast", "accurate") if args.full else ("fast",):
        kern = MemoryKernel(prof, qual)
        for tau in (0.5, 1.5, 3.0):
            cols = {bn: clocked(mod.propagated_source_pair, v * tau, tau, v,
                                kern.weight, kern.quad, kern.accurate)
                    for bn, mod in backends}
            rows.append((f"pair[{qual}] tau={tau}", cols))
    N = args.grid_n
    rng = np.random.default_rng(0)
    Eh = rng.normal(size=(3, N, N, N)) + 1j * rng.normal(size=(3, N, N, N))
    Bh = rng.normal(size=(3, N, N, N)) + 1j * rng.normal(size=(3, N, N, N))
    k = 2.0 * np.pi * np.fft.fftfreq(N)
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    kk = np.sqrt(kx**2 + ky**2 + kz**2)
    khat = np.zeros((3, N, N, N))
    nz = kk > 0
    for c, kc in enumerate((kx, ky, kz)):
        khat[c][nz] = kc[nz] / kk[nz]
    c, s = np.cos(kk), np.sin(kk)
    s1 = np.where(kk > 0, np.sin(kk) / np.where(kk > 0, kk, 1.0), 1.0)
    s2 = np.where(kk > 0, (1.0 - np.cos(kk)) / np.where(kk > 0, kk, 1.0), 0.0)
    jamp = rng.normal(size=(N, N, N)) + 1j * rng.normal(size=(N, N, N))
    rows.append((f"mode_rotate N={N}",
                 {bn: clocked(mod.mode_rotate, Eh, Bh, c, s, khat)
                  for bn, mod in backends}))
    rows.append((f"coupled_step N={N}",
                 {bn: clocked(mod.coupled_field_step, Eh, Bh, c, s, s1, s2,
                              khat, jamp, v)
                  for bn, mod in backends}))
    print(f"selected backend: {backend.name}")
    header = "  {:28s}".format("") + "".join(f"{bn:>14s}" for bn, _ in backends)
    print(header + ("       speedup" if len(backends) > 1 else ""))
    for label, cols in rows:
        line = f"  {label:28s}" + "".join(
            f"{1e3 * cols[bn]:11.3f} ms" for bn, _ in backends)
        if len(backends) > 1:
            line += f"{cols['python'] / cols['compiled']:11.1f}x"
        print(line)
    if args.out:
        _write_json(args.out, {
            "selected_backend": backend.name,
            "timings_ms": {label: {bn: 1e3 * t for bn, t in cols.items()}
                           for label, cols in rows}})
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(
        prog="abraham",
        description="Rigid charge coupled to the Maxwell field: solitons, "
                    "memory-kernel dynamics, grid reference, diagnostics.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        return p

    p = add("soliton", _cmd_soliton, help="verify the comoving solution")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gradients", action="store_true",
                   help="append dE/dB columns to fields.csv")
    p.add_argument("--quality", choices=("fast", "accurate"),
                   default="accurate")

    p = add("propagate", _cmd_propagate,
            help="free evolution + Kirchhoff cross-oracle")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("simulate", _cmd_simulate, help="coupled particle-field run")
    p.add_argument("--solver", choices=("volterra", "grid"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("compare", _cmd_compare, help="diff two run directories")
    p.add_argument("runA")
    p.add_argument("runB")
    p.add_argument("--out")

    p = add("diagnose", _cmd_diagnose, help="post-process a run directory")
    p.add_argument("rundir")

    p = add("bounds-check", _cmd_bounds_check, help="decay-slope fits")
    p.add_argument("--what", choices=("soliton", "kernel"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = add("bench", _cmd_bench, help="time compiled vs reference backend")
    p.add_argument("--budget", type=float, default=2.0,
                   help="seconds per measurement")
    p.add_argument("--grid-n", type=int, default=64)
    p.add_argument("--full", action="store_true")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    _respect_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 3
    except AccuracyError as exc:
        print(f"accuracy failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
