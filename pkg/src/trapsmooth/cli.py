"""Command-line front end: ``trapsmooth <command> <config> [--out DIR] [--jobs K]``.

Exit status: 0 on success, 2 when the config or scene is invalid (nothing is
written), 3 on a numerical failure (only ``error.json`` is written). All
artifacts of a run are computed in memory first and then written atomically,
so a failed run never leaves partial outputs behind.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .billiard import (PhasePoint, SymbolSpec, flow, return_map_jacobian_fd, trap_integral,
                       two_obstacle_periodic_orbit)
from .config import COMMANDS, ConfigError, RunConfig, build_cutoff, describe, load_config
from .geometry import check_ikawa
from .maxprinciple import MaxPrincipleCase, verify_max_principle
from .phasespace import PhaseWindow, check_propagation, husimi, propagation_run
from .resolvent import assemble_helmholtz, resolvent_scan
from .schrodinger import (CoherentParams, SmoothingProbe, coherent_state, evolve, make_domain, smoothing_scan)

__all__ = ["main", "run", "EXIT_OK", "EXIT_INVALID", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class Artifacts:
    """Outputs of one run, held in memory until the run has succeeded."""

    def __init__(self):
        self.files: dict[str, bytes] = {}

    def json(self, name, obj):
        self.files[name] = tio.dumps_json(obj).encode("utf-8")

    def csv(self, name, header, rows):
        self.files[name] = tio.csv_bytes(header, rows)

    def raw(self, name, data: bytes):
        self.files[name] = data

    def flush(self, out: Path):
        for name in sorted(self.files):
            tio.atomic_write_bytes(out / name, self.files[name])


def _report(cfg: RunConfig, **body) -> dict:
    return {"config": cfg.resolved(), **body}


# -- commands ------------------------------------------------------------------------------

def _validate(cfg, art, jobs):
    rep = check_ikawa(cfg.scene)
    art.json("geometry_report.json", _report(cfg, report=rep.to_dict()))


def _trace(cfg, art, jobs):
    p = cfg.params
    traj = flow(PhasePoint(p["start_z"], p["start_zeta"]), p["s_max"], cfg.scene, glancing_tol=p["glancing_tol"])
    rows = [[0.0, *traj.start.z, *traj.start.zeta, "start", "", ""]]
    for k, hit in enumerate(traj.hits):
        nxt = traj.segments[k + 1].zeta if k + 1 < len(traj.segments) else traj.segments[k].zeta
        zeta = traj.segments[k].zeta if hit.classification == "glancing" else nxt
        rows.append([hit.s, *hit.point, float(zeta[0]), float(zeta[1]), hit.classification, hit.obstacle,
                     hit.incidence])
    if traj.terminal != "glancing_abort":
        end = traj.state_at(traj.s_end)
        rows.append([traj.s_end, *end.z, *end.zeta, traj.terminal, "", ""])
    art.csv("trajectory.csv", ["s", "z_x", "z_y", "zeta_x", "zeta_y", "event", "obstacle", "incidence"], rows)
    art.json("trace.json", _report(cfg, terminal=traj.terminal, s_end=traj.s_end, reflections=len(traj.hits),
                                   free_from=traj.free_from,
                                   zeta_norm_drift=float(np.max(np.abs(traj.zeta_norms() - traj.zeta_norms()[0])))))


def _trap(cfg, art, jobs):
    p = cfg.params
    chi = build_cutoff(p)
    res = trap_integral(PhasePoint(p["start_z"], p["start_zeta"]), SymbolSpec(chi), p["T"], cfg.scene,
                        direction=p["direction"], tol=p["tol"])
    s_hi = min(p["T"], res.trajectory.s_end)
    s = np.linspace(0.0, s_hi, p["samples"])
    art.csv("running_integral.csv", ["s", "integral"], [[a, b] for a, b in zip(s, res.running(s))])
    art.json("trap.json", _report(cfg, value=res.value, diagnosis=res.diagnosis, T=res.T, window=res.window,
                                  windows=res.windows, rate=res.rate, period=res.period, per_period=res.per_period,
                                  tail_bound=res.tail_bound, escaped_at=res.escaped_at, direction=res.direction,
                                  chi=chi.to_dict()))


def _orbit(cfg, art, jobs):
    p = cfg.params
    orb = two_obstacle_periodic_orbit(cfg.scene, p["i"], p["j"])
    J_fd = return_map_jacobian_fd(cfg.scene, orb, p["fd_step"])
    err = float(np.max(np.abs(J_fd - orb.linearization)) / np.max(np.abs(orb.linearization)))
    art.json("orbit.json", _report(cfg, orbit=orb.to_dict(), fd_linearization=J_fd.tolist(), fd_rel_error=err))


def _evolve(cfg, art, jobs):
    p = cfg.params
    chi = build_cutoff(p)
    n = p["n"]
    dom = make_domain(cfg.scene, n, q=p["q"], absorber=p["absorber"])
    f0 = coherent_state(CoherentParams(n, p["z0"], p["zeta0"]), dom)
    probe = SmoothingProbe(dom, chi, window="support" if chi.support_bbox() else "full")
    dt = p["dt_factor"] / n ** 2
    every = max(1, int(round(p["sample_ds"] / n / dt)))
    res = evolve(f0, p["T_phys"], dt, {"F": lambda f: probe(f.values)}, scheme=p["scheme"], probe_every=every,
                 checkpoints=p["snapshots"])
    F = res.probes["F"]
    rows = [[t, d["plain_half"], d["log_loss"], m, a] for t, d, m, a in zip(res.times, F, res.mass, res.absorbed)]
    art.csv("evolve.csv", ["t", "F_plain_half", "F_log_loss", "mass", "absorbed"], rows)
    snaps = []
    for k, f in enumerate(res.snapshots):
        g = f.grid
        name = f"snapshot_{k:03d}.bin"
        art.raw(name, tio.pack_snapshot(f.values, g.dx, g.dy, g.x0, g.y0, f.t))
        snaps.append({"file": name, "t": f.t})
    art.json("evolve.json", _report(cfg, grid=dom.grid.to_dict(), dt=res.dt, steps=res.steps,
                                    mass_final=float(res.mass[-1]), absorbed_final=float(res.absorbed[-1]),
                                    snapshots=snaps, chi=chi.to_dict()))


def _scan_smoothing(cfg, art, jobs):
    p = cfg.params
    chi = build_cutoff(p)
    rep = smoothing_scan(cfg.scene, p["n_list"], p["z0"], p["zeta0"], chi, p["epsilon"], q=p["q"],
                         dt_factor=p["dt_factor"], sample_ds=p["sample_ds"], stop_mass=p["stop_mass"],
                         max_nodes=p["max_nodes"], scheme=p["scheme"])
    weights = {"both": ("plain_half", "log_loss"), "plain_half": ("plain_half",), "log_loss": ("log_loss",)}[p["weight"]]
    cols = {"plain_half": "norm_half", "log_loss": "norm_half_logloss"}
    header = ["n", *(f"S_{w}" for w in weights), "t_end", "steps", "dt", "dx", "absorbed_mass",
              "absorbed_in_window", "stopped_early", "valid", "skipped"]
    rows = [[r.n, *(getattr(r, cols[w]) for w in weights), r.t_end, r.steps, r.dt, r.dx, r.absorbed_mass,
             r.absorbed_in_window, r.stopped_early, r.valid, r.skipped or ""] for r in rep.rows]
    art.csv("smoothing.csv", header, rows)
    for n, ser in sorted(rep.series.items()):
        art.csv(f"series_n{n}.csv", ["t", "F_plain_half", "F_log_loss", "mass", "absorbed"], ser.tolist())
    art.json("smoothing.json", _report(cfg, report=rep.to_dict()))


def _lambda_grid(p):
    pos = np.geomspace(p["lambda_min"], p["lambda_max"], p["lambda_count"])
    return sorted(p["lambda_negative"]) + [float(v) for v in pos]


def _scan_resolvent(cfg, art, jobs):
    p = cfg.params
    chi = build_cutoff(p)
    box = p["box"] or cfg.scene.box
    scene = cfg.scene if cfg.scene.obstacles else None
    disc = assemble_helmholtz(scene, p["nx"], p["ny"], box=box, sigma_max=p["sigma_max"],
                              lambda_max=max(p["lambda_max"], max((abs(v) for v in p["lambda_negative"]), default=0)))
    rep = resolvent_scan(disc, _lambda_grid(p), chi, eps_c=p["eps_c"], eps_kind=p["eps_kind"], rtol=p["rtol"],
                         maxiter=p["maxiter"], seed=cfg.seed, jobs=jobs)
    header, rows = rep.csv_rows()
    art.csv("resolvent.csv", header, rows)
    body = rep.to_dict()
    body["empty_scene_deviation"] = rep.empty_scene_check()
    art.json("resolvent.json", _report(cfg, report=body))


def _husimi(cfg, art, jobs):
    p = cfg.params
    n = p["n"]
    start = PhasePoint(p["z0"], p["zeta0"])
    box = p["box"] or cfg.scene.box
    res = propagation_run(cfg.scene, start, n, p["checkpoints"], box, q=p["q"], dt_factor=p["dt_factor"])
    rep = check_propagation(res.snapshots, start, cfg.scene, n, radius=p["radius"], threshold=p["threshold"],
                            ehrenfest_c=p["ehrenfest_c"])
    h = 1.0 / n
    for k, (f, pred) in enumerate(zip(res.snapshots, rep.predicted)):
        H = husimi(f, h, PhaseWindow.around(pred, h, p["radius"]))
        marg = H.position_marginal()
        art.csv(f"husimi_position_{k:02d}.csv", ["z_x", "z_y", "density"],
                [[x, y, marg[i, j]] for i, x in enumerate(H.zx) for j, y in enumerate(H.zy)])
        sl = H.momentum_slice(pred.z)
        art.csv(f"husimi_momentum_{k:02d}.csv", ["zeta_x", "zeta_y", "density"],
                [[a, b, sl[i, j]] for i, a in enumerate(H.zetax) for j, b in enumerate(H.zetay)])
    art.json("propagation.json", _report(cfg, report=rep.to_dict()))


def _maxprinciple(cfg, art, jobs):
    p = cfg.params
    case = MaxPrincipleCase(p["family"], p["alpha"], p["M"], tuple(p["h_list"]), p["beta"], {}, p["samples"],
                            p["stability"], p["assert_result"])
    res = verify_max_principle(case)
    keys = ["h", "max_abs_f", "c_h", "bound", "ratio_to_C_star", "sup_times_hM", "lower_bound_ratio",
            "poles_inside", "holomorphic", "lower_ok"]
    art.csv("maxprinciple.csv", keys, [[r[k] for k in keys] for r in res.rows])
    art.json("maxprinciple.json", _report(cfg, result=res.to_dict()))


HANDLERS = {
    "validate": _validate,
    "trace": _trace,
    "trap": _trap,
    "orbit": _orbit,
    "evolve": _evolve,
    "scan-smoothing": _scan_smoothing,
    "scan-resolvent": _scan_resolvent,
    "husimi": _husimi,
    "maxprinciple": _maxprinciple,
}


def run(cfg: RunConfig, out, jobs: int = 1) -> int:
    """Execute ``cfg`` and write its artifacts into ``out``; returns the exit status."""
    out = Path(out)
    art = Artifacts()
    try:
        HANDLERS[cfg.command](cfg, art, jobs)
    except Exception as exc:  # every failure past validation is reported as numerical
        err = {"config": cfg.resolved(), "error": type(exc).__name__, "message": str(exc)}
        tio.write_json(out / "error.json", err)
        print(f"trapsmooth: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    art.flush(out)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    return EXIT_OK


def _parser():
    ap = argparse.ArgumentParser(prog="trapsmooth", description=__doc__.splitlines()[0])
    ap.add_argument("command", help=f"one of: {', '.join(COMMANDS)}, or 'describe'")
    ap.add_argument("config", help="config file (or, after 'describe', a command name)")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--jobs", type=int, default=1, help="worker threads for independent scan rows")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "describe":
        try:
            sys.stdout.write(describe(args.config))
        except ConfigError as exc:
            print(f"trapsmooth: {exc}", file=sys.stderr)
            return EXIT_INVALID
        return EXIT_OK
    if args.command not in COMMANDS:
        print(f"trapsmooth: unknown command {args.command!r}; valid commands: {', '.join(COMMANDS)}",
              file=sys.stderr)
        return EXIT_INVALID
    if args.jobs < 1:
        print("trapsmooth: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"trapsmooth: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if cfg.command != args.command:
        print(f"trapsmooth: config declares command {cfg.command!r}, not {args.command!r}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
