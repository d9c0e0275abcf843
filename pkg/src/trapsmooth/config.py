"""Flat INI run configurations and scene files.

A run config has a ``[run]`` section (command, scene, seed) and one section
named after the command holding its parameters. Scene files list obstacles in
``[obstacle.K]`` sections. Every value is validated against the command
schema before any computation starts.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .cutoffs import Cutoff, constant, plateau_disc, plateau_rect, power_decay, radial_bump
from .geometry import GeometryError, SceneGeometry, make_disc, make_ellipse, make_scene

__all__ = ["ConfigError", "Param", "SCHEMAS", "COMMANDS", "RunConfig", "load_config", "load_scene",
           "parse_config", "describe", "build_cutoff", "scene_to_dict"]


class ConfigError(ValueError):
    """Malformed or invalid configuration (maps to exit status 2)."""


# -- value parsers -------------------------------------------------------------------

def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _pos_float(s):
    v = _float(s)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _int(s):
    return int(s)


def _pos_int(s):
    v = int(s)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _floats(s):
    items = [p.strip() for p in str(s).split(",") if p.strip()]
    return [_float(p) for p in items]


def _point(s):
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two numbers 'x, y'")
    return tuple(v)


def _box(s):
    v = _floats(s)
    if len(v) != 4 or not (v[0] < v[1] and v[2] < v[3]):
        raise ValueError("expected 'xmin, xmax, ymin, ymax' with xmin < xmax, ymin < ymax")
    return tuple(v)


def _pos_ints(s):
    v = [_pos_int(p) for p in str(s).split(",") if p.strip()]
    if not v:
        raise ValueError("empty list")
    return v


def _bool(s):
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _choice(*options):
    def parse(s):
        s = str(s).strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    parse.options = options
    return parse


_TYPE_NAMES = {_float: "float", _pos_float: "positive float", _int: "int", _pos_int: "positive int",
               _floats: "list of floats", _point: "point 'x, y'", _box: "box 'xmin, xmax, ymin, ymax'",
               _pos_ints: "list of positive ints", _bool: "bool"}


@dataclass(frozen=True)
class Param:
    key: str
    parse: object
    default: object = None
    help: str = ""
    required: bool = False

    @property
    def type_name(self) -> str:
        opts = getattr(self.parse, "options", None)
        if opts:
            return "one of " + "|".join(opts)
        return _TYPE_NAMES.get(self.parse, "str")


_CHI = [
    Param("chi_kind", _choice("bump", "plateau", "rect", "constant", "decay"), "plateau", "cutoff shape"),
    Param("chi_center", _point, (0.0, 0.0), "cutoff centre"),
    Param("chi_radius", _pos_float, 1.0, "outer radius (bump, plateau)"),
    Param("chi_inner", _float, 0.5, "plateau radius where chi = 1"),
    Param("chi_rect", _box, None, "rectangle where chi = 1 (rect)"),
    Param("chi_width", _pos_float, 0.2, "transition width (rect)"),
    Param("chi_power", _pos_float, 1.0, "decay power p in (1+|z|^2)^(-p/2) (decay)"),
]

_START = [
    Param("start_z", _point, None, "initial position z", required=True),
    Param("start_zeta", _point, None, "initial covector zeta", required=True),
]

SCHEMAS: dict[str, list[Param]] = {
    "validate": [],
    "trace": _START + [
        Param("s_max", _pos_float, None, "flow time", required=True),
        Param("glancing_tol", _pos_float, 1e-6, "incidence below which a hit is glancing"),
    ],
    "trap": _START + [
        Param("T", _pos_float, None, "flow time horizon", required=True),
        Param("direction", _choice("backward", "forward"), "backward", "integrate along phi_-s or phi_s"),
        Param("samples", _pos_int, 1001, "rows of the running-integral CSV"),
        Param("tol", _pos_float, 1e-10, "window contribution counted as zero"),
    ] + _CHI,
    "orbit": [
        Param("i", _int, 0, "first obstacle index"),
        Param("j", _int, 1, "second obstacle index"),
        Param("fd_step", _pos_float, 1e-5, "finite-difference step of the return-map check"),
    ],
    "evolve": [
        Param("n", _pos_int, None, "semiclassical index (h = 1/n)", required=True),
        Param("z0", _point, None, "packet centre", required=True),
        Param("zeta0", _point, None, "unit covector", required=True),
        Param("T_phys", _pos_float, 0.1, "physical end time"),
        Param("q", _pos_float, 8.0, "grid points per wavelength 2pi/n"),
        Param("dt_factor", _pos_float, 1.0, "dt = dt_factor / n^2"),
        Param("scheme", _choice("split", "cn"), "split", "time stepper"),
        Param("absorber", _bool, True, "complex absorbing layer on the box margin"),
        Param("sample_ds", _pos_float, 0.05, "probe interval in semiclassical time"),
        Param("snapshots", _floats, [], "physical times of binary field snapshots"),
    ] + _CHI,
    "scan-smoothing": [
        Param("n_list", _pos_ints, [64, 128, 256], "ascending semiclassical indices"),
        Param("z0", _point, None, "packet centre", required=True),
        Param("zeta0", _point, None, "unit covector", required=True),
        Param("epsilon", _pos_float, 0.1, "time window T_phys"),
        Param("weight", _choice("both", "plain_half", "log_loss"), "both", "weights reported in the CSV"),
        Param("q", _pos_float, 8.0, "grid points per wavelength 2pi/n"),
        Param("dt_factor", _pos_float, 1.0, "dt = dt_factor / n^2"),
        Param("sample_ds", _pos_float, 0.05, "probe interval in semiclassical time"),
        Param("stop_mass", _pos_float, 1e-5, "stop once the interaction region holds less mass"),
        Param("max_nodes", _pos_int, 12_000_000, "grid budget per run"),
        Param("scheme", _choice("split", "cn"), "split", "time stepper"),
    ] + _CHI,
    "scan-resolvent": [
        Param("nx", _pos_int, 96, "grid nodes along x"),
        Param("ny", _pos_int, 96, "grid nodes along y"),
        Param("box", _box, None, "computational box (default: scene box)"),
        Param("lambda_min", _pos_float, 1.0, "smallest positive lambda"),
        Param("lambda_max", _pos_float, 400.0, "largest lambda"),
        Param("lambda_count", _pos_int, 30, "log-spaced positive lambdas"),
        Param("lambda_negative", _floats, [], "extra lambda < 0 rows"),
        Param("eps_c", _pos_float, 1.0, "epsilon = eps_c / log(2 + lambda)"),
        Param("eps_kind", _choice("log", "const"), "log", "epsilon policy"),
        Param("sigma_max", _pos_float, None, "absorber strength (default 10 sqrt(lambda_max)/width)"),
        Param("rtol", _pos_float, 1e-3, "power-iteration relative tolerance"),
        Param("maxiter", _pos_int, 2000, "power-iteration cap"),
    ] + _CHI,
    "husimi": [
        Param("n", _pos_int, None, "semiclassical index", required=True),
        Param("z0", _point, None, "packet centre", required=True),
        Param("zeta0", _point, None, "unit covector", required=True),
        Param("checkpoints", _floats, [0.0], "semiclassical times s_k"),
        Param("box", _box, None, "computational box (default: scene box)"),
        Param("q", _pos_float, 16.0, "grid points per wavelength"),
        Param("dt_factor", _pos_float, 0.25, "dt = dt_factor / n^2"),
        Param("radius", _pos_float, 5.0, "ball radius in frame widths"),
        Param("threshold", _pos_float, 0.6, "PASS threshold on the minimum fraction"),
        Param("ehrenfest_c", _pos_float, 0.5, "horizon s <= c log n"),
    ],
    "maxprinciple": [
        Param("family", _choice("single_pole", "constant", "pole_array", "polynomial_envelope"), "single_pole",
              "holomorphic family"),
        Param("alpha", _pos_float, 1.0, "strip height parameter"),
        Param("M", _float, 1.0, "polynomial bound exponent"),
        Param("beta", _pos_float, 1.5, "poles at Im z = beta h alpha"),
        Param("h_list", _floats, [1e-2, 1e-3, 1e-4], "semiclassical parameters"),
        Param("samples", _pos_int, 1000, "points per sampled contour"),
        Param("stability", _pos_float, 2.0, "allowed factor between c(h) and C*"),
        Param("assert_result", _bool, True, "false: report only"),
    ],
}

COMMANDS = tuple(SCHEMAS)
NEEDS_SCENE = {"validate", "trace", "trap", "orbit", "evolve", "scan-smoothing", "scan-resolvent", "husimi"}
OPTIONAL_SCENE = {"trace", "evolve", "scan-resolvent", "husimi"}


@dataclass
class RunConfig:
    command: str
    scene_path: Path | None
    scene: SceneGeometry | None
    params: dict
    seed: int = 0
    source: Path | None = None
    scene_dict: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """The full configuration with defaults filled in (embedded in every report)."""
        return {
            "command": self.command,
            "scene_file": str(self.scene_path.name) if self.scene_path else None,
            "scene": self.scene_dict,
            "seed": self.seed,
            "params": dict(sorted(self.params.items())),
        }


def _parser():
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (T, M, T_phys)
    return cp


# -- scenes ---------------------------------------------------------------------------

def load_scene(path) -> tuple[SceneGeometry, dict]:
    """Parse a scene file; raises ConfigError on any defect."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scene file not found: {path}")
    cp = _parser()
    try:
        cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed scene file {path}: {exc}") from None
    head = cp["scene"] if cp.has_section("scene") else {}
    obs, desc = [], []
    sections = sorted((s for s in cp.sections() if s.startswith("obstacle")),
                      key=lambda s: (len(s), s))
    sec = "scene"
    try:
        for sec in sections:
            o = cp[sec]
            kind = o.get("kind", "disc").strip()
            center = _point(o["center"])
            if kind == "disc":
                r = _pos_float(o["radius"])
                obs.append(make_disc(center, r))
                desc.append({"kind": "disc", "center": list(center), "radius": r})
            elif kind == "ellipse":
                ax = _point(o["semi_axes"])
                rot = _float(o.get("rotation", "0"))
                obs.append(make_ellipse(center, ax, rot))
                desc.append({"kind": "ellipse", "center": list(center), "semi_axes": list(ax), "rotation": rot})
            else:
                raise ValueError(f"unknown obstacle kind {kind!r}")
        sec = "scene"
        margin = _pos_float(head.get("margin", "2.0"))
        box = _box(head["box"]) if "box" in head else None
        name = head.get("name", path.stem)
        scene = make_scene(obs, margin=margin, box=box, name=name) if obs else SceneGeometry((), box, name)
    except KeyError as exc:
        raise ConfigError(f"scene file {path}: [{sec}] missing key {exc}") from None
    except (ValueError, GeometryError) as exc:
        raise ConfigError(f"scene file {path}: [{sec}] {exc}") from None
    return scene, {"name": scene.name, "box": list(scene.box) if scene.box else None, "obstacles": desc}


def scene_to_dict(scene: SceneGeometry) -> dict:
    return {"name": scene.name, "box": list(scene.box) if scene.box else None, "N": scene.N}


# -- run configs ------------------------------------------------------------------------

def parse_config(text: str, base_dir=None, source=None) -> RunConfig:
    cp = _parser()
    try:
        cp.read_string(text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("run"):
        raise ConfigError("config needs a [run] section")
    run = cp["run"]
    command = run.get("command", "").strip()
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; valid commands: {', '.join(COMMANDS)}")
    try:
        seed = _int(run.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"[run] seed: {exc}") from None
    base = Path(base_dir) if base_dir is not None else Path(".")
    scene_path, scene, scene_dict = None, None, {}
    if "scene" in run and run["scene"].strip():
        scene_path = (base / run["scene"].strip())
        scene, scene_dict = load_scene(scene_path)
    elif command in NEEDS_SCENE and command not in OPTIONAL_SCENE:
        raise ConfigError(f"command {command!r} needs a scene file")
    elif command in OPTIONAL_SCENE:
        scene = SceneGeometry(())
        scene_dict = {"name": "empty", "box": None, "obstacles": []}
    section = cp[command] if cp.has_section(command) else {}
    schema = {p.key: p for p in SCHEMAS[command]}
    unknown = sorted(set(section) - set(schema))
    if unknown:
        raise ConfigError(f"[{command}] unknown keys: {', '.join(unknown)}")
    params = {}
    for key, p in schema.items():
        if key in section:
            try:
                params[key] = p.parse(section[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{command}] {key} = {section[key]!r}: {exc}") from None
        elif p.required:
            raise ConfigError(f"[{command}] missing required key {key!r}")
        else:
            params[key] = list(p.default) if isinstance(p.default, list) else p.default
    _check_command(command, params, scene)
    return RunConfig(command, scene_path, scene, params, seed, Path(source) if source else None, scene_dict)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from None
    return parse_config(text, base_dir=path.parent, source=path)


def _unit(v, key):
    if abs(math.hypot(*v) - 1.0) > 1e-10:
        raise ConfigError(f"{key} must be a unit covector")


def _check_command(command, p, scene):
    if command in ("evolve", "scan-smoothing", "husimi"):
        _unit(p["zeta0"], "zeta0")
    if command == "scan-smoothing":
        n = p["n_list"]
        if any(b <= a for a, b in zip(n[:-1], n[1:])):
            raise ConfigError("n_list must be strictly ascending")
    if command in ("evolve", "scan-smoothing") and (scene is None or scene.box is None):
        raise ConfigError(f"{command} needs a scene with a bounding box")
    if command == "husimi" and p["box"] is None and (scene is None or scene.box is None):
        raise ConfigError("husimi needs a box (scene box or [husimi] box)")
    if command == "scan-resolvent":
        if p["box"] is None and (scene is None or scene.box is None):
            raise ConfigError("scan-resolvent needs a box (scene box or [scan-resolvent] box)")
        if p["lambda_min"] >= p["lambda_max"]:
            raise ConfigError("lambda_min must be below lambda_max")
        if any(v >= 0 for v in p["lambda_negative"]):
            raise ConfigError("lambda_negative entries must be negative")
    if command == "orbit":
        N = scene.N if scene is not None else 0
        if not (0 <= p["i"] < N and 0 <= p["j"] < N and p["i"] != p["j"]):
            raise ConfigError(f"orbit needs two distinct obstacle indices below {N}")
    if command == "maxprinciple":
        if not p["h_list"] or any(not 0 < h < 1 for h in p["h_list"]):
            raise ConfigError("h_list entries must lie in (0, 1)")
    if "chi_kind" in p:
        try:
            build_cutoff(p)
        except ValueError as exc:
            raise ConfigError(f"cutoff: {exc}") from None


def build_cutoff(p: dict) -> Cutoff:
    kind = p["chi_kind"]
    if kind == "bump":
        return radial_bump(p["chi_center"], p["chi_radius"])
    if kind == "plateau":
        return plateau_disc(p["chi_center"], p["chi_inner"], p["chi_radius"])
    if kind == "rect":
        if p["chi_rect"] is None:
            raise ValueError("chi_rect is required for rect cutoffs")
        x0, x1, y0, y1 = p["chi_rect"]
        return plateau_rect(x0, x1, y0, y1, p["chi_width"])
    if kind == "constant":
        return constant()
    return power_decay(p["chi_center"], p["chi_power"])


# -- help text -----------------------------------------------------------------------------

_SUMMARY = {
    "validate": "Check the obstacle hypotheses (curvature, gaps, hull separation) and write a geometry report.",
    "trace": "Trace a billiard ray with specular reflection; writes the trajectory vertices.",
    "trap": "Integrate |sigma(A)|^2 along a ray; writes the running integral and the diagnosis.",
    "orbit": "Locate the two-obstacle periodic orbit and its linearised return map.",
    "evolve": "Evolve a coherent state and record the smoothing observables over time.",
    "scan-smoothing": "Compare S(n) = int_0^eps F dt across n for both weights.",
    "scan-resolvent": "Tabulate cutoff resolvent norms against the log bound.",
    "husimi": "Propagate a coherent state and test Husimi concentration along the billiard flow.",
    "maxprinciple": "Check the semiclassical maximum principle on an explicit holomorphic family.",
}


def describe(command: str) -> str:
    """Deterministic usage text with the config schema of ``command``."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; valid commands: {', '.join(COMMANDS)}")
    scene_note = ("required" if command in NEEDS_SCENE and command not in OPTIONAL_SCENE
                  else "optional" if command in OPTIONAL_SCENE else "not used")
    lines = [
        f"trapsmooth {command} CONFIG [--out DIR] [--jobs K]",
        "",
        _SUMMARY[command],
        "",
        "[run]",
        f"  command = {command}",
        f"  scene   = path to a scene file ({scene_note})",
        "  seed    = int (default 0)",
        "",
        f"[{command}]",
    ]
    for p in SCHEMAS[command]:
        d = "required" if p.required else f"default {_fmt_default(p.default)}"
        lines.append(f"  {p.key} = {p.type_name} ({d}): {p.help}")
    if not SCHEMAS[command]:
        lines.append("  (no parameters)")
    return "\n".join(lines) + "\n"


def _fmt_default(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v) if v else "empty"
    return "none" if v is None else str(v)
