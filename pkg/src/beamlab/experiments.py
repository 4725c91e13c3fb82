"""Declarative experiments: beam-fidelity runs and PEB sweeps written to CSV.

A config is a JSON object.  Every run writes its files plus a
``manifest.json`` holding the fully resolved parameters, so any number in an
output can be regenerated from the manifest alone.  Outputs contain no
timestamps and are byte-identical across runs with the same config and seed.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, geometry, hardware, synthesis
from .design import DESIGN_KINDS, DesignSpec, design_peb
from .errors import ConfigError, TableValidationError, UnlocalizableError
from .fisher import ChannelState, SignalConfig, channel_gain, dbm_to_watts
from .geometry import RisArray
from .hardware import LookupTable

PRESETS = ("fig3", "fig4", "fig5", "fig6", "fig7", "table2")
EXPERIMENTS = ("beam_fidelity", "peb_sweep")
SWEEP_AXES = ("distance", "azimuth", "elevation", "none")
REALIZATIONS = ("project", "synthesize")


def fmt(x: float) -> str:
    """CSV float format: 6 significant digits, ``inf`` for unlocalizable points."""
    x = float(x)
    if np.isinf(x):
        return "inf"
    return f"{x:.6g}"


# ---------------------------------------------------------------- config


class _Reader:
    """Typed access to a JSON subtree; errors carry the dotted field path."""

    def __init__(self, data, path: str = ""):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or '<root>'}: expected an object")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def sub(self, key) -> "_Reader":
        self.used.add(key)
        return _Reader(self.data.get(key, {}), self._p(key))

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key, default=None, *, positive=False, integer=False):
        self.used.add(key)
        v = self.data.get(key, default)
        if v is None:
            raise ConfigError(f"{self._p(key)}: required")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self._p(key)}: expected a number, got {v!r}")
        if integer and int(v) != v:
            raise ConfigError(f"{self._p(key)}: expected an integer, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(f"{self._p(key)}: must be positive, got {v!r}")
        if not np.isfinite(v):
            raise ConfigError(f"{self._p(key)}: must be finite")
        return int(v) if integer else float(v)

    def optional_number(self, key, **kwargs):
        self.used.add(key)
        return None if self.data.get(key) is None else self.number(key, **kwargs)

    def boolean(self, key, default):
        self.used.add(key)
        v = self.data.get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self._p(key)}: expected true or false, got {v!r}")
        return v

    def choice(self, key, options, default=None):
        self.used.add(key)
        v = self.data.get(key, default)
        if v not in options:
            raise ConfigError(f"{self._p(key)}: must be one of {', '.join(options)}; got {v!r}")
        return v

    def point(self, key, default=None):
        self.used.add(key)
        v = self.data.get(key, default)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            arr = np.empty(0)
        if arr.shape != (3,) or not np.all(np.isfinite(arr)):
            raise ConfigError(f"{self._p(key)}: expected three finite coordinates, got {v!r}")
        return tuple(float(c) for c in arr)

    def number_list(self, key, default=None):
        self.used.add(key)
        v = self.data.get(key, default)
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{self._p(key)}: expected a nonempty list of numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
                raise ConfigError(f"{self._p(key)}[{i}]: expected a finite number, got {x!r}")
            out.append(float(x))
        return tuple(out)

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(f"{self._p(unknown[0])}: unknown field")


@dataclass(frozen=True)
class ArraySpec:
    rows: int = 32
    cols: int = 32
    carrier_hz: float = 28e9
    spacing_wavelengths: float = 0.5

    def build(self, carrier_hz: float, center) -> RisArray:
        lam = geometry.wavelength(carrier_hz)
        return RisArray(self.rows, self.cols, self.spacing_wavelengths * lam, lam, center=np.array(center))


@dataclass(frozen=True)
class TableChoice:
    table: LookupTable
    carrier_hz: float
    source: str

    @property
    def name(self) -> str:
        return self.table.name


@dataclass(frozen=True)
class DesignChoice:
    kind: str
    label: str
    tables: tuple[str, ...] | None
    sphere_radius: float | None = None
    per_trial: bool = False
    prior_center: tuple | None = None
    realization: str = "synthesize"
    reoptimize: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters (both experiment kinds share this type)."""

    experiment: str
    seed: int
    output_dir: str
    array: ArraySpec
    p_tx: tuple
    p_ris: tuple
    tables: tuple[TableChoice, ...]
    # beam fidelity
    p_des: tuple | None = None
    beams: tuple[str, ...] = ()
    slice_axes: tuple[str, ...] = ()
    n_angle: int = 181
    n_range: int = 101
    pattern_2d_beams: tuple[str, ...] = ()
    n_theta_2d: int = 181
    n_phi_2d: int = 181
    beta: float = 0.5
    max_iters: int = 200
    tol: float = 1e-6
    joint_scale: bool = True
    metrics_axis: str = "theta"
    # PEB sweep
    signal: SignalConfig | None = None
    magnitude_carrier_hz: float | None = None
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    sweep_rho: float = 2.0
    sweep_fixed_angle: float = np.pi / 2
    p_ue: tuple | None = None
    designs: tuple[DesignChoice, ...] = ()
    mc_trials: int = 100
    workers: int | None = None

    def table(self, name: str) -> TableChoice:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def with_output_dir(self, path) -> "ExperimentConfig":
        return replace(self, output_dir=str(path))


def _read_tables(r: _Reader, array: ArraySpec, base_dir: Path) -> tuple[TableChoice, ...]:
    entries = r.raw("tables", ["unconstrained", "K2", "K1", "V"])
    if not isinstance(entries, list) or not entries:
        raise ConfigError("tables: expected a nonempty list")
    out = []
    for i, entry in enumerate(entries):
        path = f"tables[{i}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        t = _Reader(entry, path)
        name = t.raw("name")
        csv_path = t.raw("csv")
        carrier = t.optional_number("carrier_hz", positive=True) or array.carrier_hz
        t.finish()
        if csv_path is not None:
            p = Path(csv_path)
            p = p if p.is_absolute() else base_dir / p
            try:
                table = hardware.load_table_csv(p, name=name)
            except OSError as exc:
                raise ConfigError(f"{path}.csv: cannot read {p}: {exc.strerror}") from exc
            except TableValidationError as exc:
                raise ConfigError(f"{path}.csv: {exc}") from exc
            source = str(csv_path)
        else:
            if not isinstance(name, str):
                raise ConfigError(f"{path}.name: expected a table name")
            try:
                table = hardware.get_table(name)
            except KeyError as exc:
                raise ConfigError(f"{path}.name: {exc.args[0]}") from exc
            source = "builtin"
        if any(c.name == table.name for c in out):
            raise ConfigError(f"{path}: duplicate table {table.name!r}")
        out.append(TableChoice(table, carrier, source))
    return tuple(out)


def _read_designs(r: _Reader, tables) -> tuple[DesignChoice, ...]:
    entries = r.raw("designs", [{"kind": "optimal"}, {"kind": "random"}])
    if not isinstance(entries, list) or not entries:
        raise ConfigError("designs: expected a nonempty list")
    names = {t.name for t in tables}
    out = []
    for i, entry in enumerate(entries):
        d = _Reader(entry, f"designs[{i}]")
        kind = d.choice("kind", DESIGN_KINDS)
        radius = d.optional_number("sphere_radius", positive=True)
        if kind == "directional" and radius is None:
            raise ConfigError(f"designs[{i}].sphere_radius: required for directional designs")
        sel = d.raw("tables")
        if sel is not None:
            if not isinstance(sel, list) or not sel:
                raise ConfigError(f"designs[{i}].tables: expected a nonempty list of table names")
            for j, n in enumerate(sel):
                if n not in names:
                    raise ConfigError(f"designs[{i}].tables[{j}]: table {n!r} is not in the tables list")
            sel = tuple(sel)
        default_label = kind if kind != "directional" else f"directional-{radius:g}m"
        label = d.raw("label", default_label)
        if not isinstance(label, str) or not label:
            raise ConfigError(f"designs[{i}].label: expected a nonempty string")
        prior = d.point("prior_center") if d.data.get("prior_center") is not None else None
        out.append(DesignChoice(
            kind=kind,
            label=label,
            tables=sel,
            sphere_radius=radius,
            per_trial=d.boolean("per_trial", False),
            prior_center=prior,
            realization=d.choice("realization", REALIZATIONS, "synthesize"),
            reoptimize=d.boolean("reoptimize", False),
        ))
        d.finish()
    labels = [d.label for d in out]
    if len(set(labels)) != len(labels):
        raise ConfigError("designs: labels must be unique")
    return tuple(out)


def parse_config(data: dict, base_dir=".") -> ExperimentConfig:
    """Validate a JSON config tree and resolve defaults."""
    base_dir = Path(base_dir)
    r = _Reader(data)
    experiment = r.choice("experiment", EXPERIMENTS)
    r.raw("description")
    seed = r.number("seed", 0, integer=True)
    output_dir = r.raw("output_dir", f"beamlab-out/{experiment}")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir: expected a path")

    a = r.sub("array")
    array = ArraySpec(
        rows=a.number("rows", 32, positive=True, integer=True),
        cols=a.number("cols", 32, positive=True, integer=True),
        carrier_hz=a.number("carrier_hz", 28e9, positive=True),
        spacing_wavelengths=a.number("spacing_wavelengths", 0.5, positive=True),
    )
    a.finish()
    s = r.sub("scenario")
    p_tx = s.point("p_tx", [3.0, 3.0, 0.0])
    p_ris = s.point("p_ris", [0.0, 0.0, 0.0])
    tables = _read_tables(r, array, base_dir)
    common = dict(experiment=experiment, seed=seed, output_dir=output_dir, array=array,
                  p_tx=p_tx, p_ris=p_ris, tables=tables)

    if experiment == "beam_fidelity":
        p_des = s.point("p_des", [0.0, 2.0, 0.0])
        s.finish()
        beams = tuple(r.raw("beams", list(synthesis.BEAM_KINDS)))
        for i, b in enumerate(beams):
            if b not in synthesis.BEAM_KINDS:
                raise ConfigError(f"beams[{i}]: must be one of {', '.join(synthesis.BEAM_KINDS)}; got {b!r}")
        axes = tuple(r.raw("slice_axes", list(synthesis.SLICE_AXES)))
        for i, ax in enumerate(axes):
            if ax not in synthesis.SLICE_AXES:
                raise ConfigError(f"slice_axes[{i}]: must be one of rho, theta, phi; got {ax!r}")
        g = r.sub("grid")
        n_angle = g.number("n_angle", 181, positive=True, integer=True)
        n_range = g.number("n_range", 101, positive=True, integer=True)
        g.finish()
        p2 = r.sub("pattern_2d")
        beams_2d = tuple(p2.raw("beams", []))
        for i, b in enumerate(beams_2d):
            if b not in synthesis.BEAM_KINDS:
                raise ConfigError(f"pattern_2d.beams[{i}]: unknown beam {b!r}")
        n_theta = p2.number("n_theta", 181, positive=True, integer=True)
        n_phi = p2.number("n_phi", 181, positive=True, integer=True)
        p2.finish()
        sy = r.sub("synthesis")
        beta = sy.number("beta", 0.5, positive=True)
        if beta >= 1:
            raise ConfigError("synthesis.beta: must lie in (0, 1)")
        cfg = ExperimentConfig(
            **common,
            p_des=p_des,
            beams=beams,
            slice_axes=axes,
            n_angle=n_angle,
            n_range=n_range,
            pattern_2d_beams=beams_2d,
            n_theta_2d=n_theta,
            n_phi_2d=n_phi,
            beta=beta,
            max_iters=sy.number("max_iters", 200, positive=True, integer=True),
            tol=sy.number("tol", 1e-6, positive=True),
            joint_scale=sy.boolean("joint_scale", True),
            metrics_axis=r.choice("metrics_axis", ("theta", "phi"), "theta"),
        )
        sy.finish()
        if np.linalg.norm(np.subtract(p_des, p_ris)) == 0:
            raise ConfigError("scenario.p_des: coincides with the RIS")
    else:
        p_ue = s.point("p_ue") if s.data.get("p_ue") is not None else None
        s.finish()
        sig = r.sub("signal")
        signal = SignalConfig(
            carrier_hz=array.carrier_hz,
            bandwidth_hz=sig.number("bandwidth_hz", 120e3, positive=True),
            tx_power_watts=dbm_to_watts(sig.number("tx_power_dbm", 20.0)),
            noise_psd_watts_per_hz=dbm_to_watts(sig.number("noise_psd_dbm_per_hz", -174.0)),
            noise_figure_db=sig.number("noise_figure_db", 8.0),
            num_transmissions=sig.number("num_transmissions", 40, positive=True, integer=True),
        )
        magnitude_carrier = sig.optional_number("magnitude_carrier_hz", positive=True)
        sig.finish()
        sw = r.sub("sweep")
        axis = sw.choice("axis", SWEEP_AXES, "none")
        if axis == "none":
            values = (0.0,)
            if p_ue is None:
                raise ConfigError("scenario.p_ue: required when sweep.axis is none")
        else:
            values = sw.number_list("values")
        rho = sw.number("rho", 2.0, positive=True)
        fixed = sw.number("fixed_angle", np.pi / 2)
        sw.finish()
        if axis == "distance" and any(v <= 0 for v in values):
            raise ConfigError("sweep.values: distances must be positive")
        if axis in ("azimuth", "elevation") and any(not 0 < v < np.pi for v in values):
            raise ConfigError("sweep.values: angles must lie in (0, pi)")
        workers = r.raw("workers")
        if workers is not None and (isinstance(workers, bool) or not isinstance(workers, int) or workers < 1):
            raise ConfigError("workers: expected a positive integer or null")
        cfg = ExperimentConfig(
            **common,
            signal=signal,
            magnitude_carrier_hz=magnitude_carrier,
            sweep_axis=axis,
            sweep_values=values,
            sweep_rho=rho,
            sweep_fixed_angle=fixed,
            p_ue=p_ue,
            designs=_read_designs(r, tables),
            mc_trials=r.number("mc_trials", 100, positive=True, integer=True),
            workers=workers,
        )
    r.finish()
    return cfg


def preset_names() -> tuple[str, ...]:
    return PRESETS


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return json.loads(resources.files("beamlab.presets").joinpath(f"{name}.json").read_text())


def load_config(source) -> ExperimentConfig:
    """Load a config from a JSON file path or a bundled preset name."""
    source = str(source)
    path = Path(source)
    if source in PRESETS and not path.is_file():
        return parse_config(load_preset(source))
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {source!r} not found (presets: {', '.join(PRESETS)})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(data, base_dir=path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Resolved parameters for the manifest, including explicit table values."""
    out = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "beamlab_version": __version__,
        "array": {"rows": cfg.array.rows, "cols": cfg.array.cols, "carrier_hz": cfg.array.carrier_hz,
                  "spacing_wavelengths": cfg.array.spacing_wavelengths},
        "scenario": {"p_tx": list(cfg.p_tx), "p_ris": list(cfg.p_ris)},
        "tables": [
            {
                "name": t.name,
                "kind": t.table.kind,
                "carrier_hz": t.carrier_hz,
                "source": t.source,
                "values": [[float(v.real), float(v.imag)] for v in t.table.values],
            }
            for t in cfg.tables
        ],
    }
    if cfg.experiment == "beam_fidelity":
        out["scenario"]["p_des"] = list(cfg.p_des)
        out.update(
            beams=list(cfg.beams),
            slice_axes=list(cfg.slice_axes),
            grid={"n_angle": cfg.n_angle, "n_range": cfg.n_range},
            pattern_2d={"beams": list(cfg.pattern_2d_beams), "n_theta": cfg.n_theta_2d, "n_phi": cfg.n_phi_2d},
            synthesis={"beta": cfg.beta, "max_iters": cfg.max_iters, "tol": cfg.tol,
                       "joint_scale": cfg.joint_scale},
            metrics_axis=cfg.metrics_axis,
        )
    else:
        s = cfg.signal
        if cfg.p_ue is not None:
            out["scenario"]["p_ue"] = list(cfg.p_ue)
        out.update(
            signal={"bandwidth_hz": s.bandwidth_hz, "tx_power_watts": s.tx_power_watts,
                    "noise_psd_watts_per_hz": s.noise_psd_watts_per_hz, "noise_figure_db": s.noise_figure_db,
                    "num_transmissions": s.num_transmissions,
                    "magnitude_carrier_hz": cfg.magnitude_carrier_hz},
            sweep={"axis": cfg.sweep_axis, "values": list(cfg.sweep_values), "rho": cfg.sweep_rho,
                   "fixed_angle": cfg.sweep_fixed_angle},
            designs=[
                {"kind": d.kind, "label": d.label, "tables": list(d.tables) if d.tables else None,
                 "sphere_radius": d.sphere_radius, "per_trial": d.per_trial,
                 "prior_center": list(d.prior_center) if d.prior_center else None,
                 "realization": d.realization, "reoptimize": d.reoptimize}
                for d in cfg.designs
            ],
            mc_trials=cfg.mc_trials,
        )
    return out


# ---------------------------------------------------------------- beam fidelity


@dataclass(frozen=True)
class FidelityResult:
    patterns: dict        # (beam, table, axis) -> (N, 2) array
    patterns_2d: dict     # (beam, table) -> (theta, phi, gain) triple
    metrics: dict         # table -> PatternMetrics of the steering beam
    files: tuple


def _synthesized_profile(cfg: ExperimentConfig, beam: str, choice: TableChoice):
    array = cfg.array.build(choice.carrier_hz, cfg.p_ris)
    desired = synthesis.DesiredBeam(beam, np.array(cfg.p_des), np.array(cfg.p_tx))
    if not choice.table.is_discrete:
        return array, synthesis.ideal_profile(desired, array)
    grid = _slice_grid(cfg)
    res = synthesis.synthesize_reduced(desired, grid, array, choice.table, beta=cfg.beta,
                                       max_iters=cfg.max_iters, tol=cfg.tol, joint_scale=cfg.joint_scale)
    return array, res.omega


def _slice_grid(cfg: ExperimentConfig):
    ref = geometry.cart_to_sph(np.subtract(cfg.p_des, cfg.p_ris))
    return synthesis.default_slice_grid(ref, cfg.n_angle, cfg.n_range)


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _write_manifest(cfg: ExperimentConfig, out_dir: Path, files) -> Path:
    manifest = {"parameters": config_to_dict(cfg), "files": sorted(files)}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def run_beam_fidelity(cfg: ExperimentConfig) -> FidelityResult:
    """Synthesize each beam for each table and export slices, 2D grids and lobe metrics.

    Files: ``pattern_<beam>_<table>_<axis>.csv`` (``coordinate_rad`` or
    ``coordinate_m`` for the range cut, then ``gain_db``),
    ``pattern2d_<beam>_<table>.csv`` (first row holds theta, first column
    phi), ``metrics.csv`` with the steering-beam main lobe and strongest
    envelope-breaking sidelobe per table, and ``manifest.json``.
    """
    if cfg.experiment != "beam_fidelity":
        raise ConfigError("experiment: expected beam_fidelity")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = _slice_grid(cfg)
    ref = grid.ref
    patterns, patterns_2d, files = {}, {}, []
    beams = list(dict.fromkeys([*cfg.beams, *cfg.pattern_2d_beams, "steering"]))
    for choice in cfg.tables:
        for beam in beams:
            array, omega = _synthesized_profile(cfg, beam, choice)
            axes = cfg.slice_axes if beam in cfg.beams else ()
            if beam == "steering" and cfg.metrics_axis not in axes:
                axes = (*axes, cfg.metrics_axis)
            for axis in axes:
                pat = synthesis.evaluate_pattern(omega, array, np.array(cfg.p_tx), axis, grid)
                patterns[(beam, choice.name, axis)] = pat
                if beam in cfg.beams and axis in cfg.slice_axes:
                    name = f"pattern_{beam}_{choice.name}_{axis}.csv"
                    unit = "m" if axis == "rho" else "rad"
                    _write_csv(out_dir / name, f"coordinate_{unit},gain_db", pat)
                    files.append(name)
            if beam in cfg.pattern_2d_beams:
                theta = np.linspace(0.0, np.pi, cfg.n_theta_2d + 2)[1:-1]
                phi = np.linspace(0.0, np.pi, cfg.n_phi_2d + 2)[1:-1]
                gain = synthesis.evaluate_pattern_2d(omega, array, np.array(cfg.p_tx), theta, phi, ref.rho)
                patterns_2d[(beam, choice.name)] = (theta, phi, gain)
                name = f"pattern2d_{beam}_{choice.name}.csv"
                with open(out_dir / name, "w", newline="") as fh:
                    fh.write("phi_rad\\theta_rad," + ",".join(fmt(t) for t in theta) + "\n")
                    for p, row in zip(phi, gain):
                        fh.write(fmt(p) + "," + ",".join(fmt(v) for v in row) + "\n")
                files.append(name)

    # Envelope: the unconstrained steering pattern on the same carrier geometry.
    metrics = {}
    axis = cfg.metrics_axis
    desired = ref.theta if axis == "theta" else ref.phi
    for choice in cfg.tables:
        pat = patterns[("steering", choice.name, axis)]
        if choice.table.is_discrete:
            array = cfg.array.build(choice.carrier_hz, cfg.p_ris)
            ideal = synthesis.ideal_profile(
                synthesis.DesiredBeam("steering", np.array(cfg.p_des), np.array(cfg.p_tx)), array)
            env = synthesis.evaluate_pattern(ideal, array, np.array(cfg.p_tx), axis, grid)
        else:
            env = pat
        metrics[choice.name] = synthesis.lobe_metrics(pat, desired, env)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        fh.write("table,main_peak_db,main_peak_rad,secondary_peak_rad,secondary_peak_db\n")
        for name, m in metrics.items():
            sec = ("", "") if m.secondary_peak_db is None else (
                fmt(m.secondary_peak_direction), fmt(m.secondary_peak_db))
            fh.write(f"{name},{fmt(m.main_peak_db)},{fmt(m.main_peak_direction)},{sec[0]},{sec[1]}\n")
    files.append("metrics.csv")
    _write_manifest(cfg, out_dir, files)
    return FidelityResult(patterns, patterns_2d, metrics, tuple(sorted(files)) + ("manifest.json",))


# ---------------------------------------------------------------- PEB sweeps


def ue_position(cfg: ExperimentConfig, value: float) -> np.ndarray:
    """UE placement for one sweep value, relative to the RIS centre."""
    p_ris = np.array(cfg.p_ris)
    if cfg.sweep_axis == "distance":
        return p_ris + np.array([-value, value, value])
    if cfg.sweep_axis == "azimuth":
        return p_ris + geometry.sph_to_cart((cfg.sweep_rho, value, cfg.sweep_fixed_angle))
    if cfg.sweep_axis == "elevation":
        return p_ris + geometry.sph_to_cart((cfg.sweep_rho, cfg.sweep_fixed_angle, value))
    return np.array(cfg.p_ue)


def peb_point(cfg: ExperimentConfig, design: DesignChoice, choice: TableChoice, value: float) -> float:
    """PEB (Monte-Carlo mean for random/directional) at one sweep value; ``inf`` if unlocalizable."""
    array = cfg.array.build(choice.carrier_hz, cfg.p_ris)
    signal = replace(cfg.signal, carrier_hz=choice.carrier_hz)
    p_ue = ue_position(cfg, value)
    p_tx = np.array(cfg.p_tx)
    alpha = channel_gain(p_tx, np.array(cfg.p_ris), p_ue, choice.carrier_hz, cfg.magnitude_carrier_hz)
    channel = ChannelState(alpha, p_ue, p_tx)
    spec = DesignSpec(
        kind=design.kind,
        table=choice.table,
        seed=cfg.seed,
        mc_trials=cfg.mc_trials,
        sphere_radius=design.sphere_radius,
        prior_center=None if design.prior_center is None else np.array(design.prior_center),
        per_trial_direction=design.per_trial,
    )
    try:
        return design_peb(spec, array, channel, signal, realization=design.realization,
                          reoptimize=design.reoptimize)
    except UnlocalizableError:
        return float("inf")


def _peb_task(args):
    cfg, d, t, v = args
    return peb_point(cfg, cfg.designs[d], cfg.tables[t], cfg.sweep_values[v])


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass(frozen=True)
class SweepResult:
    curves: dict   # (design label, table name) -> (values, peb) arrays
    files: tuple


def curve_pairs(cfg: ExperimentConfig):
    """``(design index, table index)`` pairs in output order."""
    pairs = []
    for di, d in enumerate(cfg.designs):
        for ti, t in enumerate(cfg.tables):
            if d.tables is None or t.name in d.tables:
                pairs.append((di, ti))
    return pairs


def run_peb_sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepResult:
    """Evaluate every (design, table) curve over the sweep and write ``peb_<design>_<table>.csv``.

    Sweep points run on a process pool of ``workers`` (default: the config's
    value, else all available CPUs); results are collected in sweep order so
    outputs do not depend on the pool size.
    """
    if cfg.experiment != "peb_sweep":
        raise ConfigError("experiment: expected peb_sweep")
    workers = workers or cfg.workers or default_workers()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = curve_pairs(cfg)
    tasks = [(cfg, d, t, v) for d, t in pairs for v in range(len(cfg.sweep_values))]
    if workers == 1 or len(tasks) == 1:
        results = [_peb_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_peb_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    n = len(cfg.sweep_values)
    curves, files = {}, []
    values = np.array(cfg.sweep_values)
    for k, (d, t) in enumerate(pairs):
        label, table = cfg.designs[d].label, cfg.tables[t].name
        peb_values = np.array(results[k * n:(k + 1) * n])
        curves[(label, table)] = (values, peb_values)
        name = f"peb_{label}_{table}.csv"
        _write_csv(out_dir / name, "sweep_value,peb_m", zip(values, peb_values))
        files.append(name)
    _write_manifest(cfg, out_dir, files)
    return SweepResult(curves, tuple(sorted(files)) + ("manifest.json",))


def run(cfg: ExperimentConfig, workers: int | None = None):
    if cfg.experiment == "beam_fidelity":
        return run_beam_fidelity(cfg)
    return run_peb_sweep(cfg, workers)
