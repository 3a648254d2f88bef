"""Command-line front end: ``skewstab invariant|norms|sweep|verify|rate --config PATH [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DecayError, FixedPointError, SkewstabError
from .fibers import FIBER_FIXTURES, fiber_from_spec
from .maps import MAP_FIXTURES, SCHEMES, check_map_class, gauss_density, get_map, map_from_json
from .measures import DiscretizedMeasure, norm_s1
from .stability import FAMILIES, get_family, stability_sweep, verify_a_conditions, verify_u_conditions
from .transfer import SkewProduct, estimate_rate, fixed_point

log = logging.getLogger("skewstab")

COMMANDS = ("invariant", "norms", "sweep", "verify", "rate")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


@dataclass(frozen=True)
class Numerics:
    n_cells: int = 4096
    branches: int = 40
    tol: float = 1e-8
    max_iter: int = 10_000
    merge_eps: float = 1e-6
    scheme: str = "ulam"


@dataclass(frozen=True)
class SweepSpec:
    family: str
    start: float = 0.125
    ratio: float = 0.5
    count: int = 8
    n_cells: Optional[int] = None
    tol: Optional[float] = None
    branches: Optional[int] = None

    @property
    def deltas(self) -> list:
        return [self.start * self.ratio ** k for k in range(self.count)]


@dataclass(frozen=True)
class RunConfig:
    command: str
    system: Optional[dict] = None
    numerics: Numerics = field(default_factory=Numerics)
    sweep: Optional[SweepSpec] = None
    output_dir: str = "skewstab-out"
    seed: int = 0
    trials: int = 3
    input: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"command": self.command, "numerics": asdict(self.numerics), "output_dir": self.output_dir,
             "seed": self.seed, "trials": self.trials}
        if self.system is not None:
            d["system"] = self.system
        if self.sweep is not None:
            s = self.sweep
            d["sweep"] = {"family": s.family, "deltas": {"start": s.start, "ratio": s.ratio, "count": s.count}}
            for key in ("n_cells", "tol", "branches"):
                if getattr(s, key) is not None:
                    d["sweep"][key] = getattr(s, key)
        if self.input is not None:
            d["input"] = self.input
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# parsing


def _get(doc: dict, key: str, path: str, kind, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"{path}{key}: required field is missing")
        return default
    val = doc[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"{path}{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _parse_numerics(doc) -> Numerics:
    if doc is None:
        return Numerics()
    if not isinstance(doc, dict):
        raise ConfigError("numerics: expected an object")
    d = Numerics()
    n = _get(doc, "n_cells", "numerics.", int, d.n_cells)
    if n < 16 or n & (n - 1):
        raise ConfigError(f"numerics.n_cells: {n} is not a power of two >= 16")
    branches = _get(doc, "branches", "numerics.", int, d.branches)
    if branches < 1:
        raise ConfigError("numerics.branches: must be >= 1")
    tol = _get(doc, "tol", "numerics.", float, d.tol)
    if not tol > 0:
        raise ConfigError("numerics.tol: must be positive")
    max_iter = _get(doc, "max_iter", "numerics.", int, d.max_iter)
    if max_iter < 1:
        raise ConfigError("numerics.max_iter: must be >= 1")
    eps = _get(doc, "merge_eps", "numerics.", float, d.merge_eps)
    if not eps >= 0:
        raise ConfigError("numerics.merge_eps: must be non-negative")
    scheme = _get(doc, "scheme", "numerics.", str, d.scheme)
    if scheme not in SCHEMES:
        raise ConfigError(f"numerics.scheme: {scheme!r} not one of {list(SCHEMES)}")
    unknown = set(doc) - {"n_cells", "branches", "tol", "max_iter", "merge_eps", "scheme"}
    if unknown:
        raise ConfigError(f"numerics: unknown fields {sorted(unknown)}")
    return Numerics(n, branches, tol, max_iter, eps, scheme)


def _check_system(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("system: expected an object")
    m = doc.get("map")
    if m is None:
        raise ConfigError("system.map: required field is missing")
    if isinstance(m, str):
        if m not in MAP_FIXTURES:
            raise ConfigError(f"system.map: unknown fixture {m!r}; available: {sorted(MAP_FIXTURES)}")
    elif not isinstance(m, dict) or "branches" not in m:
        raise ConfigError("system.map: expected a fixture name or an object with 'branches'")
    f = doc.get("fiber")
    if f is None:
        raise ConfigError("system.fiber: required field is missing")
    if not isinstance(f, dict) or "type" not in f:
        raise ConfigError("system.fiber: expected an object with 'type'")
    if f["type"] not in FIBER_FIXTURES:
        raise ConfigError(f"system.fiber.type: unknown fixture {f['type']!r}; available: {list(FIBER_FIXTURES)}")
    if "params" in f and not isinstance(f["params"], dict):
        raise ConfigError("system.fiber.params: expected an object")
    return doc


def _parse_sweep(doc) -> SweepSpec:
    if not isinstance(doc, dict):
        raise ConfigError("sweep: expected an object")
    fam = _get(doc, "family", "sweep.", str, required=True)
    if fam not in FAMILIES:
        raise ConfigError(f"sweep.family: unknown family {fam!r}; available: {sorted(FAMILIES)}")
    dl = doc.get("deltas", {})
    if not isinstance(dl, dict):
        raise ConfigError("sweep.deltas: expected an object {start, ratio, count}")
    start = _get(dl, "start", "sweep.deltas.", float, 0.125)
    ratio = _get(dl, "ratio", "sweep.deltas.", float, 0.5)
    count = _get(dl, "count", "sweep.deltas.", int, 8)
    if not (0 < start < 1 and 0 < ratio < 1 and count >= 1):
        raise ConfigError("sweep.deltas: need 0 < start < 1, 0 < ratio < 1, count >= 1")
    n = _get(doc, "n_cells", "sweep.", int, None)
    if n is not None and (n < 16 or n & (n - 1)):
        raise ConfigError(f"sweep.n_cells: {n} is not a power of two >= 16")
    tol = _get(doc, "tol", "sweep.", float, None)
    if tol is not None and not tol > 0:
        raise ConfigError("sweep.tol: must be positive")
    branches = _get(doc, "branches", "sweep.", int, None)
    return SweepSpec(fam, start, ratio, count, n, tol, branches)


def parse_config(text: str) -> RunConfig:
    """Validate a JSON run configuration and fill defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    numerics = _parse_numerics(doc.get("numerics"))
    command = _get(doc, "command", "", str, required=True)
    if command not in COMMANDS:
        raise ConfigError(f"command: {command!r} not one of {list(COMMANDS)}")
    system = _check_system(doc["system"]) if "system" in doc else None
    sweep = _parse_sweep(doc["sweep"]) if "sweep" in doc else None
    if command in ("invariant", "rate") and system is None:
        raise ConfigError("system: required for command " + command)
    if command == "norms" and system is None and "input" not in doc:
        raise ConfigError("system: required for command norms unless 'input' names a measure file")
    if command == "verify" and system is None and sweep is None:
        raise ConfigError("system: required for command verify (or give a sweep section)")
    if command == "sweep" and sweep is None:
        raise ConfigError("sweep: required for command sweep")
    seed = _get(doc, "seed", "", int, 0)
    trials = _get(doc, "trials", "", int, 3)
    if trials < 1:
        raise ConfigError("trials: must be >= 1")
    out = _get(doc, "output_dir", "", str, "skewstab-out")
    inp = _get(doc, "input", "", str, None)
    unknown = set(doc) - {"command", "system", "numerics", "sweep", "seed", "trials", "output_dir", "input"}
    if unknown:
        raise ConfigError(f"config: unknown fields {sorted(unknown)}")
    return RunConfig(command, system, numerics, sweep, out, seed, trials, inp)


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def export_csv(report, path, columns=None) -> Path:
    """Write rows as CSV with a header and 17 significant digits.

    ``report`` is a sequence of dicts, a dict ``{"columns", "rows"}`` or an
    object with ``csv_rows()`` and ``CSV_COLUMNS``.
    """
    if hasattr(report, "csv_rows"):
        rows, columns = report.csv_rows(), columns or list(report.CSV_COLUMNS)
    elif isinstance(report, dict):
        rows, columns = report.get("rows", []), columns or report.get("columns")
    else:
        rows = list(report)
    if columns is None:
        if not rows:
            raise ValueError("cannot infer CSV columns from an empty report")
        columns = list(rows[0])
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def build_system(cfg: RunConfig) -> SkewProduct:
    sysd = cfg.system
    m = sysd["map"]
    fmap = get_map(m, cfg.numerics.branches) if isinstance(m, str) else map_from_json(m)
    gm = fiber_from_spec(sysd["fiber"], fmap)
    return SkewProduct(fmap, gm, scheme=cfg.numerics.scheme)


def _init(cfg: RunConfig):
    from .transfer import default_init

    mu = default_init(cfg.numerics.n_cells)
    if cfg.numerics.merge_eps != mu.merge_eps:
        mu = DiscretizedMeasure.from_atoms(mu.n_cells, mu.cells, mu.y, mu.w, cfg.numerics.merge_eps)
    return mu


def _solve(cfg: RunConfig, F: SkewProduct):
    try:
        return fixed_point(F, _init(cfg), cfg.numerics.tol, cfg.numerics.max_iter, track_norms=True), True
    except FixedPointError as exc:
        log.warning("%s", exc)
        return exc.result, False


def _fixed_point_outputs(out: Path, cfg: RunConfig, F: SkewProduct, res) -> dict:
    mu = res.measure
    stats = mu.cell_stats()
    cols = ["cell", "x", "density", "mass", "mean", "w1_to_delta0"]
    export_csv([{c: stats[c][j] for c in cols} for j in range(mu.n_cells)], out / "marginal.csv", cols)
    hcols = ["n", "residual", "l1", "s1", "variation"]
    export_csv(res.history, out / "residuals.csv", hcols)
    (out / "measure.json").write_text(mu.to_json() + "\n")
    info = {"fixed_point": res.summary(), "tail_bound": F.tail_bound, "constants": F.constants.as_dict(),
            "measure_file": "measure.json", "cap_error": mu.cap_error}
    if cfg.system and cfg.system.get("map") == "gauss":
        info["l1_to_gauss_density"] = float(np.abs(mu.cell_mass - gauss_density(mu.n_cells).values).mean())
    return info


def cmd_invariant(cfg: RunConfig, out: Path):
    F = build_system(cfg)
    res, ok = _solve(cfg, F)
    info = _fixed_point_outputs(out, cfg, F, res)
    line = f"invariant: residual={res.residual:.3e} iterations={res.iterations}"
    if "l1_to_gauss_density" in info:
        line += f" l1_to_gauss_density={info['l1_to_gauss_density']:.3e}"
    return ok, info, line


def cmd_norms(cfg: RunConfig, out: Path):
    info = {}
    ok = True
    if cfg.input:
        mu = DiscretizedMeasure.from_json(Path(cfg.input).read_text())
        info["source"] = cfg.input
    else:
        F = build_system(cfg)
        res, ok = _solve(cfg, F)
        mu = res.measure
        info["source"] = "invariant measure"
        info["fixed_point"] = res.summary()
    rep = norm_s1(mu)
    info["norms"] = rep.as_dict()
    stats = mu.cell_stats()
    cols = ["cell", "x", "density", "mass", "mean", "w1_to_delta0"]
    export_csv([{c: stats[c][j] for c in cols} for j in range(mu.n_cells)], out / "marginal.csv", cols)
    return ok, info, f"norms: l1={rep.l1:.6g} s1={rep.s1:.6g} variation={rep.variation:.6g}"


def _family(cfg: RunConfig):
    s = cfg.sweep
    return get_family(s.family, s.branches or cfg.numerics.branches)


def cmd_sweep(cfg: RunConfig, out: Path):
    s = cfg.sweep
    fam = _family(cfg)
    rep = stability_sweep(fam, s.deltas, n_cells=s.n_cells or cfg.numerics.n_cells,
                          tol=s.tol or cfg.numerics.tol, max_iter=cfg.numerics.max_iter, seed=cfg.seed)
    export_csv(rep, out / "sweep.csv")
    ok = all(r.converged for r in rep.rows)
    verdict = "PASS" if rep.passed else "FAIL"
    return ok, {"sweep": rep.as_dict()}, f"sweep {fam.name}: {verdict} ({rep.reason})"


def cmd_verify(cfg: RunConfig, out: Path):
    info = {}
    parts = []
    if cfg.system is not None:
        F = build_system(cfg)
        report = check_map_class(F.base, 1).as_dict()
        info["map_class"] = report
        if F.base.kind == "pre":
            info["map_class_iterate"] = check_map_class(F.base).as_dict()
        info["constants"] = F.constants.as_dict()
        parts.append(f"H3 k={F.constants.k} alpha4={F.constants.alpha4:.4g}")
    if cfg.sweep is not None:
        fam = _family(cfg)
        deltas = cfg.sweep.deltas
        info["u_conditions"] = verify_u_conditions(fam, [0.0] + deltas)
        info["a_conditions"] = verify_a_conditions(fam, [0.0] + deltas, n_cells=min(cfg.numerics.n_cells, 1024))
        u_ok = all(r["u21_ok"] and r["u22_ok"] and r["u23_ok"] for r in info["u_conditions"])
        a = info["a_conditions"]
        parts.append(f"U {'ok' if u_ok else 'violated'}, A1 {'ok' if a['a1_ok'] else 'violated'}, "
                     f"A2 {'ok' if a['a2_ok'] else 'violated'}")
    return True, info, "verify: " + "; ".join(parts)


def cmd_rate(cfg: RunConfig, out: Path):
    F = build_system(cfg)
    res, ok = _solve(cfg, F)
    fit = estimate_rate(F, res.measure, cfg.trials, seed=cfg.seed)
    info = {"fixed_point": res.summary(), "rate": fit.as_dict()}
    if not fit.decay_observed:
        return False, info, f"rate: no decay observed (factor {fit.rho2:.4g})"
    return ok, info, f"rate: rho2={fit.rho2:.4f}"


COMMAND_TABLE = {"invariant": cmd_invariant, "norms": cmd_norms, "sweep": cmd_sweep,
                 "verify": cmd_verify, "rate": cmd_rate}


def _set_threads():
    val = os.environ.get("SKEWSTAB_THREADS")
    if not val:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(val), numba.config.NUMBA_NUM_THREADS)))
    except (ValueError, ImportError):
        log.warning("ignoring SKEWSTAB_THREADS=%r", val)


def run(cfg: RunConfig, out_dir: Optional[str] = None) -> int:
    """Execute a validated configuration; returns the process exit status."""
    _set_threads()
    out = Path(out_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = {"config": cfg.to_dict(), "command": cfg.command}
    try:
        ok, info, line = COMMAND_TABLE[cfg.command](cfg, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        report.update(status="error", partial=True, error=str(exc))
        _write_json(out / "report.json", report)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DecayError, SkewstabError) as exc:
        report.update(status="numeric_failure", partial=True, error=str(exc))
        _write_json(out / "report.json", report)
        print(f"{cfg.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report.update(info)
    report.update(status="ok" if ok else "non_converged", partial=not ok)
    _write_json(out / "report.json", report)
    print(line)
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="skewstab", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text()
        doc = json.loads(text)
        if isinstance(doc, dict):
            doc.setdefault("command", args.command)
            if doc["command"] != args.command:
                raise ConfigError(f"command: config says {doc['command']!r} but {args.command!r} was requested")
        cfg = parse_config(json.dumps(doc))
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
