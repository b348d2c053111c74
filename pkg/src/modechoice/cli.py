"""Command-line front end: fit, crossval, interpret, synth, compare.

Exit status: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import interpret as I
from .config import ConfigError, RunConfig, load_config
from .dataset import DataError, align_to_layout, load_long, to_wide
from .evaluation import cross_validate, job_seed, write_cv_report
from .logit import write_coefficient_report, x_standardized
from .models import TrainedModel, train
from .serialize import FormatError, load_model, save_model
from .synth import SynthConfig, flat_tail_config, mixl_config, mnl_config, nonlinear_config, write_synth

log = logging.getLogger("modechoice")

PRESETS = {"mnl": mnl_config, "mixl": mixl_config, "nonlinear": nonlinear_config, "flat_tail": flat_tail_config}


class ValidationError(Exception):
    """Bad input detected before or during a run; maps to exit status 1."""


def _dump_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _clean(v.item())
    return v


def _load_data(cfg: RunConfig):
    if not cfg.data:
        raise ValidationError("config has no 'data' path")
    path = cfg.resolve(cfg.data)
    if not path.exists():
        raise ValidationError(f"data file not found: {path}")
    try:
        return load_long(path, cfg.schema or None, cfg.features)
    except DataError as e:
        raise ValidationError(str(e)) from None


def _models_dir(cfg: RunConfig, out: Path) -> Path:
    return cfg.resolve(cfg.interpret.model_dir) if cfg.interpret.model_dir else out / "models"


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig, out: Path, ds=None) -> dict:
    ds = ds if ds is not None else _load_data(cfg)
    if not cfg.models:
        raise ValidationError("config lists no models")
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    header = cfg.header_lines()
    meta = {"header": header}
    summary = {}
    for i, spec in enumerate(cfg.models):
        log.info("fitting %s (%s)", spec.name, spec.kind)
        tm = train(spec, ds, seed=job_seed(cfg.seed, i, 0))
        entry = {"kind": spec.kind, "params": spec.resolved()}
        if spec.is_logit:
            tm.model = x_standardized(tm.model, ds)
            write_coefficient_report(tm.model, out / f"coefficients_{spec.name}.csv", header)
            entry.update(converged=tm.model.converged, ll=tm.model.ll_convergence, message=tm.model.message)
        save_model(tm, mdir / f"{spec.name}.json", meta)
        summary[spec.name] = entry
    _dump_json(_clean({"_meta": header, "models": summary}), out / "fit.json")
    return summary


def cmd_crossval(cfg: RunConfig, out: Path, ds=None):
    ds = ds if ds is not None else _load_data(cfg)
    if not cfg.models:
        raise ValidationError("config lists no models")
    report = cross_validate(cfg.models, ds, k=cfg.cv.k, seed=cfg.seed, n_jobs=cfg.jobs,
                            person_level=cfg.cv.person_level)
    write_cv_report(report, out, cfg.header_lines())
    return report


def _check_columns(cfg: RunConfig, tm: TrainedModel, name: str):
    cols = set(tm.layout.col_names)
    for r in [*cfg.interpret.pd, *cfg.interpret.sensitivity]:
        if r.feature not in cols:
            raise ValidationError(f"model {name!r} has no column {r.feature!r}")
        if r.target not in tm.layout.alt_names:
            raise ValidationError(f"unknown target alternative {r.target!r}")
    ref = cfg.interpret.value_of_time
    if ref and ref not in cols:
        raise ValidationError(f"value_of_time reference {ref!r} is not a column of model {name!r}")


def _delta_text(r) -> str:
    return r.label or repr(float(r.delta))


def cmd_interpret(cfg: RunConfig, out: Path, ds=None) -> dict:
    ds = ds if ds is not None else _load_data(cfg)
    mdir = _models_dir(cfg, out)
    names = cfg.interpret.models or [m.name for m in cfg.models]
    if not names:
        raise ValidationError("no models to interpret")
    trained = {}
    for n in names:
        path = mdir / f"{n}.json"
        if not path.exists():
            raise ValidationError(f"model file not found: {path} (run 'fit' first)")
        try:
            trained[n] = load_model(path)
        except FormatError as e:
            raise ValidationError(str(e)) from None
    header = cfg.header_lines()
    out.mkdir(parents=True, exist_ok=True)
    rows = {}
    for n, tm in trained.items():
        _check_columns(cfg, tm, n)
        try:
            rows[n] = to_wide(align_to_layout(ds, tm.layout), tm.layout)
        except DataError as e:
            raise ValidationError(f"model {n!r}: {e}") from None
    doc = {"_meta": header, "importance": None, "partial_dependence": {}, "sensitivity": {},
           "value_of_time": {}, "notes": [
               "neural-network importance uses Garson's weight decomposition",
               "tree importance is total Gini decrease scaled to sum to 100",
               "logit importance ranks |beta_std_x| per wide column",
               "constrained sensitivity drops rows whose perturbed value leaves the training range"]}

    if cfg.interpret.importance:
        usable = {n: tm.model for n, tm in trained.items() if tm.spec.kind != "nb"}
        if usable:
            layout = next(iter(trained.values())).layout
            table = I.importance_table(usable, layout=layout)
            I.write_importance_csv(table, out / "importance.csv", header)
            doc["importance"] = [{"variable": f, **r} for f, r in table]

    for req in cfg.interpret.pd:
        k = trained[names[0]].layout.alt_names.index(req.target)
        w0 = rows[names[0]]
        grid = np.asarray(req.grid, dtype=float) if req.grid is not None \
            else I.default_grid(w0, req.feature, req.n_points)
        for n, tm in trained.items():
            curve = I.partial_dependence(tm.predictor, rows[n], req.feature, grid, k)
            I.write_pd_csv([curve], out / f"pd_{req.feature}_{n}.csv", header)
            doc["partial_dependence"].setdefault(req.feature, {})[n] = {
                "grid": curve.grid.tolist(), "probability": curve.values.tolist(), "target": req.target}

    for n, tm in trained.items():
        if not cfg.interpret.sensitivity:
            break
        results, effects = [], {"all": {}, "constrained": {}}
        for req in cfg.interpret.sensitivity:
            k = tm.layout.alt_names.index(req.target)
            spec = I.SensitivitySpec(req.feature, float(req.delta), k, req.constrained, req.label)
            fn = I.marginal_effect if req.kind == "marginal" else I.arc_elasticity
            est = fn(tm.predictor, rows[n], spec)
            variant = f"{req.kind}{'_constrained' if req.constrained else ''}"
            results.append({"variable": req.feature, "delta": _delta_text(req), "estimate": est,
                            "variant": variant, "target": req.target})
            if req.kind == "marginal":
                effects["constrained" if req.constrained else "all"][req.feature] = est
        ref = cfg.interpret.value_of_time
        vot = {}
        for variant, eff in effects.items():
            if ref and ref in eff and eff[ref] != 0:
                ratios = I.value_of_time_ratio(eff, ref)
                vot[variant] = ratios
                results.extend({"variable": f, "delta": f"per {ref}", "estimate": r,
                                "variant": f"value_of_time{'_constrained' if variant == 'constrained' else ''}"}
                               for f, r in ratios.items())
        I.write_sensitivity_csv(results, out / f"sensitivity_{n}.csv", header)
        doc["sensitivity"][n] = results
        doc["value_of_time"][n] = vot
    _dump_json(_clean(doc), out / "interpret.json")
    return doc


def synth_config(cfg: RunConfig) -> SynthConfig:
    raw = dict(cfg.synth or {})
    preset = raw.pop("preset", None)
    try:
        if preset is not None:
            if preset not in PRESETS:
                raise ValidationError(f"unknown synth preset {preset!r} (choose from {', '.join(PRESETS)})")
            raw.pop("seed", None)
            return PRESETS[preset](**raw, seed=cfg.seed)
        raw["seed"] = cfg.seed
        return SynthConfig(**raw)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"synth: {e}") from None


def cmd_synth(cfg: RunConfig, out: Path):
    scfg = synth_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ds, truth = write_synth(scfg, out / "data.csv", out / "truth.json", cfg.header_lines())
    return ds, truth


def cmd_compare(cfg: RunConfig, out: Path):
    ds = _load_data(cfg)
    cmd_crossval(cfg, out, ds)
    cmd_fit(cfg, out, ds)
    if cfg.interpret.model_dir is None:
        cfg.interpret.model_dir = str((out / "models").resolve())
    return cmd_interpret(cfg, out, ds)


COMMANDS = {"fit": cmd_fit, "crossval": cmd_crossval, "interpret": cmd_interpret,
            "synth": cmd_synth, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modechoice", description="Mode-choice model comparison toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML or JSON run configuration")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--jobs", type=int, help="parallel workers (overrides the config)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if cfg.seed is None:
            raise ValidationError("a seed is required (config 'seed' or --seed)")
        if cfg.jobs == 0:
            raise ValidationError("--jobs must be nonzero")
        out = Path(cfg.out) if args.out is not None else cfg.resolve(cfg.out)
        COMMANDS[args.command](cfg, out)
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001  any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def run(argv=None):
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
