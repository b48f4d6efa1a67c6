"""Command line entry point: preflect check | reflect | verify | plot."""

from __future__ import annotations

import json
import os
import sys
import warnings

import click

from .curve_core import load_curve
from .curves import CURVES
from .errors import IOFailure, NumericalError, PreflectError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_WARNING = 0, 2, 3, 4


def read_config(path: str) -> dict:
    """key = value lines; '#' starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise click.BadParameter(f"{path}:{n}: expected key = value")
                k, v = (s.strip() for s in line.split("=", 1))
                out[k.replace("-", "_")] = v
    except OSError as exc:
        raise click.BadParameter(str(exc)) from exc
    return out


def _apply_config(ctx: click.Context, params: dict) -> dict:
    """Fill parameters left at their defaults from --config; explicit flags win."""
    path = params.pop("config", None)
    if not path:
        return params
    cfg = read_config(path)
    for name, value in cfg.items():
        if name not in params:
            raise click.BadParameter(f"unknown config key {name!r}")
        src = ctx.get_parameter_source(name)
        if src in (click.core.ParameterSource.DEFAULT, None):
            opt = next(p for p in ctx.command.params if p.name == name)
            params[name] = opt.type_cast_value(ctx, value)
    return params


def _curve(spec: str):
    if os.path.exists(spec):
        return load_curve(spec), os.path.splitext(os.path.basename(spec))[0]
    if spec in CURVES:
        return CURVES[spec](), spec
    raise IOFailure(f"no curve file or built-in curve named {spec!r}")


def _fail(exc: PreflectError) -> int:
    stage = f"[{exc.stage}] " if exc.stage else ""
    click.echo(f"error: {stage}{type(exc).__name__}: {exc}", err=True)
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_VALIDATION


def _run(fn) -> int:
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fn()
    except (ValidationError, IOFailure, NumericalError, PreflectError) as exc:
        return _fail(exc)
    ours = [w for w in caught if w.category.__module__.startswith("preflect")]
    for w in ours:
        click.echo(f"warning: {w.category.__name__}: {w.message}", err=True)
    return EXIT_WARNING if ours else EXIT_OK


config_option = click.option("--config", type=click.Path(dir_okay=False), default=None,
                             help="key = value file mirroring the flags; flags win.")


@click.group(help="Build and certify p-reflections across Jordan curves. "
                  "The exponent p may be raised slightly for a given curve; no computation relies on that.")
def main():
    pass


@main.command(help="Validate a curve and screen its bounded side for subhyperbolicity.")
@click.argument("curve")
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--mesh", "mesh_h", type=float, default=0.05, show_default=True,
              help="Graph spacing relative to the curve diameter.")
@click.option("--pairs", type=int, default=48, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@config_option
@click.pass_context
def check(ctx, **params):
    params = _apply_config(ctx, params)

    def go():
        from .metrics import classify_subhyperbolic

        curve, name = _curve(params["curve"])
        rep = classify_subhyperbolic(curve, "interior", params["alpha"], params["pairs"],
                                     params["mesh_h"] * curve.diameter, seed=params["seed"])
        click.echo(json.dumps({"curve": name, "vertices": curve.n, "alpha": rep.alpha, "C_est": rep.C_est,
                               "go_ratio": rep.go_ratio, "pairs": rep.pair_samples}, sort_keys=True))

    ctx.exit(_run(go))


@main.command(help="Build the reflection and write report.json, cells.csv, mesh.json and SVG plots.")
@click.argument("curve")
@click.option("--p", type=float, default=1.5, show_default=True)
@click.option("--r", type=float, default=1.25, show_default=True)
@click.option("--kmax", "k_max", type=int, default=4, show_default=True)
@click.option("--eps", type=float, default=0.1, show_default=True)
@click.option("--grid", type=int, default=8, show_default=True)
@click.option("--mesh", "mesh_h", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="preflect_out", show_default=True)
@click.option("--no-plots", is_flag=True, default=False)
@config_option
@click.pass_context
def reflect(ctx, **params):
    params = _apply_config(ctx, params)

    def go():
        from .verify import PipelineConfig, emit_plots, run_pipeline, write_reports

        no_plots = params.pop("no_plots")
        spec = params.pop("curve")
        cfg = PipelineConfig(**params)  # validated before any work
        curve, name = _curve(spec)
        art = run_pipeline(cfg, curve, name)
        write_reports(art, cfg.out_dir)
        if not no_plots:
            emit_plots(cfg.out_dir)
        d = art.report["distortion"]
        click.echo(f"K99 forward {d['quantiles']['q99']:.4g}, inverse {d['inverse_quantiles']['q99']:.4g} "
                   f"(q = {d['q']:g}); report in {cfg.out_dir}")
        for w in art.warnings:
            # re-issue so that the exit code reflects them
            cls, _, msg = w.partition(": ")
            warnings.warn(msg or cls, _warning_class(cls))

    ctx.exit(_run(go))


def _warning_class(name: str):
    from . import errors

    return getattr(errors, name, UserWarning)


@main.command(help="Recompute distortion statistics for a finished run at a new grid density.")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--grid", type=int, default=8, show_default=True)
@click.pass_context
def verify(ctx, run_dir, grid):
    def go():
        from .curve_core import validate_curve
        from .verify import PipelineConfig, distortion_report, dumps, run_pipeline

        try:
            with open(os.path.join(run_dir, "config.json")) as fh:
                cfgd = json.load(fh)
            with open(os.path.join(run_dir, "curve.json")) as fh:
                cj = json.load(fh)
        except (OSError, ValueError) as exc:
            raise IOFailure(f"cannot read run: {exc}") from exc
        cfg = PipelineConfig(**cfgd)
        art = run_pipeline(cfg, validate_curve(cj["vertices"]), cj.get("name", "curve"), full_audits=False)
        rep, _ = distortion_report(art.reflection, grid)
        out = {"grid": grid, "distortion": rep.to_dict(), "assembly": art.report["assembly"]}
        try:
            with open(os.path.join(run_dir, "verify.json"), "w") as fh:
                fh.write(dumps(out) + "\n")
        except OSError as exc:
            raise IOFailure(str(exc)) from exc
        click.echo(f"grid {grid}: K99 forward {rep.quantiles['q99']:.4g}, inverse {rep.inverse_quantiles['q99']:.4g}")

    ctx.exit(_run(go))


@main.command(help="Redraw the SVG plots of a finished run.")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_context
def plot(ctx, run_dir):
    def go():
        from .verify import emit_plots

        for p in emit_plots(run_dir):
            click.echo(p)

    ctx.exit(_run(go))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
