"""Command-line entry point: ``stochl96 <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import config as cfgmod
from .dataset import generate_truth, load_dataset, measure_subgrid_tendency, save_dataset
from .dynamics import PRESETS, preset
from .evaluation import ForecastConfig, climate_experiment, forecast_experiment, forecast_truth
from .models import fit_derivative_models, load_model, save_model
from .pod import compute_pod, load_basis, save_basis
from .report import ClimateRecord, ForecastRecord, load_record, save_record, write_report
from .training import TrainConfig, TrainingAborted, train

log = logging.getLogger("stochl96")


def _dataset(args):
    if args.data:
        return load_dataset(args.data)
    log.info("generating %s truth data with seed %d", args.case, args.data_seed)
    return generate_truth(preset(args.case), args.data_seed)


def _basis(args, ds):
    if getattr(args, "basis", None):
        return load_basis(args.basis)
    return compute_pod(measure_subgrid_tendency(ds))


def _file_config(args) -> dict:
    if getattr(args, "config", None):
        return cfgmod.read_config(args.config)
    return {"train": {}, "forecast": {}}


def _train_config(args, **extra) -> TrainConfig:
    over = {"n_steps": args.nt, "alpha": args.alpha, "seed": args.seed, "epochs": args.epochs,
            "form": args.form, "batches_per_epoch": args.batches, "learning_rate": args.lr,
            "members": getattr(args, "train_members", args.members)}
    over.update(extra)
    return cfgmod.build(TrainConfig, _file_config(args)["train"], over)


def _forecast_config(args, **extra) -> ForecastConfig:
    over = {"members": args.members, "n_initial_conditions": args.n_ic,
            "horizon_mtu": args.horizon, "seed": args.seed}
    over.update(extra)
    return cfgmod.build(ForecastConfig, _file_config(args)["forecast"], over)


def _out_file(path: str) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _load_models(paths) -> dict:
    models = {}
    for p in paths:
        name, sep, path = p.partition("=")
        if not sep:
            path, name = p, os.path.splitext(os.path.basename(p))[0]
        models[name] = load_model(path)
    return models


# -- commands -----------------------------------------------------------------------

def cmd_generate(args):
    p = preset(args.case)
    ds = generate_truth(p, args.seed, spinup_mtu=args.spinup, production_mtu=args.production)
    save_dataset(ds, _out_file(args.out))
    log.info("wrote %d snapshots to %s", ds.n_snapshots, args.out)


def cmd_fit(args):
    ds = load_dataset(args.data)
    fit = fit_derivative_models(ds)
    os.makedirs(args.out, exist_ok=True)
    save_basis(fit.basis, os.path.join(args.out, "pod_basis.bin"))
    for name, model in fit.models().items():
        save_model(model, os.path.join(args.out, f"{name}.bin"))
    summary = {"coefficients": fit.coeffs.tolist(), "S2": fit.variance, "phi": fit.phi,
               "pod_lambdas": fit.basis.lambdas.tolist(), "pod_autocorr": fit.basis.autocorr.tolist()}
    with open(os.path.join(args.out, "fit.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_train(args):
    ds = _dataset(args)
    cfg = _train_config(args)
    try:
        res = train(cfg, ds, _basis(args, ds), out_dir=args.out)
    except TrainingAborted as exc:
        log.error("%s", exc)
        return 3
    save_model(res.model, os.path.join(args.out, "model.bin"), {"n_steps": cfg.n_steps, "alpha": cfg.alpha})
    res.history.write_csv(os.path.join(args.out, "loss.csv"))
    i, f = res.history.initial_and_final()
    log.info("smoothed loss %.5g -> %.5g; best validation epoch %d", i, f, res.best_epoch)
    return 0


def cmd_forecast(args):
    ds = load_dataset(args.data)
    fc = _forecast_config(args, perturbation=args.fraction if args.perturbed else None)
    truth = forecast_truth(ds.params, fc)
    series = forecast_experiment(_load_models(args.models), truth, fc,
                                 variance=ds.perturbation_scale(), F=ds.params.F)
    save_record(ForecastRecord(args.case, fc.perturbation > 0, series), _out_file(args.out))


def cmd_climate(args):
    ds = load_dataset(args.data)
    res = climate_experiment(_load_models(args.models), ds, args.length, seed=args.seed)
    save_record(ClimateRecord.of(args.case, args.length, res), _out_file(args.out))


def cmd_alpha_sweep(args):
    ds = _dataset(args)
    basis = _basis(args, ds)
    fc = _forecast_config(args)
    truth = forecast_truth(ds.params, fc)
    models = {}
    os.makedirs(args.out, exist_ok=True)
    for a in args.alphas:
        cfg = _train_config(args, alpha=a)
        sub = os.path.join(args.out, f"alpha_{a:g}")
        try:
            res = train(cfg, ds, basis, out_dir=sub)
        except TrainingAborted as exc:
            log.error("alpha=%g: %s", a, exc)
            return 3
        res.history.write_csv(os.path.join(sub, "loss.csv"))
        save_model(res.model, os.path.join(sub, "model.bin"), {"n_steps": cfg.n_steps, "alpha": a})
        models[f"{res.model.name}{cfg.n_steps}_alpha{a:g}"] = res.model
    series = forecast_experiment(models, truth, fc, variance=ds.perturbation_scale(), F=ds.params.F)
    save_record(ForecastRecord(args.case, False, series), os.path.join(args.out, "forecast.json"))
    return 0


def cmd_report(args):
    write_report([load_record(p) for p in args.inputs], args.out)


# -- parser -------------------------------------------------------------------------------

def _add_data(p, required=False):
    p.add_argument("--data", required=required, help="truth dataset file")
    p.add_argument("--case", choices=sorted(PRESETS), default="c4")


def _add_train(p):
    p.add_argument("--form", choices=["ou", "mult"])
    p.add_argument("--nt", type=int, help="steps per training trajectory")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int, help="batches per epoch")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--data-seed", type=int, default=1, help="seed for generated truth data")
    p.add_argument("--basis", help="POD basis file (computed from the data if absent)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochl96", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="integrate the two-scale system and store slow snapshots")
    p.add_argument("--case", choices=sorted(PRESETS), default="c4")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--spinup", type=float, default=1500.0, help="MTU")
    p.add_argument("--production", type=float, default=500.0, help="MTU")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="derivative-fitting baselines and POD basis")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="CRPS trajectory learning of a coupled OU model")
    _add_data(p)
    _add_train(p)
    p.add_argument("--members", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="ensemble forecasts from held-out initial conditions")
    _add_data(p, required=True)
    p.add_argument("models", nargs="+", help="model files, optionally NAME=PATH")
    p.add_argument("--perturbed", action="store_true", help="perturb the initial conditions")
    p.add_argument("--fraction", type=float, default=0.1, help="perturbation variance as a fraction of S^2")
    p.add_argument("--members", type=int)
    p.add_argument("--n-ic", type=int)
    p.add_argument("--horizon", type=float, help="MTU")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="experiment record (JSON)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("climate", help="long-run histograms and distances to the truth")
    _add_data(p, required=True)
    p.add_argument("models", nargs="+", help="model files, optionally NAME=PATH")
    p.add_argument("--length", type=float, default=3000.0, help="MTU")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="experiment record (JSON)")
    p.set_defaults(func=cmd_climate)

    p = sub.add_parser("alpha-sweep", help="train and forecast for several spread weights")
    _add_data(p)
    _add_train(p)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--members", type=int, help="forecast ensemble size")
    p.add_argument("--train-members", type=int, help="training ensemble size")
    p.add_argument("--n-ic", type=int)
    p.add_argument("--horizon", type=float, help="MTU")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_alpha_sweep, form="mult", nt=8)

    p = sub.add_parser("report", help="metric CSVs and summary from experiment records")
    p.add_argument("inputs", nargs="*", help="experiment records")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
