"""Command-line entry point.

    deepedmd generate --preset desk-scale --set system=pendulum --out runs/pend
    deepedmd train    --config runs/pend/config.txt
    deepedmd evaluate --out runs/pend --baseline dmd

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, config, dynamics, training
from .errors import InvalidArgument, NumericError, SamplingError

log = logging.getLogger("deepedmd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_dataset(cfg):
    path = cfg.dataset_dir
    if not (path / "train.bin").exists():
        raise CliError(EXIT_IO, f"dataset not found: {path}")
    return dynamics.read_dataset(path)


def _load_checkpoint(cfg):
    path = cfg.checkpoint_path
    if not path.exists():
        raise CliError(EXIT_IO, f"checkpoint not found: {path}")
    return training.load_checkpoint(path)


def _write_csv(path, rows, fieldnames=None):
    fieldnames = fieldnames or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# -- subcommands ---------------------------------------------------------------------


def cmd_generate(cfg):
    ds = dynamics.sample_dataset(cfg.system_spec, cfg.counts, cfg.seed)
    out = cfg.dataset_dir
    files = dynamics.write_dataset(ds, out)
    manifest = {
        "system": cfg.system,
        "seed": cfg.seed,
        "counts": dict(zip(dynamics.SPLITS, cfg.counts)),
        "rng": "numpy PCG64, SeedSequence(seed, spawn_key=(index,)) per trajectory",
        "sha256": {p.name: _sha256(p) for p in files if p.suffix == ".bin"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {sum(cfg.counts)} trajectories to {out}")
    return EXIT_OK


def cmd_train(cfg):
    ds = _load_dataset(cfg)
    if ds.system != cfg.system:
        raise CliError(EXIT_CONFIG, f"dataset system {ds.system!r} != configured {cfg.system!r}")
    log_path = cfg.out_dir / "metrics.jsonl"
    if log_path.exists():
        log_path.unlink()

    def progress(epoch, rec):
        log.info("epoch %d train %.4e val %.4e", epoch, rec["train_total"], rec["val_total"])

    ckpt = training.train(ds, cfg.hyper(), log_path=log_path, progress=progress)
    training.save_checkpoint(ckpt, cfg.checkpoint_path)
    print(f"checkpoint: {cfg.checkpoint_path} (epoch {ckpt.epoch})")
    if ckpt.failed:
        print(f"training diverged: {ckpt.failure}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _pick_trajectories(cfg, ds, states):
    if cfg.traj >= 0:
        if cfg.traj >= len(states):
            raise CliError(EXIT_CONFIG, f"traj={cfg.traj} but test split has {len(states)}")
        return [cfg.traj]
    n = min(cfg.n_export, len(states))
    if cfg.system == "pendulum":
        return [int(i) for i in analysis.near_separatrix(states, n, ds.scale)]
    return list(range(n))


def cmd_evaluate(cfg):
    ds = _load_dataset(cfg)
    ckpt = _load_checkpoint(cfg)
    if ckpt.system != ds.system:
        raise CliError(EXIT_CONFIG, f"checkpoint system {ckpt.system!r} != dataset {ds.system!r}")
    out = cfg.out_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    t_pred = cfg.prediction_time
    report = training.evaluate(ckpt, ds.test, t_pred=t_pred, use_best=cfg.use_best)
    summaries = [report.summary("dldmd")]
    _write_csv(out / "per_trajectory.csv", report.rows)
    eigs = analysis.eig_report(report.results, cfg.band)
    analysis.write_eigenvalues_csv(out / "eigenvalues.csv", eigs)

    picks = _pick_trajectories(cfg, ds, ds.test)
    analysis.write_trajectory_csv(
        out / "predictions.csv", ds.dt,
        [(i, report.truths[i], report.predictions[i]) for i in picks],
    )
    traj = dynamics.Trajectory(ds.test[picks[0]], ds.dt, ds.system)
    phase, latent = analysis.spectral_comparison(ckpt, traj, use_best=cfg.use_best)
    _write_spectra(out, phase, latent)

    if cfg.baseline == "dmd":
        base = training.evaluate(ckpt, ds.test, t_pred=t_pred, model="dmd")
        summaries.append(base.summary("dmd"))
        _write_csv(out / "dmd_per_trajectory.csv", base.rows)
    _write_csv(out / "summary.csv", summaries)
    (out / "summary.json").write_text(json.dumps(summaries, indent=2) + "\n")
    for s in summaries:
        print(f"{s['model']}: mean MSE {s['mean_mse']:.3e} (log10 {s['log10_mse']:.2f}), "
              f"extended {s['mean_mse_extended']:.3e}")
    return EXIT_OK


def _write_spectra(out, phase, latent):
    analysis.write_spectra_csv(out / "spectra_phase.csv", phase,
                               [f"x{i + 1}" for i in range(phase.n_coords)])
    analysis.write_spectra_csv(out / "spectra_latent.csv", latent,
                               [f"z{i + 1}" for i in range(latent.n_coords)])
    analysis.write_concentration_csv(out / "concentration.csv", {"phase": phase, "latent": latent})


def cmd_predict(cfg):
    ds = _load_dataset(cfg)
    ckpt = _load_checkpoint(cfg)
    out = cfg.out_dir / "predict"
    out.mkdir(parents=True, exist_ok=True)
    items, rows = [], []
    for i in _pick_trajectories(cfg, ds, ds.test):
        traj = dynamics.Trajectory(ds.test[i], ds.dt, ds.system)
        pred, mse = analysis.predict_beyond(ckpt, traj, cfg.prediction_time, use_best=cfg.use_best)
        truth = training.extended_truth(cfg.system_spec, traj.states, ckpt.scale, len(pred) - 1)
        items.append((i, truth, pred.states))
        rows.append({"traj_id": i, "mse": mse})
    analysis.write_trajectory_csv(out / "predictions.csv", ds.dt, items)
    _write_csv(out / "mse.csv", rows)
    print(f"mean extended-horizon MSE {np.mean([r['mse'] for r in rows]):.3e} "
          f"over {len(rows)} trajectories")
    return EXIT_OK


def cmd_spectra(cfg):
    ds = _load_dataset(cfg)
    ckpt = _load_checkpoint(cfg)
    out = cfg.out_dir / "spectra"
    out.mkdir(parents=True, exist_ok=True)
    i = _pick_trajectories(cfg, ds, ds.test)[0]
    phase, latent = analysis.spectral_comparison(
        ckpt, dynamics.Trajectory(ds.test[i], ds.dt, ds.system), use_best=cfg.use_best)
    _write_spectra(out, phase, latent)
    print(f"trajectory {i}: phase concentration {np.round(phase.concentration, 3).tolist()}, "
          f"latent {np.round(latent.concentration, 3).tolist()}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "spectra": cmd_spectra,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="deepedmd", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--preset", choices=config.PRESETS)
    parser.add_argument("--system", choices=sorted(dynamics.SYSTEMS))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--baseline", choices=["dmd"])
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> config.RunConfig:
    file_values = config.read_config_file(args.config) if args.config else {}
    overrides = config.parse_pairs(args.set, "--set")
    for key in ("preset", "system", "seed", "out", "threads", "epochs", "baseline"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return config.resolve(file_values, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / "config.txt").write_text(cfg.dumps())
        with threadpool_limits(limits=cfg.threads or None):
            return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SamplingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
