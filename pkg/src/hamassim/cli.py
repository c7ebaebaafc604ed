"""Command-line pipeline: generate -> train -> predict -> filter -> evaluate.

Artifacts live under the configured output root:

    dataset/      train/val/test.csv + manifest.json
    models/       <name>.json checkpoints + <name>.history.csv
    predictions/  <name>.<scenario>.csv open-loop rollouts
    filter/       <name>.<scenario>.csv belief tracks
    reports/      comparison.csv, summary.txt, plot-ready series tables

Every command validates its configuration before touching the filesystem
and writes outputs atomically.  Identical config and seed give
byte-identical artifacts.

The perturbed-initial scenario draws the initial mean error from
N(0, P0) with the filter's P0, seeded per trajectory, so predict, filter,
and evaluate all see the same perturbations and the filter prior is
consistent with the actual error.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import evaluation, systems, training, ukf
from .config import RunConfig, load_config
from .errors import ConfigInvalid, HamassimError, MissingArtifact, NonFiniteState
from .integrators import Trajectory
from .io_utils import atomic_savetxt, atomic_write_text
from .models import Predictor, MlpParams, load_checkpoint, rollout_batch, save_checkpoint
from .training import TrajectoryDataset, load_dataset

DATASET_ENERGY_GATE = 1e-8


def _log(message: str) -> None:
    print(f"[hamassim] {message}", flush=True)


def model_name(kind: str, window: int) -> str:
    return f"{kind}{window}" if kind == "ahnn" else kind


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, jobs: int = 1) -> None:
    system = cfg.system_spec()
    stepper = cfg.stepper_spec()
    params = cfg.generate_params()
    _log(f"generating {params['count']} trajectories ({params['n_steps']} steps, dt={params['dt']})")
    ds = training.generate_dataset(
        system,
        count=params["count"],
        n_steps=params["n_steps"],
        dt=params["dt"],
        seed=params["seed"],
        stepper=stepper,
        jobs=jobs,
    )
    outdir = os.path.join(cfg.out_dir, "dataset")
    training.save_dataset(ds, outdir)
    _log(f"dataset written to {outdir} (seed {params['seed']})")


def _load_pipeline_dataset(cfg: RunConfig) -> TrajectoryDataset:
    path = os.path.join(cfg.out_dir, "dataset")
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise MissingArtifact(f"no dataset at {path}; run `hamassim generate` first")
    return load_dataset(path)


def cmd_train(cfg: RunConfig, jobs: int = 1) -> None:
    params = cfg.train_params()
    ds = _load_pipeline_dataset(cfg)
    spread = training.dataset_energy_spread(ds)
    if spread > DATASET_ENERGY_GATE:
        raise ConfigInvalid(
            f"dataset energy spread {spread:.3e} exceeds the {DATASET_ENERGY_GATE} sanity gate"
        )
    kind = params["model"]
    window = params["config"].window
    name = model_name(kind, window)
    dim = 2 * ds.system.dof
    hidden = params["hidden"]
    out_dim = 1 if kind in ("hnn", "ahnn") else dim
    init_rng = np.random.default_rng([params["config"].seed, _kind_tag(kind), window])
    predictor = Predictor(
        kind=kind,
        net=MlpParams.init([dim] + hidden + [out_dim], init_rng),
        norm=ds.norm,
        dt=ds.dt,
        substeps=params["substeps"],
        window=window,
        seed=params["config"].seed,
        system=training._system_to_dict(ds.system),
    )
    _log(f"training {name} for {params['config'].epochs} epochs (seed {params['config'].seed})")
    trained, history = training.train(predictor, ds, params["config"])
    models_dir = os.path.join(cfg.out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    save_checkpoint(trained, os.path.join(models_dir, f"{name}.json"))
    rows = np.column_stack(
        [
            np.arange(len(history["train"])),
            history["lr"],
            history["train"],
            history["val"],
        ]
    )
    atomic_savetxt(
        os.path.join(models_dir, f"{name}.history.csv"),
        rows,
        ["%d", "%.17g", "%.17g", "%.17g"],
        "epoch,lr,train_loss,val_loss",
    )
    final_val = history["val"][-1] if history["val"] else float("nan")
    _log(f"{name}: best checkpoint written (final val loss {final_val:.3e}, pruned={history['pruned']})")


def _kind_tag(kind: str) -> int:
    return {"mlp": 1, "node": 2, "hnn": 3, "ahnn": 4}[kind]


def _checkpoints(cfg: RunConfig, requested: list) -> list[tuple[str, Predictor]]:
    models_dir = os.path.join(cfg.out_dir, "models")
    if requested:
        paths = [os.path.join(models_dir, f"{name}.json") for name in requested]
        for p in paths:
            if not os.path.exists(p):
                raise MissingArtifact(f"no checkpoint {p}")
    else:
        paths = sorted(glob.glob(os.path.join(models_dir, "*.json")))
        if not paths:
            raise MissingArtifact(f"no checkpoints under {models_dir}; run `hamassim train` first")
    return [(os.path.splitext(os.path.basename(p))[0], load_checkpoint(p)) for p in paths]


def _test_ids(ds: TrajectoryDataset, count: int) -> np.ndarray:
    ids = ds.splits["test"]
    return ids if count == 0 else ids[:count]


def _perturbed_starts(ds, test_ids, p0: np.ndarray, seed: int) -> np.ndarray:
    from .linalg import cholesky_lower

    root = cholesky_lower(p0)
    starts = np.empty((len(test_ids), 2 * ds.system.dof))
    for row, traj_id in enumerate(test_ids):
        rng = np.random.default_rng([seed, int(traj_id), 17])
        starts[row] = ds.states[traj_id, 0] + root @ rng.standard_normal(p0.shape[0])
    return starts


def _scenarios(requested: str) -> list[str]:
    return ["true", "perturbed"] if requested == "both" else [requested]


def cmd_predict(cfg: RunConfig, jobs: int = 1) -> None:
    params = cfg.predict_params()
    ds = _load_pipeline_dataset(cfg)
    test_ids = _test_ids(ds, params["count"])
    p0 = cfg.p0_matrix(ds.system.dof)
    outdir = os.path.join(cfg.out_dir, "predictions")
    os.makedirs(outdir, exist_ok=True)
    for name, predictor in _checkpoints(cfg, params["models"]):
        for scenario in _scenarios(params["scenario"]):
            if scenario == "true":
                starts = ds.states[test_ids, 0]
            else:
                starts = _perturbed_starts(ds, test_ids, p0, params["seed"])
            try:
                block = rollout_batch(predictor, starts, ds.n_steps)
            except NonFiniteState:
                _log(f"{name}/{scenario}: rollout diverged; skipping prediction file")
                continue
            _write_trajectory_csv(
                os.path.join(outdir, f"{name}.{scenario}.csv"), test_ids, block, ds.dt
            )
            _log(f"{name}/{scenario}: wrote open-loop rollouts for {len(test_ids)} test trajectories")


def _write_trajectory_csv(path, traj_ids, block, dt) -> None:
    m, n_samples, dim = block.shape
    dof = dim // 2
    rows = np.empty((m * n_samples, 3 + dim))
    for j in range(m):
        sl = rows[j * n_samples : (j + 1) * n_samples]
        sl[:, 0] = traj_ids[j]
        sl[:, 1] = np.arange(n_samples)
        sl[:, 2] = np.arange(n_samples) * dt
        sl[:, 3:] = block[j]
    header = ",".join(
        ["traj_id", "step", "t"]
        + [f"q{i + 1}" for i in range(dof)]
        + [f"p{i + 1}" for i in range(dof)]
    )
    atomic_savetxt(path, rows, ["%d", "%d"] + ["%.17g"] * (1 + dim), header)


def cmd_filter(cfg: RunConfig, jobs: int = 1) -> None:
    params = cfg.filter_params()
    ds = _load_pipeline_dataset(cfg)
    dof = ds.system.dof
    test_ids = _test_ids(ds, int(params["count"]))
    p0 = cfg.p0_matrix(dof)
    meas_var = float(params["meas_sigma"]) ** 2
    obs = systems.position_only(dof, noise_cov=meas_var * np.eye(dof))
    ukf_config = ukf.UkfConfig(
        ut=ukf.UtConfig(float(params["alpha"]), float(params["beta"]), float(params["kappa"])),
        process_noise=float(params["process_noise"]) * np.eye(2 * dof),
        obs=obs,
        update_every=int(params["update_every"]),
    )
    outdir = os.path.join(cfg.out_dir, "filter")
    os.makedirs(outdir, exist_ok=True)
    for name, predictor in _checkpoints(cfg, params["models"]):
        for scenario in _scenarios(params["scenario"]):
            rows = []
            for row, traj_id in enumerate(test_ids):
                truth = ds.states[traj_id]
                if scenario == "true":
                    start = truth[0]
                else:
                    start = _perturbed_starts(ds, [traj_id], p0, int(params["seed"]))[0]
                meas_rng = np.random.default_rng([int(params["seed"]), int(traj_id), 29])
                measurements = {}
                for step in range(ukf_config.update_every, ds.n_steps + 1, ukf_config.update_every):
                    measurements[step] = systems.observe(obs, truth[step], meas_rng)
                belief0 = ukf.GaussianBelief(start, p0)
                track = ukf.run_filter(predictor, ukf_config, belief0, measurements, ds.n_steps)
                for item in track:
                    mean = item.belief.mean
                    var = np.diag(item.belief.cov)
                    two_sigma = 2.0 * np.sqrt(var)
                    rows.append(
                        np.concatenate(
                            [
                                [traj_id, item.step, item.step * ds.dt],
                                mean,
                                var,
                                mean - two_sigma,
                                mean + two_sigma,
                                [1.0 if item.updated else 0.0],
                            ]
                        )
                    )
            dim = 2 * dof
            header = ",".join(
                ["traj_id", "step", "t"]
                + [f"mean_{i + 1}" for i in range(dim)]
                + [f"var_{i + 1}" for i in range(dim)]
                + [f"lo2s_{i + 1}" for i in range(dim)]
                + [f"hi2s_{i + 1}" for i in range(dim)]
                + ["updated"]
            )
            fmt = ["%d", "%d"] + ["%.17g"] * (1 + 4 * dim) + ["%d"]
            atomic_savetxt(os.path.join(outdir, f"{name}.{scenario}.csv"), np.array(rows), fmt, header)
            _log(f"{name}/{scenario}: filtered {len(test_ids)} trajectories")


def cmd_evaluate(cfg: RunConfig, jobs: int = 1) -> None:
    params = cfg.evaluate_params()
    ds = _load_pipeline_dataset(cfg)
    dof = ds.system.dof
    test_ids = _test_ids(ds, params["count"])
    truth = ds.states[test_ids]
    times = np.arange(ds.n_steps + 1) * ds.dt
    p0 = cfg.p0_matrix(dof)
    filter_seed = int(cfg.filter_params()["seed"])
    reports = os.path.join(cfg.out_dir, "reports")
    os.makedirs(reports, exist_ok=True)

    comparison_rows = []
    energy_rows = []
    energy_columns = {"true": systems.hamiltonian_batch(ds.system, truth[0])}
    for name, predictor in _checkpoints(cfg, params["models"]):
        for scenario in ("true", "perturbed"):
            if scenario == "true":
                starts = truth[:, 0, :]
            else:
                starts = _perturbed_starts(ds, test_ids, p0, filter_seed)
            try:
                block = rollout_batch(predictor, starts, ds.n_steps)
                pos, pos_series = evaluation.rmse(block, truth, "pos")
                vel, vel_series = evaluation.rmse(block, truth, "vel")
            except NonFiniteState:
                block = None
                pos = vel = float("inf")
                pos_series = vel_series = None
            comparison_rows.append(
                {"model": name, "scenario": scenario, "mode": "open", "pos_rmse": pos, "vel_rmse": vel}
            )
            if pos_series is not None:
                win = params["sma_window"]
                sma_pos = evaluation.sma(pos_series, win)
                sma_vel = evaluation.sma(vel_series, win)
                atomic_savetxt(
                    os.path.join(reports, f"sma_{name}_{scenario}.csv"),
                    np.column_stack([times, sma_pos.values, sma_vel.values]),
                    ["%.17g"] * 3,
                    "t,pos_rmse_sma,vel_rmse_sma",
                )
            if scenario == "true" and block is not None:
                rmses = []
                for j in range(block.shape[0]):
                    _, e_rmse = evaluation.energy_series(ds.system, Trajectory(times, block[j]))
                    rmses.append(e_rmse)
                energy_rows.append({"model": name, "energy_rmse": float(np.mean(rmses))})
                energy_columns[name] = systems.hamiltonian_batch(ds.system, block[0])

            ukf_csv = os.path.join(cfg.out_dir, "filter", f"{name}.{scenario}.csv")
            if os.path.exists(ukf_csv):
                pos, vel = _filter_rmse(ukf_csv, ds, dof)
                comparison_rows.append(
                    {"model": name, "scenario": scenario, "mode": "ukf", "pos_rmse": pos, "vel_rmse": vel}
                )

    csv_text, summary_text = evaluation.compare_report(comparison_rows)
    atomic_write_text(os.path.join(reports, "comparison.csv"), csv_text)
    energy_lines = ["model,energy_rmse"] + [
        f"{r['model']},{r['energy_rmse']:.17g}" for r in energy_rows
    ]
    atomic_write_text(os.path.join(reports, "energy_rmse.csv"), "\n".join(energy_lines) + "\n")
    names = list(energy_columns)
    atomic_savetxt(
        os.path.join(reports, "energy_series.csv"),
        np.column_stack([times] + [energy_columns[n] for n in names]),
        ["%.17g"] * (1 + len(names)),
        ",".join(["t"] + names),
    )
    summary_text += "\nenergy RMSE (true Hamiltonian, true-initial open loop):\n"
    for r in energy_rows:
        summary_text += f"  {r['model']:<8s} {r['energy_rmse']:.6e}\n"
    atomic_write_text(os.path.join(reports, "summary.txt"), summary_text)
    _log(f"reports written under {reports}")


def _filter_rmse(path: str, ds: TrajectoryDataset, dof: int) -> tuple[float, float]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = raw[:, 0].astype(int)
    steps = raw[:, 1].astype(int)
    means = raw[:, 3 : 3 + 2 * dof]
    truth = ds.states[ids, steps]
    err = means - truth
    pos = float(np.sqrt(np.mean(err[:, :dof] ** 2)))
    vel = float(np.sqrt(np.mean(err[:, dof:] ** 2)))
    return pos, vel


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "filter": cmd_filter,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hamassim",
        description="Learn Hamiltonian dynamics from trajectories and assimilate measurements with a UKF.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "build trajectory datasets"),
        ("train", "train one predictor (mlp|node|hnn|ahnn)"),
        ("predict", "open-loop rollouts from true or perturbed initial states"),
        ("filter", "run the NN-driven UKF with simulated measurements"),
        ("evaluate", "RMSE/SMA/energy tables and the comparison report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override every section's seed")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for data generation")
        p.add_argument("--out", default=None, help="override the artifact output root")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        COMMANDS[args.command](cfg, jobs=args.jobs)
    except HamassimError as exc:
        print(f"[hamassim] error: {exc}", file=sys.stderr, flush=True)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
