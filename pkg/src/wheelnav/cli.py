"""Command-line entry point: simulate, mechanize, prepare, train, eval, compare.

Every subcommand resolves its configuration as defaults < JSON config file <
flags, writes its artifacts under ``--out`` and records a ``manifest.json``
(resolved config, seed, artifact hashes). A manifest is itself accepted as
``--config`` to rerun the same job.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.
"""

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import dataio, evalkit, mechanizer, simkit, wminet
from .core import Trajectory
from .errors import ConfigError, DataError, UsageError, WheelNavError
from .tensornet import file_sha256

log = logging.getLogger("wheelnav")

MANIFEST = "manifest.json"
WHEEL_TAGS = {"front": ["wheel-front"], "rear": ["wheel-rear"], "both": ["wheel-front", "wheel-rear"]}

DEFAULTS = {
    "simulate": {
        "trajectory": {"speed": 0.4, "amplitude": 0.3, "frequency": 0.2, "duration": 60.0, "heading": 0.0,
                       "stationary": 0.0, "ramp": None},
        "noise": True,
        "geometry": None,
        "rate_hz": 120.0,
        "wheels": ["wheel-front", "wheel-rear"],
        "chassis": True,
        "alpha0": 0.0,
        "gravity": mechanizer.DEFAULT_GRAVITY,
        "trial": "sim",
    },
    "mechanize": {
        "dataset": None,
        "wheel": "both",
        "planar_2d": True,
        "gravity": mechanizer.DEFAULT_GRAVITY,
        "alpha0": "auto",
        "sync": True,
        "reorthonormalize_every": 1000,
        "geometry": None,
    },
    "prepare": {
        "dataset": None,
        "wheel": "both",
        "window": 120,
        "stride": None,
        "sync": True,
        "speed_threshold": 0.05,
        "test_trials": [],
        "geometry": None,
    },
    "train": {
        "dataset": None,
        "wheel": "front",
        "loss": "mse",
        "hyperparams": {"learning_rate": 0.002, "batch_size": 128, "epochs": 400, "window_size": 120,
                        "val_fraction": 0.1},
        "model": {"head_conv1": [16, [3, 5]], "head_conv2": [16, [1, 5]], "trunk_conv": [32, [1, 5]],
                  "fc_sizes": [512, 32]},
        "wc": {"alpha": 0.5, "beta": 0.4, "gamma": 0.1, "d": 0.192, "penalty": "signed", "shared": False},
    },
    "eval": {
        "dataset": None,
        "wheel": "front",
        "checkpoint": None,
        "wc_checkpoint": None,
        "methods": ["WMIN", "WMINet", "WMINet with WC", "MoRPINet (oracle distance)"],
        "sync": True,
        "madgwick_beta": 0.1,
        "geometry": None,
        "planar_2d": True,
    },
    "compare": {
        "reports": [],
        "method_a": None,
        "method_b": None,
        "reference": True,
    },
}

SEEDED = ("simulate", "train")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="wheelnav", description="Wheel-mounted inertial navigation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="JSON config file or a previous run's manifest.json")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="root random seed")
        if dataset:
            sp.add_argument("--dataset", action="append", help="input path (repeatable)")
        return sp

    s = common(sub.add_parser("simulate", help="write a synthetic session"), dataset=False)
    s = common(sub.add_parser("mechanize", help="model-based dead reckoning of wheel IMUs"))
    s.add_argument("--wheel", choices=sorted(WHEEL_TAGS))
    s = common(sub.add_parser("prepare", help="cut training windows from sessions"))
    s.add_argument("--wheel", choices=sorted(WHEEL_TAGS))
    s.add_argument("--window", type=int)
    s = common(sub.add_parser("train", help="train the displacement network"))
    s.add_argument("--wheel", choices=sorted(WHEEL_TAGS))
    s.add_argument("--loss", choices=["mse", "wc"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int, dest="batch_size")
    s.add_argument("--lr", type=float)
    s.add_argument("--window", type=int)
    s = common(sub.add_parser("eval", help="score methods on test sessions"))
    s.add_argument("--wheel", choices=sorted(WHEEL_TAGS))
    s.add_argument("--checkpoint", help="single-wheel model checkpoint")
    s.add_argument("--wc-checkpoint", dest="wc_checkpoint", help="wheelbase-constrained model checkpoint")
    s = common(sub.add_parser("compare", help="side-by-side PRMSE of two methods"), dataset=False)
    s.add_argument("reports", nargs="*", help="report CSV files (one holding both methods, or one per method)")
    return p


# -- configuration -------------------------------------------------------


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path, command):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "subcommand" in data and "config" in data:  # a manifest
        if data["subcommand"] != command:
            raise ConfigError(f"{path} is a {data['subcommand']} manifest, not {command}")
        cfg = dict(data["config"])
        if data.get("seed") is not None:
            cfg["seed"] = data["seed"]
        return cfg
    return data


def resolve_config(args):
    command = args.command
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg["seed"] = None
    if args.config:
        extra = load_config(args.config, command)
        unknown = set(extra) - set(cfg) - {"out"}
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg = _merge(cfg, extra)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "dataset", None):
        cfg["dataset"] = args.dataset if len(args.dataset) > 1 else args.dataset[0]
    for key in ("wheel", "loss", "checkpoint", "wc_checkpoint"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    if command == "train":
        hp = cfg["hyperparams"]
        for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate"),
                          ("window", "window_size")):
            if getattr(args, flag, None) is not None:
                hp[key] = getattr(args, flag)
    elif command == "prepare" and args.window is not None:
        cfg["window"] = args.window
    if command == "compare" and args.reports:
        cfg["reports"] = args.reports
    if args.out:
        cfg["out"] = args.out
    if not cfg.get("out"):
        raise UsageError("--out is required")
    if command in SEEDED and cfg["seed"] is None:
        raise UsageError(f"{command} needs a seed (--seed or 'seed' in the config)")
    if command in SEEDED and not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def _build(cls, values, what):
    """Dataclass from a config object, rejecting unknown keys."""
    if not isinstance(values, dict):
        raise ConfigError(f"{what} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**values)


def _datasets(cfg):
    ds = cfg.get("dataset")
    if not ds:
        raise UsageError("--dataset is required")
    paths = [ds] if isinstance(ds, str) else list(ds)
    for p in paths:
        if not os.path.exists(p):
            raise DataError(f"dataset path not found: {p}")
    return paths


def _session_dirs(paths):
    """Expand directories of sessions into session directories."""
    out = []
    for p in paths:
        if os.path.isfile(os.path.join(p, "session.ini")):
            out.append(p)
            continue
        subs = sorted(os.path.join(p, d) for d in os.listdir(p)
                      if os.path.isfile(os.path.join(p, d, "session.ini")))
        if not subs:
            raise DataError(f"no session.ini under {p}")
        out.extend(subs)
    return out


def _geometry(cfg, session=None):
    g = cfg.get("geometry")
    if g is None:
        if session is not None and session.geometry is not None:
            return session.geometry
        return simkit.WheelGeometry()
    if isinstance(g, str):
        return dataio.read_geometry(g)
    kw = dict(g)
    if "lever_arms" in kw:
        kw["lever_arms"] = {k: tuple(v) for k, v in kw["lever_arms"].items()}
    return _build(simkit.WheelGeometry, kw, "geometry")


def write_manifest(out, command, cfg, artifacts):
    hashes = {os.path.relpath(a, out): file_sha256(a) for a in sorted(artifacts)}
    manifest = {
        "tool": "wheelnav",
        "subcommand": command,
        "seed": cfg.get("seed"),
        "config": {k: v for k, v in cfg.items() if k != "seed"},
        "artifacts": hashes,
    }
    path = os.path.join(out, MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _tree(root):
    files = []
    for d, _, names in os.walk(root):
        files.extend(os.path.join(d, n) for n in names if n != MANIFEST)
    return files


def _load_session(path, cfg):
    session = dataio.load_session(path)
    geometry = _geometry(cfg, session)
    session = dataio.RecordingSession(session.imu_streams, session.gnss, session.metadata, geometry)
    if cfg.get("sync", True):
        session = dataio.synchronize(session)
        log.info("%s: clock offsets %s", path, session.offsets)
    return session


# -- subcommands ---------------------------------------------------------


def cmd_simulate(cfg):
    out = cfg["out"]
    tr = dict(cfg["trajectory"])
    spec = _build(simkit.PeriodicTrajSpec, tr, "trajectory")
    noise = cfg["noise"]
    if noise is True:
        noise = simkit.ImuNoiseSpec(seed=cfg["seed"])
    elif isinstance(noise, dict):
        noise = _build(simkit.ImuNoiseSpec, {**noise, "seed": cfg["seed"]}, "noise")
    elif noise in (False, None):
        noise = None
    else:
        raise ConfigError("noise must be true, false or an object of noise magnitudes")
    geometry = _geometry(cfg)
    gt, streams = simkit.simulate_session(
        spec, geometry, noise, wheels=tuple(cfg["wheels"]), chassis=cfg["chassis"],
        alpha0=cfg["alpha0"], rate=cfg["rate_hz"], gravity=cfg["gravity"],
    )
    simkit.write_session(gt, streams, out, geometry, trial=str(cfg["trial"]))
    write_manifest(out, "simulate", cfg, _tree(out))
    print(f"wrote session to {out}: {len(gt.t) - 1} IMU samples per stream, streams {', '.join(streams)}")
    return 0


def _mechanize_wheel(session, wheel, cfg):
    imu = session.imu_streams[wheel]
    track = session.gnss_track()
    wt = dataio.wheel_ground_truth(track, session.geometry, wheel)
    inside = (wt.t >= imu.t[0] - 1e-9) & (wt.t <= imu.t[-1] + 1e-9)
    if np.count_nonzero(inside) < 2:
        raise DataError(f"{wheel}: GNSS and IMU time spans do not overlap")
    gt = Trajectory(wt.t[inside], wt.xy[inside])
    state = mechanizer.initial_state_from_track(gt)
    if gt.t[0] > imu.t[0]:
        k = int(np.searchsorted(imu.t, gt.t[0] - 0.5 / imu.rate_hz))
        imu = imu.slice(k, len(imu))
    alpha0 = cfg["alpha0"]
    if alpha0 == "auto":
        alpha0 = mechanizer.phase_from_gravity(imu)
    mc = mechanizer.MechanizerConfig(
        dt=1.0 / imu.rate_hz, gravity=cfg["gravity"], planar_2d=cfg["planar_2d"], initial_state=state,
        alpha0=float(alpha0), reorthonormalize_every=cfg["reorthonormalize_every"],
    )
    return mechanizer.mechanize(imu, mc), gt


def cmd_mechanize(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts, reports, lines = [], [], []
    for path in _session_dirs(_datasets(cfg)):
        session = _load_session(path, cfg)
        name = str(session.metadata.get("trial", os.path.basename(os.path.normpath(path))))
        for wheel in WHEEL_TAGS[cfg["wheel"]]:
            if wheel not in session.imu_streams:
                raise DataError(f"{path}: no IMU stream {wheel!r}")
            est, gt = _mechanize_wheel(session, wheel, cfg)
            rep = evalkit.evaluate({f"WMIN {wheel}": est}, gt, name)[0]
            reports.append(rep)
            end = float(np.linalg.norm(est.at(gt.t[-1:])[0] - gt.xy[-1]))
            lines.append(f"{name} {wheel}: endpoint error {end:.4f} m, PRMSE {rep.prmse:.4f} m, "
                         f"TDE {rep.tde:.2f} %, length {rep.length:.3f} m")
            tpath = os.path.join(out, f"trajectory-{name}-{wheel}.csv")
            evalkit.write_trajectory_csv(est, tpath)
            artifacts.append(tpath)
    reports = evalkit.with_averages(reports)
    csv_path = os.path.join(out, "report.csv")
    evalkit.write_report_csv(reports, csv_path)
    text = evalkit.format_table(reports) + "\n\n" + "\n".join(lines) + "\n"
    txt_path = os.path.join(out, "report.txt")
    with open(txt_path, "w") as fh:
        fh.write(text)
    write_manifest(out, "mechanize", cfg, artifacts + [csv_path, txt_path])
    print(text, end="")
    return 0


def _windows_name(split, wheel):
    return f"{split}-{wheel}.windows"


def cmd_prepare(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    test_trials = {str(t) for t in cfg["test_trials"]}
    window = int(cfg["window"])
    intervals = window // wminet.SAMPLES_PER_INTERVAL
    if window % wminet.SAMPLES_PER_INTERVAL:
        raise ConfigError(f"window must be a multiple of {wminet.SAMPLES_PER_INTERVAL} samples")
    buckets = {}
    for path in _session_dirs(_datasets(cfg)):
        session = _load_session(path, cfg)
        split = "test" if str(session.metadata.get("trial")) in test_trials else "train"
        for wheel in WHEEL_TAGS[cfg["wheel"]]:
            wins = dataio.make_windows(session, wheel, window=window, stride=cfg["stride"], intervals=intervals,
                                       speed_threshold=cfg["speed_threshold"])
            buckets.setdefault((split, wheel), []).extend(wins)
            log.info("%s %s: %d windows", path, wheel, len(wins))
    artifacts = []
    for (split, wheel), wins in sorted(buckets.items()):
        if not wins:
            log.warning("no %s windows for %s", split, wheel)
            continue
        p = os.path.join(out, _windows_name(split, wheel))
        dataio.save_windows(p, wins)
        artifacts.append(p)
        print(f"{split} {wheel}: {len(wins)} windows -> {p}")
    if not artifacts:
        raise DataError("no windows produced from the given sessions")
    write_manifest(out, "prepare", cfg, artifacts)
    return 0


def _load_windows(path, wheel):
    if os.path.isdir(path):
        p = os.path.join(path, _windows_name("train", wheel))
        if not os.path.exists(p):
            raise DataError(f"missing window container {p}")
        return dataio.load_windows(p)
    wins = dataio.load_windows(path)
    return [w for w in wins if w.wheel == wheel] or wins


def cmd_train(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = cfg["seed"]
    hpc = cfg["hyperparams"]
    hp = wminet.TrainHyperparams(
        learning_rate=float(hpc["learning_rate"]), batch_size=int(hpc["batch_size"]), epochs=int(hpc["epochs"]),
        window_size=int(hpc["window_size"]), val_fraction=float(hpc["val_fraction"]), seed=seed,
    )
    mc = dict(cfg["model"])
    window = hp.window_size
    if window % wminet.SAMPLES_PER_INTERVAL:
        raise ConfigError(f"window must be a multiple of {wminet.SAMPLES_PER_INTERVAL} samples")
    mconf = wminet.ModelConfig.from_dict({**mc, "window": window, "intervals": window // wminet.SAMPLES_PER_INTERVAL,
                                          "seed": seed})
    paths = _datasets(cfg)
    if len(paths) != 1:
        raise UsageError("train takes one --dataset (a prepare output directory or a window file)")
    path = paths[0]
    if cfg["loss"] == "wc":
        w = dict(cfg["wc"])
        shared = bool(w.pop("shared", False))
        weights = _build(wminet.WcWeights, w, "wc")
        front = _load_windows(path, "wheel-front")
        rear = _load_windows(path, "wheel-rear")
        data = dataio.pair_windows(front, rear)
        if not data:
            raise DataError("no time-matched front/rear window pairs for wheelbase-constrained training")
        model = wminet.WcModel.build(mconf, shared)
        kind = "wc"
    elif cfg["loss"] == "mse":
        weights = None
        data = []
        for wheel in WHEEL_TAGS[cfg["wheel"]]:
            data.extend(_load_windows(path, wheel))
        model = wminet.build_model(mconf)
        kind = "single"
    else:
        raise ConfigError(f"unknown loss {cfg['loss']!r}")
    for item in data[:1]:
        win = item.front if kind == "wc" else item
        if win.acc.shape[-1] != window:
            raise ConfigError(f"windows hold {win.acc.shape[-1]} samples but the window size is {window}")
    log.info("training %s on %d items for %d epochs", kind, len(data), hp.epochs)
    model, history = wminet.train(model, data, hp, loss=kind, wc=weights)
    ckpt = os.path.join(out, "model.ckpt")
    wminet.save_checkpoint(ckpt, model, {"loss": cfg["loss"], "wheel": cfg["wheel"], "seed": seed})
    logp = os.path.join(out, "loss.log")
    history.write(logp)
    write_manifest(out, "train", cfg, [ckpt, logp])
    first, last = history.train[0], history.train[-1]
    print(f"trained {hp.epochs} epochs on {len(data)} items: loss {first:.6g} -> {last:.6g}; checkpoint {ckpt}")
    return 0


def _span_truth(track, t0, t1):
    keep = (track.t >= t0 - 1e-6) & (track.t <= t1 + 1e-6)
    return Trajectory(track.t[keep], track.xy[keep])


def cmd_eval(cfg):
    out = cfg["out"]
    os.makedirs(os.path.join(out, "trajectories"), exist_ok=True)
    methods = list(cfg["methods"])
    single = wminet.load_checkpoint(cfg["checkpoint"]) if cfg.get("checkpoint") else None
    if isinstance(single, wminet.WcModel):
        raise ConfigError("--checkpoint holds a wheelbase-constrained model; pass it as --wc-checkpoint")
    wc = wminet.load_checkpoint(cfg["wc_checkpoint"]) if cfg.get("wc_checkpoint") else None
    if wc is not None and not isinstance(wc, wminet.WcModel):
        raise ConfigError("--wc-checkpoint does not hold a wheelbase-constrained model")
    reports, artifacts = [], []
    for i, path in enumerate(_session_dirs(_datasets(cfg))):
        session = _load_session(path, cfg)
        name = str(session.metadata.get("trial", f"Traj. {i + 1}"))
        track = session.gnss_track()
        for wheel in WHEEL_TAGS[cfg["wheel"]]:
            wt = dataio.wheel_ground_truth(track, session.geometry, wheel)
            estimates, truths = {}, {}
            if "WMIN" in methods:
                est, gt = _mechanize_wheel(session, wheel, {**DEFAULTS["mechanize"], **cfg, "alpha0": "auto",
                                                            "reorthonormalize_every": 1000})
                estimates["WMIN"], truths["WMIN"] = est, gt
            for label, model in (("WMINet", single), ("WMINet with WC", wc)):
                if label not in methods or model is None:
                    continue
                if isinstance(model, wminet.WcModel):
                    model = model.front if wheel == "wheel-front" else model.rear
                window = model.config.window
                wins = dataio.make_windows(session, wheel, window=window, intervals=model.config.intervals)
                if not wins:
                    raise DataError(f"{path}: no windows for {wheel}")
                origin = wt.at([wins[0].t_start])[0]
                est = wminet.infer_trajectory(model, wins, origin)
                estimates[label] = est
                truths[label] = _span_truth(wt, est.t[0], est.t[-1])
            for method, est in estimates.items():
                rep = evalkit.evaluate({method: est}, truths[method], name)[0]
                reports.append(rep)
                p = os.path.join(out, "trajectories", f"{method.replace(' ', '_')}-{name}-{wheel}.csv")
                evalkit.write_trajectory_csv(est, p)
                artifacts.append(p)
        label = "MoRPINet (oracle distance)"
        if label in methods and "chassis" in session.imu_streams:
            chassis = session.imu_streams["chassis"]
            span = dataio.motion_span(track)
            if span is not None:
                sub = Trajectory(track.t[span[0]: span[1] + 1], track.xy[span[0]: span[1] + 1])
                est = evalkit.morpinet_oracle(sub, chassis, cfg["madgwick_beta"])
                reports.append(evalkit.evaluate({label: est}, sub, name)[0])
                p = os.path.join(out, "trajectories", f"MoRPINet-{name}.csv")
                evalkit.write_trajectory_csv(est, p)
                artifacts.append(p)
    if not reports:
        raise ConfigError("nothing to evaluate: no method produced an estimate (missing checkpoints?)")
    reports = evalkit.with_averages(reports)
    csv_path = os.path.join(out, "report.csv")
    evalkit.write_report_csv(reports, csv_path)
    text = evalkit.format_table(reports) + "\n"
    plain = [r for r in reports if r.method == "WMINet"]
    constrained = [r for r in reports if r.method == "WMINet with WC"]
    if plain and constrained:
        rows = evalkit.compare(plain, constrained)
        text += "\n" + evalkit.format_compare(rows, "WMINet", "WMINet with WC") + "\n"
    txt_path = os.path.join(out, "report.txt")
    with open(txt_path, "w") as fh:
        fh.write(text)
    write_manifest(out, "eval", cfg, artifacts + [csv_path, txt_path])
    print(text, end="")
    return 0


def cmd_compare(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    paths = cfg["reports"]
    if not paths or len(paths) > 2:
        raise UsageError("compare takes one report holding both methods or two reports")
    for p in paths:
        if not os.path.exists(p):
            raise DataError(f"report not found: {p}")
    reports = [evalkit.read_report_csv(p) for p in paths]
    if len(reports) == 1:
        methods = list(dict.fromkeys(r.method for r in reports[0]))
        ma = cfg["method_a"] or (methods[0] if methods else None)
        mb = cfg["method_b"] or (methods[1] if len(methods) > 1 else None)
        if ma is None or mb is None:
            raise DataError("the report holds fewer than two methods")
        a = [r for r in reports[0] if r.method == ma]
        b = [r for r in reports[0] if r.method == mb]
    else:
        a, b = reports
        ma = cfg["method_a"] or (a[0].method if a else "A")
        mb = cfg["method_b"] or (b[0].method if b else "B")
        a = [r for r in a if r.method == ma]
        b = [r for r in b if r.method == mb]
    rows = evalkit.compare(a, b)
    csv_path = os.path.join(out, "compare.csv")
    evalkit.write_compare_csv(rows, csv_path, ma.replace(" ", "_"), mb.replace(" ", "_"))
    text = evalkit.format_compare(rows, ma, mb) + "\n"
    if cfg["reference"]:
        ref = [evalkit.CompareRow(k, *v) for k, v in evalkit.REFERENCE_WC.items()]
        text += "\nPublished reference (without / with wheelbase constraint)\n"
        text += evalkit.format_compare(ref, "WMINet", "WMINet with WC") + "\n"
    txt_path = os.path.join(out, "compare.txt")
    with open(txt_path, "w") as fh:
        fh.write(text)
    write_manifest(out, "compare", cfg, [csv_path, txt_path])
    print(text, end="")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "mechanize": cmd_mechanize,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except WheelNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
