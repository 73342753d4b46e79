"""Command line entry point: one tool, task subcommands.

Every run resolves its configuration (flag > file > default), writes
the resolved tree next to its outputs and then executes. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import os
import sys

import numpy as np

from .autograd import (Tensor, check_gradient, concat, stack,
                       trailing_mean)
from .checkpoint import checkpoint_parameters, load_checkpoint
from .config import (ConfigError, cache_dir, load_config_file, resolve,
                     write_echo)
from .dsp import MultiChannelWave, StftConfig, stft
from .evaluate import EvalConfig, evaluate_offline, evaluate_online
from .localize import localize_sources, select_beams
from .losses import pit_loss
from .models import JointPipeline, ModularPipeline
from .simulate import DatasetConfig, build_dataset
from .spatial import (ArrayGeometry, build_steering_table, circular_array,
                      design_beamformer_bank, load_bank, save_bank,
                      uniform_angle_grid)
from .training import load_examples, pretrain_then_joint, train_modular
from .wavio import read_wav

_JOBS = os.cpu_count() or 1

SIMULATE_DEFAULTS = {
    "out_dir": "data/toy", "seed": 0,
    "count": 0, "valid_count": 0, "test_count": 0,
    "duration_s": 2.5, "overlap_target": 0.35,
    "t60_min": 0.2, "t60_max": 0.4,
    "jobs": _JOBS,
}
DESIGN_BEAMS_DEFAULTS = {
    "num_beams": 18, "design": "superdirective", "diagonal_loading": 0.01,
    "fft_size": 512, "hop": 256, "sample_rate": 16000,
    "geometry": "", "out": "", "jobs": _JOBS,
}
LOCALIZE_DEFAULTS = {
    "mixture": "", "masks": "", "bank": "", "num_angles": 36,
    "fft_size": 512, "hop": 256, "sample_rate": 16000,
    "jobs": _JOBS,
}
TRAIN_DEFAULTS = {
    "manifest": "", "out_dir": "runs/train",
    "model": "joint", "pretrain": True, "seed": 0,
    "lr": 1e-3, "joint_lr": 1e-4, "weight_decay": 1e-5,
    "epochs": 80, "pretrain_epochs": 80, "stop_patience": 6,
    "hidden": 128, "num_layers": 3, "projection_dim": 64, "dropout": 0.2,
    "num_beams": 18, "beam_design": "superdirective",
    "diagonal_loading": 0.01, "num_angles": 36,
    "fft_size": 512, "hop": 256, "sample_rate": 16000,
    "jobs": _JOBS,
}
EVAL_DEFAULTS = {
    "model": "", "manifest": "", "split": "test", "out_dir": "runs/eval",
    "block_s": 2.0, "history_s": 2.0, "hop_s": 2.0, "carry_state": False,
    "cap_db": 30.0, "jobs": _JOBS,
}
GRADCHECK_DEFAULTS = {"seed": 7, "jobs": _JOBS}

ARCH_KEYS = ("model", "hidden", "num_layers", "projection_dim", "dropout",
             "num_beams", "beam_design", "diagonal_loading", "num_angles",
             "fft_size", "hop", "sample_rate")


def _add_flags(sub, defaults):
    sub.add_argument("--config", default=None, metavar="PATH",
                     help="YAML config file; flags override its keys")
    for key, value in defaults.items():
        names = ["--" + key.replace("_", "-")]
        if key == "history_s":
            names.append("--history")
        if key == "out_dir":
            names.append("--out")
        if key == "mixture":
            names.append("--wav")
        if isinstance(value, bool):
            sub.add_argument(*names, dest=key, default=None,
                             action=argparse.BooleanOptionalAction)
        elif isinstance(value, int):
            sub.add_argument(*names, dest=key, type=int, default=None)
        elif isinstance(value, float):
            sub.add_argument(*names, dest=key, type=float, default=None)
        else:
            sub.add_argument(*names, dest=key, type=str, default=None)


def _resolve(args, defaults):
    file_cfg = load_config_file(args.config) if args.config else None
    flags = {key: getattr(args, key) for key in defaults
             if getattr(args, key, None) is not None}
    return resolve(defaults, file_cfg, flags)


def _require(cfg, key):
    if not cfg[key]:
        flag = "--" + key.replace("_", "-")
        raise ConfigError(f"missing required setting {key!r} ({flag})")
    return cfg[key]


def _stft_config(cfg):
    return StftConfig(fft_size=cfg["fft_size"], hop=cfg["hop"])


def _load_geometry(path):
    """Array geometry from a YAML file: mic_positions_m as an M x 3 list,
    optional speed_of_sound. Anything else is rejected."""
    data = load_config_file(path)
    unknown = set(data) - {"mic_positions_m", "speed_of_sound"}
    if unknown:
        raise ConfigError(f"{path}: unknown geometry keys "
                          f"{sorted(unknown)}")
    if "mic_positions_m" not in data:
        raise ConfigError(f"{path}: missing mic_positions_m")
    try:
        positions = np.asarray(data["mic_positions_m"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: mic_positions_m must be numeric M x 3")
    try:
        if "speed_of_sound" in data:
            return ArrayGeometry(positions,
                                 speed_of_sound=float(data["speed_of_sound"]))
        return ArrayGeometry(positions)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}")


def _load_masks(path, spec):
    """Per-source mask stack from an .npy or .npz file. Accepts one
    H x T x F array or any number of T x F arrays (stacked in file order);
    shapes must match the analysis grid of the mixture."""
    loaded = np.load(path)
    if hasattr(loaded, "files"):
        arrays = [np.asarray(loaded[name], dtype=np.float64)
                  for name in loaded.files]
        if not arrays:
            raise ConfigError(f"{path}: no arrays found")
        masks = arrays[0] if len(arrays) == 1 else np.stack(arrays)
    else:
        masks = np.asarray(loaded, dtype=np.float64)
    if masks.ndim == 2:
        masks = masks[None]
    expected = (spec.num_frames, spec.num_bins)
    if masks.ndim != 3 or masks.shape[1:] != expected:
        raise ConfigError(f"{path}: masks must be H x {expected[0]} frames "
                          f"x {expected[1]} bins, got {masks.shape}")
    return masks


def cmd_simulate(args):
    cfg = _resolve(args, SIMULATE_DEFAULTS)
    counts = {split: cfg[key] for split, key in
              (("train", "count"), ("valid", "valid_count"),
               ("test", "test_count")) if cfg[key] > 0}
    dataset_cfg = DatasetConfig(duration_s=cfg["duration_s"],
                                overlap_target=cfg["overlap_target"],
                                t60_range=(cfg["t60_min"], cfg["t60_max"]))
    write_echo(cfg, cfg["out_dir"])
    summary = build_dataset(cfg["out_dir"], counts, cfg["seed"],
                            config=dataset_cfg)
    total = sum(len(s["ids"]) for s in summary["splits"].values())
    print(f"wrote {total} examples to {cfg['out_dir']} "
          f"(manifest.jsonl)")
    return 0


def cmd_design_beams(args):
    cfg = _resolve(args, DESIGN_BEAMS_DEFAULTS)
    stft_cfg = _stft_config(cfg)
    geom = _load_geometry(cfg["geometry"]) if cfg["geometry"] \
        else circular_array()
    bank = design_beamformer_bank(geom, num_beams=cfg["num_beams"],
                                  design=cfg["design"],
                                  diagonal_loading=cfg["diagonal_loading"],
                                  cfg=stft_cfg,
                                  sample_rate=cfg["sample_rate"])
    out = cfg["out"] or os.path.join(
        cache_dir(), "banks",
        f"{geom.fingerprint()}_{cfg['num_beams']}_{cfg['design']}"
        f"_{cfg['fft_size']}.tns")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_bank(out, bank)
    write_echo(cfg, os.path.dirname(os.path.abspath(out)))
    print(f"saved {cfg['num_beams']}-beam {cfg['design']} bank to {out}")
    return 0


def cmd_localize(args):
    cfg = _resolve(args, LOCALIZE_DEFAULTS)
    path = _require(cfg, "mixture")
    samples, rate = read_wav(path)
    if rate != cfg["sample_rate"]:
        raise ConfigError(f"{path}: expected {cfg['sample_rate']} Hz, "
                          f"got {rate}")
    geom = circular_array()
    if samples.shape[0] != geom.num_mics:
        raise ConfigError(f"{path}: expected {geom.num_mics} "
                          f"channels, got {samples.shape[0]}")
    stft_cfg = _stft_config(cfg)
    spec = stft(MultiChannelWave(samples, rate), stft_cfg)
    table = build_steering_table(geom,
                                 uniform_angle_grid(cfg["num_angles"]),
                                 stft_cfg, sample_rate=rate)
    if cfg["masks"]:
        masks = _load_masks(cfg["masks"], spec)
    else:
        masks = np.ones((1, spec.num_frames, spec.num_bins))
    result = localize_sources(masks, spec, table)
    bank = load_bank(cfg["bank"]) if cfg["bank"] else None
    if bank is not None:
        result = select_beams(result, bank)
    for h in range(len(result.angles_deg)):
        summary = (f"source {h} azimuth: {result.angles_deg[h]:.1f} deg "
                   f"(confidence {result.confidences[h]:.3f}")
        if bank is not None:
            beam = int(result.selected_beam_indices[h])
            summary += (f", beam {beam} at "
                        f"{bank.center_angles_deg[beam]:.1f} deg")
        print(summary + ")")
        for angle, value in zip(table.angles_deg,
                                result.objective_curves[h]):
            print(f"{angle:.1f} {value:.6e}")
    return 0


def cmd_train(args):
    cfg = _resolve(args, TRAIN_DEFAULTS)
    manifest = _require(cfg, "manifest")
    if cfg["model"] not in ("joint", "modular"):
        raise ConfigError(f"unknown model {cfg['model']!r} "
                          f"(expected joint or modular)")
    stft_cfg = _stft_config(cfg)
    geom = circular_array()
    bank = design_beamformer_bank(geom, num_beams=cfg["num_beams"],
                                  design=cfg["beam_design"],
                                  diagonal_loading=cfg["diagonal_loading"],
                                  cfg=stft_cfg,
                                  sample_rate=cfg["sample_rate"])
    train = load_examples(manifest, split="train")
    valid = load_examples(manifest, split="valid")
    if not train or not valid:
        raise ConfigError(f"{manifest}: needs nonempty train and valid "
                          f"splits ({len(train)} train, {len(valid)} valid)")
    write_echo(cfg, cfg["out_dir"])
    run_meta = {"arch": {key: cfg[key] for key in ARCH_KEYS}}
    shared = dict(stft_cfg=stft_cfg, num_angles=cfg["num_angles"],
                  hidden=cfg["hidden"], num_layers=cfg["num_layers"],
                  dropout=cfg["dropout"], weight_decay=cfg["weight_decay"],
                  stop_patience=cfg["stop_patience"], seed=cfg["seed"],
                  run_meta=run_meta, log=print)
    if cfg["model"] == "joint":
        _, results = pretrain_then_joint(
            geom, bank, train, valid, cfg["out_dir"],
            projection_dim=cfg["projection_dim"], lr=cfg["lr"],
            joint_lr=cfg["joint_lr"], pretrain=cfg["pretrain"],
            pretrain_epochs=cfg["pretrain_epochs"],
            joint_epochs=cfg["epochs"], **shared)
        final = results["joint"]
    else:
        _, results = train_modular(
            geom, bank, train, valid, cfg["out_dir"], lr=cfg["lr"],
            max_epochs=cfg["epochs"], **shared)
        final = results["extract"]
        print(f"combined checkpoint: {results['combined_path']}")
    if final.aborted:
        print("training aborted on a non-finite loss", file=sys.stderr)
        return 1
    print(f"best checkpoint: {final.best_path} "
          f"(valid loss {final.best_valid:.4f})")
    return 0


def _load_model(path):
    """Rebuild the pipeline a checkpoint was trained as, then load it."""
    _, meta = checkpoint_parameters(path)
    arch = meta.get("arch")
    if not arch:
        raise ConfigError(f"{path}: checkpoint lacks architecture metadata")
    stft_cfg = StftConfig(fft_size=arch["fft_size"], hop=arch["hop"])
    geom = circular_array()
    bank = design_beamformer_bank(geom, num_beams=arch["num_beams"],
                                  design=arch["beam_design"],
                                  diagonal_loading=arch["diagonal_loading"],
                                  cfg=stft_cfg,
                                  sample_rate=arch["sample_rate"])
    rng = np.random.default_rng(0)
    common = dict(stft_cfg=stft_cfg, num_angles=arch["num_angles"],
                  hidden=arch["hidden"], num_layers=arch["num_layers"],
                  dropout=arch["dropout"],
                  sample_rate=arch["sample_rate"])
    if arch["model"] == "joint":
        model = JointPipeline(geom, bank, rng,
                              embedding_dim=stft_cfg.num_bins,
                              projection_dim=arch["projection_dim"],
                              **common)
    else:
        model = ModularPipeline(geom, bank, rng, **common)
    load_checkpoint(path, model)
    model.set_training(False)
    return model


def _run_eval(args, online):
    cfg = _resolve(args, EVAL_DEFAULTS)
    model = _load_model(_require(cfg, "model"))
    manifest = _require(cfg, "manifest")
    cfg["mode"] = "online" if online else "offline"
    write_echo(cfg, cfg["out_dir"])
    split = cfg["split"] or None
    if online:
        eval_cfg = EvalConfig(mode="online", block_s=cfg["block_s"],
                              history_s=cfg["history_s"],
                              hop_s=cfg["hop_s"],
                              carry_state=cfg["carry_state"])
        report = evaluate_online(model, manifest, eval_cfg, split=split,
                                 cap_db=cfg["cap_db"])
    else:
        report = evaluate_offline(model, manifest, split=split,
                                  cap_db=cfg["cap_db"])
    report.write(os.path.join(cfg["out_dir"], "scores.jsonl"),
                 os.path.join(cfg["out_dir"], "summary.json"))
    summary = report.summary()
    print(f"{summary['mode']}: {summary['num_utterances']} utterances "
          f"({summary['num_errors']} errors), "
          f"mean si-snr {summary['mean_si_snr_db']:.2f} dB, "
          f"mean improvement {summary['mean_improvement_db']:.2f} dB")
    return 0


def cmd_eval_offline(args):
    return _run_eval(args, online=False)


def cmd_eval_online(args):
    return _run_eval(args, online=True)


def _gradient_battery(seed):
    """Finite-difference sweep over the engine ops and a small
    assembled separation graph; returns the max relative error."""
    rng = np.random.default_rng(seed)
    errs = []

    def fd(fn, tensors, coords=4):
        for index in range(len(tensors)):
            errs.append(check_gradient(fn, tensors, index, coords=coords,
                                       rng=rng))

    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    m = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    fd(lambda x, y: ((x + y) * x - y / (y * y + 1.5)).sum(), [a, b])
    fd(lambda x, y: (x @ y).sum(), [a, m])
    fd(lambda x, y: (x.sigmoid() * y.exp()).mean(), [a, b])
    fd(lambda x: ((x * x + 0.1).log()).sum(), [a])
    fd(lambda x, y: (x.softmax(axis=1) * y).sum(), [a, b])
    fd(lambda x: x.clip(-0.5, 0.5).sum(), [a])
    fd(lambda x: x.reshape(4, 3).transpose(1, 0)[1:, :2].sum(), [a])
    fd(lambda x, y: concat([x, y], axis=0).mean(), [a, b])
    fd(lambda x, y: stack([x, y], axis=1).sum(), [a, b])
    scores = Tensor(rng.standard_normal((2, 5, 9)), requires_grad=True)
    fd(lambda s: trailing_mean(s, 4).sum(), [scores])

    stft_cfg = StftConfig(fft_size=64, hop=32)
    geom = circular_array()
    bank = design_beamformer_bank(geom, num_beams=6, cfg=stft_cfg)
    model = JointPipeline(geom, bank, np.random.default_rng(seed),
                          stft_cfg=stft_cfg, num_angles=8, hidden=6,
                          num_layers=1, embedding_dim=8, projection_dim=6)
    samples = rng.standard_normal((geom.num_mics, 1024))
    mixture = MultiChannelWave(samples, 16000)
    refs = [samples[0] + 0.2 * rng.standard_normal(1024),
            samples[1] + 0.2 * rng.standard_normal(1024)]

    def assembled(*_):
        out = model(mixture)
        loss, _ = pit_loss(out.waves, refs)
        return loss

    params = [p for _, p in model.named_parameters()]
    picks = rng.choice(len(params), size=4, replace=False)
    for index in picks:
        errs.append(check_gradient(assembled, params, int(index), coords=2,
                                   rng=rng))
    return max(errs)


def cmd_gradcheck(args):
    cfg = _resolve(args, GRADCHECK_DEFAULTS)
    err = _gradient_battery(cfg["seed"])
    print(f"max relative error: {err:.3e}")
    return 0 if err < 1e-4 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ufe",
        description="Multi-channel overlapped-speech separation toolkit")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, defaults, func, help_text in (
            ("simulate", SIMULATE_DEFAULTS, cmd_simulate,
             "render a two-speaker mixture dataset with a room simulator"),
            ("design-beams", DESIGN_BEAMS_DEFAULTS, cmd_design_beams,
             "design and save a fixed beamformer bank"),
            ("localize", LOCALIZE_DEFAULTS, cmd_localize,
             "estimate the source azimuth of a multi-channel wav"),
            ("train", TRAIN_DEFAULTS, cmd_train,
             "train the joint or modular separation pipeline"),
            ("eval-offline", EVAL_DEFAULTS, cmd_eval_offline,
             "score whole-utterance separation against a manifest"),
            ("eval-online", EVAL_DEFAULTS, cmd_eval_online,
             "score block-online separation with trailing history"),
            ("gradcheck", GRADCHECK_DEFAULTS, cmd_gradcheck,
             "finite-difference check of the autodiff engine")):
        sub = subs.add_parser(name, help=help_text)
        _add_flags(sub, defaults)
        sub.set_defaults(func=func)
    return parser


def dispatch(argv):
    """
    Parse and run one invocation
    Return:
        process exit code: 0 ok, 1 runtime failure, 2 usage
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse printed usage/help already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))
