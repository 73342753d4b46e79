"""Training loops: epoch scheduling, checkpointing, two-stage assembly.

Determinism contract: layer initialization, example shuffling and
dropout draws all derive from explicit seeds ((seed, epoch) for the
per-epoch generator), so identical runs produce bitwise-identical
checkpoints and a resumed run replays the remaining epochs exactly as
an uninterrupted one would.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .checkpoint import (checkpoint_parameters, load_checkpoint,
                         load_parameters_into, save_checkpoint)
from .dsp import MultiChannelWave, StftConfig, stft
from .localize import nearest_beam_index
from .losses import masked_synthesis, pit_loss
from .manifest import read_manifest
from .models import (ExtractionNet, JointPipeline, ModularPipeline,
                     UnmixingNet, log_magnitude, unmixing_features)
from .optim import Adam, EarlyStopper, PlateauHalver
from .spatial import (REFERENCE_IPD_PAIRS, apply_beamformer,
                      compute_angle_pool)
from .wavio import read_wav


@dataclass
class LoadedExample:
    """One dataset item pulled into memory."""

    id: str
    mixture: MultiChannelWave
    targets: list       # per-speaker beamformed references, 1D
    sources: list       # per-speaker clean channel-0 images, 1D
    angles_deg: list


def load_example(base_dir, entry):
    """Materialize one manifest entry, resolving paths against base_dir."""
    samples, rate = read_wav(os.path.join(base_dir, entry.mixture_path))
    targets = [read_wav(os.path.join(base_dir, p))[0][0]
               for p in entry.target_paths]
    sources = [read_wav(os.path.join(base_dir, p))[0][0]
               for p in entry.source_paths]
    return LoadedExample(id=entry.id,
                         mixture=MultiChannelWave(samples, rate),
                         targets=targets, sources=sources,
                         angles_deg=list(entry.angles_deg))


def load_examples(manifest_path, split=None):
    """
    Materialize manifest entries; paths resolve against the manifest dir
    Return:
        list of LoadedExample
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    return [load_example(base, entry)
            for entry in read_manifest(manifest_path, split=split)]


# per-kind loss adapters, all returning a scalar Tensor


def unmixing_loss(net, example, cfg, pairs=REFERENCE_IPD_PAIRS, rng=None):
    """Permutation-free mask loss against clean channel-0 sources."""
    spec = stft(example.mixture, cfg)
    masks, _ = net(unmixing_features(spec, pairs), rng=rng)
    length = example.mixture.num_samples
    estimates = [masked_synthesis(masks[h], spec.data[0], cfg, length)
                 for h in range(masks.shape[0])]
    loss, _ = pit_loss(estimates, example.sources)
    return loss


def oracle_extraction_loss(net, example, geom, bank, cfg,
                           pairs=REFERENCE_IPD_PAIRS, rng=None):
    """Extraction loss with teacher-forced beams and angle features.

    Feature layout matches the joint pipeline's extraction input (beam
    log magnitude, angle feature, channel-0 log magnitude), with the
    true-angle beam standing in for the attention combination.
    """
    spec = stft(example.mixture, cfg)
    angles = np.asarray(example.angles_deg, dtype=np.float64)
    angle_rows = compute_angle_pool(spec, geom, angles, pairs)
    ch0 = log_magnitude(spec.data[0])
    rows, beams = [], []
    for h, angle in enumerate(angles):
        idx = nearest_beam_index(angle, bank)
        beam = apply_beamformer(bank.weights[idx], spec)
        rows.append(np.concatenate([log_magnitude(beam), angle_rows[h],
                                    ch0], axis=1))
        beams.append(beam)
    masks, _ = net(Tensor(np.stack(rows, axis=1)), rng=rng)
    length = example.mixture.num_samples
    estimates = [masked_synthesis(masks[:, h, :], beams[h], cfg, length)
                 for h in range(len(beams))]
    loss, _ = pit_loss(estimates, example.targets)
    return loss


def modular_extraction_loss(pipeline, example, rng=None):
    """Extraction loss through the hard pipeline at the true angles."""
    out = pipeline.extract_at(example.mixture, example.angles_deg, rng=rng)
    loss, _ = pit_loss(out.waves, example.targets)
    return loss


def joint_loss(model, example, rng=None):
    out = model(example.mixture, rng=rng)
    loss, _ = pit_loss(out.waves, example.targets)
    return loss


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    best_valid: float
    best_epoch: int
    initial_valid: float
    history: list
    stopped_early: bool = False
    aborted: bool = False
    messages: list = field(default_factory=list)


def _emit(messages, log, text):
    messages.append(text)
    if log is not None:
        log(text)


def _validate(model, loss_fn, examples):
    model.set_training(False)
    total = 0.0
    for example in examples:
        total += float(loss_fn(model, example, None).data)
    model.set_training(True)
    return total / len(examples)


def fit(model, loss_fn, train_examples, valid_examples, best_path,
        last_path=None, lr=1e-3, weight_decay=1e-5, max_epochs=80,
        halve_patience=2, stop_patience=6, seed=0, resume_from=None,
        meta_extra=None, log=None):
    """
    Generic epoch loop with plateau halving and early stopping
    Arguments:
        loss_fn: callable (model, example, rng) -> scalar Tensor
        best_path: checkpoint of the best-validation epoch
        last_path: rolling checkpoint for resumption (default
                   best_path + ".last")
        resume_from: a .last checkpoint to continue from; hyper
                     parameters must match the original call
    Return:
        TrainResult; on a non-finite training loss the loop aborts and
        the checkpoints of the last completed epoch stay on disk.
    """
    if not train_examples or not valid_examples:
        raise ValueError("need at least one train and one valid example")
    last_path = last_path or best_path + ".last"
    optimizer = Adam(list(model.named_parameters()), lr=lr,
                     weight_decay=weight_decay)
    halver = PlateauHalver(optimizer, patience=halve_patience)
    stopper = EarlyStopper(patience=stop_patience)
    messages = []
    history = []
    start_epoch = 0
    best_valid = np.inf
    best_epoch = -1

    if resume_from is not None:
        meta = load_checkpoint(resume_from, model, optimizer)
        loop = meta["loop"]
        start_epoch = loop["epoch_done"]
        best_valid = loop["best_valid"]
        best_epoch = loop["best_epoch"]
        initial_valid = loop["initial_valid"]
        history = [tuple(row) for row in loop["history"]]
        halver.best, halver.stale = loop["halver"]
        stopper.best, stopper.stale = loop["stopper"]
        _emit(messages, log, f"resumed at epoch {start_epoch} "
                             f"from {resume_from}")
    else:
        initial_valid = _validate(model, loss_fn, valid_examples)
        _emit(messages, log, f"initial valid loss {initial_valid:.4f}")

    def loop_meta(epoch_done):
        return dict(meta_extra or {}, loop={
            "epoch_done": epoch_done,
            "best_valid": best_valid,
            "best_epoch": best_epoch,
            "initial_valid": initial_valid,
            "history": [list(row) for row in history],
            "halver": [halver.best, halver.stale],
            "stopper": [stopper.best, stopper.stale],
            "seed": seed,
        })

    model.set_training(True)
    stopped_early = False
    for epoch in range(start_epoch, max_epochs):
        epoch_rng = np.random.default_rng(
            np.random.SeedSequence((seed, 7, epoch)))
        order = epoch_rng.permutation(len(train_examples))
        total = 0.0
        for pos in order:
            loss = loss_fn(model, train_examples[pos], epoch_rng)
            if not np.isfinite(loss.data):
                _emit(messages, log,
                      f"aborting: non-finite training loss at epoch {epoch}")
                return TrainResult(best_path, last_path, best_valid,
                                   best_epoch, initial_valid, history,
                                   aborted=True, messages=messages)
            optimizer.zero_grad()
            loss.backward()
            if not optimizer.grads_finite():
                _emit(messages, log,
                      f"skipping step with non-finite gradients at epoch "
                      f"{epoch}")
                continue
            optimizer.step()
            total += float(loss.data)
        train_loss = total / len(train_examples)
        valid_loss = _validate(model, loss_fn, valid_examples)
        history.append((epoch, train_loss, valid_loss, optimizer.lr))
        _emit(messages, log, f"epoch {epoch}: train {train_loss:.4f}, "
                             f"valid {valid_loss:.4f}, "
                             f"lr {optimizer.lr:.2e}")
        improved = valid_loss < best_valid
        if improved:
            best_valid = valid_loss
            best_epoch = epoch
        halver.step(valid_loss)
        stop = stopper.update(valid_loss)
        # counters are final for this epoch, safe to serialize
        if improved:
            save_checkpoint(best_path, model, optimizer,
                            meta=loop_meta(epoch + 1))
        save_checkpoint(last_path, model, optimizer,
                        meta=loop_meta(epoch + 1))
        if stop:
            stopped_early = True
            _emit(messages, log, f"early stop after epoch {epoch}")
            break
    return TrainResult(best_path, last_path, best_valid, best_epoch,
                       initial_valid, history, stopped_early=stopped_early,
                       messages=messages)


def _derived_rng(seed, salt):
    return np.random.default_rng(np.random.SeedSequence((seed, salt)))


def train_modular(geom, bank, train_examples, valid_examples, out_dir,
                  stft_cfg=None, pairs=REFERENCE_IPD_PAIRS, num_angles=36,
                  hidden=128, num_layers=3, dropout=0.0, lr=1e-3,
                  weight_decay=1e-5, max_epochs=80, stop_patience=6,
                  seed=0, run_meta=None, log=None):
    """
    Train the hard pipeline's two networks separately
    Stage A fits the mask net against clean channel-0 sources; stage B
    fits the extraction net at teacher-forced angles. The combined
    best-stage weights are saved as modular.ckpt.
    Return:
        (pipeline, results dict with per-stage TrainResult)
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = stft_cfg if stft_cfg is not None else StftConfig()
    model = ModularPipeline(geom, bank, _derived_rng(seed, 60), stft_cfg=cfg,
                            num_angles=num_angles, pairs=pairs,
                            hidden=hidden, num_layers=num_layers,
                            dropout=dropout)
    results = {}
    results["unmix"] = fit(
        model.unmix,
        lambda net, ex, rng: unmixing_loss(net, ex, cfg, pairs, rng),
        train_examples, valid_examples,
        os.path.join(out_dir, "modular_unmix.ckpt"), lr=lr,
        weight_decay=weight_decay, max_epochs=max_epochs,
        stop_patience=stop_patience, seed=seed + 1, log=log,
        meta_extra=dict(run_meta or {}, kind="modular-unmix"))
    results["extract"] = fit(
        model.extract,
        lambda net, ex, rng: modular_extraction_loss(model, ex, rng),
        train_examples, valid_examples,
        os.path.join(out_dir, "modular_extract.ckpt"), lr=lr,
        weight_decay=weight_decay, max_epochs=max_epochs,
        stop_patience=stop_patience, seed=seed + 2, log=log,
        meta_extra=dict(run_meta or {}, kind="modular-extract"))
    # assemble the best epoch of each stage
    for stage, prefix in (("unmix", "unmix."), ("extract", "extract.")):
        params, _ = checkpoint_parameters(results[stage].best_path)
        load_parameters_into(model, params, rename=(("", prefix),))
    combined = os.path.join(out_dir, "modular.ckpt")
    save_checkpoint(combined, model,
                    meta=dict(run_meta or {}, kind="modular", seed=seed))
    results["combined_path"] = combined
    return model, results


def pretrain_then_joint(geom, bank, train_examples, valid_examples, out_dir,
                        stft_cfg=None, pairs=REFERENCE_IPD_PAIRS,
                        num_angles=36, hidden=128, num_layers=3,
                        projection_dim=64, dropout=0.0, lr=1e-3,
                        joint_lr=1e-4, weight_decay=1e-5,
                        pretrain_epochs=80, joint_epochs=80,
                        stop_patience=6, seed=0, pretrain=True,
                        run_meta=None, log=None):
    """
    Optional stage-wise pretraining followed by joint fine-tuning
    Stage 1 fits the pre-separation stack as a mask net and the
    extraction net on teacher-forced beams; stage 2 assembles the joint
    pipeline, loads those weights and fine-tunes everything through the
    single waveform loss at a reduced learning rate. With
    pretrain=False the joint model trains from scratch (logged).
    Return:
        (pipeline, results dict with per-stage TrainResult)
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = stft_cfg if stft_cfg is not None else StftConfig()
    bins = cfg.num_bins
    model = JointPipeline(geom, bank, _derived_rng(seed, 50), stft_cfg=cfg,
                          num_angles=num_angles, pairs=pairs, hidden=hidden,
                          num_layers=num_layers, embedding_dim=bins,
                          projection_dim=projection_dim, dropout=dropout)
    results = {"messages": []}
    if pretrain:
        unmix = UnmixingNet((1 + len(pairs)) * bins, bins, hidden,
                            num_layers, _derived_rng(seed, 51),
                            dropout=dropout)
        results["unmix"] = fit(
            unmix,
            lambda net, ex, rng: unmixing_loss(net, ex, cfg, pairs, rng),
            train_examples, valid_examples,
            os.path.join(out_dir, "joint_presep.ckpt"), lr=lr,
            weight_decay=weight_decay, max_epochs=pretrain_epochs,
            stop_patience=stop_patience, seed=seed + 1, log=log,
            meta_extra=dict(run_meta or {}, kind="joint-presep"))
        extract = ExtractionNet(3 * bins, bins, hidden, num_layers,
                                _derived_rng(seed, 52), dropout=dropout)
        results["extract"] = fit(
            extract,
            lambda net, ex, rng: oracle_extraction_loss(net, ex, geom, bank,
                                                        cfg, pairs, rng),
            train_examples, valid_examples,
            os.path.join(out_dir, "joint_extract.ckpt"), lr=lr,
            weight_decay=weight_decay, max_epochs=pretrain_epochs,
            stop_patience=stop_patience, seed=seed + 2, log=log,
            meta_extra=dict(run_meta or {}, kind="joint-extract"))
        presep_params, _ = checkpoint_parameters(results["unmix"].best_path)
        load_parameters_into(model, presep_params,
                             rename=(("core.", "presep."),))
        extract_params, _ = checkpoint_parameters(
            results["extract"].best_path)
        load_parameters_into(model, extract_params,
                             rename=(("", "extract."),))
        results["messages"].append("loaded pretrained mask and extraction "
                                   "weights into the joint pipeline")
    else:
        results["messages"].append("cold start: joint training from random "
                                   "initialization")
    if log is not None:
        log(results["messages"][-1])
    results["joint"] = fit(
        model, joint_loss, train_examples, valid_examples,
        os.path.join(out_dir, "joint.ckpt"), lr=joint_lr,
        weight_decay=weight_decay, max_epochs=joint_epochs,
        stop_patience=stop_patience, seed=seed + 3, log=log,
        meta_extra=dict(run_meta or {}, kind="joint"))
    if results["joint"].best_epoch >= 0:
        load_checkpoint(results["joint"].best_path, model)
    return model, results
