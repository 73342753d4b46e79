"""Separation scoring: offline and block-online double-buffered runs.

The online evaluator feeds the model one block at a time together with
a trailing history window, keeps only each block's segment of the
output, aligns the speaker order of consecutive blocks by correlation
over the shared history region and scores the stitched waveforms the
same way the offline path does. Emitting a block only once its audio
is available bounds the algorithmic latency by one block (half a block
on average).
"""

import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import MultiChannelWave
from .losses import ENERGY_FLOOR, si_snr_value
from .manifest import read_manifest
from .training import load_example


@dataclass
class EvalConfig:
    """Block-online evaluation geometry, in seconds."""

    mode: str = "offline"
    block_s: float = 2.0
    history_s: float = 2.0
    hop_s: float = 2.0
    # alternative to re-feeding history audio: carry recurrent state
    # across blocks and feed each block alone
    carry_state: bool = False

    def __post_init__(self):
        if self.mode not in ("offline", "online"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.block_s <= 0:
            raise ValueError("block length must be positive")
        if self.hop_s <= 0 or self.hop_s > self.block_s:
            raise ValueError("hop must be positive and not exceed the block")
        if self.history_s < 0:
            raise ValueError("history must be non-negative")


@dataclass
class UtteranceScore:
    id: str
    si_snr_db: list = field(default_factory=list)
    baseline_db: list = field(default_factory=list)
    improvement_db: float = math.nan
    permutation: tuple = ()
    block_beam_choices: list = None
    error: str = None

    def to_json(self):
        record = {"id": self.id, "si_snr_db": self.si_snr_db,
                  "baseline_db": self.baseline_db,
                  "improvement_db": self.improvement_db,
                  "permutation": list(self.permutation)}
        if self.block_beam_choices is not None:
            record["block_beam_choices"] = [list(map(int, c))
                                            for c in self.block_beam_choices]
        if self.error is not None:
            record["error"] = self.error
        return json.dumps(record)


@dataclass
class ScoreReport:
    mode: str
    entries: list

    @property
    def scored(self):
        return [e for e in self.entries if e.error is None]

    @property
    def num_errors(self):
        return len(self.entries) - len(self.scored)

    @property
    def mean_si_snr_db(self):
        scored = self.scored
        if not scored:
            return math.nan
        return float(np.mean([np.mean(e.si_snr_db) for e in scored]))

    @property
    def mean_improvement_db(self):
        scored = self.scored
        if not scored:
            return math.nan
        return float(np.mean([e.improvement_db for e in scored]))

    def summary(self):
        return {"mode": self.mode,
                "num_utterances": len(self.entries),
                "num_errors": self.num_errors,
                "mean_si_snr_db": self.mean_si_snr_db,
                "mean_improvement_db": self.mean_improvement_db}

    def write(self, lines_path, summary_path=None):
        """One JSON object per utterance, plus a summary file."""
        with open(lines_path, "w") as handle:
            for entry in self.entries:
                handle.write(entry.to_json() + "\n")
        if summary_path is not None:
            with open(summary_path, "w") as handle:
                json.dump(self.summary(), handle, indent=2, sort_keys=True)
                handle.write("\n")


def score_si_snr(estimates, references, cap_db=30.0):
    """
    Best-permutation scoring, plain numpy
    Arguments:
        estimates, references: equal-length lists of 1D arrays
    Return:
        (scores, permutation): scores[i] is estimate i against reference
        permutation[i] under the best assignment
    """
    if len(estimates) != len(references):
        raise ValueError("need as many estimates as references")
    table = [[si_snr_value(est, ref, cap_db=cap_db) for ref in references]
             for est in estimates]
    best_perm, best_total = None, None
    for perm in itertools.permutations(range(len(references))):
        total = sum(table[i][j] for i, j in enumerate(perm))
        if best_total is None or total > best_total:
            best_perm, best_total = perm, total
    scores = [table[i][j] for i, j in enumerate(best_perm)]
    return scores, best_perm


def _score_entry(ex_id, estimates, example, cap_db, choices=None):
    scores, perm = score_si_snr(estimates, example.targets, cap_db=cap_db)
    mix0 = example.mixture.samples[0]
    baseline = [si_snr_value(mix0, ref, cap_db=cap_db)
                for ref in example.targets]
    improvement = float(np.mean(scores) - np.mean(baseline))
    return UtteranceScore(id=ex_id, si_snr_db=scores, baseline_db=baseline,
                          improvement_db=improvement, permutation=perm,
                          block_beam_choices=choices)


def _iter_examples(source, split):
    """Yield (id, example, error) rows; bad files fail per-utterance."""
    if isinstance(source, (str, os.PathLike)):
        base = os.path.dirname(os.path.abspath(source))
        for entry in read_manifest(source, split=split):
            try:
                yield entry.id, load_example(base, entry), None
            except (OSError, ValueError) as err:
                yield entry.id, None, str(err)
    else:
        for example in source:
            yield example.id, example, None


def separate_offline(model, mixture):
    """
    Whole-utterance separation
    Return:
        list of 1D numpy waveforms, one per speaker
    """
    out = model(mixture)
    return [w.data for w in out.waves]


def _block_choice(out):
    if out.beam_weights is not None:
        return np.argmax(out.beam_weights.data, axis=1)
    if out.beam_indices is not None:
        return np.asarray(out.beam_indices)
    return None


def _align_to_history(estimates, stitched, lo, start, prev_perm):
    """Pick the speaker order matching the already-emitted history.

    Scores each permutation by normalized correlation over the shared
    region [lo, start); switches away from the previous order only on a
    strictly better score.
    """
    num = len(estimates)
    hist_len = start - lo
    if hist_len <= 0:
        return prev_perm
    prev = [stitched[h][lo:start] for h in range(num)]

    def corr(a, b):
        return float(np.dot(a, b)
                     / (np.linalg.norm(a) * np.linalg.norm(b)
                        + ENERGY_FLOOR))

    def score(perm):
        return sum(corr(estimates[perm[h]][:hist_len], prev[h])
                   for h in range(num))

    best_perm, best = prev_perm, score(prev_perm)
    for perm in itertools.permutations(range(num)):
        value = score(perm)
        if value > best:
            best_perm, best = perm, value
    return best_perm


def separate_online(model, mixture, cfg):
    """
    Block-wise separation with trailing history (double buffering)
    Each block sees [history + block] audio (just the block when
    cfg.carry_state is set, with recurrent state carried instead); only
    the block's own segment is emitted, so output length equals input
    length. An utterance shorter than one block becomes a single
    truncated block.
    Return:
        (waves, block_choices): stitched 1D numpy waveforms and the
        per-block beam picks after speaker alignment
    """
    rate = mixture.sample_rate
    block = int(round(cfg.block_s * rate))
    hop = int(round(cfg.hop_s * rate))
    history = int(round(cfg.history_s * rate))
    total = mixture.num_samples
    starts = list(range(0, total, hop))
    # overlapped blocks (hop < block) emit only their fresh hop portion,
    # except the last block which runs to the end
    stitched = None
    choices = []
    prev_perm = None
    states = None
    for k, start in enumerate(starts):
        end = min(start + block, total)
        lo = start if cfg.carry_state else max(0, start - history)
        span = MultiChannelWave(mixture.samples[:, lo:end], rate)
        if cfg.carry_state:
            out = model(span, states=states)
            states = out.states
        else:
            out = model(span)
        estimates = [w.data for w in out.waves]
        if stitched is None:
            stitched = [np.zeros(total) for _ in estimates]
            prev_perm = tuple(range(len(estimates)))
        if not cfg.carry_state:
            prev_perm = _align_to_history(estimates, stitched, lo, start,
                                          prev_perm)
        emit_end = end if k == len(starts) - 1 else min(start + hop, end)
        for h in range(len(stitched)):
            segment = estimates[prev_perm[h]][start - lo:emit_end - lo]
            stitched[h][start:emit_end] = segment
        picked = _block_choice(out)
        if picked is not None:
            choices.append(tuple(int(picked[prev_perm[h]])
                                 for h in range(len(stitched))))
    return stitched, choices


def evaluate_offline(model, source, split=None, cap_db=30.0):
    """
    Score whole utterances; source is a manifest path or example list
    Return:
        ScoreReport; unreadable utterances become error entries
    """
    model.set_training(False)
    entries = []
    for ex_id, example, error in _iter_examples(source, split):
        if error is not None:
            entries.append(UtteranceScore(id=ex_id, error=error))
            continue
        estimates = separate_offline(model, example.mixture)
        entries.append(_score_entry(ex_id, estimates, example, cap_db))
    return ScoreReport(mode="offline", entries=entries)


def evaluate_online(model, source, cfg=None, split=None, cap_db=30.0):
    """
    Score block-online runs; source is a manifest path or example list
    Return:
        ScoreReport with per-block beam picks per utterance
    """
    cfg = cfg if cfg is not None else EvalConfig(mode="online")
    model.set_training(False)
    entries = []
    for ex_id, example, error in _iter_examples(source, split):
        if error is not None:
            entries.append(UtteranceScore(id=ex_id, error=error))
            continue
        estimates, choices = separate_online(model, example.mixture, cfg)
        entries.append(_score_entry(ex_id, estimates, example, cap_db,
                                    choices=choices))
    return ScoreReport(mode="online", entries=entries)
