"""Model/optimizer checkpoints on the tensor-container format.

A checkpoint stores every model parameter under "param.<name>" and,
when an optimizer is attached, its moment buffers under "adam.m.<name>"
and "adam.v.<name>" with scalars in the meta block. Writing is
deterministic, so identical training runs produce identical bytes.
No RNG state is stored: training derives its generators from (seed,
epoch), which makes resumption a pure function of the meta block.
"""

import numpy as np

from .container import read_tensors, write_tensors

PARAM_PREFIX = "param."
MOMENT1_PREFIX = "adam.m."
MOMENT2_PREFIX = "adam.v."


def save_checkpoint(path, model, optimizer=None, meta=None):
    """
    Write model parameters (and optionally Adam state) to one file
    Arguments:
        model: Module with named_parameters()
        optimizer: Adam built on the same named parameters, or None
        meta: JSON-serializable dict stored alongside the arrays
    """
    tensors = {}
    for name, param in model.named_parameters():
        tensors[PARAM_PREFIX + name] = param.data
    meta = dict(meta or {})
    if optimizer is not None:
        state = optimizer.state_dict()
        for name, arr in state["first_moment"].items():
            tensors[MOMENT1_PREFIX + name] = arr
        for name, arr in state["second_moment"].items():
            tensors[MOMENT2_PREFIX + name] = arr
        meta["optimizer"] = {"lr": state["lr"],
                             "step_count": state["step_count"]}
    write_tensors(path, tensors, meta=meta)


def checkpoint_parameters(path):
    """
    Read just the parameter arrays from a checkpoint
    Return:
        (params, meta): dict bare-name -> array, and the meta block
    """
    tensors, meta = read_tensors(path)
    params = {k[len(PARAM_PREFIX):]: v for k, v in tensors.items()
              if k.startswith(PARAM_PREFIX)}
    return params, meta


def load_parameters_into(model, params, rename=()):
    """
    Copy parameter arrays into a model, optionally renaming prefixes
    Arguments:
        params: dict name -> array
        rename: iterable of (source_prefix, target_prefix) applied to
                each source name, first match wins
    Every source array must land on a model parameter of the same
    shape; anything else is a structural mismatch and raises.
    """
    targets = dict(model.named_parameters())
    for source_name, arr in params.items():
        name = source_name
        for old, new in rename:
            if name.startswith(old):
                name = new + name[len(old):]
                break
        if name not in targets:
            raise ValueError(f"checkpoint parameter {source_name!r} has no "
                             f"target (looked for {name!r})")
        param = targets[name]
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != param.data.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint "
                             f"{arr.shape}, model {param.data.shape}")
        param.data = arr.copy()


def load_checkpoint(path, model, optimizer=None):
    """
    Restore a model (and optionally its optimizer) from a checkpoint
    Return:
        the checkpoint's meta dict
    """
    tensors, meta = read_tensors(path)
    params = {k[len(PARAM_PREFIX):]: v for k, v in tensors.items()
              if k.startswith(PARAM_PREFIX)}
    expected = {name for name, _ in model.named_parameters()}
    extra = set(params) - expected
    if extra:
        raise ValueError(f"checkpoint has parameters the model lacks: "
                         f"{sorted(extra)[:4]}")
    missing = expected - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing parameters: "
                         f"{sorted(missing)[:4]}")
    load_parameters_into(model, params)
    if optimizer is not None:
        if "optimizer" not in meta:
            raise ValueError(f"{path}: no optimizer state stored")
        state = {
            "lr": meta["optimizer"]["lr"],
            "step_count": meta["optimizer"]["step_count"],
            "first_moment": {k[len(MOMENT1_PREFIX):]: v
                             for k, v in tensors.items()
                             if k.startswith(MOMENT1_PREFIX)},
            "second_moment": {k[len(MOMENT2_PREFIX):]: v
                              for k, v in tensors.items()
                              if k.startswith(MOMENT2_PREFIX)},
        }
        optimizer.load_state_dict(state)
    return meta
