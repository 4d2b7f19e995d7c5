"""Full-batch Adam training of one or more networks against an assembled loss."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .functional import EnergySpec, LossModel
from .network import (
    NetworkConfig, ParamSet, count_parameters, init_xavier, params_from_json, params_to_json,
)
from .sampling import SamplePlan

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eps_inside: bool = True  # eps under the square root; False gives the usual m/(sqrt(v)+eps)

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One Adam update; mutates ``state`` and returns the new parameter vector."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite gradient at step {state.k + 1}")
    state.k += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.k)
    v_hat = state.v / (1 - b2**state.k)
    if state.eps_inside:
        step = m_hat / np.sqrt(v_hat + state.eps)
    else:
        step = m_hat / (np.sqrt(v_hat) + state.eps)
    return theta - lr * step


Schedule = list  # [(epochs, learning_rate), ...]


def schedule_lrs(schedule) -> np.ndarray:
    """Per-epoch learning rates for a piecewise-constant schedule."""
    if not schedule:
        raise ValueError("schedule must not be empty")
    out = []
    for epochs, lr in schedule:
        if epochs < 0 or lr <= 0:
            raise ValueError(f"bad schedule entry {(epochs, lr)}")
        out.append(np.full(int(epochs), float(lr)))
    return np.concatenate(out)


def init_params(configs: dict[str, NetworkConfig], seed: int) -> dict[str, ParamSet]:
    """Xavier-initialise every network from one seeded stream (in config order)."""
    rng = np.random.default_rng(seed)
    return {name: init_xavier(cfg, rng) for name, cfg in configs.items()}


def save_checkpoint(path, params: dict[str, ParamSet], configs: dict[str, NetworkConfig],
                    epoch: int, **meta) -> None:
    doc = {
        "epoch": int(epoch),
        "meta": meta,
        "networks": {n: params_to_json(params[n], configs[n]) for n in configs},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, ParamSet], dict[str, NetworkConfig], dict]:
    doc = json.loads(Path(path).read_text())
    params, configs = {}, {}
    for name, d in doc["networks"].items():
        params[name], configs[name] = params_from_json(d)
    return params, configs, {"epoch": doc.get("epoch"), **doc.get("meta", {})}


@dataclass
class TrainResult:
    params: dict[str, ParamSet]
    history: np.ndarray          # (epochs, 1 + n_terms): total loss then each term
    term_names: list[str]
    diverged: bool = False
    seconds: float = 0.0
    checkpoints: list[str] = field(default_factory=list)


def _pack(params, names):
    return np.concatenate([params[n].to_vector() for n in names])


def _unpack(vec, configs, names):
    out, pos = {}, 0
    for n in names:
        size = count_parameters(configs[n])
        out[n] = ParamSet.from_vector(vec[pos:pos + size], configs[n])
        pos += size
    return out


def train(spec: EnergySpec, plan: SamplePlan, schedule, seed: int = 0, *,
          params: dict[str, ParamSet] | None = None,
          checkpoint_every: int = 0, checkpoint_dir=None,
          eps_inside: bool = True, log_every: int = 0,
          callback: Callable | None = None) -> TrainResult:
    """Minimise the assembled loss with Adam over ``schedule``.

    Each epoch evaluates the loss and its gradient on the full sample plan,
    records ``[total, term_0, ...]`` and then updates the parameters. A
    non-finite loss or gradient stops the run with ``diverged=True``.
    """
    lrs = schedule_lrs(schedule)
    names = spec.network_names()
    params = params if params is not None else init_params(spec.configs, seed)
    params = {n: params[n].copy() for n in names}
    model = LossModel(spec, plan, params)
    theta = _pack(params, names)
    state = AdamState.zeros(theta.size, eps_inside=eps_inside)
    history = np.zeros((len(lrs), 1 + len(spec.terms)))
    ckpts: list[str] = []
    diverged = False
    t0 = time.perf_counter()
    rows = 0
    for epoch, lr in enumerate(lrs):
        if epoch:
            model.set_params(params)
        loss = model.loss_value()
        history[epoch, 0] = loss
        history[epoch, 1:] = model.term_values()
        rows = epoch + 1
        if not np.isfinite(loss):
            log.error("loss became non-finite at epoch %d; terms %s", epoch,
                      dict(zip(model.term_names(), history[epoch, 1:])))
            diverged = True
            break
        grads = model.gradients()
        try:
            theta = adam_step(state, theta, np.concatenate([grads[n] for n in names]), lr)
        except DivergenceError as exc:
            log.error("%s (epoch %d, loss %.6g)", exc, epoch, loss)
            diverged = True
            break
        params = _unpack(theta, spec.configs, names)
        if log_every and (epoch % log_every == 0 or epoch == len(lrs) - 1):
            log.info("epoch %d  loss %.6e  lr %.1e  %.1fs", epoch, loss, lr,
                     time.perf_counter() - t0)
        if checkpoint_every and checkpoint_dir and (epoch + 1) % checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"checkpoint_{epoch + 1:07d}.json"
            save_checkpoint(path, params, spec.configs, epoch + 1, seed=seed)
            ckpts.append(str(path))
        if callback is not None:
            callback(epoch, loss, params)
    return TrainResult(params, history[:rows], model.term_names(), diverged,
                       time.perf_counter() - t0, ckpts)
