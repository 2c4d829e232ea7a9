"""Training driver and the experiment procedures.

Every run is fully determined by (config, seed): dataset generation, weight
init, shuffling, and augmentation all draw from seed-derived streams, so
repeated runs emit bitwise-identical CSVs.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field

import numpy as np

from . import instrumentation as instr
from .config import ExperimentConfig
from .csvio import emit_csv
from .datasets import Dataset, augment, make_blobs, make_spirals, load_cifar10_binary
from .errors import ConfigError, DivergenceError
from .network import (ActivationSpec, Activation, Dense, InitScheme,
                      NetworkSpec, backward, build_mlp, build_plain_cnn,
                      build_resnet, build_toy_cnn, forward, init_params)
from .optim import PlateauSchedule, ScheduleState, sgd_step, zero_velocities


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def get_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    m = cfg.model
    image_shape = (m.in_channels, m.input_hw, m.input_hw) \
        if (d.as_images or cfg.model.family != "mlp") else None
    if d.kind == "synthetic_blobs":
        dims = int(np.prod(image_shape)) if image_shape else d.dims
        return make_blobs(classes=d.classes, dims=dims, spread=d.spread,
                          n=d.n, seed=cfg.seed, image_shape=image_shape)
    if d.kind == "synthetic_spirals":
        return make_spirals(classes=d.classes, n=d.n, seed=cfg.seed,
                            noise=d.noise, image_shape=image_shape)
    if d.kind == "cifar10_binary":
        return load_cifar10_binary(d.path, subset=d.subset, seed=cfg.seed)
    raise ConfigError(f"unknown dataset kind {d.kind!r}")


def build_model(cfg: ExperimentConfig, num_classes: int,
                activation: ActivationSpec = None) -> NetworkSpec:
    act = activation if activation is not None else cfg.activation
    m = cfg.model
    if m.family == "mlp":
        if isinstance(m.hidden, list):
            hidden = m.hidden
        else:
            # depth counts weighted layers; the last one is the classifier.
            hidden = [m.hidden] * max(m.depth - 1, 1)
        return build_mlp(hidden, num_classes, act, input_dim=cfg.dataset.dims)
    if m.family == "toy_cnn":
        return build_toy_cnn(num_classes, act, input_hw=m.input_hw,
                             in_channels=m.in_channels)
    if m.family == "plain_cnn":
        return build_plain_cnn(m.depth, m.width, num_classes, m.with_bn, act,
                               input_hw=m.input_hw, in_channels=m.in_channels)
    if m.family == "resnet":
        return build_resnet(m.depth, m.width, num_classes, act,
                            with_bn=m.with_bn, input_hw=m.input_hw,
                            in_channels=m.in_channels)
    raise ConfigError(f"unknown model family {m.family!r}")


# ---------------------------------------------------------------------------
# One training run
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    run_id: str
    rows: list = field(default_factory=list)          # metrics.csv rows
    layerstats_rows: list = field(default_factory=list)
    ttrace_rows: list = field(default_factory=list)
    diverged: bool = False
    final_train_acc: float = 0.0
    max_train_acc: float = 0.0
    final_mean_t: float = float("nan")
    spec: NetworkSpec = None
    params: dict = None

    def epochs_to_threshold(self, frac=0.9):
        """First epoch (1-based) reaching `frac` of the final train
        accuracy; budget+1 if never reached (diverged runs)."""
        target = frac * self.final_train_acc
        for row in self.rows:
            if not row["diverged"] and row["train_acc"] >= target - 1e-12:
                return row["epoch"]
        return len(self.rows) + 1


def _eval_acc(spec, params, x, y, batch_size=256):
    hits = 0
    for s in range(0, len(y), batch_size):
        logits, _, _ = forward(spec, params, x[s:s + batch_size], mode="eval")
        hits += (logits.argmax(axis=1) == y[s:s + batch_size]).sum()
    return float(hits) / len(y)


def train_run(cfg: ExperimentConfig, data: Dataset = None,
              spec: NetworkSpec = None, activation: ActivationSpec = None,
              run_id: str = None, init_kind: str = None,
              collect_stats: bool = False) -> RunResult:
    data = data if data is not None else get_dataset(cfg)
    spec = spec if spec is not None else build_model(cfg, data.num_classes, activation)
    scheme = InitScheme(init_kind or cfg.init, cfg.seed)
    params = init_params(spec, scheme)
    velocities = zero_velocities(params)
    sched = ScheduleState(cfg.optim.schedule)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(99,)))
    res = RunResult(run_id or cfg.run_id, spec=spec, params=params)

    n = len(data.train_y)
    step = 0
    last_metric = None
    mult = 1.0
    for epoch in range(cfg.epochs):
        mult = sched.epoch_multiplier(epoch, last_metric)
        perm = rng.permutation(n)
        loss_sum = hits = seen = 0
        diverged = False
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            xb = data.train_x[idx]
            yb = data.train_y[idx]
            if cfg.dataset.augment:
                xb = augment(xb, rng)
            logits, loss, cache = forward(spec, params, xb, yb, mode="train")
            if not np.isfinite(loss):
                diverged = True
                break
            try:
                grads = backward(spec, params, cache, yb)
                sgd_step(params, grads, velocities, cfg.optim, spec, mult)
            except DivergenceError:
                diverged = True
                break
            loss_sum += loss * len(yb)
            hits += (logits.argmax(axis=1) == yb).sum()
            seen += len(yb)
            step += 1
        if diverged or seen == 0:
            res.diverged = True
            res.rows.append({"run_id": res.run_id, "epoch": epoch + 1,
                             "step": step, "train_loss": float("nan"),
                             "train_acc": 0.0, "test_acc": 0.0,
                             "lr_multiplier": float(mult), "diverged": True})
            break
        train_loss = loss_sum / seen
        train_acc = hits / seen
        test_acc = _eval_acc(spec, params, data.test_x, data.test_y)
        res.rows.append({"run_id": res.run_id, "epoch": epoch + 1,
                         "step": step, "train_loss": float(train_loss),
                         "train_acc": float(train_acc),
                         "test_acc": float(test_acc),
                         "lr_multiplier": float(mult), "diverged": False})
        res.max_train_acc = max(res.max_train_acc, float(train_acc))
        res.final_train_acc = float(train_acc)
        if isinstance(cfg.optim.schedule, PlateauSchedule) \
                and cfg.optim.schedule.metric == "test_error":
            last_metric = 1.0 - test_acc
        else:
            last_metric = train_loss
        if collect_stats:
            _collect_epoch_stats(cfg, res, data, epoch + 1, step, mult)
    res.final_mean_t = _mean_t(spec, params)
    return res


def _mean_t(spec, params):
    vals = [params[i]["t"].mean() for i, l in enumerate(spec.layers)
            if isinstance(l, Activation) and l.spec.ng]
    return float(np.mean(vals)) if vals else float("nan")


def _collect_epoch_stats(cfg, res: RunResult, data, epoch, step, mult):
    spec, params = res.spec, res.params
    probe_n = min(32, len(data.train_y))
    xb, yb = data.train_x[:probe_n], data.train_y[:probe_n]
    shift = instr.mean_shift_trace(spec, params, xb, yb)
    wvar = dict(instr.weight_variance_trace(spec, params))
    for layer_idx, mean_z, mean_g in shift:
        res.layerstats_rows.append({
            "run_id": res.run_id, "step": step, "layer": layer_idx,
            "mean_z": mean_z, "var_z": float("nan"), "mean_g": mean_g,
            "var_g": float("nan"), "var_dw": float("nan"),
            "lower_bound": float("nan"), "upper_bound": float("nan"),
            "weight_var": float(wvar[layer_idx])})
    for tt in instr.t_trace(spec, params, epoch):
        res.ttrace_rows.append({
            "run_id": res.run_id, "epoch": epoch, "layer": tt.layer_index,
            "t_mean": tt.t_mean, "t_std": tt.t_std, "t_min": tt.t_min,
            "t_max": tt.t_max})


def converged(res: RunResult, num_classes: int, margin: float) -> bool:
    """A run converged iff it never diverged and ended clearly above
    chance within its budget."""
    return (not res.diverged
            and res.final_train_acc > 1.0 / num_classes + margin)


# ---------------------------------------------------------------------------
# Experiment procedures
# ---------------------------------------------------------------------------

def _sub_cfg(cfg, **act_overrides) -> ActivationSpec:
    act = copy.deepcopy(cfg.activation)
    for k, v in act_overrides.items():
        setattr(act, k, v)
    return act


def run_single(cfg: ExperimentConfig):
    res = train_run(cfg, collect_stats=True)
    _write_run(cfg, [res])
    return [res]


def run_capacity_sweep(cfg: ExperimentConfig):
    """Fixed-shift ladder plus a trainable run on the small two-conv model.

    Emits one summary row per setting (max train accuracy; final mean t for
    the trainable run) alongside the usual per-epoch metrics.
    """
    data = get_dataset(cfg)
    settings = [("none", None)]
    settings += [(f"t{t:g}", float(t)) for t in cfg.t_values]
    settings += [("trainable", float(cfg.activation.t_init))]
    results, summary = [], []
    for name, t0 in settings:
        if name == "none":
            act = _sub_cfg(cfg, base="identity", ng=False)
        elif name == "trainable":
            act = _sub_cfg(cfg, ng=True, trainable=True, t_init=t0)
        else:
            act = _sub_cfg(cfg, ng=True, trainable=False, t_init=t0)
        res = train_run(cfg, data=data, activation=act,
                        run_id=f"{cfg.run_id}-{name}")
        results.append(res)
        summary.append({"run_id": res.run_id, "setting": name,
                        "max_train_acc": res.max_train_acc,
                        "final_mean_t": res.final_mean_t,
                        "diverged": res.diverged})
    _write_run(cfg, results)
    emit_csv(summary, os.path.join(cfg.out, "capacity.csv"),
             schema=["run_id", "setting", "max_train_acc", "final_mean_t",
                     "diverged"])
    return results, summary


def run_critical_depth(cfg: ExperimentConfig):
    """Depth ladder on the plain CNN, wrapped vs unwrapped activation; the
    critical depth is the largest depth that still converges."""
    data = get_dataset(cfg)
    depths = [cfg.depth_start + k * cfg.depth_step
              for k in range(cfg.depth_count)]
    variants = [("ng", _sub_cfg(cfg, ng=True)),
                ("plain", _sub_cfg(cfg, ng=False))]
    results, summary = [], []
    critical = {}
    for vname, act in variants:
        for depth in depths:
            sub = copy.deepcopy(cfg)
            sub.model.depth = depth
            spec = build_model(sub, data.num_classes, act)
            res = train_run(sub, data=data, spec=spec,
                            run_id=f"{cfg.run_id}-{vname}-d{depth}")
            ok = converged(res, data.num_classes, cfg.convergence_margin)
            results.append(res)
            summary.append({"run_id": res.run_id, "variant": vname,
                            "depth": depth, "converged": ok,
                            "final_train_acc": res.final_train_acc,
                            "diverged": res.diverged})
            if ok:
                critical[vname] = max(critical.get(vname, 0), depth)
    for vname in dict(variants):
        summary.append({"run_id": f"{cfg.run_id}-{vname}-critical",
                        "variant": vname, "depth": critical.get(vname, 0),
                        "converged": True, "final_train_acc": float("nan"),
                        "diverged": False})
    _write_run(cfg, results)
    emit_csv(summary, os.path.join(cfg.out, "critical_depth.csv"),
             schema=["run_id", "variant", "depth", "converged",
                     "final_train_acc", "diverged"])
    return results, critical


def run_learning_behavior(cfg: ExperimentConfig):
    """Init-scheme grid (xavier/msra/orthogonal) for the wrapped and plain
    activation; summarizes epochs-to-threshold and its cross-init spread."""
    data = get_dataset(cfg)
    inits = ["xavier", "msra", "orthogonal"]
    variants = [("ng", _sub_cfg(cfg, ng=True)),
                ("plain", _sub_cfg(cfg, ng=False))]
    results, summary = [], []
    spread = {}
    for vname, act in variants:
        epochs_needed = []
        for init in inits:
            res = train_run(cfg, data=data, activation=act, init_kind=init,
                            run_id=f"{cfg.run_id}-{vname}-{init}")
            e = res.epochs_to_threshold()
            epochs_needed.append(e)
            results.append(res)
            summary.append({"run_id": res.run_id, "variant": vname,
                            "init": init, "epochs_to_threshold": e,
                            "final_train_acc": res.final_train_acc,
                            "diverged": res.diverged})
        spread[vname] = max(epochs_needed) - min(epochs_needed)
        summary.append({"run_id": f"{cfg.run_id}-{vname}-spread",
                        "variant": vname, "init": "spread",
                        "epochs_to_threshold": spread[vname],
                        "final_train_acc": float("nan"), "diverged": False})
    _write_run(cfg, results)
    emit_csv(summary, os.path.join(cfg.out, "learning_behavior.csv"),
             schema=["run_id", "variant", "init", "epochs_to_threshold",
                     "final_train_acc", "diverged"])
    return results, spread


def run_variance_study(cfg: ExperimentConfig):
    """Wrapped vs plain run with per-epoch layer statistics, shift traces,
    and per-sample sandwich probes on the dense head."""
    data = get_dataset(cfg)
    variants = [("ng", _sub_cfg(cfg, ng=True)),
                ("plain", _sub_cfg(cfg, ng=False))]
    results = {}
    for vname, act in variants:
        res = train_run(cfg, data=data, activation=act,
                        run_id=f"{cfg.run_id}-{vname}", collect_stats=True)
        probe_rows = sandwich_probes(res.spec, res.params, data,
                                     cfg.optim.lr, cfg.probe_steps,
                                     res.run_id)
        res.layerstats_rows.extend(probe_rows)
        results[vname] = res
    _write_run(cfg, list(results.values()))
    return results


def sandwich_probes(spec, params, data, lr, n_probes, run_id):
    """Batch-size-1 updates on each dense layer, checked against the
    analytic variance bounds."""
    rows = []
    dense_idx = [i for i, l in enumerate(spec.layers) if isinstance(l, Dense)]
    for k in range(n_probes):
        x = data.train_x[k:k + 1]
        y = data.train_y[k:k + 1]
        _, _, cache = forward(spec, params, x, y, mode="eval")
        grads_at = instr._preactivation_grads(spec, params, cache)
        for i in dense_idx:
            z = cache["layers"][i]["x"][0]
            g = grads_at[i][0]
            stats = instr.sandwich_check(z, g, lr, layer_index=i, step=k)
            rows.append({"run_id": run_id, "step": k, "layer": i,
                         "mean_z": stats.mean_z, "var_z": stats.var_z,
                         "mean_g": stats.mean_g, "var_g": stats.var_g,
                         "var_dw": stats.var_dw,
                         "lower_bound": stats.lower_bound,
                         "upper_bound": stats.upper_bound,
                         "weight_var": float(np.var(params[i]["W"]))})
    return rows


def _write_run(cfg: ExperimentConfig, results):
    os.makedirs(cfg.out, exist_ok=True)
    metrics = [row for res in results for row in res.rows]
    if metrics:
        emit_csv(metrics, os.path.join(cfg.out, "metrics.csv"), schema="metrics")
    layerstats = [row for res in results for row in res.layerstats_rows]
    if layerstats:
        emit_csv(layerstats, os.path.join(cfg.out, "layerstats.csv"),
                 schema="layerstats")
    ttrace = [row for res in results for row in res.ttrace_rows]
    if ttrace:
        emit_csv(ttrace, os.path.join(cfg.out, "ttrace.csv"), schema="ttrace")


EXPERIMENTS = {
    "single_run": run_single,
    "capacity_sweep": run_capacity_sweep,
    "critical_depth": run_critical_depth,
    "learning_behavior": run_learning_behavior,
    "variance_study": run_variance_study,
}


def run_experiment(cfg: ExperimentConfig):
    try:
        fn = EXPERIMENTS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}") from None
    return fn(cfg)
