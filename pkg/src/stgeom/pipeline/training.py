"""Two-stage training: per-task stage 1, joint head fine-tuning in stage 2."""
import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..grid_masks import SamplePolicy, draw_subgrid
from ..losses import TASKS, LossWeights, total_loss
from ..numerics.optim import OptimState, adamw_step
from ..numerics.tensor import GradTape, no_grad
from .model import GROUPS, TASK_GROUP, encode, forward, predict_heads, task_losses

STAGE1_ORDER = ("cam", "depth", "mask", "point", "track")
HEAD_GROUPS = ("head_cam", "head_dense", "head_track")
BACKBONE = ("encoder", "cvgf", "ctlf")
# 1x1 projections inside head_dense that belong to one dense task only
_TASK_LEAVES = {"depth": ("head_dense.depth_",), "mask": ("head_dense.mask_",),
                "point": ("head_dense.point_",)}
LOG_FIELDS = ["stage", "task", "step", *TASKS, "total", "lr"]


class FreezeViolation(RuntimeError):
    pass


@dataclass
class StagePlan:
    stage: int
    tasks: tuple
    trainable: tuple
    frozen: tuple
    steps_per_task: int
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if set(self.trainable) | set(self.frozen) != set(GROUPS):
            raise ValueError("trainable and frozen groups must cover every group")
        if set(self.trainable) & set(self.frozen):
            raise ValueError("a group cannot be both trainable and frozen")


def stage1_plans(steps_per_task, tasks=STAGE1_ORDER):
    """One plan per task, in task order: backbone plus that task's head."""
    plans = []
    for task in tasks:
        train = BACKBONE + (TASK_GROUP[task],)
        plans.append(StagePlan(1, (task,), train,
                               tuple(g for g in GROUPS if g not in train), steps_per_task,
                               LossWeights().only(task)))
    return plans


def stage2_plan(steps, weights=None):
    return StagePlan(2, TASKS, HEAD_GROUPS, BACKBONE, steps, weights or LossWeights())


def joint_plan(steps, weights=None):
    """Single-stage ablation: every group trained on the joint objective."""
    return StagePlan(1, TASKS, GROUPS, (), steps, weights or LossWeights())


def _param_names(params, plan):
    names = params.names(plan.trainable)
    if plan.stage == 1 and len(plan.tasks) == 1:
        others = [pre for t, leaves in _TASK_LEAVES.items() if t != plan.tasks[0]
                  for pre in leaves]
        names = [n for n in names if not n.startswith(tuple(others))]
    return names


def _clip(grads, max_norm):
    if not max_norm:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    return {k: g * (max_norm / total) for k, g in grads.items()}


class TrainLog:
    """Rows of ``train_log.csv``; kept in memory and optionally appended to disk."""

    def __init__(self, path=None):
        self.rows = []
        self.path = path
        if path is not None and (not os.path.exists(path) or os.path.getsize(path) == 0):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_FIELDS)

    def add(self, stage, task, step, losses, lr):
        row = {"stage": stage, "task": task, "step": step, "lr": lr,
               **{k: losses.get(k, "") for k in TASKS}, "total": losses["total"]}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.DictWriter(fh, LOG_FIELDS).writerow(
                    {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def run_plan(params, cfg, scenes, plan, train, rng, log=None, subgrid=None):
    """Optimise ``params`` in place following ``plan``.

    ``scenes`` are visited round-robin, one per step. With ``subgrid`` each
    step trains on a random view subset crossed with a contiguous time
    window. Frozen groups are checksummed every ``train.checksum_every``
    steps and at the end; any change raises :class:`FreezeViolation`.
    """
    subgrid = train.subgrid if subgrid is None else subgrid
    frozen_sum = params.checksum(plan.frozen)
    task_label = plan.tasks[0] if len(plan.tasks) == 1 else "all"
    names = _param_names(params, plan)
    params.set_trainable(plan.trainable)
    opt = OptimState(lr=train.lr, weight_decay=train.weight_decay)
    policy = SamplePolicy(train.min_views, train.max_views, train.min_times, train.max_times)

    # stage 2 with a frozen backbone on full grids: fused features are constant
    cache = {}
    cacheable = plan.stage == 2 and not subgrid and not set(plan.trainable) & set(BACKBONE)

    def verify(step):
        if params.checksum(plan.frozen) != frozen_sum:
            raise FreezeViolation(f"frozen groups {plan.frozen} changed by step {step}")

    for step in range(plan.steps_per_task):
        k = step % len(scenes)
        scene = scenes[k]
        if subgrid:
            V, T = scene.V, scene.T
            views, times = draw_subgrid(V, T, policy, rng)
            scene = scene.subset(views, times)
        queries = scene.gt_tracks.queries
        with GradTape() as tape:
            if cacheable:
                if k not in cache:
                    with no_grad():
                        cache[k] = encode(params.tensors, cfg, scene.frames,
                                          scene.config.setting)
                pred = predict_heads(params.tensors, cfg, cache[k], plan.tasks, queries)
            else:
                pred = forward(params.tensors, cfg, scene.frames, scene.config.setting,
                               plan.tasks, queries)
            comps = task_losses(pred, scene, cfg, plan.tasks)
            report = total_loss(comps, plan.weights)
        grads = tape.gradient(report.total, {n: params[n] for n in names})
        adamw_step(params.tensors, _clip(grads, train.grad_clip), opt)
        if log is not None:
            log.add(plan.stage, task_label, step, report.floats(), opt.lr)
        if (step + 1) % train.checksum_every == 0:
            verify(step + 1)
    verify(plan.steps_per_task)
    params.set_trainable(GROUPS)
    return params


def train_stage1(params, cfg, scenes, train, rng, log=None, tasks=STAGE1_ORDER, steps=None):
    steps = train.steps_per_task if steps is None else steps
    for plan in stage1_plans(steps, tasks):
        run_plan(params, cfg, scenes, plan, train, rng, log)
    return params


def train_stage2(params, cfg, scenes, train, rng, log=None, steps=None):
    steps = train.stage2_steps if steps is None else steps
    plan = stage2_plan(steps, train.weights)
    return run_plan(params, cfg, scenes, plan, train, rng, log, subgrid=False)


def train_single_stage(params, cfg, scenes, train, rng, log=None, steps=None):
    steps = (len(STAGE1_ORDER) * train.steps_per_task + train.stage2_steps
             if steps is None else steps)
    return run_plan(params, cfg, scenes, joint_plan(steps, train.weights), train, rng, log)


def objective(params, cfg, scene, weights=None):
    """Weighted multi-task loss on the full grid of ``scene`` (no gradients)."""
    with no_grad():
        pred = forward(params.tensors, cfg, scene.frames, scene.config.setting, TASKS,
                       scene.gt_tracks.queries)
        comps = task_losses(pred, scene, cfg, TASKS)
        return total_loss(comps, weights or LossWeights()).floats()
