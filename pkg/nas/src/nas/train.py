"""Two-stage differentiable search: branch selection, then channel pruning."""

from dataclasses import dataclass, field

import torch

from .data import toy_batch
from .model import PitNet, SearchNet, default_blueprint, select_architecture


class TrainingDiverged(RuntimeError):
    """Raised as soon as the objective stops being finite."""


@dataclass
class NasConfig:
    lam: float = 0.0
    seed: int = 0
    epochs: int = 4
    lr: float = 3e-3
    lr_theta: float = 0.03
    batch: int = 16
    steps_per_epoch: int = 24
    eval_batch: int = 64
    input_hw: int = 96
    c0: int = 1
    n_out: int = 4
    widths: tuple = (8, 16, 16, 32, 32, 48)
    strides: tuple = (2, 2, 1, 2, 1, 1)


@dataclass
class TrainResult:
    config: NasConfig
    selection: tuple
    net: PitNet
    search_initial_complexity: float
    search_log: list = field(default_factory=list)
    prune_initial_complexity: float = 0.0
    prune_log: list = field(default_factory=list)


def nas_loss(task_loss, complexity, lam):
    """The search objective: task loss plus lam times weight count."""
    return task_loss + lam * complexity


def _split_params(net):
    """Architecture parameters (every `theta`) vs. ordinary weights."""
    theta, weights = [], []
    for name, p in net.named_parameters():
        (theta if name.endswith("theta") else weights).append(p)
    return theta, weights


def _run_stage(net, cfg, gen, eval_set, label):
    theta, weights = _split_params(net)
    groups = [{"params": weights, "lr": cfg.lr}]
    if theta:
        groups.append({"params": theta, "lr": cfg.lr_theta})
    opt = torch.optim.Adam(groups)
    eval_x, eval_y = eval_set
    log = []
    for epoch in range(cfg.epochs):
        task_sum = 0.0
        for _ in range(cfg.steps_per_epoch):
            x, y = toy_batch(gen, cfg.batch, cfg.input_hw)
            task = torch.nn.functional.mse_loss(net(x), y)
            loss = nas_loss(task, net.complexity(), cfg.lam)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in {label} epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            task_sum += float(task.detach())
        with torch.no_grad():
            eval_loss = float(torch.nn.functional.mse_loss(net(eval_x), eval_y))
        log.append({
            "epoch": epoch,
            "task_loss": eval_loss,  # on the fixed eval batch, not the moving train batches
            "train_loss": task_sum / cfg.steps_per_epoch,
            "complexity": float(net.complexity().detach()),
        })
    return log


def train(cfg: NasConfig):
    """Run both stages deterministically for cfg.seed and return the result.

    Stage 1 trains weights and branch logits of the supernet jointly, then
    freezes the argmax selection. Stage 2 retrains the selected chain with
    channel masks under the same lam pressure.
    """
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed * 7919 + 1)
    eval_gen = torch.Generator().manual_seed(cfg.seed * 6007 + 5)
    eval_set = toy_batch(eval_gen, cfg.eval_batch, cfg.input_hw)
    specs = default_blueprint(c0=cfg.c0, widths=cfg.widths, strides=cfg.strides)

    search = SearchNet(specs, c0=cfg.c0, n_out=cfg.n_out)
    search_init = float(search.complexity().detach())
    search_log = _run_stage(search, cfg, gen, eval_set, "search")
    selection = select_architecture(search)

    net = PitNet.from_search(search, selection)
    prune_init = float(net.complexity().detach())
    prune_log = _run_stage(net, cfg, gen, eval_set, "prune")

    return TrainResult(
        config=cfg,
        selection=selection,
        net=net,
        search_initial_complexity=search_init,
        search_log=search_log,
        prune_initial_complexity=prune_init,
        prune_log=prune_log,
    )
