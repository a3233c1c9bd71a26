"""Adversarial training of the forward and reverse translation networks."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import PairDataset
from .model import PatchDiscriminator, UnetGenerator


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 2e-4
    minibatch: int = 1
    epochs: int = 1
    l1_weight: float = 100.0
    base_channels: int = 64
    seed: int = 0
    limit: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.minibatch < 1 or self.epochs < 1:
            raise ValueError("learning_rate, minibatch and epochs must be positive")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")


def channels_for(direction: str) -> tuple[int, int]:
    return (1, 3) if direction == "forward" else (3, 1)


def train(dataset_dir, direction: str, out_path, cfg: TrainingConfig,
          log_path=None, quiet: bool = False) -> dict:
    """Train one translation direction on a pair directory; writes the model
    artifact and a per-iteration loss CSV, and returns summary statistics."""
    dataset = PairDataset(dataset_dir, direction=direction, limit=cfg.limit)
    if len(dataset) == 0:
        raise ValueError(f"dataset at {dataset_dir} holds no entries")
    in_ch, out_ch = channels_for(direction)

    torch.manual_seed(cfg.seed)
    generator = UnetGenerator(in_ch, out_ch, dataset.image_size,
                              base_channels=cfg.base_channels)
    discriminator = PatchDiscriminator(in_ch + out_ch,
                                       base_channels=cfg.base_channels)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.learning_rate,
                             betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.learning_rate,
                             betas=(0.5, 0.999))
    gan_loss = nn.BCEWithLogitsLoss()
    l1_loss = nn.L1Loss()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if log_path is None:
        log_path = out_path.with_suffix(".loss.csv")

    order_rng = np.random.default_rng(cfg.seed)
    rows = []
    step = 0
    start = time.time()
    generator.train()
    discriminator.train()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(dataset))
        for begin in range(0, len(order), cfg.minibatch):
            batch = [dataset[int(i)] for i in order[begin:begin + cfg.minibatch]]
            x = torch.from_numpy(np.stack([b[0] for b in batch]))
            y = torch.from_numpy(np.stack([b[1] for b in batch]))

            fake = generator(x)

            opt_d.zero_grad(set_to_none=True)
            pred_real = discriminator(x, y)
            pred_fake = discriminator(x, fake.detach())
            loss_d = 0.5 * (gan_loss(pred_real, torch.ones_like(pred_real))
                            + gan_loss(pred_fake, torch.zeros_like(pred_fake)))
            loss_d.backward()
            opt_d.step()

            opt_g.zero_grad(set_to_none=True)
            pred_fake = discriminator(x, fake)
            loss_gan = gan_loss(pred_fake, torch.ones_like(pred_fake))
            loss_l1 = l1_loss(fake, y)
            loss_g = loss_gan + cfg.l1_weight * loss_l1
            loss_g.backward()
            opt_g.step()

            rows.append({
                "iteration": step,
                "loss_g": float(loss_g.item()),
                "loss_g_gan": float(loss_gan.item()),
                "loss_g_l1": float(loss_l1.item()),
                "loss_d": float(loss_d.item()),
            })
            step += 1
            if not quiet and step % 500 == 0:
                print(f"iter {step}: g {loss_g.item():.3f} "
                      f"l1 {loss_l1.item():.4f} d {loss_d.item():.3f}",
                      flush=True)

    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "loss_g",
                                                "loss_g_gan", "loss_g_l1",
                                                "loss_d"])
        writer.writeheader()
        writer.writerows(rows)

    meta = {
        "direction": direction,
        "image_size": dataset.image_size,
        "in_channels": in_ch,
        "out_channels": out_ch,
        "training": asdict(cfg),
        "dataset_size": len(dataset),
        "seconds": time.time() - start,
    }
    torch.save({"generator": generator.state_dict(), "meta": meta}, out_path)

    l1_values = np.array([r["loss_g_l1"] for r in rows])
    decile = max(1, len(l1_values) // 10)
    summary = {
        "iterations": len(rows),
        "first_decile_l1": float(l1_values[:decile].mean()),
        "last_decile_l1": float(l1_values[-decile:].mean()),
        "meta": meta,
        "loss_csv": str(log_path),
    }
    return summary


def load_generator(model_path):
    payload = torch.load(model_path, map_location="cpu", weights_only=True)
    meta = payload["meta"]
    generator = UnetGenerator(meta["in_channels"], meta["out_channels"],
                              meta["image_size"],
                              base_channels=meta["training"]["base_channels"])
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator, meta


def save_meta_json(meta: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
