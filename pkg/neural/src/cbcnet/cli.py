"""`neural` command line: training, prediction, and a persistent predictor."""

from __future__ import annotations

import json
import sys

import click

from .train import TrainingConfig, save_meta_json, train


@click.group()
def main():
    """Forward/reverse translation networks over the pair-directory protocol."""


@main.command("train")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True),
              required=True)
@click.option("--direction", type=click.Choice(["forward", "reverse"]),
              default="forward", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--learning-rate", type=float, default=2e-4, show_default=True)
@click.option("--minibatch", type=int, default=1, show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--l1-weight", type=float, default=100.0, show_default=True)
@click.option("--base-channels", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--limit", type=int, default=None,
              help="Train on only the first N pairs.")
@click.option("--quiet", is_flag=True)
def train_cmd(dataset_dir, direction, out_path, learning_rate, minibatch,
              epochs, l1_weight, base_channels, seed, limit, quiet):
    """Train one direction and write the model artifact plus a loss CSV."""
    try:
        cfg = TrainingConfig(learning_rate=learning_rate, minibatch=minibatch,
                             epochs=epochs, l1_weight=l1_weight,
                             base_channels=base_channels, seed=seed,
                             limit=limit)
        summary = train(dataset_dir, direction, out_path, cfg, quiet=quiet)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    save_meta_json(summary["meta"], str(out_path) + ".meta.json")
    click.echo(json.dumps({"iterations": summary["iterations"],
                           "first_decile_l1": summary["first_decile_l1"],
                           "last_decile_l1": summary["last_decile_l1"],
                           "loss_csv": summary["loss_csv"]}))


@main.command("predict")
@click.option("--model", "model_path", type=click.Path(exists=True),
              required=True)
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def predict_cmd(model_path, in_path, out_path):
    """One forward pass: PNG in, PNG out."""
    from .predict import SizeMismatchError, predict_paths

    try:
        predict_paths(model_path, [(in_path, out_path)])
    except (SizeMismatchError, ValueError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command("serve")
@click.option("--model", "model_path", type=click.Path(exists=True),
              required=True)
def serve_cmd(model_path):
    """Persistent predictor: reads "predict IN OUT" lines on stdin, answers
    "ok" or "error: ..." per line; avoids per-image start-up cost."""
    from .predict import predict_file
    from .train import load_generator

    generator, meta = load_generator(model_path)
    click.echo("ready", nl=True)
    sys.stdout.flush()
    for line in sys.stdin:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "quit":
            break
        if parts[0] != "predict" or len(parts) != 3:
            click.echo("error: expected 'predict IN OUT'")
            sys.stdout.flush()
            continue
        try:
            predict_file(generator, meta, parts[1], parts[2])
            click.echo("ok")
        except Exception as exc:
            click.echo(f"error: {exc}")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
