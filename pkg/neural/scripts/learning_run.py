"""Toy-scale learning study: dataset-size sweep, noise resilience, reverse
network fidelity, and two-network cyclicity.

Drives the primary strictly through its CLI and the pair-directory protocol;
emits a JSON metrics report.  Sized for a desktop CPU.
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

TOY_CONFIG = """\
rings=1
grid_n=256
grid_pitch=2e-05
intensity_crop=64
phase_crop=192
out_size=64
"""


def run(cmd, **kwargs):
    print("+", " ".join(str(c) for c in cmd), flush=True)
    return subprocess.run([str(c) for c in cmd], check=True, text=True,
                          capture_output=True, **kwargs)


def evaluate(config, testset, out_dir, engine_args, noise="0", count=None):
    cmd = ["cbcsim", "evaluate", "--config", config, "--testset", testset,
           "--noise-units", noise, "--out", out_dir] + engine_args
    if count:
        cmd += ["--count", str(count)]
    run(cmd)
    with open(Path(out_dir) / "summary.json") as fh:
        return json.load(fh)


def mean_before(out_dir) -> float:
    values = []
    with open(Path(out_dir) / "cases.csv") as fh:
        header = fh.readline().strip().split(",")
        idx = header.index("pib_before")
        nidx = header.index("noise_units")
        for line in fh:
            parts = line.strip().split(",")
            if float(parts[nidx]) == 0.0:
                values.append(float(parts[idx]))
    return float(np.mean(values))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--work", default="/tmp/cbc-learning")
    parser.add_argument("--sizes", default="1000,4000,20000")
    parser.add_argument("--test-count", type=int, default=200)
    parser.add_argument("--base-channels", type=int, default=32)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--skip-reverse", action="store_true")
    args = parser.parse_args()

    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    config = work / "toy.cfg"
    config.write_text(TOY_CONFIG)
    sizes = [int(s) for s in args.sizes.split(",")]
    report = {"sizes": sizes, "base_channels": args.base_channels}

    t0 = time.time()
    testset = work / "test"
    if not (testset / "manifest.json").exists():
        run(["cbcsim", "generate", "--config", config, "--count",
             str(args.test_count), "--seed", "999999", "--out", testset,
             "--workers", str(args.workers)])

    trainsets = {}
    for i, size in enumerate(sizes):
        ds = work / f"train-{size}"
        trainsets[size] = ds
        if not (ds / "manifest.json").exists():
            run(["cbcsim", "generate", "--config", config, "--count",
                 str(size), "--seed", str(1000001 + i), "--out", ds,
                 "--workers", str(args.workers)])
    report["generation_seconds"] = time.time() - t0

    # random-guess baseline: the identity engine leaves phases untouched
    ident = evaluate(config, testset, work / "eval-identity", ["--engine",
                                                               "identity"])
    b_rand = ident["0.0"]["mean"]
    report["b_rand"] = b_rand
    print(f"== random baseline {b_rand:.2f}", flush=True)

    means = {}
    for size in sizes:
        model = work / f"forward-{size}.pt"
        if not model.exists():
            t1 = time.time()
            run(["neural", "train", "--dataset", trainsets[size],
                 "--direction", "forward", "--out", model,
                 "--base-channels", str(args.base_channels), "--seed", "7",
                 "--quiet"])
            print(f"== trained {size} in {time.time()-t1:.0f}s", flush=True)
        summary = evaluate(config, testset, work / f"eval-{size}",
                           ["--engine", "neural", "--model", model,
                            "--dataset-size", str(size)])
        means[size] = summary["0.0"]["mean"]
        print(f"== size {size}: mean corrected PIB {means[size]:.2f}",
              flush=True)
    report["forward_means"] = {str(k): v for k, v in means.items()}

    largest = sizes[-1]
    noise = evaluate(config, testset, work / "eval-noise",
                     ["--engine", "neural", "--model",
                      work / f"forward-{largest}.pt",
                      "--dataset-size", str(largest)],
                     noise="0,1,10")
    report["noise_means"] = {k: v["mean"] for k, v in noise.items()}
    print(f"== noise sweep {report['noise_means']}", flush=True)

    if not args.skip_reverse:
        reverse_model = work / "reverse.pt"
        if not reverse_model.exists():
            t1 = time.time()
            run(["neural", "train", "--dataset", trainsets[largest],
                 "--direction", "reverse", "--out", reverse_model,
                 "--base-channels", str(args.base_channels), "--seed", "11",
                 "--quiet"])
            print(f"== trained reverse in {time.time()-t1:.0f}s", flush=True)

        # reverse fidelity and two-network cyclicity over held-out entries
        from cbcnet.data import load_manifest
        from cbcnet.predict import predict_paths
        manifest, _ = load_manifest(testset)
        entries = manifest["entries"]
        pred_dir = work / "reverse-pred"
        pred_dir.mkdir(exist_ok=True)
        pairs = [(testset / e["phase_file"], pred_dir / f"{e['id']:06d}.png")
                 for e in entries]
        predict_paths(reverse_model, pairs)
        residuals = []
        from PIL import Image
        for entry, (_, pred) in zip(entries, pairs):
            with Image.open(testset / entry["intensity_file"]) as im:
                truth = np.asarray(im.convert("L"), dtype=float)
            with Image.open(pred) as im:
                approx = np.asarray(im.convert("L"), dtype=float)
            denom = np.maximum(truth, approx).sum()
            residuals.append(np.abs(truth - approx).sum() / max(denom, 1.0))
        report["reverse_l1_mean"] = float(np.mean(residuals))
        print(f"== reverse mean L1 {report['reverse_l1_mean']:.4f}", flush=True)

        cyc_dir = work / "cyclicity"
        cyc_dir.mkdir(exist_ok=True)
        fwd_out = [(testset / e["intensity_file"],
                    cyc_dir / f"phase-{e['id']:06d}.png") for e in entries]
        predict_paths(work / f"forward-{largest}.pt", fwd_out)
        rev_out = [(cyc_dir / f"phase-{e['id']:06d}.png",
                    cyc_dir / f"intensity-{e['id']:06d}.png") for e in entries]
        predict_paths(reverse_model, rev_out)
        cyc = []
        for entry in entries:
            with Image.open(testset / entry["intensity_file"]) as im:
                a = np.asarray(im.convert("L"), dtype=float)
            with Image.open(cyc_dir / f"intensity-{entry['id']:06d}.png") as im:
                b = np.asarray(im.convert("L"), dtype=float)
            denom = np.maximum(a, b).sum()
            cyc.append(np.abs(a - b).sum() / max(denom, 1.0))
        report["cyclicity_residuals_mean"] = float(np.mean(cyc))
        report["cyclicity_residuals_p90"] = float(np.percentile(cyc, 90))

    report["total_seconds"] = time.time() - t0
    out = work / "report.json"
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(json.dumps(report, indent=1, sort_keys=True))
    print(f"report written to {out}", flush=True)


if __name__ == "__main__":
    sys.exit(main())
