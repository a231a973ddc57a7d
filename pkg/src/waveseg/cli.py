"""Command-line surface: one binary, six subcommands.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every run prints its resolved configuration and seed; commands that write
artifacts also drop a run_metadata.json with the seed, a hash of the
resolved config, and the build version, so results can be traced back.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from . import autodiff as ad
from .ablation import ablate, save_ablation_csv, variant_name
from .backend import BACKEND
from .errors import (ConfigError, DimensionError, FormatError, UsageError,
                     WavesegError)
from .losses import LossConfig
from .metrics import evaluate_pair
from .network import NetworkConfig, WaveSegNet
from .phantom import PhantomConfig, make_dataset
from .training import (Sample, TrainConfig, configs_from_dict, configs_to_dict,
                       normalize_volume, predict_volume, prepare_records,
                       save_history, train)
from .volume_io import (load_checkpoint, load_manifest, read_volume,
                        save_checkpoint, save_dataset, save_report,
                        write_volume)
from .wavelet import HAAR, dwt3_core, iwt3_core
from .morphology import build_prior


def _parse_dims(text: str):
    parts = [p for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ConfigError(f"dims must be 1 or 3 integers, got '{text}'")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"dims must be integers, got '{text}'") from None


def _default_threads() -> int:
    raw = os.environ.get("WAVESEG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"WAVESEG_THREADS must be an integer, got '{raw}'") from None
    if n < 1:
        raise ConfigError(f"WAVESEG_THREADS must be >= 1, got {n}")
    return n


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _announce(command: str, resolved: dict, seed: int) -> None:
    print(f"waveseg {command} (build {__version__}, backend {BACKEND})")
    print(f"seed: {seed}")
    print(f"config: {json.dumps(resolved, sort_keys=True)}")


def _write_metadata(out_dir: str, command: str, resolved: dict, seed: int,
                    extra: dict = None) -> None:
    meta = {
        "command": command,
        "seed": seed,
        "config": resolved,
        "config_hash": _config_hash(resolved),
        "build_version": __version__,
        "backend": BACKEND,
    }
    meta.update(extra or {})
    with open(os.path.join(out_dir, "run_metadata.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_configs(args) -> tuple:
    """Config file first, then flag overrides on top."""
    raw = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            try:
                raw = json.load(f)
            except ValueError as e:
                raise ConfigError(f"{args.config}: not valid JSON: {e}") from None
    net, loss, tr = configs_from_dict(raw)

    net_over = {}
    for flag, fieldname in (("base_width", "base_width"), ("scales", "scales")):
        v = getattr(args, flag, None)
        if v is not None:
            net_over[fieldname] = v
    for toggle in ("mpe", "rfe", "msff", "wt_iwt"):
        v = getattr(args, f"no_{toggle}", False)
        if v:
            net_over[f"use_{toggle}"] = False
    if net_over:
        net = replace(net, **net_over)
        net.validate()

    tr_over = {}
    for flag in ("epochs", "patience", "batch_size", "lr", "seed", "threshold"):
        v = getattr(args, flag, None)
        if v is not None:
            tr_over[flag] = v
    for flag in ("patch", "overlap"):
        v = getattr(args, flag, None)
        if v is not None:
            tr_over[flag] = _parse_dims(v)
    if tr_over:
        tr = replace(tr, **tr_over)
    return net, loss, tr


def _samples_by_split(manifest_path: str, prior_radius: int):
    entries = load_manifest(manifest_path)
    splits = {"train": [], "val": [], "test": []}
    for e in entries:
        image, spacing = read_volume(e["volume"])
        vessels, _ = read_volume(e["vessels"])
        myo, _ = read_volume(e["myo"])
        splits[e["split"]].append(Sample(
            name=e["id"],
            image=normalize_volume(image),
            vessels=vessels.astype(np.float32),
            prior=build_prior(myo, radius=prior_radius).astype(np.float32),
            spacing=spacing,
        ))
    return splits


def cmd_phantom_gen(args) -> int:
    dims = _parse_dims(args.dims)
    pcfg = PhantomConfig(shape=dims)
    resolved = {"n": args.n, "dims": list(dims), "seed": args.seed,
                "out": args.out, "threads": args.threads}
    _announce("phantom-gen", resolved, args.seed)
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        from .phantom import generate_phantom, split_counts
        n_train, n_val, n_test = split_counts(args.n)
        children = np.random.SeedSequence(args.seed).spawn(args.n)
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            recs = list(pool.map(
                lambda i: generate_phantom(np.random.default_rng(children[i]),
                                           pcfg, name=f"phantom_{i:03d}"),
                range(args.n)))
        splits = {"train": recs[:n_train],
                  "val": recs[n_train:n_train + n_val],
                  "test": recs[n_train + n_val:]}
    else:
        splits = make_dataset(args.n, args.seed, pcfg)
    manifest = save_dataset(args.out, splits, args.seed)
    _write_metadata(args.out, "phantom-gen", resolved, args.seed)
    counts = {k: len(v) for k, v in splits.items()}
    print(f"wrote {args.n} phantoms to {args.out} (splits {counts})")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    net, loss, tr = _load_configs(args)
    resolved = configs_to_dict(net, loss, tr)
    _announce("train", resolved, tr.seed)
    splits = _samples_by_split(args.data, tr.prior_radius)
    os.makedirs(args.out, exist_ok=True)
    result = train(net, splits["train"], splits["val"], loss, tr,
                   log=lambda s: print(s, flush=True))
    ckpt_path = os.path.join(args.out, "checkpoint.ckpt")
    save_checkpoint(ckpt_path, result.best_state, meta={
        "network": resolved["network"],
        "train": resolved["train"],
        "loss": resolved["loss"],
        "variant": variant_name(net),
        "best_epoch": result.best_epoch,
        "best_val_dsc": result.best_val_dsc,
    })
    save_history(os.path.join(args.out, "history.csv"), result.history)
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_metadata(args.out, "train", resolved, tr.seed,
                    extra={"variant": variant_name(net),
                           "best_epoch": result.best_epoch,
                           "best_val_dsc": result.best_val_dsc,
                           "stopped_early": result.stopped_early})
    print(f"best epoch {result.best_epoch}, val DSC {result.best_val_dsc:.6f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _model_from_checkpoint(path):
    state, meta = load_checkpoint(path)
    try:
        net, loss, tr = configs_from_dict(
            {"network": meta["network"], "train": meta.get("train", {}),
             "loss": meta.get("loss", {})})
    except KeyError as e:
        raise FormatError(f"{path}: checkpoint metadata missing {e}") from None
    model = WaveSegNet(net, seed=0)
    model.load_state_dict(state)
    model.eval()
    return model, net, tr


def cmd_predict(args) -> int:
    model, net, tr = _model_from_checkpoint(args.checkpoint)
    for flag in ("patch", "overlap"):
        v = getattr(args, flag, None)
        if v is not None:
            tr = replace(tr, **{flag: _parse_dims(v)})
    if args.threshold is not None:
        tr = replace(tr, threshold=args.threshold)
    resolved = configs_to_dict(net, LossConfig(), tr)
    _announce("predict", resolved, tr.seed)

    image, spacing = read_volume(args.volume)
    if image.dtype != np.float32:
        raise ConfigError(f"{args.volume}: expected a float32 volume")
    prior = None
    if net.use_mpe:
        if not args.prior:
            raise UsageError("this checkpoint uses the anatomy prior; "
                             "pass --prior with a myocardium mask")
        myo, myo_spacing = read_volume(args.prior)
        if myo.shape != image.shape:
            raise ConfigError(f"prior shape {myo.shape} != volume shape {image.shape}")
        prior = build_prior(myo, radius=tr.prior_radius).astype(np.float32)
    elif args.prior:
        print("note: checkpoint ignores the prior; --prior unused")

    from scipy.special import expit
    logits = predict_volume(model, normalize_volume(image), prior, tr)
    mask = (expit(logits) >= tr.threshold).astype(np.uint8)
    write_volume(args.out, mask, spacing)
    print(f"wrote mask {mask.shape} ({int(mask.sum())} foreground voxels) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    resolved = {"pred": args.pred, "truth": args.truth}
    _announce("eval", resolved, 0)
    pred, sp_p = read_volume(args.pred)
    truth, sp_t = read_volume(args.truth)
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if not np.allclose(sp_p, sp_t, rtol=1e-5):
        raise ConfigError(f"spacing mismatch: pred {sp_p} vs truth {sp_t}")
    m = evaluate_pair(pred, truth, sp_t)
    row = m.as_row(model=os.path.basename(args.pred))
    print(json.dumps({k: row[k] for k in
                      ("model", "DSC", "Sensitivity", "Precision", "HD95_mm")},
                     indent=2))
    if args.out:
        save_report(args.out, [row])
        print(f"report: {args.out}")
    return 0


def cmd_ablate(args) -> int:
    net, loss, tr = _load_configs(args)
    resolved = configs_to_dict(net, loss, tr)
    _announce("ablate", resolved, tr.seed)
    splits = _samples_by_split(args.data, tr.prior_radius)
    os.makedirs(args.out, exist_ok=True)
    rows = ablate(net, splits["train"], splits["val"], splits["test"],
                  loss, tr, log=lambda s: print(s, flush=True))
    csv_path = os.path.join(args.out, "ablation.csv")
    save_ablation_csv(csv_path, rows)
    _write_metadata(args.out, "ablate", resolved, tr.seed)
    print(f"ablation table: {csv_path}")
    return 0


def cmd_wavelet_check(args) -> int:
    dims = _parse_dims(args.dims)
    resolved = {"dims": list(dims), "seed": args.seed}
    _announce("wavelet-check", resolved, args.seed)
    if any(d % 2 for d in dims):
        raise ConfigError(f"dims must be even for one wavelet level, got {dims}")
    rng = np.random.default_rng(args.seed)
    worst = worst_energy = 0.0
    for _ in range(20):
        x = rng.standard_normal((2, 3) + dims)
        sub = dwt3_core(x, HAAR)
        back = iwt3_core(sub, HAAR)
        worst = max(worst, float(np.abs(back - x).max()))
        ex = float((x * x).sum())
        es = float((sub * sub).sum())
        worst_energy = max(worst_energy, abs(es - ex) / ex)
    print(f"max round-trip error: {worst:.3e}")
    print(f"max relative energy error: {worst_energy:.3e}")
    if worst > 1e-5:
        print("FAIL: round-trip error above 1e-5")
        return 1
    print("OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="waveseg",
        description="Anatomy-guided wavelet segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True, help="number of volumes")
    g.add_argument("--dims", default="48", help="volume dims, e.g. 48 or 48,64,64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--threads", type=int, default=None,
                   help="worker threads (default from WAVESEG_THREADS)")
    g.set_defaults(func=cmd_phantom_gen)

    def add_train_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--patch")
        p.add_argument("--overlap")
        p.add_argument("--threshold", type=float)
        p.add_argument("--base-width", dest="base_width", type=int)
        p.add_argument("--scales", type=int)
        for t in ("mpe", "rfe", "msff", "wt-iwt"):
            p.add_argument(f"--no-{t}", dest=f"no_{t.replace('-', '_')}",
                           action="store_true",
                           help=f"disable the {t.upper()} module")

    t = sub.add_parser("train", help="train a model on a dataset manifest")
    t.add_argument("--data", required=True, help="manifest.json path")
    t.add_argument("--out", required=True, help="output directory")
    add_train_flags(t)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="sliding-window inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True, help="input SVOL volume")
    p.add_argument("--prior", help="myocardium mask SVOL (for prior-using models)")
    p.add_argument("--out", required=True, help="output mask path")
    p.add_argument("--patch")
    p.add_argument("--overlap")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a prediction against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", help="optional report path (.csv or .json)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score all module toggles")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    add_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    w = sub.add_parser("wavelet-check", help="wavelet round-trip sanity check")
    w.add_argument("--dims", default="16,16,16")
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_wavelet_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        if getattr(args, "threads", None) is None and args.command == "phantom-gen":
            args.threads = _default_threads()
        return args.func(args)
    except (ConfigError, UsageError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except WavesegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
