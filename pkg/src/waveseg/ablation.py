"""Module-toggle ablation: six network variants trained and scored under
identical data and seeds, reported as one table."""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Tuple

from .errors import ConfigError
from .losses import LossConfig
from .network import NetworkConfig, WaveSegNet
from .training import Sample, TrainConfig, evaluate_model, mean_metrics, train

VARIANTS: Tuple[Tuple[str, Dict[str, bool]], ...] = (
    ("Baseline", dict(use_mpe=False, use_rfe=False, use_msff=False, use_wt_iwt=False)),
    ("E1", dict(use_mpe=True, use_rfe=False, use_msff=False, use_wt_iwt=False)),
    ("E2", dict(use_mpe=False, use_rfe=True, use_msff=False, use_wt_iwt=False)),
    ("E3", dict(use_mpe=False, use_rfe=False, use_msff=True, use_wt_iwt=False)),
    ("E4", dict(use_mpe=False, use_rfe=False, use_msff=False, use_wt_iwt=True)),
    ("Full model", dict(use_mpe=True, use_rfe=True, use_msff=True, use_wt_iwt=True)),
)

ABLATION_COLUMNS = ("model", "MPE", "RFE", "MSFF", "WT/IWT",
                    "DSC", "Sensitivity", "Precision", "HD95")


def variant_config(base: NetworkConfig, name: str) -> NetworkConfig:
    for vname, toggles in VARIANTS:
        if vname == name:
            return replace(base, **toggles)
    raise ConfigError(f"unknown variant '{name}'; "
                      f"choose from {[v for v, _ in VARIANTS]}")


def variant_name(cfg: NetworkConfig) -> str:
    """Map a toggle combination back to its table row name."""
    t = cfg.toggles()
    for name, toggles in VARIANTS:
        if toggles == t:
            return name
    return "custom"


def parameter_fingerprints(base: NetworkConfig, seed: int = 0) -> Dict[str, int]:
    """Trainable parameter count per variant; distinct counts certify the
    toggles really change the architecture."""
    out = {}
    for name, _ in VARIANTS:
        model = WaveSegNet(variant_config(base, name), seed=seed)
        out[name] = model.num_parameters()
    return out


def ablate(net_base: NetworkConfig, train_samples: List[Sample],
           val_samples: List[Sample], test_samples: List[Sample],
           loss_cfg: LossConfig = LossConfig(),
           train_cfg: TrainConfig = TrainConfig(),
           log=None) -> List[dict]:
    """Train and score every variant; returns table rows in variant order."""
    if not test_samples:
        raise ConfigError("ablation needs a test split")
    rows = []
    for name, toggles in VARIANTS:
        if log:
            log(f"=== variant {name} ===")
        cfg = replace(net_base, **toggles)
        result = train(cfg, train_samples, val_samples, loss_cfg, train_cfg, log=log)
        mm = mean_metrics(evaluate_model(result.model, test_samples, train_cfg))
        rows.append({
            "model": name,
            "MPE": int(toggles["use_mpe"]),
            "RFE": int(toggles["use_rfe"]),
            "MSFF": int(toggles["use_msff"]),
            "WT/IWT": int(toggles["use_wt_iwt"]),
            "DSC": mm.dsc,
            "Sensitivity": mm.sensitivity,
            "Precision": mm.precision,
            "HD95": mm.hd95_mm,
        })
        if log:
            log(f"{name}: DSC {mm.dsc:.4f} HD95 {mm.hd95_mm:.3f}")
    return rows


def save_ablation_csv(path, rows: List[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(ABLATION_COLUMNS) + "\n")
        for r in rows:
            cells = []
            for c in ABLATION_COLUMNS:
                v = r[c]
                if c == "model":
                    cells.append(str(v))
                elif c in ("MPE", "RFE", "MSFF", "WT/IWT"):
                    cells.append(str(int(v)))
                else:
                    cells.append(f"{float(v):.6f}")
            f.write(",".join(cells) + "\n")
