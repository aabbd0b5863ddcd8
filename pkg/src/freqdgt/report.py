"""Plots for a ``loso`` or ``ablate`` output directory. Needs matplotlib."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import BANDS


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise SystemExit("the report command needs matplotlib (pip install freqdgt[plots])") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def loss_curves(result: dict, path: Path, plt) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for fold in result["folds"]:
        h = fold["history"]
        ep = [r["epoch"] for r in h]
        axes[0].plot(ep, [r["total"] for r in h], lw=0.8, label=f"s{fold['held_out_subject']}")
        axes[1].plot(ep, [r["val_acc"] for r in h], lw=0.8)
    axes[0].set(xlabel="epoch", ylabel="training loss")
    axes[1].set(xlabel="epoch", ylabel="validation accuracy")
    axes[0].legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def band_weight_trajectories(result: dict, path: Path, plt) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    # mean over folds, truncated to the shortest fold
    traj = [np.array([r["band_weights"] for r in f["history"]]) for f in result["folds"]]
    n = min(len(t) for t in traj)
    mean = np.mean([t[:n] for t in traj], axis=0)
    for b, name in enumerate(BANDS[:mean.shape[1]]):
        ax.plot(np.arange(1, n + 1), mean[:, b], label=name)
    ax.set(xlabel="epoch", ylabel="attention x importance")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def adjacency_heatmaps(fold_dir: Path, path: Path, plt) -> Path:
    mats = {k: np.load(fold_dir / f"adj_{k}.npy").mean(0) for k in ("shallow", "deep")}
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, (k, A) in zip(axes, mats.items()):
        im = ax.imshow(A, cmap="viridis")
        ax.set_title(f"{k} adjacency (mean)")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ablation_bars(table: dict, path: Path, plt) -> Path:
    names = table["order"]
    mean = [table["rows"][n]["accuracy"]["mean"] for n in names]
    std = [table["rows"][n]["accuracy"]["std"] for n in names]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.barh(np.arange(len(names)), mean, xerr=std, color="0.6")
    ax.barh(len(names) - 1, mean[-1], xerr=std[-1], color="tab:blue")
    ax.set_yticks(np.arange(len(names)), names, fontsize=7)
    ax.set_xlabel("LOSO accuracy")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def make_report(run_dir, out_dir=None) -> list[Path]:
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    written = []
    results = run_dir / "results.json"
    if results.exists():
        result = json.loads(results.read_text())
        written.append(loss_curves(result, out_dir / "loss_curves.png", plt))
        if all("band_weights" in r for f in result["folds"] for r in f["history"]):
            written.append(band_weight_trajectories(result, out_dir / "band_weights.png", plt))
    for fold_dir in sorted(run_dir.glob("fold_*")):
        if (fold_dir / "adj_shallow.npy").exists():
            written.append(adjacency_heatmaps(fold_dir, out_dir / f"adjacency_{fold_dir.name}.png",
                                              plt))
    ablation = run_dir / "ablation.json"
    if ablation.exists():
        written.append(ablation_bars(json.loads(ablation.read_text()),
                                     out_dir / "ablation.png", plt))
    if not written:
        raise FileNotFoundError(f"{run_dir} holds no results.json, ablation.json or dumps")
    return written
