"""Generate-split-train pipeline shared by the CLI and the acceptance suite.

A finished run is stored under ``<cache>/<key>/`` where ``key`` hashes the
full recipe (ensemble, network, training, package version), so identical
recipes reuse the trained model instead of retraining.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds_mod
from .eigen import diagonalize
from .errors import InvalidInputError
from .exciton import build_geometry, build_hamiltonian
from .localfield import LocalFieldSystem, absorption_map, default_freq_grid, peak_slices_from_map
from .nearfield import build_scan, scan_spectra
from .nn import checkpoint
from .nn.network import Network, NetworkConfig, reference_config
from .nn.train import TrainConfig, batch_losses, predict, train, write_history_csv
from .seeding import derive_seed

log = logging.getLogger(__name__)

# derive_seed tags for the split permutation and the weight initialization
SPLIT_TAG = 0x53504C4954
INIT_TAG = 0x494E4954


@dataclass
class TrainJob:
    ensemble: ds_mod.EnsembleConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    # None selects the reference architecture for the ensemble's scan
    network: dict | None = None

    def network_config(self) -> NetworkConfig:
        if self.network is not None:
            return NetworkConfig.from_dict(self.network)
        geometry = build_geometry(self.ensemble.geometry)
        scan = build_scan(geometry, self.ensemble.scan)
        grid = tuple(scan.grid_shape) if len(scan.grid_shape) == 2 else None
        return reference_config(geometry.n, scan.n_tip, grid)

    def to_dict(self) -> dict:
        return {"ensemble": self.ensemble.to_dict(), "train": self.train.to_dict(),
                "network": self.network_config().to_dict(), "version": __version__}

    def key(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    network: Network
    history: list
    directory: Path
    cached: bool


def build_splits(ens: ds_mod.EnsembleConfig):
    data = ds_mod.generate_ensemble(ens)
    train_set, val_set = ds_mod.split(data, ens.split_fraction, derive_seed(ens.master_seed, SPLIT_TAG))
    return data, train_set, val_set


def run_training(job: TrainJob, cache_dir, keep_data: bool = False) -> TrainResult:
    """Train ``job`` or load it from ``cache_dir`` if the same recipe finished before."""
    out = Path(cache_dir) / job.key()
    model = out / "model.exnn"
    if model.exists():
        net, extra = checkpoint.load(model)
        return TrainResult(net, extra.get("history", []), out, True)
    out.mkdir(parents=True, exist_ok=True)
    (out / "job.json").write_text(json.dumps(job.to_dict(), indent=2, sort_keys=True))
    t0 = time.time()
    data, train_set, val_set = build_splits(job.ensemble)
    log.info("generated %d samples (%d train / %d val) in %.1fs", data.n_samples,
             train_set.n_samples, val_set.n_samples, time.time() - t0)
    if keep_data:
        ds_mod.save(data, out / "dataset.exds")
    net = Network.create(job.network_config(), derive_seed(job.ensemble.master_seed, INIT_TAG))

    def progress(rec):
        with open(out / "progress.log", "a") as fh:
            fh.write(json.dumps(rec) + "\n")

    history = train(net, train_set, val_set, job.train, callback=progress)
    write_history_csv(out / "history.csv", history)
    # written last: its presence marks a finished run
    tmp = out / "model.exnn.tmp"
    checkpoint.save(net, tmp, {"history": history, "job": job.to_dict(),
                               "n_train": train_set.n_samples, "n_val": val_set.n_samples})
    tmp.replace(model)
    return TrainResult(net, history, out, False)


def job_from_config(doc: dict) -> TrainJob:
    """TrainJob from a validated ``train`` run config (``master_seed`` at top level)."""
    ens = dict(doc["ensemble"])
    ens["master_seed"] = int(doc["master_seed"])
    return TrainJob(ds_mod.EnsembleConfig(**ens), TrainConfig(**doc.get("train", {})),
                    doc.get("network"))


def evaluate_losses(net: Network, data: ds_mod.DataSet) -> np.ndarray:
    """Per-sample sign-resolved loss of ``net`` on a dataset."""
    if data.n_tip != int(np.prod(net.config.input_shape)) or data.n_sites != net.config.output_dim:
        raise InvalidInputError(
            f"dataset ({data.n_tip} tips, {data.n_sites} sites) does not fit network "
            f"input {net.config.input_shape} / output {net.config.output_dim}")
    x = data.inputs.reshape(data.n_samples, *net.config.input_shape)
    return batch_losses(net, x, data.targets)


def clean_states(geometry_cfg: dict, scan_cfg: dict):
    """Disorder-free eigenstates and their max-normalized spectra."""
    geometry = build_geometry(geometry_cfg)
    scan = build_scan(geometry, scan_cfg)
    es = diagonalize(build_hamiltonian(geometry))
    return es, ds_mod.normalize_max(scan_spectra(es.coefficients, geometry, scan))


def analyze_local_field(sys: LocalFieldSystem, scan_cfg: dict, net: Network | None = None,
                        n_omega: int = 2000, pad: float = 50.0, prominence: float = 1e-3,
                        min_separation: int = 2) -> dict:
    """Absorption map, peak slices and their comparison with the ideal model.

    Each peak is assigned to the exciton state with the nearest frequency; its
    slice is compared (Pearson r) with that state's ideal spectrum at the
    same tip height and, if ``net`` is given, fed to the network.
    """
    lattice_scan = build_scan(sys.geometry, {**scan_cfg, "z_dip": sys.z_dip / sys.spacing})
    scan_nm = sys.lattice_scan(lattice_scan)
    omega = default_freq_grid(sys, n_omega, pad)
    values = absorption_map(sys, scan_nm, omega)
    slices = peak_slices_from_map(values, omega, scan_nm, prominence, min_separation)
    es = diagonalize(build_hamiltonian(sys.geometry))
    freqs = sys.exciton_frequencies()
    ideal = scan_spectra(es.coefficients, sys.geometry, lattice_scan)
    peaks = []
    for k, sl in enumerate(slices):
        state = int(np.argmin(np.abs(freqs - sl.omega)))
        rec = {"peak": k, "omega": sl.omega, "grid_index": sl.grid_index, "state": state, "exciton_omega": float(freqs[state]),
               "offset": float(sl.omega - freqs[state]),
               "pearson": float(np.corrcoef(sl.spectrum.values, ideal[state])[0, 1])}
        if net is not None:
            x = ds_mod.normalize_max(sl.spectrum.values[None])[0].reshape(net.config.input_shape)
            pred, value = predict(net, x, es.coefficients[state])
            rec["coefficients"] = pred
            rec["loss"] = float(value)
        peaks.append(rec)
    return {"omega": omega, "values": values, "peaks": peaks, "frequencies": freqs,
            "eigensystem": es, "scan": scan_nm}
