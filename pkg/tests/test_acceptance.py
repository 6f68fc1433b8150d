"""Acceptance criteria 1-9.

Trained models are cached under ``$EXCIREC_CACHE`` (default ``<repo>/.excirec-cache``)
keyed by their full recipe; a missing model is trained here, which takes hours.
Each test emits one PASS/FAIL line, collected in the terminal summary.
"""
import os
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from excirec import baseline as bl
from excirec import cli, pipeline
from excirec import dataset as ds_mod
from excirec.eigen import diagonalize
from excirec.errors import FormatError
from excirec.exciton import (DisorderSpec, build_hamiltonian, chain, coupling, coupling_matrix,
                             sample_disorder)
from excirec.localfield import LocalFieldSystem, MolecularResonance, TipModel
from excirec.nearfield import build_scan, hertz_field, line_scan, noisy_values, scan_spectra
from excirec.nn import checkpoint
from excirec.nn.layers import AvgPool, Conv, Dense, Flatten, ReLU
from excirec.nn.network import Network, backward, reference_config
from excirec.nn.loss import loss as coefficient_loss
from excirec.nn.loss import normalize_output
from excirec.nn.train import batch_losses
from excirec.seeding import derive_seed

CACHE = Path(os.environ.get("EXCIREC_CACHE", Path(__file__).resolve().parents[1] / ".excirec-cache"))
SIZES = (2, 5, 20, 50)


@lru_cache(maxsize=None)
def trained(preset):
    job = pipeline.job_from_config(cli.load_config(f"preset:{preset}"))
    return job, pipeline.run_training(job, CACHE)


def clean_chain_losses(net, n_tip=512):
    geometry = {"kind": "chain", "n": 20}
    es, spectra = pipeline.clean_states(geometry, {"kind": "line", "n_tip": n_tip, "span": 40.0, "z_dip": 2.0})
    return es, spectra, batch_losses(net, spectra.reshape(20, *net.config.input_shape), es.coefficients)


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_physics_oracles(report):
    worst = dict(resid=0.0, ortho=0.0, trace=0.0, sum_rule=0.0, mirror=0.0)
    symmetric = True
    for n in SIZES:
        g = chain(n)
        scan = line_scan(g, 256)
        for sd, so, seed in [(0.0, 0.0, 0), (0.1, 0.0, n), (0.5, 0.3, 7 * n)]:
            h = build_hamiltonian(g, sample_disorder(DisorderSpec(sd, so, seed), g)).matrix
            es = diagonalize(h)
            c = es.coefficients
            worst["resid"] = max(worst["resid"], max(np.linalg.norm(h @ v - e * v) for e, v in zip(es.energies, c)))
            worst["ortho"] = max(worst["ortho"], np.abs(c @ c.T - np.eye(n)).max())
            worst["trace"] = max(worst["trace"], abs(es.energies.sum() - np.trace(h)))
            total = scan_spectra(c, g, scan).sum(axis=0)
            direct = np.array([sum(float(g.transition_dipoles[m] @ hertz_field(g.positions[m], r)) ** 2 for m in range(n))
                               for r in scan.positions])
            worst["sum_rule"] = max(worst["sum_rule"], np.abs(total - direct).max() / direct.max())
            if sd == so == 0:
                spec = scan_spectra(c, g, scan)
                mirror = (np.abs(spec - spec[:, ::-1]).max(axis=1) / spec.max(axis=1)).max()
                worst["mirror"] = max(worst["mirror"], mirror)
        symmetric &= all(coupling(g, m, k) == coupling(g, k, m) for m in range(n) for k in range(n) if m != k)
        v = coupling_matrix(g)
        symmetric &= bool(np.array_equal(v, v.T))
    ok = symmetric and all(val < 1e-10 for val in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"N in {SIZES}: {detail}, coupling symmetric={symmetric} (all < 1e-10)")


# -- 2 ---------------------------------------------------------------------------

def _fd(fn, arr, idx):
    out = np.zeros(len(idx))
    flat = arr.reshape(-1)
    for j, i in enumerate(idx):
        keep = flat[i]
        flat[i] = keep + 1e-6
        up = fn()
        flat[i] = keep - 1e-6
        down = fn()
        flat[i] = keep
        out[j] = (up - down) / 2e-6
    return out


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-300)


def _layer_error(layer, in_shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, *in_shape))
    if isinstance(layer, ReLU):
        x += 0.1 * np.sign(x)
    params = [np.zeros(s) for s in layer.param_shapes(in_shape)]
    layer.init(params, in_shape, rng)
    for p in params:
        p += 0.1 * rng.standard_normal(p.shape)
    r = rng.standard_normal((2, *layer.out_shape(in_shape)))
    fn = lambda: float(np.sum(r * layer.forward(x, params)[0]))  # noqa: E731
    _, cache = layer.forward(x, params)
    grads = [np.zeros_like(p) for p in params]
    dx = layer.backward(r, cache, params, grads)
    err = _rel(dx.ravel(), _fd(fn, x, range(x.size)))
    for g, p in zip(grads, params):
        err = max(err, _rel(g.ravel(), _fd(fn, p, range(p.size))))
    return err


def _net_error(net, x, t, per_tensor=30):
    _, grad = backward(net, x, t)
    rng = np.random.default_rng(0)
    err = 0.0
    for slot in net._slots:
        for off, shape in slot:
            size = int(np.prod(shape))
            idx = np.arange(off, off + size)
            if size > per_tensor:
                idx = np.sort(rng.choice(idx, per_tensor, replace=False))
            num = _fd(lambda: backward(net, x, t)[0], net.params, idx)
            err = max(err, _rel(grad[idx], num))
    return err


def test_criterion_2_gradients(report):
    cases = {
        "conv1d": (Conv(3, 2, 2), (15, 2)), "conv2d": (Conv(3, 2, 1), (6, 7, 2)),
        "relu": (ReLU(), (9, 3)), "pool1d": (AvgPool(2), (11, 2)), "pool2d": (AvgPool(2), (6, 5, 2)),
        "flatten": (Flatten(), (4, 3)), "dense": (Dense(6), (8,)),
    }
    errors = {name: _layer_error(layer, shape, k) for k, (name, (layer, shape)) in enumerate(cases.items())}
    rng = np.random.default_rng(1)
    net1 = Network.create(reference_config(20, 512), 5, dtype=np.float64)
    errors["reference-1d"] = _net_error(net1, rng.random((2, 512)), normalize_output(rng.standard_normal((2, 20))))
    net2 = Network.create(reference_config(6, grid=(48, 44)), 6, dtype=np.float64)
    errors["reference-2d"] = _net_error(net2, rng.random((2, 48, 44)), normalize_output(rng.standard_normal((2, 6))))
    ok = max(errors.values()) < 1e-5
    assert report(2, ok, "max relative FD error " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
                  + " (< 1e-5, float64)")


# -- 3 ---------------------------------------------------------------------------

def test_criterion_3_clean_reconstruction(report):
    job, res = trained("train-1d-desk")
    n_samples = ds_mod.expected_sample_count(job.ensemble, 20)
    _, _, losses = clean_chain_losses(res.network)
    good = int(np.sum(losses <= 5e-3))
    ok = n_samples >= 50_000 and job.train.epochs >= 100 and losses.mean() <= 1e-2 and good >= 16
    assert report(3, ok, f"{n_samples} samples, {job.train.epochs} epochs: mean clean-state loss "
                         f"{losses.mean():.2e} (<= 1e-2), {good}/20 states <= 5e-3 (>= 16); "
                         f"worst state {int(np.argmax(losses))} at {losses.max():.2e}")


# -- 4 ---------------------------------------------------------------------------

def test_criterion_4_unseen_disorder(report):
    _, res = trained("train-1d-desk")
    preset = cli.load_config("preset:evaluate-1d-unseen")
    test = {**preset["test"], "sigma_d": [0.05, 0.25], "split_fraction": 0.5}
    # same ensemble recipe as the evaluate command; tranches are seeded independently
    data = ds_mod.generate_ensemble(ds_mod.EnsembleConfig(**test, master_seed=preset["master_seed"]))
    losses = pipeline.evaluate_losses(res.network, data)
    medians = {}
    for sd in (0.05, 0.25):
        sel = data.meta["sigma_d"] == sd
        assert sel.sum() == 500 * 20
        medians[sd] = float(np.median(losses[sel]))
    train_sd = trained("train-1d-desk")[0].ensemble.sigma_d
    ok = all(m <= 2e-2 for m in medians.values()) and not set(medians) & set(train_sd)
    assert report(4, ok, "median loss " + ", ".join(f"sigma_d={k}: {v:.2e}" for k, v in medians.items())
                  + " (<= 2e-2, 500 realizations each, not in training)")


# -- 5 ---------------------------------------------------------------------------

def test_criterion_5_noise_robustness(report):
    job, res = trained("train-1d-noise")
    assert job.train.noise_sigma == 0.1
    es, spectra, _ = clean_chain_losses(res.network)
    medians = {}
    draws = 50
    for k, sigma in enumerate((0.0, 0.03, 0.1, 0.2)):
        rng = np.random.default_rng(derive_seed(4242, 5, k))
        x = np.repeat(spectra, draws, axis=0)
        if sigma > 0:
            x = noisy_values(x, sigma, rng)
        x = ds_mod.normalize_max(x)
        y = np.repeat(es.coefficients, draws, axis=0)
        medians[sigma] = float(np.median(batch_losses(res.network, x.reshape(len(x), 512), y)))
    ok = all(m <= 2e-2 for m in medians.values())
    assert report(5, ok, "median clean-chain loss " + ", ".join(f"sigma_n={k}: {v:.2e}" for k, v in medians.items())
                  + f" ({draws} noise draws per state; <= 2e-2)")


# -- 6 ---------------------------------------------------------------------------

def test_criterion_6_resolution(report):
    means = {}
    for n_tip, preset in ((512, "train-1d-desk"), (256, "train-1d-256"), (128, "train-1d-128")):
        job, res = trained(preset)
        assert job.network_config().input_shape == (n_tip,)
        means[n_tip] = float(clean_chain_losses(res.network, n_tip)[2].mean())
    monotone = means[512] <= means[256] <= means[128]
    ok = means[256] <= 1e-2 and means[128] <= 2e-2 and monotone
    assert report(6, ok, f"mean clean-chain loss 512: {means[512]:.2e}, 256: {means[256]:.2e} (<= 1e-2), "
                         f"128: {means[128]:.2e} (<= 2e-2), monotone={monotone}")


# -- 7 ---------------------------------------------------------------------------

def test_criterion_7_local_field(report):
    cfg = cli.load_config("preset:localfield-gamma1")
    sys_ = LocalFieldSystem(chain(20), MolecularResonance(**cfg["resonance"]), TipModel(**cfg["tip"]),
                            cfg["spacing"], cfg["gap"])
    # the network is trained at the tip height of the local-field setup
    job, res = trained("train-1d-z3")
    assert job.ensemble.scan["z_dip"] == pytest.approx(sys_.z_dip / sys_.spacing)
    gamma = sys_.resonance.gamma_m
    out = pipeline.analyze_local_field(sys_, cfg["scan"], res.network, cfg["frequency"]["n_omega"],
                                       cfg["frequency"]["pad"], cfg["peaks"]["prominence"],
                                       cfg["peaks"]["min_separation"])
    peaks = out["peaks"]
    matched = [p for p in peaks if abs(p["offset"]) <= 2 * gamma]
    states = {p["state"] for p in matched}
    worst_offset = max(abs(p["offset"]) for p in peaks)
    worst_r = min(p["pearson"] for p in peaks)
    low_mid = [p for p in matched if p["state"] < 14]
    worst_loss = max(p["loss"] for p in low_mid)
    ok = (len(states) >= 15 and len(matched) == len(peaks) and worst_r > 0.99 and worst_loss <= 2e-2)
    assert report(7, ok, f"{len(peaks)} peaks, {len(states)}/20 states resolved (>= 15); max |omega - E| "
                         f"{worst_offset:.2f} cm^-1 (<= {2 * gamma:g}); min Pearson r {worst_r:.4f} (> 0.99); "
                         f"max network loss on resolved states l < 14: {worst_loss:.2e} (<= 2e-2)")


# -- 8 ---------------------------------------------------------------------------

def _baseline_problem(preset):
    cfg = cli.load_config(f"preset:{preset}")
    g = chain(cfg["geometry"]["n"])
    scan = build_scan(g, cfg["scan"])
    es = diagonalize(build_hamiltonian(g))
    return cfg, g, scan, es


def _baseline_run(cfg, g, scan, es, state, k, method):
    p = bl.BaselineProblem.from_coefficients(es.coefficients[state], g, scan,
                                             max_iterations=cfg["max_iterations"], target_cost=cfg["target_cost"])
    # seed convention shared with the baseline command
    return bl.minimize(p, method, derive_seed(cfg["master_seed"], state, k))


def test_criterion_8_baseline_contrast(report):
    t0 = time.time()
    cfg, g, scan, es = _baseline_problem("baseline-n5")
    small = []
    for state in range(5):
        for k, method in enumerate(cfg["methods"]):
            r = _baseline_run(cfg, g, scan, es, state, k, method)
            small.append((state, method, r.cost, coefficient_loss(es.coefficients[state], r.candidate), r.iterations))
    small_ok = all(c <= 1e-8 and ls < 1e-2 and it <= 1000 for _, _, c, ls, it in small)
    worst = max(small, key=lambda rec: rec[2])
    # N = 8: look for an upper-half state that no method solves; a state is
    # settled as soon as one method reaches the target
    cfg8, g8, scan8, es8 = _baseline_problem("baseline-n8")
    failing = []
    for state in range(7, 3, -1):
        costs = {}
        for k, method in enumerate(cfg8["methods"]):
            r = _baseline_run(cfg8, g8, scan8, es8, state, k, method)
            costs[method] = r.cost
            if r.converged:
                break
        else:
            failing.append((state, costs))
    elapsed = time.time() - t0
    ok = small_ok and bool(failing) and elapsed <= 1800
    fail_txt = "; ".join(f"state {s}: " + ", ".join(f"{m} {c:.1e}" for m, c in cs.items()) for s, cs in failing)
    assert report(8, ok, f"N=5: all {len(small)} runs cost <= 1e-8 and loss < 1e-2: {small_ok} "
                         f"(worst {worst[1]} state {worst[0]} cost {worst[2]:.1e}, loss {worst[3]:.1e}); "
                         f"N=8 high-energy states failing all methods: {fail_txt or 'none'}; {elapsed:.0f} s (<= 1800)")


# -- 9 ---------------------------------------------------------------------------

def _never_crashes(loader, blob, rng, trials=300):
    outcomes = {"format_error": 0, "loaded": 0}
    for cut in range(0, len(blob), max(1, len(blob) // 200)):
        try:
            loader(blob[:cut])
            outcomes["loaded"] += 1
        except FormatError:
            outcomes["format_error"] += 1
    for _ in range(trials):
        b = bytearray(blob)
        for i in rng.integers(0, len(b), rng.integers(1, 5)):
            b[i] = rng.integers(0, 256)
        try:
            loader(bytes(b))
            outcomes["loaded"] += 1
        except FormatError:
            outcomes["format_error"] += 1
    return outcomes


def test_criterion_9_format_roundtrips(report, tmp_path):
    ens = ds_mod.EnsembleConfig(geometry={"kind": "chain", "n": 6}, scan={"n_tip": 48},
                                sigma_d=[0.1], sigma_od=[0.2], realizations=3, noise_sigma=0.05, master_seed=9)
    data = ds_mod.generate_ensemble(ens)
    ds_mod.save(data, tmp_path / "d.exds")
    back = ds_mod.load(tmp_path / "d.exds")
    ds_exact = back.equals(data) and ds_mod.to_bytes(back) == (tmp_path / "d.exds").read_bytes()
    net = Network.create(reference_config(6, 48 + 16), 3)
    checkpoint.save(net, tmp_path / "m.exnn", {"k": [1, 2]})
    net2, extra = checkpoint.load(tmp_path / "m.exnn")
    ck_exact = (np.array_equal(net2.params, net.params) and extra == {"k": [1, 2]}
                and checkpoint.to_bytes(net2, extra) == (tmp_path / "m.exnn").read_bytes())
    rng = np.random.default_rng(0)
    ds_out = _never_crashes(ds_mod.from_bytes, ds_mod.to_bytes(data), rng)
    ck_out = _never_crashes(checkpoint.from_bytes, checkpoint.to_bytes(net), rng)
    ok = ds_exact and ck_exact
    assert report(9, ok, f"dataset bit-exact={ds_exact}, checkpoint bit-exact={ck_exact}; corrupted inputs: "
                         f"dataset {ds_out}, checkpoint {ck_out} (no other exception types)")
