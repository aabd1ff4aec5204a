"""End-to-end acceptance suite: one check per headline behavior of the artifact.

Each test prints a single PASS/FAIL line (run with ``pytest -v -s`` to see
them live).  The heavy experiment fixtures are shared across checks and sized
to finish on a laptop-class CPU; everything is seeded, so reruns reproduce
the same numbers exactly.
"""

import math
import os

import numpy as np
import pytest

import mnist1d.autodiff as ad
from mnist1d.autodiff import Tape, Tensor, grad, leaf
from mnist1d.datagen import GeneratorConfig, gaussian_filter_1d, generate_dataset
from mnist1d.experiments import (
    metalearn_activation,
    metalearn_lr,
    quadratic_meta_gradient,
    quadratic_meta_gradient_closed_form,
    run_benchmark,
    run_double_descent,
    run_lottery,
    run_pooling_grid,
)
from mnist1d.models import ModelSpec, init_model, set_mask
from mnist1d.rng import RngStream
from mnist1d.training import AdamState, TrainConfig, adam_step, nll_loss

from oracles import conv1d_loops, finite_difference, gauss_smooth_direct, gru_recurrence

JOBS = min(2, os.cpu_count() or 1)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GeneratorConfig())


@pytest.fixture(scope="module")
def benchmark_result():
    return run_benchmark(n_seeds=3, seed=0, jobs=JOBS)


class TestCriterion1BenchmarkTable:
    def test_accuracy_bands_and_ordering(self, benchmark_result):
        acc = {k: 100 * benchmark_result.aggregates[f"plain/{k}"]["mean"] for k in ("logistic", "mlp", "cnn", "gru")}
        bands = {"logistic": (25, 45), "mlp": (55, 80), "cnn": (85, 98), "gru": (82, 97)}
        in_band = all(bands[k][0] <= acc[k] <= bands[k][1] for k in bands)
        ordered = (acc["mlp"] - acc["logistic"] >= 15) and (acc["cnn"] - acc["mlp"] >= 8)
        detail = (
            f"logistic {acc['logistic']:.1f} mlp {acc['mlp']:.1f} cnn {acc['cnn']:.1f} "
            f"gru {acc['gru']:.1f}; margins mlp-log {acc['mlp']-acc['logistic']:.1f} "
            f"cnn-mlp {acc['cnn']-acc['mlp']:.1f}; wall {benchmark_result.wall_time:.0f}s"
        )
        report("benchmark accuracy bands", in_band and ordered, detail)


class TestCriterion2ShuffledAblation:
    def test_spatial_models_drop_on_shuffled_data(self, benchmark_result):
        agg = benchmark_result.aggregates
        drops = {k: 100 * (agg[f"plain/{k}"]["mean"] - agg[f"shuffled/{k}"]["mean"]) for k in ("cnn", "gru")}
        deltas = {k: 100 * abs(agg[f"plain/{k}"]["mean"] - agg[f"shuffled/{k}"]["mean"]) for k in ("logistic", "mlp")}
        ok = all(d >= 20 for d in drops.values()) and all(d <= 4 for d in deltas.values())
        detail = (
            f"cnn drop {drops['cnn']:.1f} gru drop {drops['gru']:.1f}; "
            f"logistic delta {deltas['logistic']:.1f} mlp delta {deltas['mlp']:.1f}"
        )
        report("shuffled-data ablation", ok, detail)


class TestCriterion3LotteryTickets:
    def test_ticket_margins_and_local_connectivity(self, dataset):
        result, ticket, rep = run_lottery(dataset, rounds=12, n_seeds=3, seed=0, jobs=JOBS)
        abl = rep.ablations
        margin = 100 * abl["original"]["margin"]
        reversed_margin = 100 * abl["reversed"]["margin"]
        permuted_margin = 100 * abl["permuted"]["margin"]
        reinit_beats_random = abl["original"]["random_reinit"] > abl["original"]["random_mask"]
        adj = rep.adjacency
        adjacency_sigmas = (adj["count"] - adj["chance_mean"]) / adj["chance_std"]
        ok = (
            margin >= 3
            and abs(reversed_margin - margin) <= 3
            and permuted_margin <= 0.5 * margin
            and reinit_beats_random
            and adjacency_sigmas >= 3
        )
        detail = (
            f"sparsity {ticket.weight_sparsity:.3f}; margin {margin:.1f} pts "
            f"(reversed {reversed_margin:.1f}, permuted {permuted_margin:.1f}); "
            f"reinit {100*abl['original']['random_reinit']:.1f} vs random {100*abl['original']['random_mask']:.1f}; "
            f"adjacency {adj['count']} vs chance {adj['chance_mean']:.0f}±{adj['chance_std']:.0f} "
            f"({adjacency_sigmas:.1f} sigma); wall {result.wall_time:.0f}s"
        )
        report("lottery tickets", ok, detail)


class TestCriterion4DoubleDescent:
    def test_nll_peak_near_training_set_size(self, dataset):
        res = run_double_descent(dataset, loss="nll", n_seeds=3, seed=0, jobs=JOBS)
        peak = res.aggregates["peak"]
        warn = res.aggregates["no_interpolation_warning"]
        ok = peak is not None and not warn and 250 <= peak["params"] <= 1000
        detail = f"peak {peak}; interpolation warning {warn}; wall {res.wall_time:.0f}s"
        report("double descent (nll): peak within 2x of n=500", ok, detail)

    def test_mse_peak_near_n_times_classes(self, dataset):
        res = run_double_descent(dataset, loss="mse", n_seeds=3, seed=0, jobs=JOBS)
        peak = res.aggregates["peak"]
        warn = res.aggregates["no_interpolation_warning"]
        ok = peak is not None and not warn and 2500 <= peak["params"] <= 10000
        detail = f"peak {peak}; interpolation warning {warn}; wall {res.wall_time:.0f}s"
        report("double descent (mse): peak within 2x of n*K=5000", ok, detail)


class TestCriterion5Metalearning:
    def test_quadratic_meta_gradient_signs(self):
        lam = 2.0
        signs_ok = True
        for lr in np.linspace(0.02, 0.48, 10):
            got = quadratic_meta_gradient(float(lr), lam=lam)
            want = quadratic_meta_gradient_closed_form(float(lr), lam=lam)
            signs_ok = signs_ok and np.sign(got) == np.sign(want)
        report("metalearning: quadratic-probe gradient signs", signs_ok, "10/10 match closed form")

    def test_learned_rate_beats_brackets(self, dataset):
        res = metalearn_lr(dataset, outer_steps=100, outer_lr=0.05, init_lr=0.05, n_eval_seeds=3, seed=0)
        br = res.aggregates["brackets"]
        ok = (
            res.aggregates["aborted"] is None
            and br["lr_star"]["mean"] < br["lr_tenth"]["mean"]
            and br["lr_star"]["mean"] < br["lr_tenfold"]["mean"]
        )
        detail = (
            f"lr* {br['lr_star']['lr']:.3f} loss {br['lr_star']['mean']:.3f} vs "
            f"x0.1 {br['lr_tenth']['mean']:.3f}, x10 {br['lr_tenfold']['mean']:.3g}; wall {res.wall_time:.0f}s"
        )
        report("metalearning: learned rate beats brackets", ok, detail)

    def test_learned_activation_beats_fixed_baselines(self, dataset):
        res = metalearn_activation(dataset, seed=0)
        horizon = res.aggregates["horizon_losses"]
        baselines = {k: v for k, v in horizon.items() if k != "learned"}
        pre = np.array(res.aggregates["pretrain_curves"])
        elu = np.array(res.aggregates["baseline_curves"]["elu"])
        pretrain_faithful = float(np.max(np.abs(pre - elu) / np.maximum(np.abs(elu), 1e-9))) <= 0.02
        ok = (
            res.aggregates["aborted"] is None
            and pretrain_faithful
            and all(horizon["learned"] < v for v in baselines.values())
        )
        detail = (
            f"horizon learned {horizon['learned']:.4f} vs "
            + ", ".join(f"{k} {v:.4f}" for k, v in baselines.items())
            + f"; pretrain max err {res.aggregates['pretrain_max_err']:.4f}; wall {res.wall_time:.0f}s"
        )
        report("metalearning: learned activation best at horizon", ok, detail)


class TestCriterion6PoolingGrid:
    def test_pooling_helps_low_data_and_hinders_high_data(self, dataset):
        res = run_pooling_grid(dataset, n_seeds=3, seed=0, jobs=JOBS)
        low = res.aggregates["low_data_delta_best_pooled_minus_unpooled"]
        high = res.aggregates["high_data_delta_unpooled_minus_worst_pooled"]
        ok = low >= 0 and high >= 0
        detail = (
            f"low-data best-pooled minus unpooled {100*low:.1f} pts; "
            f"high-data unpooled minus worst-pooled {100*high:.1f} pts; wall {res.wall_time:.0f}s"
        )
        report("pooling grid", ok, detail)


class TestCriterion7NumericalCore:
    def test_numerical_core_properties(self):
        rng = np.random.default_rng(0)
        checks = []

        # reverse-mode vs central differences on a 2-layer network
        x_data = rng.normal(size=(6, 5))
        labels = rng.integers(0, 3, size=6)
        params0 = [rng.normal(size=s) for s in ((5, 8), (8,), (8, 3), (3,))]

        def net_loss(values):
            tape = Tape()
            w1, b1, w2, b2 = (leaf(v, tape) for v in values)
            hidden = ad.tanh(ad.add(ad.matmul(Tensor(x_data), w1), b1))
            logits = ad.add(ad.matmul(hidden, w2), b2)
            return nll_loss(logits, labels), (w1, b1, w2, b2)

        loss, ws = net_loss(params0)
        analytic = grad(loss, list(ws))
        numeric = finite_difference(lambda vs: float(net_loss(vs)[0].data), params0)
        rel = max(
            float(np.max(np.abs(a.data - n) / np.maximum(np.abs(n), 1e-3)))
            for a, n in zip(analytic, numeric)
        )
        checks.append(("2-layer grad vs finite differences", rel < 1e-6, f"max rel {rel:.2e}"))

        # second derivative is analytic-exact
        tape = Tape()
        w = leaf(rng.normal(size=4), tape)
        c = rng.normal(size=4)
        f = ad.sum_(ad.mul(Tensor(c), ad.mul(w, w)))
        (g1,) = grad(f, [w], create_graph=True)
        v = rng.normal(size=4)
        (g2,) = grad(ad.sum_(ad.mul(g1, Tensor(v))), [w])
        hvp_err = float(np.max(np.abs(g2.data - 2 * c * v)))
        checks.append(("second-order exactness", hvp_err < 1e-10, f"max err {hvp_err:.2e}"))

        # smoothing filter and convolution vs brute-force oracles
        sig = rng.normal(size=57)
        filt_err = float(np.max(np.abs(gaussian_filter_1d(sig, 2.0) - gauss_smooth_direct(sig, 2.0))))
        xc = rng.normal(size=(2, 3, 40))
        kc = rng.normal(size=(4, 3, 5))
        conv_err = float(
            np.max(np.abs(ad.conv1d(Tensor(xc), Tensor(kc), 2, 0).data - conv1d_loops(xc, kc, 2, 0)))
        )
        checks.append(("gaussian filter oracle", filt_err < 1e-12, f"max err {filt_err:.2e}"))
        checks.append(("conv1d oracle", conv_err < 1e-12, f"max err {conv_err:.2e}"))

        # GRU scan vs scalar recurrence
        gru = init_model(ModelSpec("gru", 20, 10, (6,), init_seed=1))
        xg = rng.normal(size=(3, 20))
        h = ad.gru_scan(Tensor(xg), gru.params["w_ih"], gru.params["b_ih"], gru.params["w_hh"], gru.params["b_hh"])
        gru_err = max(
            float(np.max(np.abs(h.data[b] - gru_recurrence(
                xg[b], gru.params["w_ih"].data, gru.params["b_ih"].data,
                gru.params["w_hh"].data, gru.params["b_hh"].data))))
            for b in range(3)
        )
        checks.append(("gru recurrence oracle", gru_err < 1e-12, f"max err {gru_err:.2e}"))

        # uniform-logit nll
        nll = float(nll_loss(Tensor(np.zeros((4, 10))), np.array([1, 2, 3, 4])).data)
        checks.append(("nll of uniform logits", abs(nll - math.log(10)) < 1e-12, f"{nll:.12f}"))

        # dataset determinism across runs and jobs
        cfg = GeneratorConfig(train_count=200, test_count=50)
        same = generate_dataset(cfg, jobs=1) == generate_dataset(cfg, jobs=2)
        checks.append(("dataset bit-identical across jobs", same, "jobs=1 == jobs=2"))

        # masked weights pinned at zero through optimization
        model = init_model(ModelSpec("mlp", 10, 10, (8,), init_seed=0))
        mask = (rng.uniform(size=(10, 8)) > 0.5).astype(float)
        model = set_mask(model, {"w0": mask})
        state = AdamState()
        zeros_held = True
        for _ in range(10):
            grads = {k: rng.normal(size=v.data.shape) for k, v in model.params.items()}
            adam_step(model.params, grads, state, 0.05, masks=model.masks)
            zeros_held = zeros_held and bool(np.all(model.params["w0"].data[mask == 0] == 0.0))
        checks.append(("masked weights stay zero", zeros_held, "10 adam steps"))

        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name} [{'ok' if good else 'BAD'}: {info}]" for name, good, info in checks)
        report("numerical core properties", ok, detail)
