"""One test per acceptance criterion; the terminal summary prints a
pass/fail line for each. Run alone with ``pytest -m acceptance``."""

import csv
import json
import logging
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import random_pool, random_state
from fishermask import cli
from fishermask.data import Dataset
from fishermask.fisher import (
    DEFAULT_SPARSITY,
    SPARSITY_SWEEP,
    FisherDiagonal,
    build_mask,
    fisher_diag_pool,
    grad_factor,
    grad_factors,
    pool_fisher_masked,
    segment_mask,
)
from fishermask.harness import ExperimentConfig, aggregate_trials, load_datasets, run_experiment
from fishermask.model import ModelSpec, grad_logp_all_classes, init_params, loss_and_grad, predict_proba
from fishermask.selector import (
    SelectionState,
    entropy_bits,
    greedy_select,
    init_selection_state,
    kcenter_greedy,
    margin,
    woodbury_update,
)
from oracles import (
    central_diff,
    exhaustive_kcenter,
    fd_scores,
    greedy_oracle,
    naive_mean_ce,
    random_psd,
    random_spd,
    rel_err,
)

pytestmark = pytest.mark.acceptance


def criterion(num, title):
    return pytest.mark.criterion(num, title)


# ----------------------------------------------------------------- 1


def _matrix_instances(n_inst, seed):
    r = np.random.default_rng(seed)
    for _ in range(n_inst):
        k, n, T = int(r.integers(1, 17)), int(r.integers(1, 5)), int(r.integers(5, 201))
        M, F = random_spd(r, k, floor=r.uniform(0.05, 1.0)), random_psd(r, k, rank=int(r.integers(1, k + 1)))
        Vs = r.normal(size=(T, k, n)) * r.uniform(0.1, 2.0, size=(T, 1, 1))
        ids = r.permutation(10 * T)[:T]
        yield M, F, Vs, ids, int(r.integers(1, min(T, 8) + 1))


def _model_instances(n_inst, seed):
    r = np.random.default_rng(seed)
    for i in range(n_inst):
        kind = ("softmax_linear", "mlp1")[i % 2]
        n = int(r.integers(2, 5))
        m = random_state(kind, 3, n, hidden=4, seed=int(r.integers(1 << 30)), scale=0.8)
        T = int(r.integers(20, 201))
        pool, labeled = random_pool(T, 3, n, seed=i), random_pool(5, 3, n, seed=1000 + i)
        mask = build_mask(fisher_diag_pool(m, pool), 0.4)  # |theta| <= 36, so k <= 15
        st = init_selection_state(m, pool, labeled, mask, lam=1.0)
        yield st.M.copy(), st.F_theta, grad_factors(m, pool.features, mask), pool.ids, int(r.integers(1, 9)), st


@criterion(1, "greedy picks equal dense-inversion argmin of the trace objective")
def test_greedy_oracle_equivalence(note):
    t0 = time.perf_counter()
    agree = total = instances = 0
    for M, F, Vs, ids, N in _matrix_instances(40, seed=2024):
        sel = greedy_select(SelectionState.from_matrices(M, F), Vs, ids, N)
        ref = greedy_oracle(M, F, Vs, ids, N)
        agree += sum(a == b for a, b in zip(sel.ids.tolist(), ref))
        total += N
        instances += 1
    for M, F, Vs, ids, N, st in _model_instances(20, seed=7):
        assert st.k <= 16
        sel = greedy_select(st, Vs, ids, N)
        ref = greedy_oracle(M, F, Vs, ids, N)
        agree += sum(a == b for a, b in zip(sel.ids.tolist(), ref))
        total += N
        instances += 1
    elapsed = time.perf_counter() - t0
    note(f"{instances} instances, {agree}/{total} picks agree, {elapsed:.1f}s")
    assert instances >= 50
    assert agree == total
    assert elapsed < 60


# ----------------------------------------------------------------- 2


@criterion(2, "Woodbury-maintained inverse matches direct inversion")
def test_woodbury_fidelity(note):
    t0 = time.perf_counter()
    r = np.random.default_rng(99)
    k, n = 64, 5
    M0 = random_spd(r, k)
    st = SelectionState.from_matrices(M0, random_psd(r, k))
    M = M0.copy()
    for _ in range(50):
        V = r.normal(size=(k, n))
        woodbury_update(st, V)
        M += V @ V.T
    direct = np.linalg.inv(M)
    err = np.linalg.norm(st.M_inv - direct) / np.linalg.norm(direct)
    note(f"relative Frobenius error {err:.2e}, {time.perf_counter() - t0:.2f}s")
    assert err < 1e-8


# ----------------------------------------------------------------- 3


@criterion(3, "Fisher diagonal, factor and pool matrix are mutually consistent")
def test_fisher_consistency(note):
    worst_diag = worst_outer = 0.0
    for seed in range(20):
        kind = ("softmax_linear", "mlp1")[seed % 2]
        m = random_state(kind, 4, 3, hidden=6, seed=seed)
        pool = random_pool(25, 4, 3, seed=seed)
        diag = fisher_diag_pool(m, pool)
        mask = build_mask(diag, 0.3)
        F = pool_fisher_masked(m, pool, mask)
        worst_diag = max(worst_diag, np.abs(np.diag(F) - diag.values[mask.indices]).max())
        for x in pool.features[:5]:
            V = grad_factor(m, x, mask)
            G = grad_logp_all_classes(m, x)[mask.indices]
            p = predict_proba(m, x)
            brute = sum(p[y] * np.outer(G[:, y], G[:, y]) for y in range(3))
            worst_outer = max(worst_outer, np.abs(V @ V.T - brute).max())

    zero = init_params(ModelSpec("softmax_linear", 2, 2, init_scale=0.0))
    x = np.array([1.0, 0.0])
    w00 = zero.layout.indices("W")[0]
    hand = fisher_diag_pool(zero, Dataset(x[None], None, 2)).values[w00]
    V = grad_factor(zero, x, segment_mask(zero.layout, ["W"]))
    note(f"diag gap {worst_diag:.1e}, outer-product gap {worst_outer:.1e}, hand case {hand}")
    assert worst_diag <= 1e-12
    assert worst_outer <= 1e-12
    assert hand == 0.25
    assert abs((V @ V.T)[0, 0] - 0.25) <= 1e-12


# ----------------------------------------------------------------- 4


def _kink_free(m, X, margin=1e-3):
    if m.spec.kind != "mlp1":
        return True
    p = m.params()
    return bool(np.all(np.abs(X @ p["W1"].T + p["b1"]) > margin))


@criterion(4, "analytic gradients match central finite differences")
@pytest.mark.parametrize("kind", ["softmax_linear", "mlp1"])
def test_gradient_correctness(kind, note):
    r = np.random.default_rng({"softmax_linear": 1, "mlp1": 2}[kind])
    cases, worst, seed = 0, 0.0, 0
    while cases < 100:
        seed += 1
        d, n = int(r.integers(2, 5)), int(r.integers(2, 5))
        m = random_state(kind, d, n, hidden=int(r.integers(1, 6)), seed=seed, scale=float(r.uniform(0.2, 1.5)))
        X, y = r.normal(size=(5, d)), r.integers(0, n, 5)
        if not _kink_free(m, X):
            continue
        _, g = loss_and_grad(m, (X, y))
        worst = max(worst, rel_err(g, central_diff(lambda t: naive_mean_ce(m.spec, t, X, y), m.theta)))
        worst = max(worst, rel_err(grad_logp_all_classes(m, X[0]), fd_scores(m.spec, m.theta, X[0])))
        cases += 1
    note(f"{kind}: {cases} cases, max relative error {worst:.1e}")
    assert worst < 1e-5


# ----------------------------------------------------------------- 5


@criterion(5, "entropy, margin and k-center formulas")
def test_baseline_formulas(note):
    h = float(entropy_bits([0.5, 0.3, 0.2]))
    note(f"H(0.5,0.3,0.2) = {h:.6f}")
    assert entropy_bits([0.25] * 4) == 2.0
    assert abs(h - 1.4855) <= 1e-3
    assert margin([0.9, 0.05, 0.05]) == 0.85
    pts, centers = [[3.0], [10.0], [11.0]], [[0.0]]
    assert kcenter_greedy(pts, centers, [3, 10, 11], 1).ids.tolist() == [11]
    assert kcenter_greedy(pts, centers, [3, 10, 11], 2).ids.tolist() == [11, 3]
    assert [[3, 10, 11][i] for i in exhaustive_kcenter(pts, centers, 2)] == [11, 3]


# ----------------------------------------------------------------- 6


@criterion(6, "mask size ceil(sparsity * |theta|) and mask dominance")
def test_mask_contract(note):
    # frozen sweep values and optimum
    assert SPARSITY_SWEEP == (0.01, 0.005, 0.002, 0.001)
    assert DEFAULT_SPARSITY == 0.002
    exact = {0.01: Fraction(1, 100), 0.005: Fraction(1, 200), 0.002: Fraction(1, 500), 0.001: Fraction(1, 1000)}
    layouts = [
        ModelSpec("mlp1", 10, 4, hidden=16).layout(),
        ModelSpec("mlp1", 784, 10, hidden=64).layout(),
        ModelSpec("softmax_linear", 784, 10).layout(),
        ModelSpec("mlp1", 50, 4, hidden=20).layout(),
    ]
    r = np.random.default_rng(6)
    checked = 0
    for lay in layouts:
        for s in SPARSITY_SWEEP:
            diag = FisherDiagonal(r.exponential(size=lay.total), 1, lay)
            mask = build_mask(diag, s)
            assert mask.k == max(1, math.ceil(exact[s] * lay.total))
            checked += 1
    for i in range(100):
        size = int(r.integers(1, 3000))
        values = r.exponential(size=size)
        if i % 3 == 0:
            values = np.round(values, 1)  # plenty of ties
        mask = build_mask(FisherDiagonal(values, 1), SPARSITY_SWEEP[i % 4])
        rest = np.setdiff1d(np.arange(size), mask.indices)
        if rest.size:
            assert values[mask.indices].min() >= values[rest].max()
            cut = values[mask.indices].min()
            tied_out = rest[values[rest] == cut]
            if tied_out.size:
                assert mask.indices[values[mask.indices] == cut].max() < tied_out.min()
    note(f"{checked} layout/sparsity sizes, 100 random diagonals")


# ----------------------------------------------------------------- 7


@criterion(7, "desk-scale imbalanced run: FisherMask >= random - 1 pooled std")
def test_desk_scale_setting_one(note):
    t0 = time.perf_counter()
    base = ExperimentConfig()
    assert list(base.dataset.counts) == [25, 500, 25, 25]  # one tenth of 250/5000/250/250
    assert base.model.kind == "mlp1" and base.trials == 5
    assert base.budget == int(0.10 * sum(base.dataset.counts))
    datasets = load_datasets(base.dataset)
    finals = {}
    for name in ("fishermask", "random"):
        cfg = ExperimentConfig.from_dict({**base.to_dict(), "strategy": name})
        curve = aggregate_trials(run_experiment(cfg, base.base_seed + t, datasets) for t in range(cfg.trials))
        finals[name] = (curve.mean_acc[-1], curve.std_acc[-1])
    (fm, fs), (rm, rs) = finals["fishermask"], finals["random"]
    pooled = math.sqrt((fs**2 + rs**2) / 2)
    elapsed = time.perf_counter() - t0
    note(f"fishermask {fm:.4f}+-{fs:.4f}, random {rm:.4f}+-{rs:.4f}, pooled std {pooled:.4f}, {elapsed:.0f}s")
    assert fm >= rm - pooled
    assert elapsed < 600


# ----------------------------------------------------------------- 8


SMALL = {
    "dataset": {"n_classes": 4, "d": 6, "counts": [15, 120, 15, 15], "separation": 3.0},
    "model": {"kind": "mlp1", "hidden": 8},
    "train": {"epochs": 40},
    "n_initial": 12,
    "batch_per_round": 4,
    "budget": 24,
    "trials": 3,
    "sparsity": 0.05,
    "strategies": ["fishermask", "bait", "entropy", "margin", "kcenter", "random"],
}


def _records(out):
    recs = {}
    for path in sorted((out / "records").glob("*.json")):
        recs[path.stem] = json.loads(path.read_text())
        for entry in recs[path.stem]["rounds"]:
            entry.pop("wall_time")
    return recs


@criterion(8, "compare mode: identical round-0 accuracy, exact reruns")
def test_fairness_and_reproducibility(tmp_path, monkeypatch, note):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.main(["compare", str(cfg), "--output_dir", "a"]) == 0
    assert cli.main(["compare", str(cfg), "--output_dir", "b"]) == 0
    a, b = _records(tmp_path / "a"), _records(tmp_path / "b")
    assert len(a) == 6 * 3
    for t in range(3):
        round0 = {a[f"{s}_trial{t}"]["rounds"][0]["accuracy"] for s in SMALL["strategies"]}
        chosen0 = {tuple(a[f"{s}_trial{t}"]["rounds"][0]["chosen"]) for s in SMALL["strategies"]}
        assert len(round0) == 1 and len(chosen0) == 1
    assert a == b
    for name in ("comparison.csv", *(f"curve_{s}.csv" for s in SMALL["strategies"])):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    note(f"{len(a)} records reproduced exactly; round-0 identical across 6 strategies x 3 trials")


# ----------------------------------------------------------------- 9


@criterion(9, "layer profile: 4-row CSV summing to k, last-layer share reported")
def test_layer_profile(tmp_path, monkeypatch, caplog, note):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"kind": "mlp1"}, "sparsity": 0.002}))
    with caplog.at_level(logging.INFO, logger="fishermask"):
        assert cli.main(["-v", "profile", str(cfg)]) == 0
    with open(tmp_path / "out" / "profile.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    total = sum(int(r["total"]) for r in rows)
    k = max(1, math.ceil(Fraction(1, 500) * total))
    assert [r["layer"] for r in rows] == ["W1", "b1", "W2", "b2"]
    assert sum(int(r["selected"]) for r in rows) == k
    last = [line for line in caplog.messages if "last layer" in line]
    assert last
    note(f"|theta|={total}; {last[0]}")
