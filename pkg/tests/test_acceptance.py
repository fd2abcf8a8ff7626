"""Acceptance criteria 1-8. Each test prints one ``PASS``/``FAIL`` line.

Criteria 5-7 share one module fixture that runs six cells for seeds 0, 1, 2
on configs/acceptance.yaml (about ten minutes on one core).
"""
import math
import os
import time

import numpy as np
import pytest

import oracles
from encsteal import losses
from encsteal.config import load_config
from encsteal.evaluation import ProbeHyper, accuracy, agreement, train_probe
from encsteal.harness import run_experiment
from encsteal.nn import ArchSpec, Tensor, finite_diff_grad, init_model, max_rel_error
from encsteal.nn.checkpoint import save_checkpoint
from encsteal.pretrain import MoCoState, PretrainHyper, moco_update, pretrain_encoder
from encsteal.steal import StealConfig, TargetOracle, run_attack

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "acceptance.yaml")
SEEDS = (0, 1, 2)
SLACK = 0.02
SHIFT = {"attack.surrogate_data": {"source": "synthetic", "shift": "template-swap"}}
CELLS = {
    "Label": {"attack.response_type": "Label", "attack.steal.attack": "ConvClassifier"},
    "Posterior": {"attack.response_type": "Posterior", "attack.steal.attack": "ConvClassifier"},
    "Embedding": {"attack.steal.attack": "ConvEncoder"},
    "shift-ConvEncoder": {**SHIFT, "attack.steal.attack": "ConvEncoder"},
    "shift-ContSteal": dict(SHIFT),
    "shift-ContSteal-no-self": {**SHIFT, "attack.steal.include_d_self": False},
}


@pytest.fixture
def verdict(capsys):
    def report(criterion, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return report


# -- 1: gradients ----------------------------------------------------------


def _tensors(arrays, **replace):
    return {k: Tensor(replace.get(k, v)) for k, v in arrays.items()}


def _fd(build, arrays, names):
    return finite_diff_grad(lambda p: float(build(_tensors(arrays, **p))), {k: arrays[k] for k in names}, 1e-6)


def _live_error(build, arrays, live):
    leaves = {k: Tensor(v.copy(), requires_grad=k in live) for k, v in arrays.items()}
    build(leaves).backward()
    return max_rel_error({k: leaves[k].grad for k in live}, _fd(build, arrays, live))


def _grad_instances(rng):
    """Yield (name, build, arrays, live) with N <= 8 rows and D <= 16 columns."""
    for _ in range(20):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        half = max(1, n // 2)
        tau = float(rng.uniform(0.2, 1.0))
        u = lambda *s: rng.uniform(-1, 1, s)
        z = u(2 * half, d)
        i, j = rng.choice(2 * half, 2, replace=False)
        yield "simclr_pair", lambda p, i=i, j=j, tau=tau: losses.simclr_pair_loss(p["z"], int(i), int(j), tau), {"z": z}, ("z",)
        yield "simclr_batch", lambda p, tau=tau: losses.simclr_batch_loss(p["z"], tau), {"z": z}, ("z",)
        yield "moco", lambda p, tau=tau: losses.moco_batch_loss(p["q"], p["k"], p["Q"], tau), {"q": u(n, d), "k": u(n, d), "Q": u(int(rng.integers(0, 9)), d)}, ("q",)
        yield "byol", lambda p: losses.byol_loss(p["a"], p["b"]), {"a": u(n, d), "b": u(n, d)}, ("a",)
        yield "simsiam", lambda p: losses.simsiam_loss(p["h1"], p["h2"], p["p1"], p["p2"]), {k: u(n, d) for k in ("h1", "h2", "p1", "p2")}, ("p1", "p2")
        yield "mse", lambda p: losses.embedding_mse_loss(p["s"], p["t"]), {"s": u(n, d), "t": u(n, d)}, ("s",)
        labels = rng.integers(0, d, n)
        yield "cross_entropy", lambda p, y=labels: losses.label_cross_entropy_loss(p["x"], y), {"x": u(n, d)}, ("x",)
        for flags in [(True, True), (False, True), (True, False)]:
            yield "cont_steal", lambda p, tau=tau, f=flags: losses.cont_steal_loss(p["s"], p["t"], tau, *f), {"s": u(n, d), "t": u(n, d)}, ("s",)


def test_criterion_1_gradients_match_finite_differences(verdict):
    start = time.perf_counter()
    worst, counts = {}, {}
    for name, build, arrays, live in _grad_instances(np.random.default_rng(1)):
        err = _live_error(build, arrays, live)
        worst[name] = max(worst.get(name, 0.0), err)
        counts[name] = counts.get(name, 0) + 1
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-3 and min(counts.values()) >= 20 and elapsed < 60
    detail = ", ".join(f"{k} {worst[k]:.1e}" for k in sorted(worst)) + f"; {elapsed:.1f}s"
    verdict(1, ok, f"max rel err per loss: {detail}")


# -- 2: loss oracles -------------------------------------------------------


def test_criterion_2_losses_match_direct_formulas(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        tau = float(rng.uniform(0.1, 2.0))
        z = rng.normal(size=(2 * n, d))
        worst = max(worst, abs(float(losses.simclr_batch_loss(z, tau)) - oracles.simclr_batch(z, tau)))
        s, t = rng.normal(size=(n + 1, d)), rng.normal(size=(n + 1, d))
        for flags in [(True, True), (False, True), (True, False), (False, False)]:
            expect = oracles.cont_steal(s, t, tau, *flags)[0]
            worst = max(worst, abs(float(losses.cont_steal_loss(s, t, tau, *flags)) - expect))
    eye = np.eye(2)
    pair = float(losses.simclr_pair_loss(np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]]), 0, 1, 1.0))
    steal = float(losses.cont_steal_loss(eye, eye, 1.0))
    expect = -math.log(math.e / (math.e + 2))
    examples = abs(pair - 0.5514) <= 1e-4 and abs(steal - 0.5514) <= 1e-4 and abs(steal - expect) <= 1e-6
    verdict(2, worst <= 1e-6 and examples, f"max |engine - formula| {worst:.1e}; worked examples {pair:.4f}, {steal:.4f}")


# -- 3: stop-gradient and freeze contracts ----------------------------------


STOPPED = {
    "moco momentum branch": (lambda p: losses.moco_batch_loss(p["q"], p["k"], p["Q"], 0.5), ("k", "Q")),
    "byol target": (lambda p: losses.byol_loss(p["a"], p["b"]), ("b",)),
    "simsiam stopped branch": (lambda p: losses.simsiam_loss(p["h1"], p["h2"], p["p1"], p["p2"]), ("h1", "h2")),
    "oracle embeddings (cont_steal)": (lambda p: losses.cont_steal_loss(p["s"], p["t"], 0.5), ("t",)),
    "oracle embeddings (mse)": (lambda p: losses.embedding_mse_loss(p["s"], p["t"]), ("t",)),
}
SHAPES = {"q": (3, 4), "k": (3, 4), "Q": (5, 4), "a": (3, 4), "b": (3, 4), "s": (4, 4), "t": (4, 4),
          "h1": (3, 4), "h2": (3, 4), "p1": (3, 4), "p2": (3, 4)}


def _stopped_ok(build, stopped, rng):
    """Stopped inputs get no reverse-mode gradient although the loss depends on them."""
    arrays = {k: rng.uniform(-1, 1, shape) for k, shape in SHAPES.items()}
    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    build(leaves).backward()
    numeric = _fd(build, arrays, stopped)
    return all((leaves[k].grad is None or not np.any(leaves[k].grad)) and np.abs(numeric[k]).max() > 1e-6 for k in stopped)


def _file_bytes(path):
    return {name: open(os.path.join(path, name), "rb").read() for name in sorted(os.listdir(path))}


def test_criterion_3_stop_gradients_and_frozen_target(verdict, toy_split, tmp_path):
    rng = np.random.default_rng(3)
    grads = {name: _stopped_ok(build, stopped, rng) for name, (build, stopped) in STOPPED.items()}

    arch = ArchSpec(widths=(8,), embed_dim=8, proj_dim=4)
    train = toy_split[0]
    target = pretrain_encoder("MoCo", train, arch, PretrainHyper(epochs=2, batch_size=32, moco_k=64), seed=0).model
    before = _file_bytes(save_checkpoint(target, str(tmp_path / "before")))
    probe = train_probe(target, train, ProbeHyper(epochs=5), seed=0)
    frozen = {"probe": _file_bytes(save_checkpoint(target, str(tmp_path / "after-probe"))) == before}
    for attack, response in [("ConvClassifier", "Label"), ("ConvClassifier", "Posterior"), ("ConvEncoder", "Embedding"), ("ContSteal", "Embedding")]:
        run_attack(TargetOracle(target, response, probe), train, arch, StealConfig(attack=attack, epochs=1, batch_size=32))
        saved = save_checkpoint(target, str(tmp_path / f"after-{attack}-{response}"))
        frozen[f"{attack}/{response}"] = _file_bytes(saved) == before and all(p.grad is None for p in target.params.values())
    ok = all(grads.values()) and all(frozen.values())
    bad = [k for k, v in {**grads, **frozen}.items() if not v]
    verdict(3, ok, f"{len(grads)} stop-gradient checks, {len(frozen)} checkpoint comparisons" + (f"; failing: {bad}" if bad else ""))


# -- 4: structural invariants -----------------------------------------------


def _queue_sequences_ok(rng):
    arch = ArchSpec(kind="MLP", input_shape=(2,), widths=(), embed_dim=3, with_projector=False)
    for _ in range(50):
        K = int(rng.integers(1, 16))
        state = MoCoState(init_model(arch, 0).clone(trainable=False), K, 0.9)
        online = {k: p.data for k, p in state.momentum_encoder.params.items()}
        pushed = []
        for _ in range(int(rng.integers(1, 20))):
            keys = rng.normal(size=(int(rng.integers(1, K + 1)), 3)) + 0.1
            moco_update(state, online, keys)
            pushed.extend(keys / np.linalg.norm(keys, axis=1, keepdims=True))
            if not np.allclose(state.queue, np.array(pushed[-K:], dtype=np.float32), atol=1e-6):
                return False
    return True


def test_criterion_4_structural_invariants(verdict, toy_split):
    rng = np.random.default_rng(4)
    queue_ok = _queue_sequences_ok(rng)
    metrics_ok = (
        agreement([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5
        and agreement([2, 2, 2], [2, 2, 2]) == 1.0
        and agreement([0, 1], [1, 0]) == 0.0
        and accuracy([1, 0, 1, 1, 0], [1, 1, 1, 0, 0]) == 0.6
    )
    arch = ArchSpec(widths=(8,), embed_dim=8, proj_dim=4)
    train = toy_split[0]
    target = init_model(arch, 0).without_projector()
    probe = train_probe(target, train, ProbeHyper(epochs=3), seed=0)
    post = TargetOracle(target, "Posterior", probe).query(rng.uniform(size=(64, 3, 8, 8)))
    post_err = float(np.abs(post.sum(axis=1) - 1).max())
    counts_ok = True
    for attack, response, batch in [("ContSteal", "Embedding", 32), ("ConvEncoder", "Embedding", 17), ("ConvClassifier", "Label", 50)]:
        oracle = TargetOracle(target, response, probe)
        res = run_attack(oracle, train, arch, StealConfig(attack=attack, epochs=2, batch_size=batch))
        ids = oracle.queried_ids()
        counts_ok &= res.query_count == oracle.query_count == len(ids) == 2 * len(train)
        counts_ok &= sorted(ids) == sorted(np.concatenate([train.ids, train.ids]))
    ok = queue_ok and metrics_ok and post_err <= 1e-5 and counts_ok
    verdict(4, ok, f"queue FIFO {queue_ok}, metrics exact {metrics_ok}, posterior row-sum err {post_err:.1e}, query accounting {counts_ok}")


# -- 5-8: desk-scale reproduction ----------------------------------------------


@pytest.fixture(scope="module")
def desk_runs():
    base = load_config(CONFIG)
    cache, results, seconds = {}, {}, {}
    for seed in SEEDS:
        start = time.perf_counter()
        for name, overrides in CELLS.items():
            results[name, seed] = run_experiment(base.with_seed(seed).with_overrides(overrides), cache=cache)
        seconds[seed] = time.perf_counter() - start
    return results, seconds


def _mean(results, name):
    return float(np.mean([results[name, s].surrogate_eval.agreement for s in SEEDS]))


def _per_seed(results, name):
    return "/".join(f"{results[name, s].surrogate_eval.agreement:.3f}" for s in SEEDS)


def test_criterion_5_response_type_ordering(verdict, desk_runs):
    results, seconds = desk_runs
    e, p, l = (_mean(results, n) for n in ("Embedding", "Posterior", "Label"))
    slow = max(seconds.values())
    ok = e >= p - SLACK and p >= l - SLACK and slow < 15 * 60
    verdict(5, ok, f"mean agreement Embedding {e:.4f} ({_per_seed(results, 'Embedding')}), "
                   f"Posterior {p:.4f} ({_per_seed(results, 'Posterior')}), Label {l:.4f} ({_per_seed(results, 'Label')}); "
                   f"slowest seed {slow / 60:.1f} min")


def test_criterion_6_cont_steal_under_shift(verdict, desk_runs):
    results, _ = desk_runs
    c, m = _mean(results, "shift-ContSteal"), _mean(results, "shift-ConvEncoder")
    equal_budget = all(results["shift-ContSteal", s].query_count == results["shift-ConvEncoder", s].query_count for s in SEEDS)
    verdict(6, c >= m - SLACK and equal_budget,
            f"shifted surrogate data: ContSteal {c:.4f} ({_per_seed(results, 'shift-ContSteal')}) vs "
            f"ConvEncoder {m:.4f} ({_per_seed(results, 'shift-ConvEncoder')}), equal queries {equal_budget}")


def test_criterion_7_self_negatives_ablation(verdict, desk_runs):
    results, _ = desk_runs
    full, ablated = _mean(results, "shift-ContSteal"), _mean(results, "shift-ContSteal-no-self")
    verdict(7, ablated <= full + SLACK,
            f"without surrogate-surrogate negatives {ablated:.4f} ({_per_seed(results, 'shift-ContSteal-no-self')}) "
            f"vs full loss {full:.4f}")


def test_criterion_8_bit_for_bit_rerun(verdict, desk_runs):
    results, _ = desk_runs
    cfg = load_config(CONFIG).with_seed(1).with_overrides(CELLS["shift-ContSteal"])
    fresh = run_experiment(cfg)
    original = results["shift-ContSteal", 1].metrics()
    same = fresh.metrics() == original
    verdict(8, same, f"uncached rerun of shift-ContSteal seed 1: agreement {fresh.surrogate_eval.agreement!r}, "
                     f"{len(original)} metric fields identical {same}")
