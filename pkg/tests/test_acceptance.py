"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line; the lines are printed together at
the end of the pytest run (see ``pytest_terminal_summary`` in conftest.py).
Tolerances are the pinned values of each criterion and are not loosened.
"""

import math
import time

import numpy as np
import pytest

from livr_lab import tensor as T
from livr_lab.checkpoint import load_checkpoint
from livr_lab.cli import cmd_gen, cmd_train
from livr_lab.config import RunConfig, apply_overrides
from livr_lab.data import collate
from livr_lab.experiments import (LATE_SPLIT, LATENTS_ONLY_SPLIT, LIVR_SPLIT, StudyData,
                                  directional_checks, run_study, schedule_check, toy_model_config,
                                  toy_optimizer)
from livr_lab.gradcheck import grad_check
from livr_lab.masking import MaskPolicy, build_mask, reachability
from livr_lab.model import LoraConfig, ModelConfig, init_model, substitute_image_eval, trainability_map
from livr_lab.taskgen.dataset import generate_split
from livr_lab.taskgen.geometry import Box, iou, warp_point
from livr_lab.taskgen.generators import KINDS
from livr_lab.taskgen.oracles import flood_fill_count, verify
from livr_lab.training import answer_nll, batch_nll
from livr_lab.vocab import LatentConfig, build_layout, span_range

RESULTS: list[str] = []

BOTTLENECK = MaskPolicy("bottleneck")
BOTTLENECK_DROP = MaskPolicy("bottleneck", drop_latents=True)


def record(n, passed, detail):
    line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def random_tiny_graph(rng):
    """A random small transformer with every trainable and probed tensor off its init."""
    d = int(rng.choice([8, 16, 24, 32]))
    K = int(rng.integers(0, 4))
    cfg = ModelConfig(d_model=d, n_layers=int(rng.integers(1, 3)), n_heads=2, mlp_ratio=2,
                      image_size=(8, 8, 6), patch_size=4, latent=LatentConfig(K=K),
                      lora=LoraConfig(rank=2, alpha=4), full_finetune=True)
    model = init_model(cfg, int(rng.integers(1 << 30)))
    for k, p in model.params.items():
        if k.endswith(".lora_b") or k.endswith(".b") or k.endswith(".g"):
            p.data = p.data + rng.normal(0.0, 0.3, size=p.shape)
    v = model.vocab
    words = ["<bos>", "A", "B", "C", "D", "which", "box", "?"]
    seqs = []
    for _ in range(2):
        prompt = v.ids(list(rng.choice(words, size=int(rng.integers(1, 4)))))
        answer = v.ids(list(rng.choice(["1", "2", "A", "<eos>"], size=int(rng.integers(1, 3)))))
        seqs.append(model.sequence(rng.uniform(0, 1, (8, 8, 6)), prompt, answer))
    policy = MaskPolicy(str(rng.choice(["standard", "bottleneck", "ans_to_vis_only"])))
    return model, collate(seqs, policy, v)


def test_criterion_01_autodiff_gradcheck():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        model, batch = random_tiny_graph(rng)
        names = sorted(model.trainable)
        probe = [model.params[n] for n in rng.choice(names, size=min(4, len(names)), replace=False)]

        def f():
            return batch_nll(model.forward(batch).logits, batch.targets, batch.weights, batch.size)

        worst = max(worst, grad_check(f, probe, h=5e-3, max_coords=4, rng=rng))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    record(1, ok, f"max relative gradient error {worst:.2e} over 100 graphs (< 1e-4), {secs:.1f}s (< 60s)")
    assert ok


def test_criterion_02_bottleneck_reachability():
    rng = np.random.default_rng(7)
    bad = []
    for i in range(1000):
        n_img, n_prompt = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        K, n_ans = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        placement = str(rng.choice(["after_prompt", "before_prompt"]))
        lay = build_layout(n_img, n_prompt, K, n_ans, placement)
        lay = lay.padded(lay.total_len + int(rng.integers(0, 3)))
        img, ans = list(span_range(lay.image_span)), list(span_range(lay.answer_span))
        block = np.ix_(img, ans)
        bmask = build_mask(BOTTLENECK, lay)
        cut = reachability(bmask, exclude_span=lay.latent_span)[block]
        full = reachability(bmask)[block]
        leak = reachability(build_mask(MaskPolicy("ans_to_vis_only"), lay),
                            exclude_span=lay.latent_span)[block]
        if cut.any() or not full.all() or not leak.any():
            bad.append(i)
    ok = not bad
    record(2, ok, f"{1000 - len(bad)}/1000 layouts: no image->answer path without latents, "
                  f"complete with latents, ans_to_vis_only leaks")
    assert ok, bad[:10]


def test_criterion_03_substitute_image():
    model = init_model(toy_model_config(), 0)
    v = model.vocab
    exs = generate_split("localization", 123, range(200))
    prompt = v.ids(exs[0].prompt)
    exact, moved = 0, 0
    for a, b in zip(exs[:100], exs[100:]):
        answer = v.ids([a.answer])
        exact += substitute_image_eval(model, a.image, b.image, prompt, answer, BOTTLENECK_DROP)[2] == 0.0
        moved += substitute_image_eval(model, a.image, b.image, prompt, answer, BOTTLENECK)[2] > 1e-9
    ok = exact == 100 and moved >= 99
    record(3, ok, f"bottleneck+drop exact-zero difference {exact}/100; "
                  f"bottleneck with latents differs {moved}/100 (>= 99)")
    assert ok


def test_criterion_04_gradient_blockage():
    model = init_model(toy_model_config(), 0)
    rng = np.random.default_rng(4)
    for k, p in model.params.items():
        if k.endswith(".lora_b"):
            p.data = rng.normal(0.0, 0.2, size=p.shape)
    v = model.vocab
    exs = generate_split("localization", 5, range(16))
    seqs = [model.sequence(e.image, v.ids(e.prompt), v.ids([e.answer])) for e in exs]

    def image_grads(policy):
        batch = collate(seqs, policy, v)
        embeds = [T.Tensor(model.patch_embed(s.image).data, requires_grad=True) for s in seqs]
        loss = batch_nll(model.forward(batch, image_embeds=embeds).logits, batch.targets,
                         batch.weights, len(seqs))
        T.backward(loss)
        return np.stack([e.grad for e in embeds])

    g_drop = image_grads(BOTTLENECK_DROP)
    g_lat = image_grads(BOTTLENECK)
    nonzero = int(np.count_nonzero(g_drop))
    ok = nonzero == 0 and np.abs(g_lat).max() > 0
    record(4, ok, f"bottleneck+drop: {nonzero} of {g_drop.size} image-embedding gradient coordinates nonzero; "
                  f"with latents max |grad| {np.abs(g_lat).max():.2e}")
    assert ok


def test_criterion_05_loss_masking():
    rng = np.random.default_rng(5)
    model = init_model(toy_model_config(), 0)
    v = model.vocab
    changed, checked, worst_uniform = 0, 0, 0.0
    for e in generate_split("counting", 9, range(20)):
        s = model.sequence(e.image, v.ids(e.prompt), v.ids([str(c) for c in str(e.answer)] + ["<eos>"]))
        b = collate([s], MaskPolicy(), v)
        with T.no_grad():
            logits = T.Tensor(model.forward(b).logits.data[0])
        lay, targets = b.layouts[0], b.targets[0]
        base = answer_nll(logits, targets, lay).item()
        scored = set(range(lay.answer_span[0], lay.answer_span[1] - 1))
        for pos in range(len(targets)):
            if pos in scored:
                continue
            t2 = targets.copy()
            t2[pos] = int(rng.integers(0, v.total_size))
            checked += 1
            changed += answer_nll(logits, t2, lay).item() != base
        uni = answer_nll(T.Tensor(np.zeros(logits.shape)), targets, lay).item()
        worst_uniform = max(worst_uniform, abs(uni - math.log(v.total_size)))
    ok = changed == 0 and worst_uniform <= 1e-12
    record(5, ok, f"{changed}/{checked} non-answer target perturbations changed the loss; "
                  f"|uniform loss - ln|V|| = {worst_uniform:.1e} (<= 1e-12)")
    assert ok


def test_criterion_06_generator_oracles():
    t0 = time.perf_counter()
    failures = {}
    for kind in KINDS:
        bad = 0
        for ex in generate_split(kind, 2025, range(1000)):
            m = ex.meta
            ok, _ = verify(ex)
            if kind == "localization":
                ok = ok and 0.2 <= iou(Box.from_list(m["gold_box"]), Box.from_list(m["distractor_box"])) <= 0.5
            elif kind == "jigsaw":
                ok = ok and iou(Box.from_list(m["gold_box"]), Box.from_list(m["distractor_box"])) == 0.0
            elif kind == "counting":
                ok = ok and flood_fill_count(ex.image[..., 0] == m["target_level"]) == ex.answer
            elif kind == "reflectance":
                ya, yb = m["Y"]
                rel = abs(ya - yb) / max(ya, yb, 1e-8)
                ok = ok and ex.answer == ("C" if rel <= 0.10 else ("A" if ya < yb else "B"))
            elif kind == "correspondence":
                tx, ty = warp_point(np.asarray(m["homography"]), *m["ref"])
                cx, cy = m["candidates"][ex.answer]
                ok = ok and math.hypot(cx - tx - m["panel_width"], cy - ty) <= 1.0
            bad += not ok
        failures[kind] = bad
    secs = time.perf_counter() - t0
    ok = not any(failures.values()) and secs < 120
    detail = ", ".join(f"{k} {1000 - n}/1000" for k, n in failures.items())
    record(6, ok, f"{detail}; {secs:.1f}s (< 120s)")
    assert ok


@pytest.fixture(scope="module")
def study():
    t0 = time.perf_counter()
    data = StudyData.generate("localization", seed=0, n_train=1000, n_val=250, n_test=500)
    res = run_study(data, [LIVR_SPLIT, LATENTS_ONLY_SPLIT, LATE_SPLIT], seeds=[0, 1, 2],
                    model_config=toy_model_config(), opt=toy_optimizer())
    return res, time.perf_counter() - t0


def test_criterion_07_directional_reproduction(study):
    res, secs = study
    checks = directional_checks(res)
    for c, tag in zip(checks, "abcd"):
        print(f"  7({tag}) {'PASS' if c.passed else 'FAIL'}: {c.name}: {c.detail}")
    ok = all(c.passed for c in checks)
    summary = "; ".join(f"({t}) {'ok' if c.passed else 'no'}: {c.detail}" for c, t in zip(checks, "abcd"))
    record(7, ok, f"{summary}; study {secs / 60:.1f} min (target < 45)")
    assert ok


def test_criterion_08_schedule_order(study):
    res, _ = study
    c = schedule_check(res)
    record(8, c.passed, f"{c.name}: {c.detail}")
    assert c.passed


@pytest.fixture(scope="module")
def trained_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cmd_gen("localization", 48, 16, 16, 0, root / "data" / "localization")
    base = RunConfig(data_dir=str(root / "data"), n_train=48, n_val=16, n_test=16,
                     schedule=(2, 2), out_dir=str(root / "a")).to_dict()
    return root, base


def test_criterion_09_determinism(trained_runs):
    root, base = trained_runs
    outs = []
    for name in ("a", "b"):
        cfg = RunConfig.from_dict(apply_overrides(base, [f"out_dir={root / name}"]))
        cmd_train(cfg, quiet=True)
        outs.append({f: (root / name / f).read_bytes() for f in ("checkpoint.ckpt", "run_record.jsonl")})
    same = {f: outs[0][f] == outs[1][f] for f in outs[0]}
    ok = all(same.values())
    record(9, ok, "two identical cmd_train runs: " + ", ".join(
        f"{f} {'bitwise identical' if s else 'DIFFERS'}" for f, s in same.items()))
    assert ok


def test_criterion_10_frozen_parameter_audit(trained_runs):
    root, base = trained_runs
    variants = {
        "livr": [],
        "latents_only": ["method=latents_only"],
        "direct_sft": ["method=direct_sft", "model.latent.K=0"],
        "full_finetune": ["model.full_finetune=true"],
    }
    report = []
    ok = True
    for name, overrides in variants.items():
        cfg = RunConfig.from_dict(apply_overrides(base, overrides + [f"out_dir={root / ('audit_' + name)}"]))
        cmd_train(cfg, quiet=True)
        trained = load_checkpoint(root / f"audit_{name}" / "checkpoint.ckpt")
        init = init_model(cfg.model, cfg.seed)
        trainable = trainability_map(cfg.model, init.params)
        frozen = [k for k in init.params if k not in trainable]
        changed = [k for k in frozen
                   if trained.params[k].data.tobytes() != init.params[k].data.tobytes()]
        moved = sum(not np.array_equal(trained.params[k].data, init.params[k].data) for k in trainable)
        ok = ok and not changed and moved > 0
        report.append(f"{name}: {len(frozen) - len(changed)}/{len(frozen)} frozen unchanged, "
                      f"{moved}/{len(trainable)} trainable moved")
    record(10, ok, "; ".join(report))
    assert ok
