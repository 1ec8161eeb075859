"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``. The synthetic
learnability criterion trains both readers and dominates the runtime;
every other criterion finishes in seconds.
"""
import time

import numpy as np
import pytest

from clozeqa.aoa import (
    ALL_AGGREGATIONS,
    AggregationConfig,
    AoAConfig,
    AoAReader,
    aggregate_candidates,
)
from clozeqa.cli import run
from clozeqa.corpus import SynthConfig, generate_synthetic
from clozeqa.encoder import assemble_input
from clozeqa.ensemble import train_weighting
from clozeqa.evalkit import ContingencyTable, EvalRecord, mcnemar
from clozeqa.mathcore import (
    GruParams,
    MlpParams,
    Tensor,
    grad_check,
    gru_sequence,
    mlp_forward,
    softmax,
    softmax_rows,
)
from clozeqa.mathcore.tensor import (
    concat_vec,
    exp,
    gather_rows,
    hstack2,
    log,
    matmul,
    max_vec,
    mean_axis0,
    mul,
    mul_rows,
    pick,
    seq_sum,
    stack_vec,
    take_vec,
    tanh,
    transpose,
    tsum,
)
from clozeqa.sentreader import SentConfig, SentReader
from clozeqa.tokenizer import Segment, build_vocab, wordpiece_tokenize
from clozeqa.trainer import TrainConfig, evaluate, train

from tests.test_aoa import aggregate_oracle, random_index
from tests.test_evalkit import binomial_two_sided_oracle


def announce(criterion: str, ok: bool, detail: str = "") -> None:
    mark = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\n[{mark}] {criterion}{suffix}", flush=True)


@pytest.fixture(scope="module")
def learnability_world():
    """One seed-7 generator stream split 2000 train / 500 dev."""
    full = generate_synthetic(
        SynthConfig(n_samples=2500, vocab_size=200, n_entities=6, context_len=24,
                    seed=7, name="synth")
    )
    samples = list(full)
    train_split, dev_split = samples[:2000], samples[2000:]
    text = [s.context for s in samples] + [s.question for s in samples]
    vocab = build_vocab(text, max_size=4000)
    return train_split, dev_split, vocab


def test_criterion_1_attention_normalization():
    """Alpha columns, beta and s are probability vectors on 500 random samples."""
    started = time.perf_counter()
    split = generate_synthetic(
        SynthConfig(n_samples=500, vocab_size=40, n_entities=4, context_len=14,
                    seed=101, name="norm")
    )
    text = [s.context for s in split] + [s.question for s in split]
    vocab = build_vocab(text, max_size=1500)
    reader = AoAReader(vocab, AoAConfig(embed_dim=8, hidden_dim=6, seed=3))
    worst = 0.0
    try:
        for sample in split:
            state = reader.attention_state(sample)
            col_err = float(np.abs(state.alpha.data.sum(axis=0) - 1.0).max())
            beta_err = abs(float(state.beta.data.sum()) - 1.0)
            s_err = abs(float(state.attended.data.sum()) - 1.0)
            worst = max(worst, col_err, beta_err, s_err)
            assert col_err <= 1e-9
            assert beta_err <= 1e-9
            assert s_err <= 1e-9
            assert np.all(state.attended.data >= 0)
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"took {elapsed:.1f}s"
    except AssertionError as exc:
        announce("criterion 1: attention normalization", False, str(exc))
        raise
    announce(
        "criterion 1: attention normalization",
        True,
        f"500 samples, worst deviation {worst:.2e}, {time.perf_counter() - started:.1f}s",
    )


def test_criterion_2_aggregation_oracle_equivalence():
    """aggregate_candidates matches brute-force enumeration exactly, 1000 instances."""
    started = time.perf_counter()
    rng = np.random.default_rng(2002)
    try:
        for trial in range(1000):
            context_len = int(rng.integers(2, 12))
            idx = random_index(rng, context_len, n_candidates=int(rng.integers(1, 5)))
            s = Tensor(rng.uniform(0, 1, context_len))
            cfg = ALL_AGGREGATIONS[trial % 4]
            got = aggregate_candidates(s, idx, cfg).as_floats()
            expected = aggregate_oracle(s.data, idx, cfg)
            assert got == expected, f"instance {trial} ({cfg.label}): {got} != {expected}"
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"took {elapsed:.1f}s"
    except AssertionError as exc:
        announce("criterion 2: aggregation oracle equivalence", False, str(exc))
        raise
    announce(
        "criterion 2: aggregation oracle equivalence",
        True,
        f"1000 instances x 4 combinations, exact, {time.perf_counter() - started:.1f}s",
    )


def _op_grad_checks(rng) -> dict[str, float]:
    """Max relative error of every differentiable op at toy shapes."""
    errors = {}

    def check(name, f, x):
        errors[name] = grad_check(f, x)

    v5 = rng.normal(size=5)
    m43 = rng.normal(size=(4, 3))
    check("softmax", lambda t: pick(softmax(t), 2), Tensor(v5.copy()))
    mask = np.array([True, True, False, True, False])
    check("softmax_masked", lambda t: pick(softmax(t, mask), 1), Tensor(v5.copy()))
    check("softmax_rows", lambda t: tsum(mul(softmax_rows(t), softmax_rows(t))), Tensor(m43.copy()))
    check("tanh", lambda t: tsum(tanh(t)), Tensor(m43.copy()))
    check("exp", lambda t: tsum(exp(t)), Tensor(m43.copy() * 0.3))
    check("log", lambda t: tsum(log(t)), Tensor(np.abs(m43.copy()) + 0.5))
    check("mul", lambda t: tsum(mul(t, t)), Tensor(m43.copy()))
    check("matmul", lambda t: tsum(matmul(t, transpose(t))), Tensor(m43.copy()))
    check("mean_axis0", lambda t: tsum(mean_axis0(t)), Tensor(m43.copy()))
    check("gather_rows", lambda t: tsum(gather_rows(t, [0, 2, 2])), Tensor(m43.copy()))
    check("take_vec", lambda t: tsum(take_vec(t, [0, 3, 3])), Tensor(v5.copy()))
    check("seq_sum", lambda t: seq_sum(t), Tensor(v5.copy()))
    check("max_vec", lambda t: max_vec(t), Tensor(v5.copy()))
    check("hstack2", lambda t: tsum(mul(hstack2(t, t), hstack2(t, t))), Tensor(m43.copy()))
    check("concat_vec", lambda t: tsum(mul(concat_vec(t, t), concat_vec(t, t))), Tensor(v5.copy()))
    check(
        "mul_rows",
        lambda t: tsum(mul_rows(t, np.array([1.0, 0.0, 1.0, 1.0]))),
        Tensor(m43.copy()),
    )
    check(
        "stack_vec",
        lambda t: tsum(mul(stack_vec([pick(t, 0), pick(t, 3)]), stack_vec([pick(t, 1), pick(t, 2)]))),
        Tensor(v5.copy()),
    )

    gru = GruParams.init(3, 4, rng)
    x53 = rng.normal(size=(5, 3))
    check("gru_forward", lambda t: tsum(mul(gru_sequence(t, gru), gru_sequence(t, gru))), Tensor(x53.copy()))
    check(
        "gru_reversed",
        lambda t: tsum(mul(gru_sequence(t, gru, reverse=True), gru_sequence(t, gru, reverse=True))),
        Tensor(x53.copy()),
    )

    def gru_param_loss(t):
        q = GruParams(t, gru.u_update, gru.b_update, gru.w_reset, gru.u_reset,
                      gru.b_reset, gru.w_cand, gru.u_cand, gru.b_cand, 3, 4)
        out = gru_sequence(Tensor(x53), q)
        return tsum(mul(out, out))

    check("gru_params", gru_param_loss, gru.w_update.detach())

    mlp = MlpParams.init(4, 6, 1, rng)
    check("mlp_forward", lambda t: pick(mlp_forward(t, mlp), 0), Tensor(rng.normal(size=4)))

    def mlp_param_loss(t):
        q = MlpParams(t, mlp.b1, mlp.w2, mlp.b2)
        return pick(mlp_forward(Tensor([0.3, -0.2, 0.8, 0.1]), q), 0)

    check("mlp_params", mlp_param_loss, mlp.w1.detach())
    return errors


def test_criterion_3_gradient_checks():
    """Every op and the full attention pipeline pass finite-difference checks."""
    started = time.perf_counter()
    rng = np.random.default_rng(303)
    try:
        errors = _op_grad_checks(rng)

        # full pipeline, |C| <= 8, |Q| <= 5, d <= 4: loss back to the embedding table
        split = generate_synthetic(
            SynthConfig(n_samples=3, vocab_size=12, n_entities=2, context_len=8,
                        seed=42, name="grad")
        )
        text = [s.context for s in split] + [s.question for s in split]
        vocab = build_vocab(text, max_size=300)
        reader = AoAReader(vocab, AoAConfig(embed_dim=4, hidden_dim=4, seed=5))
        sample = split[0]
        joint, _ = reader.prepare(sample)
        assert len(joint.context_positions) <= 8
        assert len(joint.question_positions) <= 5
        backend = reader.encoder.backend

        def pipeline_loss(t):
            backend.table = t
            return reader.loss(sample)

        errors["full_aoa_pipeline"] = grad_check(pipeline_loss, backend.table.detach())

        for name, err in errors.items():
            assert err < 1e-4, f"{name}: relative error {err:.3e}"
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
    except AssertionError as exc:
        announce("criterion 3: gradient checks", False, str(exc))
        raise
    worst = max(errors, key=errors.get)
    announce(
        "criterion 3: gradient checks",
        True,
        f"{len(errors)} checks, worst {worst} at {errors[worst]:.2e}, "
        f"{time.perf_counter() - started:.1f}s",
    )


def test_criterion_4_synthetic_learnability(learnability_world):
    """Both readers learn the synthetic cue task (>= 90% / >= 80% dev accuracy)."""
    started = time.perf_counter()
    train_split, dev_split, vocab = learnability_world
    try:
        aoa = AoAReader(vocab, AoAConfig(embed_dim=64, hidden_dim=64, seed=0,
                                         aggregation=AggregationConfig("sum", "sum")))
        aoa_cfg = TrainConfig(max_epochs=40, patience=3, batch_size=30,
                              lr_main=1e-3, lr_encoder=1e-5, optimizer="adam", seed=0)
        _, aoa_report = train(aoa, train_split, dev_split, aoa_cfg)
        assert aoa_report.best_dev_accuracy >= 0.90, (
            f"attention reader reached {aoa_report.best_dev_accuracy:.3f}"
        )

        # the sentence reader's documented preset: batch of one, encoder at 1e-3
        sent = SentReader(vocab, SentConfig(embed_dim=64, scorer_hidden=32, seed=0))
        sent_cfg = TrainConfig(max_epochs=40, patience=3, batch_size=1,
                               lr_main=1e-3, lr_encoder=1e-3, optimizer="adam", seed=0)
        _, sent_report = train(sent, train_split, dev_split, sent_cfg)
        assert sent_report.best_dev_accuracy >= 0.80, (
            f"sentence reader reached {sent_report.best_dev_accuracy:.3f}"
        )
        elapsed = time.perf_counter() - started
        assert elapsed < 900.0, f"took {elapsed:.0f}s"
    except AssertionError as exc:
        announce("criterion 4: synthetic learnability", False, str(exc))
        raise
    announce(
        "criterion 4: synthetic learnability",
        True,
        f"attention {aoa_report.best_dev_accuracy:.3f} in {len(aoa_report.epochs)} epochs, "
        f"sentence {sent_report.best_dev_accuracy:.3f} in {len(sent_report.epochs)} epochs, "
        f"{time.perf_counter() - started:.0f}s",
    )


def test_criterion_5_ensemble_improvement():
    """Weighting layer beats both singles and stays under the union, 5/5 seeds."""
    from tests.test_ensemble import make_complementary

    started = time.perf_counter()
    results = []
    try:
        for seed in range(1, 6):
            train_set, _, _ = make_complementary(300, 5, seed=seed * 17)
            dev_set, _, _ = make_complementary(150, 5, seed=seed * 17 + 1)
            model, _ = train_weighting(train_set, dev_set)
            acc_a = sum(1 for s in dev_set if int(np.argmax(s.scores_a)) == s.gold) / len(dev_set)
            acc_b = sum(1 for s in dev_set if int(np.argmax(s.scores_b)) == s.gold) / len(dev_set)
            union = sum(
                1 for s in dev_set
                if s.gold in (int(np.argmax(s.scores_a)), int(np.argmax(s.scores_b)))
            ) / len(dev_set)
            ens = evaluate(model, dev_set)
            results.append((seed, acc_a, acc_b, ens, union))
            assert ens >= max(acc_a, acc_b), (
                f"seed {seed}: ensemble {ens:.3f} < max single {max(acc_a, acc_b):.3f}"
            )
            assert ens <= union, f"seed {seed}: ensemble {ens:.3f} > union {union:.3f}"
        elapsed = time.perf_counter() - started
        assert elapsed < 120.0, f"took {elapsed:.0f}s"
    except AssertionError as exc:
        announce("criterion 5: ensemble improvement", False, str(exc))
        raise
    summary = "; ".join(f"s{s}: {e:.2f} in [{max(a, b):.2f}, {u:.2f}]" for s, a, b, e, u in results)
    announce(
        "criterion 5: ensemble improvement",
        True,
        f"{summary}, {time.perf_counter() - started:.0f}s",
    )


def test_criterion_6_evaluation_arithmetic_fixture():
    """Counts 6250/5421/5013/4668/484 give 86.74 / 80.21 / 92.26 percent."""
    started = time.perf_counter()
    try:
        record = EvalRecord.from_counts(total=6250, correct_a=5421, correct_b=5013, both=4668)
        acc_a = 100.0 * record.accuracy_a
        acc_b = 100.0 * record.accuracy_b
        union = 100.0 * record.union()
        assert abs(acc_a - 86.74) < 0.01, f"accuracy A {acc_a:.4f}"
        assert abs(acc_b - 80.21) < 0.01, f"accuracy B {acc_b:.4f}"
        assert abs(union - 92.26) < 0.01, f"union {union:.4f}"
        t = record.table()
        assert (t.both, t.only_a, t.only_b, t.neither) == (4668, 753, 345, 484)
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0, f"took {elapsed:.2f}s"
    except AssertionError as exc:
        announce("criterion 6: evaluation arithmetic fixture", False, str(exc))
        raise
    announce(
        "criterion 6: evaluation arithmetic fixture",
        True,
        f"{acc_a:.2f} / {acc_b:.2f} / union {union:.2f}",
    )


def test_criterion_7_mcnemar_oracle_equivalence():
    """Exact binomial branch equals direct summation on all tables <= 25 discordant."""
    started = time.perf_counter()
    checked = 0
    try:
        for b in range(26):
            for c in range(26 - b):
                if b + c == 0:
                    continue
                table = ContingencyTable(both=7, only_a=b, only_b=c, neither=3)
                res = mcnemar(table)
                assert res.method == "exact-binomial"
                oracle = binomial_two_sided_oracle(b, c)
                assert abs(res.p_value - oracle) <= 1e-12, f"(b={b}, c={c})"
                swapped = mcnemar(ContingencyTable(both=7, only_a=c, only_b=b, neither=3))
                assert swapped.p_value == res.p_value, f"asymmetry at (b={b}, c={c})"
                checked += 1
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"took {elapsed:.1f}s"
    except AssertionError as exc:
        announce("criterion 7: McNemar oracle equivalence", False, str(exc))
        raise
    announce(
        "criterion 7: McNemar oracle equivalence",
        True,
        f"{checked} tables, exact to 1e-12, symmetric, {time.perf_counter() - started:.1f}s",
    )


def test_criterion_8_determinism(tmp_path):
    """Fixed seeds reproduce bit-identical datasets and train checkpoints."""
    started = time.perf_counter()
    try:
        synth_args = ["corpus", "synth", "--n", "2000", "--seed", "7"]
        p1, p2 = tmp_path / "d1.json", tmp_path / "d2.json"
        assert run(synth_args + ["--out", str(p1)]) == 0
        assert run(synth_args + ["--out", str(p2)]) == 0
        assert p1.read_bytes() == p2.read_bytes(), "synth outputs differ"

        small = tmp_path / "small.json"
        dev = tmp_path / "dev.json"
        assert run(["corpus", "synth", "--n", "24", "--seed", "1", "--vocab-size", "18",
                    "--entities", "3", "--context-len", "12", "--out", str(small)]) == 0
        assert run(["corpus", "synth", "--n", "8", "--seed", "2", "--vocab-size", "18",
                    "--entities", "3", "--context-len", "12", "--out", str(dev),
                    "--name", "dev"]) == 0
        checkpoints = []
        for tag in ("t1", "t2"):
            out_dir = tmp_path / tag
            code = run([
                "train", "--train", str(small), "--dev", str(dev), "--out-dir", str(out_dir),
                "--seed", "11", "--embed-dim", "6", "--hidden", "4", "--epochs", "2",
                "--batch-size", "4", "--optimizer", "adam", "--lr", "0.01",
                "--lr-encoder", "0.01",
            ])
            assert code == 0
            checkpoints.append((out_dir / "checkpoint_best.json").read_bytes())
            epoch_files = sorted((out_dir / "epochs").iterdir())
            assert len(epoch_files) == 2
        assert checkpoints[0] == checkpoints[1], "train checkpoints differ"
        elapsed = time.perf_counter() - started
    except AssertionError as exc:
        announce("criterion 8: determinism", False, str(exc))
        raise
    announce(
        "criterion 8: determinism",
        True,
        f"synth and train outputs bit-identical, {elapsed:.1f}s",
    )


def test_criterion_9_truncation_contract():
    """|C|=600, |Q|=20 at limit 512 keeps exactly 489 context tokens, question intact."""
    started = time.perf_counter()
    try:
        vocab = build_vocab(["alpha beta"], max_size=60)
        context = wordpiece_tokenize(" ".join(["alpha"] * 600), vocab, Segment.CONTEXT)
        q_text = " ".join(["beta"] * 19 + ["XXXX"])
        question = wordpiece_tokenize(q_text, vocab, Segment.QUESTION)
        assert len(context) == 600 and len(question) == 20
        joint = assemble_input(context, question, vocab, limit=512)
        kept = len(joint.context_positions)
        assert kept == 489, f"kept {kept} context tokens"
        assert joint.truncated == 111
        assert [joint.tokens[i] for i in joint.question_positions] == question.tokens
        assert len(joint) == 512
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0, f"took {elapsed:.2f}s"
    except AssertionError as exc:
        announce("criterion 9: truncation contract", False, str(exc))
        raise
    announce("criterion 9: truncation contract", True, "489 kept, 111 trimmed, question unchanged")
