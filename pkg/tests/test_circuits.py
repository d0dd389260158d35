import dataclasses
import json

import numpy as np
import pytest

from syllogistic.circuits import (
    DEFAULT_HEADS,
    AblationCurve,
    AblationStep,
    CircuitSpec,
    classify_movers,
    evaluate_conditions,
    mean_table,
    movers_json,
    necessity_curve,
    outlier_threshold,
    parse_head,
    quadrant,
    scheme_report_csv,
    sufficiency_curve,
)
from syllogistic.datasets import generate_symbolic
from syllogistic.errors import InterventionError
from syllogistic.metrics import batch_logit_differences
from syllogistic.model import forward

from oracle import logit_diff


@pytest.fixture(scope="module")
def instances(tokenizer):
    return generate_symbolic("AAA-1", 12, seed=8, tokenizer=tokenizer)


def tokens_of(instances):
    return np.array([i.tokens for i in instances])


def deltas_of(bundle, instances, **kwargs):
    cache = forward(bundle, tokens_of(instances), last_only=True, **kwargs)
    return batch_logit_differences(
        cache.final_logits(), [i.answer_token for i in instances], [i.distractor_token for i in instances]
    )


def test_default_circuit():
    spec = CircuitSpec.default()
    assert len(spec.heads) == 15 and spec.heads == DEFAULT_HEADS
    assert (11, 10) in spec.heads and (19, 1) in spec.heads


def test_circuit_spec_parsing(tmp_path):
    assert parse_head("11.10") == (11, 10)
    assert parse_head([3, 4]) == (3, 4)
    with pytest.raises(InterventionError):
        parse_head("eleven")
    with pytest.raises(InterventionError, match="twice"):
        CircuitSpec(((1, 0), "1.0"))
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"name": "tiny", "heads": ["1.0", [0, 1]]}))
    spec = CircuitSpec.from_file(path)
    assert spec.heads == ((1, 0), (0, 1)) and spec.name == "tiny"
    assert spec.to_dict() == {"name": "tiny", "heads": ["1.0", "0.1"]}
    path.write_text("[1, 2]")
    with pytest.raises(InterventionError):
        CircuitSpec.from_file(path)


def test_circuit_heads_must_exist(toy_bundle, instances):
    with pytest.raises(InterventionError, match="does not exist"):
        necessity_curve(toy_bundle, CircuitSpec.default(), instances)


def test_mean_table_of_identical_prompts_is_the_activation(toy_bundle, instances):
    same = [instances[0]] * 5
    table = mean_table(toy_bundle, same)
    cache = forward(toy_bundle, instances[0].tokens, record=("head_out",))
    for (l, h), arr in table.items():
        assert arr.dtype == np.float32 and not arr.flags.writeable
        assert np.allclose(arr, cache["head_out", l][0, :, h], atol=1e-6)


def test_mean_table_is_invariant_to_duplication(toy_bundle, instances):
    once = mean_table(toy_bundle, instances)
    twice = mean_table(toy_bundle, list(instances) * 2, batch_size=5)
    for key in once:
        assert np.array_equal(once[key], twice[key])


def test_mean_table_matches_float64_average(toy_bundle, instances):
    table = mean_table(toy_bundle, instances, batch_size=5)
    cache = forward(toy_bundle, tokens_of(instances), record=("head_out",))
    for l in range(2):
        ref = cache["head_out", l].astype(np.float64).mean(axis=0)
        for h in range(2):
            assert np.abs(table[l, h] - ref[:, h]).max() < 1e-6
    with pytest.raises(InterventionError, match="mixed"):
        mean_table(toy_bundle, list(instances) + generate_symbolic("EIO-1", 1))


def test_ablating_with_own_mean_changes_nothing(toy_bundle, instances):
    single = [instances[3]]
    table = mean_table(toy_bundle, single)
    plain = forward(toy_bundle, single[0].tokens).logits
    ablated = forward(toy_bundle, single[0].tokens, ablation_means={k: table[k] for k in [(0, 1), (1, 0)]}).logits
    assert np.abs(plain - ablated).max() < 1e-5


def test_batch_constant_head_ablation_is_a_no_op(toy_bundle, instances):
    # With W_V = 0 a head writes b_V W_O at every position for every prompt.
    layers = list(toy_bundle.layers)
    W_V = np.array(layers[0].W_V)
    W_V[1] = 0
    layers[0] = dataclasses.replace(layers[0], W_V=W_V)
    bundle = dataclasses.replace(toy_bundle, layers=tuple(layers))
    table = mean_table(bundle, instances)
    before = forward(bundle, tokens_of(instances)).logits
    after = forward(bundle, tokens_of(instances), ablation_means={(0, 1): table[0, 1]}).logits
    assert np.abs(before - after).max() < 1e-5


def test_single_head_ablation_matches_oracle(toy_bundle, naive, instances):
    table = mean_table(toy_bundle, instances)
    curve = necessity_curve(toy_bundle, CircuitSpec(((1, 1),)), instances, means=table)
    for i, inst in enumerate(instances[:4]):

        def overwrite(heads):
            out = [h.copy() for h in heads]
            out[1] = np.array(table[1, 1], dtype=np.float64)
            return out

        ref = naive.run(inst.tokens, {("head_out", 1): overwrite})
        expected = logit_diff(ref["logits"], inst.answer_token, inst.distractor_token)
        assert abs(curve.step_deltas[1, i] - expected) < 1e-5


def test_necessity_order_and_baseline(toy_bundle, instances):
    spec = CircuitSpec(((0, 1), (1, 1), (1, 0), (0, 0)))
    curve = necessity_curve(toy_bundle, spec, instances)
    assert [s.heads for s in curve.steps] == [
        (),
        ((1, 0),),
        ((1, 0), (1, 1)),
        ((1, 0), (1, 1), (0, 0)),
        ((1, 0), (1, 1), (0, 0), (0, 1)),
    ]
    baseline = deltas_of(toy_bundle, instances)
    assert np.array_equal(curve.step_deltas[0], baseline)
    assert curve.steps[0].mean == curve.baseline == float(baseline.mean())
    table = mean_table(toy_bundle, instances)
    two = deltas_of(toy_bundle, instances, ablation_means={(1, 0): table[1, 0], (1, 1): table[1, 1]})
    assert np.allclose(curve.step_deltas[2], two, atol=1e-5)


def test_empty_circuit_is_flat(toy_bundle, instances):
    curve = necessity_curve(toy_bundle, CircuitSpec(()), instances)
    assert len(curve.steps) == 1 and curve.final == curve.baseline


def test_sufficiency_with_every_head_restores_baseline_exactly(toy_bundle, instances):
    curve = sufficiency_curve(toy_bundle, CircuitSpec.all_heads(toy_bundle.config), instances)
    assert [s.heads for s in curve.steps][-1] == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert np.array_equal(curve.step_deltas[-1], curve.baseline_deltas)
    assert curve.final == curve.baseline
    table = mean_table(toy_bundle, instances)
    everything = deltas_of(toy_bundle, instances, ablation_means=table)
    assert np.allclose(curve.step_deltas[0], everything, atol=1e-5)


def test_curve_json(toy_bundle, instances):
    curve = sufficiency_curve(toy_bundle, CircuitSpec(((1, 0),)), instances)
    doc = json.loads(curve.to_json())
    assert doc["mode"] == "sufficiency"
    assert [s["heads"] for s in doc["steps"]] == [[], ["1.0"]]
    assert set(doc["steps"][0]) == {"heads", "mean", "std"}


def fake_curve(mode, baseline, final):
    steps = [AblationStep((), baseline, 0.0), AblationStep(((0, 0),), final, 0.0)]
    return AblationCurve(mode, baseline, 0.0, steps, np.array([baseline]), np.array([[baseline], [final]]))


@pytest.mark.parametrize(
    "baseline,nec,suf,expected",
    [
        (2.0, 0.9, 1.8, (True, True, True)),
        (2.0, 1.0, 1.79, (False, False, True)),
        (-1.0, -1.6, -1.05, (True, True, False)),
        (-1.0, -1.4, -1.2, (False, False, False)),
    ],
)
def test_condition_margins(baseline, nec, suf, expected):
    c = evaluate_conditions(fake_curve("necessity", baseline, nec), fake_curve("sufficiency", baseline, suf))
    assert (c.c1, c.c2, c.c3) == expected


def test_zero_baseline_fails_c3():
    c = evaluate_conditions(
        fake_curve("necessity", 0.0, 0.0), fake_curve("sufficiency", 0.0, 0.0), baseline_deltas=[1.0, -1.0]
    )
    assert not c.c3 and c.accuracy == 0.5


def test_scheme_report_csv():
    c = evaluate_conditions(fake_curve("necessity", 2.0, 0.1), fake_curve("sufficiency", 2.0, 0.1))
    text = scheme_report_csv([("AAA-1", c)])
    assert text.splitlines() == ["scheme,C1,C2,C3,accuracy", "AAA-1,yes,no,yes,1.0"]


def test_mover_example_and_quadrants():
    one = lambda v: np.array([[v]])  # noqa: E731
    (head,) = classify_movers({"all": one(0.4), "p": one(0.6), "m1": one(-0.2), "m2": one(-0.1)})
    assert head.ppd == abs(0.6) - abs(-0.2 + -0.1)
    assert head.ppd == pytest.approx(0.3)
    assert head.quadrant == "positive_copy"
    assert quadrant(-0.1, 0.2) == "positive_suppression"
    assert quadrant(-0.1, -0.2) == "negative_copy"
    assert quadrant(0.1, -0.2) == "negative_suppression"
    assert quadrant(0.0, 0.3) is None and quadrant(float("nan"), 1.0) is None


def test_outliers_use_absolute_scores():
    s_all = np.zeros((4, 5))
    s_all[2, 3] = -0.9
    s_all[0, 1] = 0.05
    zeros = np.zeros_like(s_all)
    classes = classify_movers({"all": s_all, "p": zeros, "m1": zeros, "m2": zeros})
    flagged = [c.head for c in classes if c.outlier]
    assert flagged == [(2, 3)]
    mags = np.abs(s_all)
    assert outlier_threshold(s_all) == pytest.approx(mags.mean() + 2 * mags.std())


def test_all_equal_scores_flag_nothing():
    flat = np.full((3, 3), 0.25)
    classes = classify_movers({"all": flat, "p": flat, "m1": flat, "m2": flat})
    assert not any(c.outlier for c in classes)
    doc = json.loads(movers_json(classes))
    assert len(doc["heads"]) == 9 and doc["heads"][0]["head"] == "0.0"


def test_mover_inputs_validated():
    with pytest.raises(InterventionError, match="roles"):
        classify_movers({"all": np.zeros((1, 1))})
    with pytest.raises(InterventionError, match="shape"):
        classify_movers({"all": np.zeros((1, 1)), "p": np.zeros((1, 2)), "m1": np.zeros((1, 1)), "m2": np.zeros((1, 1))})
