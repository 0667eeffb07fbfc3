"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

calibtune = pytest.importorskip("calibtune")


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(50, 7))
    probs = calibtune.softmax(logits)
    assert probs.shape == (50, 7)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(probs[0], np.exp(logits[0]) / np.exp(logits[0]).sum(), atol=1e-12)


def test_compute_report_perfect_predictions():
    logits = np.array([[10.0, 0.0], [0.0, 10.0]])
    report = calibtune.compute_report(logits, [0, 1])
    assert report["accuracy"] == 1.0
    assert report["ece"] < 1e-4
    assert len(report["bins"]) == 15
    assert report["bins"][0]["mean_confidence"] is None


def test_margin_loss_closed_form():
    logits = np.array([[1.0, 0.0], [3.0, 0.0]])
    value, grad = calibtune.margin_loss(logits, [0, 0], alpha=0.1, beta=0.01)
    assert abs(value - (-0.19)) < 1e-12
    assert grad.shape == (2, 2)


def test_moment_loss_translation():
    rng = np.random.default_rng(1)
    frozen = rng.normal(size=(6, 4))
    shift = np.array([0.3, -0.2, 0.5, 0.1])
    value, _ = calibtune.moment_loss(frozen + shift, frozen)
    assert abs(value - float(np.dot(shift, shift))) < 1e-12


def test_fit_temperature_boundary():
    logits = np.array([[10.0, 0.0], [0.0, 10.0]])
    fit = calibtune.fit_temperature(logits, [0, 1])
    assert fit["boundary"]
    assert abs(fit["temperature"] - math.exp(-5.0)) < 1e-12


def test_task_train_evaluate_roundtrip():
    task = calibtune.build_task(7, shots=4)
    assert task.num_base == 8
    anchors = task.anchors
    np.testing.assert_allclose(np.linalg.norm(anchors, axis=1), 1.0, atol=1e-9)

    model = calibtune.make_prompt_model(task)
    result = calibtune.train(model, task, seed=7, epochs=3)
    assert result["total_steps"] == 3 * 4  # 4 batches of 8 over 32 samples
    assert math.isfinite(result["final_l_total"])

    report = calibtune.evaluate(model, task, "novel", per_class=20, seed=3)
    assert 0.0 <= report["report"]["ece"] <= 1.0
    assert len(report["labels"]) == 8 * 20


def test_gradient_check_small_task():
    task = calibtune.build_task(11, shots=2)
    model = calibtune.make_prompt_model(task)
    report = calibtune.gradient_check(model, task, seed=11)
    assert report["max_rel_error"] < 1e-6


def test_determinism_of_build_task():
    a = calibtune.build_task(5)
    b = calibtune.build_task(5)
    np.testing.assert_array_equal(a.anchors, b.anchors)


def test_pearson_line():
    assert abs(calibtune.pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) - 1.0) < 1e-12
