"""Head initialization, scoring, and zero-shot equivalence checks."""
import numpy as np
import pytest

from embeval.archive import SynthSpec, synthesize_archive
from embeval.heads import (Adaptor, HeadAssembly, InitStrategy, init_head,
                           predict, score, zero_shot_predict)
from embeval.lexicon import KnowledgeSelection, compose_class_matrix


def archive_for(seed=0, noise=0.4, k=6, d=24, p=12):
    return synthesize_archive(SynthSpec(
        n_classes=k, samples_per_class=8, feature_dim=d, joint_dim=p,
        noise=noise, seed=seed))


def test_language_separate_copies_class_matrix():
    archive = archive_for()
    classes = compose_class_matrix(archive, KnowledgeSelection())
    asm = init_head(archive, InitStrategy(kind="language-separate"))
    np.testing.assert_array_equal(asm.W, classes.matrix)
    np.testing.assert_array_equal(asm.b, 0.0)
    assert asm.space == "joint" and asm.normalize_input


def test_language_merge_two_path_oracle():
    archive = archive_for()
    asm = init_head(archive, InitStrategy(kind="language-merge"))
    assert asm.space == "backbone" and not asm.normalize_input
    classes = compose_class_matrix(archive, KnowledgeSelection())
    rng = np.random.default_rng(1)
    h = rng.standard_normal((100, archive.manifest.feature_dim))
    merged = h @ asm.W
    projected = (archive.proj.astype(np.float64) @ h.T).T @ classes.matrix
    np.testing.assert_allclose(merged, projected, rtol=1e-5, atol=1e-8)


def test_random_init_deterministic_in_seed():
    archive = archive_for()
    a = init_head(archive, InitStrategy(kind="random", seed=7))
    b = init_head(archive, InitStrategy(kind="random", seed=7))
    c = init_head(archive, InitStrategy(kind="random", seed=8))
    np.testing.assert_array_equal(a.W, b.W)
    assert not np.array_equal(a.W, c.W)
    assert a.temperature == 1.0  # random default


def test_score_matches_naive_oracle():
    rng = np.random.default_rng(2)
    d, p, k, n = 5, 3, 3, 5
    proj = rng.standard_normal((p, d))
    w = rng.standard_normal((p, k))
    b = rng.standard_normal(k)
    asm = HeadAssembly(space="joint", W=w, b=b, temperature=2.5,
                       normalize_input=True, proj=proj)
    x = rng.standard_normal((n, d))
    got = score(asm, x)
    for i in range(n):
        u = np.zeros(p)
        for a_ in range(p):
            for c in range(d):
                u[a_] += proj[a_, c] * x[i, c]
        u = u / np.linalg.norm(u)
        for j in range(k):
            want = 2.5 * (sum(u[a_] * w[a_, j] for a_ in range(p)) + b[j])
            assert got[i, j] == pytest.approx(want, rel=1e-12)


def test_backbone_score_matches_naive_oracle():
    rng = np.random.default_rng(3)
    d, k, n = 4, 3, 5
    w = rng.standard_normal((d, k))
    b = rng.standard_normal(k)
    asm = HeadAssembly(space="backbone", W=w, b=b, temperature=1.0)
    x = rng.standard_normal((n, d))
    got = score(asm, x)
    want = np.array([[sum(x[i, c] * w[c, j] for c in range(d)) + b[j]
                      for j in range(k)] for i in range(n)])
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_temperature_scales_logits_linearly():
    archive = archive_for()
    asm1 = init_head(archive, InitStrategy(kind="language-separate"),
                     temperature=1.0)
    asm9 = init_head(archive, InitStrategy(kind="language-separate"),
                     temperature=9.0)
    s1 = score(asm1, archive.h_test)
    s9 = score(asm9, archive.h_test)
    np.testing.assert_allclose(s9, 9.0 * s1, rtol=1e-12)
    np.testing.assert_array_equal(np.argmax(s1, axis=1), np.argmax(s9, axis=1))


def test_input_scaling_keeps_argmax_both_spaces():
    archive = archive_for()
    for kind in ("language-separate", "language-merge"):
        asm = init_head(archive, InitStrategy(kind=kind))
        base = predict(asm, archive.h_test)
        scaled = predict(asm, archive.h_test * 3.0)
        np.testing.assert_array_equal(base, scaled)


def test_adaptor_is_identity_at_init():
    rng = np.random.default_rng(4)
    adaptor = Adaptor.identity_init(10, 6, rng)
    x = rng.standard_normal((7, 10))
    np.testing.assert_allclose(adaptor.apply(x), x, atol=1e-6)
    # exact by construction: zeroed output layer
    np.testing.assert_array_equal(adaptor.apply(x), x)


def test_adaptor_paths_score_like_frozen_at_init():
    archive = archive_for()
    frozen = init_head(archive, InitStrategy(kind="language-separate"))
    adapted = init_head(archive, InitStrategy(kind="language-separate"),
                        feature_path="train-adaptor", adaptor_hidden=8)
    np.testing.assert_array_equal(score(frozen, archive.h_test),
                                  score(adapted, archive.h_test))


def test_zero_shot_matches_language_separate_head():
    archive = archive_for(noise=0.8)
    preds, logits = zero_shot_predict(archive)
    asm = init_head(archive, InitStrategy(kind="language-separate"))
    np.testing.assert_array_equal(preds, predict(asm, archive.h_test))
    np.testing.assert_allclose(asm.temperature * logits,
                               score(asm, archive.h_test), rtol=1e-12)


def test_zero_shot_perfect_on_noiseless_archive():
    archive = archive_for(noise=0.0)
    preds, _ = zero_shot_predict(archive)
    assert (preds == archive.labels_test).mean() == 1.0


def test_orthonormal_class_direction_scores_one():
    # noiseless sample of class c projects exactly onto direction c:
    # with tau=1 the logit row is the c-th standard basis row
    archive = archive_for(noise=0.0)
    asm = init_head(archive, InitStrategy(kind="language-separate"),
                    temperature=1.0)
    logits = score(asm, archive.h_test)
    for i, label in enumerate(archive.labels_test):
        assert np.argmax(logits[i]) == label
        assert logits[i, label] == pytest.approx(1.0, abs=1e-5)
        off = np.delete(logits[i], label)
        assert np.abs(off).max() < 1e-5


def test_language_init_requires_text_variants():
    archive = archive_for()
    archive.manifest.variant_table = []
    with pytest.raises(ValueError, match="text variants"):
        init_head(archive, InitStrategy(kind="language-separate"))


def test_zero_shot_matches_exhaustive_cosine():
    archive = archive_for(seed=5, noise=0.6, k=3, d=10, p=5)
    preds, _ = zero_shot_predict(archive)
    classes = compose_class_matrix(archive, KnowledgeSelection())
    proj = archive.proj.astype(np.float64)
    for i in range(5):
        h = archive.h_test[i].astype(np.float64)
        u = proj @ h
        sims = [np.dot(u / np.linalg.norm(u), classes.matrix[:, c])
                for c in range(3)]
        assert preds[i] == int(np.argmax(sims))


def test_merge_separate_zero_update_equivalence():
    archive = archive_for(seed=6, noise=1.0)
    zs_preds, _ = zero_shot_predict(archive)
    for kind in ("language-separate", "language-merge"):
        asm = init_head(archive, InitStrategy(kind=kind))
        np.testing.assert_array_equal(predict(asm, archive.h_test), zs_preds)


def test_assembly_invariants_enforced():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="temperature"):
        HeadAssembly(space="backbone", W=rng.standard_normal((4, 2)),
                     b=np.zeros(2), temperature=0.0)
    with pytest.raises(ValueError, match="image projection"):
        HeadAssembly(space="joint", W=rng.standard_normal((4, 2)),
                     b=np.zeros(2), temperature=1.0)
    with pytest.raises(ValueError, match="train-projection"):
        HeadAssembly(space="backbone", W=rng.standard_normal((4, 2)),
                     b=np.zeros(2), temperature=1.0,
                     feature_path="train-projection")
    with pytest.raises(ValueError, match="dim"):
        asm = HeadAssembly(space="backbone", W=rng.standard_normal((4, 2)),
                           b=np.zeros(2), temperature=1.0)
        score(asm, rng.standard_normal((3, 5)))
