# Copyright 2026 The lrsms Authors
# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import lrsms

TINY = dict(d_model=16, n_heads=2, d_ffn=32, encoder_blocks=2, decoder_blocks=1, vocab=10, max_seq=6, seed=3)


def test_svd_matches_numpy():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((12, 7))
    u, s, vt = lrsms.svd(w)
    np.testing.assert_allclose(s, np.linalg.svd(w, compute_uv=False), rtol=1e-10)
    np.testing.assert_allclose(u @ np.diag(s) @ vt, w, atol=1e-10)


def test_spectral_init_is_truncated_svd():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((20, 30))
    u, v = lrsms.spectral_init(w, 5)
    assert u.shape == (20, 5) and v.shape == (30, 5)
    a, s, bt = np.linalg.svd(w, full_matrices=False)
    np.testing.assert_allclose(u @ v.T, a[:, :5] @ np.diag(s[:5]) @ bt[:5], atol=1e-9)


def test_k95_of_equal_energy_rank():
    rng = np.random.default_rng(2)
    q1, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    q2, _ = np.linalg.qr(rng.standard_normal((25, 25)))
    w = q1[:, :7] @ q2[:, :7].T
    assert lrsms.k95(w) == 7
    assert lrsms.k95(3.0 * w, energy="nuclear") == 7


def test_rank_rule_and_ramp():
    assert lrsms.rank_for(0.35, 256, 256) == 90
    assert lrsms.rank_for(1e-9, 64, 32) == 1
    assert lrsms.linear_alpha(0, 6, 0.1, 0.2) == 0.1
    assert lrsms.linear_alpha(3, 6, 0.1, 0.2) == pytest.approx(0.15)


def test_default_plan_compresses_at_least_two_fold():
    spec = lrsms.default_spec()
    s = lrsms.plan_summary(spec, lrsms.make_plan(spec, gamma="0.1,0.2,0.2,0.5"))
    assert s["total_dense"] == 1731616
    assert s["compression"] >= 2.0


def test_untrained_loss_near_log_vocab():
    loss = lrsms.untrained_loss(TINY, lrsms.make_plan(TINY, uniform=0.5))
    assert abs(loss - math.log(TINY["vocab"])) < 0.5


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        lrsms.make_plan(TINY, gamma="0.5,0.1,0.2,0.3")
    with pytest.raises(ValueError):
        lrsms.svd(np.zeros(3))


def test_train_checkpoint_and_analyze(tmp_path):
    plan = lrsms.make_plan(TINY, gamma="0.2,0.4,0.3,0.6")
    rec = lrsms.train(TINY, plan, epochs=3, steps_per_epoch=4, batch_size=8, peak_lr=1e-3,
                      checkpoint_dir=str(tmp_path))
    assert not rec["diverged"]
    assert len(rec["epochs"]) == 3
    assert len(rec["step_seconds"]) == 12
    spec, stage, tensors = lrsms.load_checkpoint(str(tmp_path / "epoch-003.lrsm"))
    assert spec == TINY
    assert stage == "epoch-003"
    assert tensors["enc.0.ffn.in.u"].shape[0] == 32
    rows = lrsms.analyze([str(tmp_path / "epoch-000.lrsm"), str(tmp_path / "epoch-003.lrsm")])
    assert len(rows) == 44
    assert all(0 < r["ratio"] <= 1 for r in rows)
    with pytest.raises(OSError):
        (tmp_path / "bad.lrsm").write_bytes(b"LRSM garbage")
        lrsms.load_checkpoint(str(tmp_path / "bad.lrsm"))


def test_cli_in_process(tmp_path):
    out = tmp_path / "plan.txt"
    assert lrsms.run_cli(["plan", "--uniform", "0.5", "--out", str(out)]) == 0
    assert out.read_text().count("\n") > 50
    assert lrsms.run_cli(["plan", "--uniform", "2", "--out", str(out)]) == 2
