import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ostr import autograd as ag
from ostr.cirn import ReconstructionPair
from ostr.errors import InvalidArgument, TrainingDivergence
from ostr.gradcheck import DESK_CONFIG, desk_batch
from ostr.model import TextRecognizer, forward, pair_bundles, printed_targets, reconstruction_rows
from ostr.objectives import (LossWeights, content_loss, orientation_loss, reconstruction_loss, text_loss,
                             total_loss)


def _ce(logits, t):
    z = logits - logits.max(-1, keepdims=True)
    return -(z[np.arange(len(t)), t] - np.log(np.exp(z).sum(-1)))


def test_text_loss_ignores_pad(rng):
    logits = rng.standard_normal((2, 3, 6))
    targets = np.array([[1, 2, 5], [3, 5, 5]])
    got = float(text_loss(ag.Tensor(logits), targets, pad=5).data)
    flat, t = logits.reshape(-1, 6), targets.reshape(-1)
    keep = t != 5
    assert abs(got - _ce(flat[keep], t[keep]).mean()) < 1e-12
    with pytest.raises(InvalidArgument):
        text_loss(ag.Tensor(logits), targets[:, :2])


def test_heads_losses_and_empty_inputs(rng):
    logits = rng.standard_normal((4, 2))
    t = np.array([0, 1, 1, 0])
    assert abs(float(orientation_loss(ag.Tensor(logits), t).data) - _ce(logits, t).mean()) < 1e-12
    assert float(orientation_loss(None, []).data) == 0.0
    assert float(content_loss(None, []).data) == 0.0


def test_reconstruction_loss_oracle(rng):
    imgs = [ag.Tensor(rng.random((4, 4))) for _ in range(5)]
    tgts = [rng.random((4, 4)) for _ in range(5)]
    pair = ReconstructionPair(*imgs[:4], *tgts[:4])
    got = float(reconstruction_loss([pair], [(imgs[4], tgts[4])]).data)
    mse = [np.mean((i.data - t) ** 2) for i, t in zip(imgs, tgts)]
    assert abs(got - (sum(mse[:4]) / 2 + mse[4]) / 2) < 1e-12
    assert float(reconstruction_loss([]).data) == 0.0


def test_perfect_reconstruction_is_zero(rng):
    t = rng.random((4, 4))
    pair = ReconstructionPair(*(ag.Tensor(t) for _ in range(4)), t, t, t, t)
    assert float(reconstruction_loss([pair]).data) == 0.0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_total_is_the_weighted_sum(a, b, g):
    w = LossWeights(a, b, g)
    rep = total_loss({"L_t": 1.5, "L_o": 0.25, "L_c": 2.0, "L_r": 0.125}, w)
    want = 1.5 + a * 0.25 + b * 2.0 + g * 0.125
    assert math.isclose(rep.L_total, want, rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(float(rep.total.data), want, rel_tol=1e-12, abs_tol=1e-12)


def test_default_weights_and_validation():
    assert LossWeights() == LossWeights(1.0, 1.0, 5.0)
    with pytest.raises(InvalidArgument):
        LossWeights(-1.0)
    with pytest.raises(TrainingDivergence):
        total_loss({"L_t": float("nan")})
    assert total_loss({"L_t": 2.0}).as_dict() == {"L_t": 2.0, "L_o": 0.0, "L_c": 0.0, "L_r": 0.0, "L_total": 2.0}


def test_pairing_matches_orientations():
    vertical = np.array([0, 1, 0, 0, 1], bool)
    pairs, singles = pair_bundles(vertical, np.random.default_rng(0))
    assert len(pairs) == 2 and len(singles) == 1
    for h, v in pairs:
        assert not vertical[h] and vertical[v]
    assert sorted([i for p in pairs for i in p] + singles) == list(range(5))
    rows, n_items = reconstruction_rows(vertical, np.arange(5), np.random.default_rng(0))
    assert n_items == 3 and len(rows) == 9
    assert sum(r[4] for r in rows) == 5.0


def _model_and_batch():
    model = TextRecognizer(DESK_CONFIG, seed=0)
    batch, charset = desk_batch()
    return model, batch, printed_targets(charset, np.float64)


def test_forward_reports_every_term():
    model, batch, printed = _model_and_batch()
    res = forward(model, batch, printed)
    rep = res.report
    assert all(np.isfinite(v) and v > 0 for v in rep.as_dict().values())
    assert math.isclose(rep.L_total, rep.L_t + rep.L_o + rep.L_c + 5 * rep.L_r, rel_tol=1e-12)
    assert rep.counts == {"L_t": 12, "L_c": 8, "L_o": 8, "L_r": 4}
    assert res.reconstructions.shape == (16, 32, 32)


def test_zero_weight_terms_are_not_built():
    model, batch, printed = _model_and_batch()
    res = forward(model, batch, printed, LossWeights(0.0, 0.0, 0.0))
    assert res.report.L_r == 0.0 and res.reconstructions is None
    res.report.total.backward()
    assert all(p.grad is None for _, p in model.cirn.named_parameters())
    assert model.decoder.head.w.grad is not None


def test_text_term_leaves_cirn_untouched_and_reconstruction_leaves_heads():
    model, batch, printed = _model_and_batch()
    forward(model, batch, printed, LossWeights(1, 1, 1), terms=("L_r",)).report.total.backward()
    assert model.cirn.class_head.w.grad is None and model.cirn.orient_head.w.grad is None
    assert model.decoder.head.w.grad is None
    assert np.any(model.cirn.deconvs[0].w.grad) and np.any(model.encoder.stem.w.grad)
