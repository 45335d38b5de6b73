import math

import pytest
import torch

from snfsr.checks import gradcheck_suite
from snfsr.degrep import (
    DegradationEncoder,
    DegradationModel,
    NegativeQueue,
    ProjectionHead,
    StateError,
    contrastive_loss,
    queue_push,
)
from snfsr.substrate import DimensionError, grad_check


def test_encoder_shapes_and_strides():
    enc = DegradationEncoder().eval()
    sizes = []
    hooks = [m.register_forward_hook(lambda m, i, o: sizes.append(tuple(o.shape)))
             for m in enc.body if isinstance(m, torch.nn.Conv2d)]
    v = enc(torch.randn(3, 64, 64))
    for h in hooks:
        h.remove()
    assert v.shape == (256,)
    assert [s[1] for s in sizes] == [64, 64, 128, 128, 256, 256]
    assert [s[-1] for s in sizes] == [64, 64, 32, 32, 16, 16]


def test_encoder_deterministic_in_eval():
    m = DegradationModel().eval()
    x = torch.randn(2, 3, 32, 32)
    assert torch.equal(m(x), m(x.clone()))
    assert torch.equal(m(x[:1])[0], m(x[:1].clone())[0])


def test_encoder_min_size():
    enc = DegradationEncoder().eval()
    assert enc(torch.randn(3, 4, 4)).shape == (256,)
    with pytest.raises(DimensionError):
        enc(torch.randn(3, 3, 8))


def test_projection_dim_and_determinism():
    head = ProjectionHead()
    v = torch.randn(5, 256)
    assert head(v).shape == (5, 256)
    assert torch.equal(head(v), head(v))
    assert ProjectionHead(out_dim=64)(v).shape == (5, 64)


def test_gradchecks_fp64():
    rows = {n: e for n, e, _ in gradcheck_suite(torch.float64)}
    assert rows["projection_head"] < 1e-5
    assert rows["degradation_encoder_2layer"] < 1e-5


def test_projection_gradcheck_fp32():
    rows = {n: e for n, e, _ in gradcheck_suite(torch.float32)}
    assert rows["projection_head"] < 1e-2


@pytest.mark.parametrize("n", [1, 4, 2048])
def test_symmetric_case_is_log_n(n):
    s = 0.37
    q = NegativeQueue(capacity=n, temperature=0.07)
    w = torch.tensor([1.0, 0.0, 0.0])
    entries = torch.stack([torch.tensor([s, float(i % 5), -1.0]) for i in range(n)])
    q.push(entries)
    loss = contrastive_loss(w, torch.tensor([s, 2.0, 2.0]), q, normalize=False)
    assert float(loss) == pytest.approx(math.log(n), abs=1e-5)


def test_single_negative_closed_form():
    tau = 0.2
    q = NegativeQueue(capacity=3, temperature=tau)
    w = torch.tensor([0.5, 1.0], dtype=torch.float64)
    w_pos = torch.tensor([1.0, 0.3], dtype=torch.float64)
    w_neg = torch.tensor([-0.4, 0.8], dtype=torch.float64)
    q.push(w_neg.unsqueeze(0))
    s_pos, s_neg = float(w @ w_pos), float(w @ w_neg)
    loss = contrastive_loss(w, w_pos, q, normalize=False)
    assert float(loss) == pytest.approx((s_neg - s_pos) / tau, abs=1e-10)


def test_monotone_in_positive_similarity():
    q = NegativeQueue(8, 0.1).push(torch.randn(8, 4))
    w = torch.randn(4)
    prev = None
    for scale in (0.0, 0.5, 1.0, 2.0):
        loss = float(contrastive_loss(w, scale * w, q, normalize=False))
        if prev is not None:
            assert loss < prev
        prev = loss


def test_lower_bound():
    g = torch.Generator().manual_seed(0)
    for _ in range(50):
        q = NegativeQueue(16, 0.07).push(torch.randn(16, 8, generator=g))
        w, wp = torch.randn(8, generator=g), torch.randn(8, generator=g)
        loss = float(contrastive_loss(w, wp, q, normalize=False))
        gaps = float(w @ wp) - q.entries @ w
        assert loss >= -float(gaps.max()) / 0.07 - 1e-4
        assert math.isfinite(loss)


def test_gradient_points_to_positive():
    w_pos = torch.tensor([0.6, 0.8, 0.0], dtype=torch.float64)
    w = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    q = NegativeQueue(2, 0.5).push(torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], dtype=torch.float64))

    def f(x):
        return contrastive_loss(x, w_pos, q, normalize=False)

    assert grad_check(f, w, step=1e-6) < 1e-6
    # central differences as the oracle for the descent direction
    h = 1e-6
    grad = torch.stack([(f(w + h * e) - f(w - h * e)) / (2 * h) for e in torch.eye(3, dtype=torch.float64)])
    assert float(-grad @ w_pos) > 0


def test_empty_queue_is_state_error():
    with pytest.raises(StateError):
        contrastive_loss(torch.randn(4), torch.randn(4), NegativeQueue(4))


def test_include_positive_flag():
    q = NegativeQueue(4, 0.1).push(torch.randn(4, 3))
    w, wp = torch.randn(3), torch.randn(3)
    a = contrastive_loss(w, wp, q, include_positive=False)
    b = contrastive_loss(w, wp, q, include_positive=True)
    assert float(b) > float(a) and float(b) > 0


def test_queue_fifo():
    q = NegativeQueue(capacity=4)
    for i in range(1, 6):
        queue_push(q, [torch.tensor([float(i)])])
    assert q.entries.flatten().tolist() == [2.0, 3.0, 4.0, 5.0]
    before = q.entries.clone()
    queue_push(q, [])
    assert torch.equal(q.entries, before)


def test_queue_size_bounded():
    g = torch.Generator().manual_seed(0)
    q = NegativeQueue(capacity=37)
    for _ in range(1000):
        k = int(torch.randint(0, 10, (1,), generator=g))
        q.push(torch.randn(k, 2, generator=g))
        assert len(q) <= 37


def test_queue_stores_detached():
    w = torch.randn(2, 3, requires_grad=True)
    q = NegativeQueue(4).push(w * 2)
    assert not q.entries.requires_grad
