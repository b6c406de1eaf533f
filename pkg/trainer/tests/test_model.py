import numpy as np
import pytest
import torch

from sbrnet_trainer.model import (
    DESK_SPEC,
    PAPER_SPEC,
    NetworkSpec,
    SbrNet,
    cross_entropy_loss,
)


@pytest.fixture(scope="module")
def desk_net():
    torch.manual_seed(0)
    return SbrNet(DESK_SPEC)


@pytest.fixture(scope="module")
def paper_net():
    torch.manual_seed(0)
    return SbrNet(PAPER_SPEC)


class TestArchitecture:
    def test_forward_path_conv_count_is_42(self, paper_net):
        assert PAPER_SPEC.conv_layers_on_forward_path == 42
        assert paper_net.conv_layers_on_forward_path() == 42

    def test_receptive_field_is_83(self):
        assert PAPER_SPEC.receptive_field_px == 83
        assert PAPER_SPEC.receptive_radius_px == 41

    def test_zero_input_gives_finite_sigmoid_outputs(self, desk_net):
        out = desk_net(torch.zeros(1, 9, 64, 64), torch.zeros(1, 8, 64, 64))
        assert torch.isfinite(out).all()
        assert float(out.min()) > 0.0 and float(out.max()) < 1.0

    def test_output_shape_matches_slices_at_224(self, paper_net):
        paper_net.eval()
        with torch.no_grad():
            out = paper_net(torch.rand(1, 9, 224, 224), torch.rand(1, 24, 224, 224))
        assert tuple(out.shape) == (1, 24, 224, 224)

    def test_spatial_mismatch_rejected(self, desk_net):
        with pytest.raises(ValueError, match="spatial"):
            desk_net(torch.zeros(1, 9, 64, 64), torch.zeros(1, 8, 32, 32))

    def test_conv_bias_off_everywhere(self, desk_net):
        for m in desk_net.modules():
            if isinstance(m, torch.nn.Conv2d):
                assert m.bias is None

    def test_fusion_add_mode(self):
        torch.manual_seed(1)
        net = SbrNet(NetworkSpec(view_channels=9, volume_slices=8, width=16, blocks=2, fusion="add"))
        out = net(torch.rand(1, 9, 48, 48), torch.rand(1, 8, 48, 48))
        assert tuple(out.shape) == (1, 8, 48, 48)
        assert net.squeeze.in_channels == 16

    def test_concat_fusion_squeeze_input_width(self, desk_net):
        assert desk_net.squeeze.in_channels == 2 * DESK_SPEC.width

    def test_translation_equivariance_away_from_borders(self, desk_net):
        desk_net.eval()
        torch.manual_seed(3)
        v = torch.rand(1, 9, 128, 128)
        r = torch.rand(1, 8, 128, 128)
        shift = 8
        with torch.no_grad():
            out = desk_net(v, r)
            out_shifted = desk_net(
                torch.roll(v, shifts=(shift, shift), dims=(2, 3)),
                torch.roll(r, shifts=(shift, shift), dims=(2, 3)),
            )
        margin = DESK_SPEC.receptive_radius_px + shift
        inner = out[..., margin:-margin, margin:-margin]
        inner_shifted = out_shifted[..., margin + shift : -margin + shift, margin + shift : -margin + shift]
        assert torch.allclose(inner, inner_shifted, atol=1e-5)

    def test_he_init_statistics(self):
        torch.manual_seed(5)
        net = SbrNet(PAPER_SPEC)
        conv = net.view_branch.blocks[0].body[0]
        fan_in = conv.in_channels * 9
        expected_std = (2.0 / fan_in) ** 0.5
        assert float(conv.weight.std()) == pytest.approx(expected_std, rel=0.1)


class TestLoss:
    def test_half_half_gives_log_two(self):
        value = cross_entropy_loss(torch.full((4, 4), 0.5), torch.full((4, 4), 0.5))
        assert float(value) == pytest.approx(float(np.log(2.0)), abs=1e-6)

    def test_vanishes_as_prediction_matches_binary_target(self):
        target = torch.zeros(8, 8)
        for p in (1e-2, 1e-4, 1e-6):
            loss = float(cross_entropy_loss(torch.full((8, 8), p), target))
            assert loss < 2 * p  # -log(1-p) ~ p
        assert float(cross_entropy_loss(torch.full((8, 8), 1e-7), target)) < 1e-6

    def test_nonnegative_and_zero_only_at_binary_match(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = torch.tensor(rng.uniform(0.01, 0.99, size=(3, 3)))
            target = torch.tensor(rng.uniform(0, 1, size=(3, 3)))
            assert float(cross_entropy_loss(pred, target)) >= 0.0

    def test_out_of_range_prediction_warns_and_clamps(self):
        with pytest.warns(UserWarning, match="clamping"):
            value = cross_entropy_loss(torch.tensor([[1.0]]), torch.tensor([[1.0]]))
        assert np.isfinite(float(value))

    def test_gradient_matches_central_differences(self):
        # CE through sigmoid on a toy 4x4x4 tensor, float64
        torch.manual_seed(7)
        logits = torch.randn(4, 4, 4, dtype=torch.float64, requires_grad=True)
        target = torch.rand(4, 4, 4, dtype=torch.float64)
        loss = cross_entropy_loss(torch.sigmoid(logits), target)
        loss.backward()
        analytic = logits.grad.clone()
        eps = 1e-6
        with torch.no_grad():
            idx = [(0, 0, 0), (1, 2, 3), (3, 3, 3), (2, 0, 1)]
            for i in idx:
                bump = torch.zeros_like(logits)
                bump[i] = eps
                hi = cross_entropy_loss(torch.sigmoid(logits + bump), target)
                lo = cross_entropy_loss(torch.sigmoid(logits - bump), target)
                numeric = float((hi - lo) / (2 * eps))
                assert numeric == pytest.approx(float(analytic[i]), rel=1e-4, abs=1e-10)
