import numpy as np
import pytest
import torch
from torch import nn

from tcavoidsrc.netcore.checkpoint import dump_tensors, load_grid, load_tensors, save_grid
from tcavoidsrc.netcore.engine import (
    adam_step,
    backward,
    check_gradients,
    gradient_error,
    make_adam,
    parameter_bytes,
)
from tcavoidsrc.netcore.layers import (
    Mlp,
    VoxelDecoder,
    VoxelEncoder,
    conv_output_dims,
    gaussian_entropy,
    gaussian_logprob,
    gaussian_sample,
)
from tcavoidsrc.perception.model import CollidableRegionNet
from tcavoidsrc.world.voxel_grid import VoxelGrid


def test_tensor_dump_keeps_names_order_and_values():
    tensors = {"weight": torch.arange(6.0).reshape(2, 3), "bias": torch.tensor([1.5, -2.0])}
    loaded = load_tensors(dump_tensors(tensors))
    assert list(loaded) == ["weight", "bias"]
    torch.testing.assert_close(loaded["weight"], tensors["weight"])
    torch.testing.assert_close(loaded["bias"], tensors["bias"])


def test_corrupt_checkpoints_are_rejected():
    data = dump_tensors({"w": torch.ones(3)})
    with pytest.raises(ValueError):
        load_tensors(b"NOTACKPT" + data[8:])
    with pytest.raises(ValueError):
        load_tensors(data[:-4])


def test_grid_dump(tmp_path, rng):
    grid = VoxelGrid(np.array([0.1, 0.2, 0.3]), 0.05, rng.random((3, 4, 5)))
    path = str(tmp_path / "grid.bin")
    save_grid(path, grid)
    loaded = load_grid(path)
    assert loaded.dims == (3, 4, 5)
    assert loaded.resolution == 0.05
    np.testing.assert_allclose(loaded.origin, grid.origin)
    np.testing.assert_allclose(loaded.cells, grid.cells.astype(np.float32))


def test_pretrained_model_reproduces_outputs(tmp_path, small_config):
    torch.manual_seed(1)
    model = CollidableRegionNet.from_config(small_config).eval()
    path = str(tmp_path / "perception")
    assert not CollidableRegionNet.pretrained_exists(path)
    model.save_pretrained(path)
    assert CollidableRegionNet.pretrained_exists(path)
    loaded = CollidableRegionNet.from_pretrained(path, small_config)

    grid, proprio = torch.rand(2, 3, 8, 12, 8), torch.rand(2, model.proprio_size)
    with torch.no_grad():
        for expected, actual in zip(model(grid, proprio), loaded(grid, proprio)):
            torch.testing.assert_close(actual, expected)


def test_analytic_gradients_match_finite_differences():
    torch.manual_seed(2)
    network = Mlp([3, 5, 2], activation=nn.Tanh).double()
    assert check_gradients(lambda x: network(x), [torch.randn(4, 3)])

    output_grad = torch.ones(4, 2, dtype=torch.float64)
    input_grad, param_grads = backward(network, torch.randn(4, 3, dtype=torch.float64), output_grad)
    assert input_grad.shape == (4, 3)
    assert set(param_grads) == {name for name, _ in network.named_parameters()}


def test_single_precision_gradient_error_is_small():
    torch.manual_seed(3)
    network = Mlp([4, 16, 3], activation=nn.Tanh)
    assert gradient_error(network, torch.randn(2, 4)) < 1e-4


def test_conv_dims_and_decoder_shape():
    assert conv_output_dims((8, 12, 8), 3) == [(8, 12, 8), (4, 6, 4), (2, 3, 2), (1, 2, 1)]
    encoder = VoxelEncoder(3, (4, 4, 4), (8, 12, 8))
    decoder = VoxelDecoder(1, (4, 4, 4), (8, 12, 8))
    features = encoder(torch.zeros(1, 3, 8, 12, 8))
    assert features.shape == (1, encoder.out_features)
    assert decoder(features).shape == (1, 1, 8, 12, 8)


def test_parameter_bytes():
    assert parameter_bytes(nn.Linear(3, 2)) == 32


def test_first_adam_step_moves_by_the_learning_rate():
    param = nn.Parameter(torch.zeros(3))
    optimizer = make_adam([param], lr=0.1)
    (updated,) = adam_step(optimizer, [param], [torch.tensor([1.0, -2.0, 0.5])])
    torch.testing.assert_close(updated.detach(), torch.tensor([-0.1, 0.1, -0.1]), atol=1e-6, rtol=0)


def test_gaussian_logprob_of_the_mean():
    log_prob = gaussian_logprob(torch.zeros(1, 2), torch.zeros(1, 2), torch.zeros(1, 2))
    assert log_prob.item() == pytest.approx(-np.log(2 * np.pi))


def test_gaussian_entropy_of_unit_std():
    assert gaussian_entropy(torch.zeros(1, 1)).item() == pytest.approx(0.5 * np.log(2 * np.pi * np.e))


def test_gaussian_samples_center_on_the_mean():
    generator = torch.Generator().manual_seed(0)
    mean = torch.tensor([[0.5, -1.0]]).expand(20000, 2)
    samples = gaussian_sample(mean, torch.full((20000, 2), np.log(0.1)), generator)
    torch.testing.assert_close(samples.mean(dim=0), torch.tensor([0.5, -1.0]), atol=5e-3, rtol=0)
    torch.testing.assert_close(samples.std(dim=0), torch.tensor([0.1, 0.1]), atol=5e-3, rtol=0)


def test_zero_weight_dense_layer_outputs_zero():
    layer = Mlp([3, 2])
    nn.init.zeros_(layer[0].weight)
    nn.init.zeros_(layer[0].bias)
    torch.testing.assert_close(layer(torch.randn(4, 3)), torch.zeros(4, 2))


def test_dirac_kernel_convolution_is_the_identity():
    conv = nn.Conv3d(2, 2, kernel_size=3, padding=1, bias=False)
    nn.init.dirac_(conv.weight)
    grid = torch.randn(1, 2, 4, 5, 3)
    torch.testing.assert_close(conv(grid), grid)


def test_voxel_layers_pass_the_gradient_check():
    torch.manual_seed(4)
    encoder = VoxelEncoder(1, (2,), (4, 4, 4)).double()
    assert check_gradients(lambda x: encoder(x), [torch.randn(1, 1, 4, 4, 4)])
    decoder = VoxelDecoder(1, (2,), (4, 4, 4)).double()
    assert check_gradients(lambda x: decoder(x), [torch.randn(1, 16)])
