import numpy as np
import pytest

from lrnoise import autodiff as ad
from lrnoise.autodiff import DimensionError, Tensor
from lrnoise.models import (ArchitectureError, CheckpointError, Denoiser, Discriminator, FTDArch,
                            Generator, InitNoiseSpec, UNetArch, compose_noisy, decode_records,
                            denoiser_forward, encode_records, ftd_forward, load_params,
                            network_record, sample_init_noise, save_params)
from lrnoise.raw import RawPatch
from lrnoise.rng import RngStream

SMALL = UNetArch(levels=2, base=4)


def test_unet_shapes_and_taps():
    den = Denoiser.create(RngStream(0), SMALL)
    out, taps = den.forward(Tensor(np.zeros((2, 4, 8, 8))))
    assert out.shape == (2, 4, 8, 8)
    assert set(taps) == {"bottleneck", "dec0", "dec1"}
    assert taps["bottleneck"].shape == (2, 16, 2, 2)
    assert taps["dec0"].shape == (2, 4, 8, 8)


def test_unet_rejects_bad_sizes():
    gen = Generator.create(RngStream(0), SMALL)
    with pytest.raises(DimensionError):
        gen.forward(Tensor(np.zeros((1, 4, 6, 6))))
    with pytest.raises(DimensionError):
        gen.forward(Tensor(np.zeros((1, 3, 8, 8))))


def test_io_scale_is_linear_wrapper():
    arch = UNetArch(levels=1, base=4)
    p = Generator.create(RngStream(1), arch).params
    scaled = Generator(UNetArch(levels=1, base=4, io_scale=5.0), p)
    plain = Generator(arch, p)
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 4))
    np.testing.assert_allclose(scaled.forward(Tensor(x)).data,
                               plain.forward(Tensor(5.0 * x)).data / 5.0, atol=1e-12)


def test_global_residual_with_zero_head():
    den = Denoiser.create(RngStream(0), UNetArch(levels=1, base=4, global_residual=True))
    den.params["head.w"][...] = 0.0
    x = np.random.default_rng(1).uniform(size=(1, 4, 4, 4))
    np.testing.assert_array_equal(den.forward(Tensor(x))[0].data, x)


def test_denoiser_forward_on_patch():
    den = Denoiser.create(RngStream(0), SMALL)
    patch = RawPatch(np.full((4, 8, 8), 0.5), 64, 576, normalized=True)
    out, _ = denoiser_forward(den, patch)
    assert out.normalized and out.shape == patch.shape
    with pytest.raises(ValueError):
        denoiser_forward(den, RawPatch(np.full((4, 8, 8), 100.0), 64, 576))


def test_ftd_sequence_lengths_and_score_shape():
    disc = Discriminator.create(RngStream(0))
    trace = []
    s = disc.forward(Tensor(np.zeros((3, 4, 32, 32))), trace=trace)
    assert s.shape == (3,)
    assert trace == [256, 64, 16]
    assert disc.arch.block_dims() == (16, 32, 64)


def test_ftd_input_checks():
    disc = Discriminator.create(RngStream(0), FTDArch(size=16, embed_dims=(8, 8, 8), heads=2))
    with pytest.raises(DimensionError):
        disc.forward(Tensor(np.zeros((1, 4, 32, 32))))
    s = ftd_forward(disc, RawPatch(np.zeros((4, 16, 16)), 0, 10, normalized=True))
    assert s.shape == (1,)


def test_plain_transformer_variant_differs():
    a = Discriminator.create(RngStream(0), FTDArch(size=16, embed_dims=(8, 8, 8), heads=2, fourier=False))
    b = Discriminator.create(RngStream(0), FTDArch(size=16, embed_dims=(8, 8, 8), heads=2))
    assert a.num_params() < b.num_params()
    assert a.forward(Tensor(np.zeros((1, 4, 16, 16)))).shape == (1,)


@pytest.mark.parametrize("kw", [dict(size=24), dict(patch_sizes=(2, 4, 16)), dict(embed_dims=(6, 6, 6))])
def test_ftd_arch_validation(kw):
    with pytest.raises(ArchitectureError):
        FTDArch(**kw)


def test_init_noise_std():
    n = sample_init_noise(InitNoiseSpec(0.25, (4, 200, 200)), RngStream(0)).data
    assert abs(n.std() / 0.25 - 1) < 0.01 and abs(n.mean()) < 0.005
    with pytest.raises(ValueError):
        InitNoiseSpec(-1.0, (1,))


def test_compose_clips():
    y = np.array([0.0, 0.5, 0.99]).reshape(1, 1, 3)
    n = np.array([-0.1, 0.1, 0.1]).reshape(1, 1, 3)
    np.testing.assert_allclose(compose_noisy(Tensor(y), Tensor(n)).data.ravel(), [0.0, 0.6, 1.0])
    patch = RawPatch(np.full((4, 1, 1), 0.5), 0, 10, normalized=True)
    assert compose_noisy(patch, np.full((4, 1, 1), 0.7)).data.max() == 1.0
    with pytest.raises(DimensionError):
        compose_noisy(Tensor(y), Tensor(np.zeros(3)))


def test_compose_gradient_passes_inside_range():
    n = Tensor(np.array([0.1, 0.9]), requires_grad=True)
    ad.backward(ad.reduce_sum(compose_noisy(Tensor(np.array([0.2, 0.5])), n)))
    np.testing.assert_array_equal(n.grad, [1.0, 0.0])


@pytest.mark.parametrize("cls, arch", [(Generator, SMALL), (Denoiser, SMALL),
                                       (Discriminator, FTDArch(size=16, embed_dims=(8, 8, 8), heads=2))])
def test_checkpoint_round_trip(tmp_path, cls, arch):
    net = cls.create(RngStream(3), arch)
    save_params(net, tmp_path / "n.ckpt")
    assert load_params(tmp_path / "n.ckpt", cls.kind, arch) == net


def test_checkpoint_arch_mismatch(tmp_path):
    save_params(Generator.create(RngStream(0), SMALL), tmp_path / "g.ckpt")
    with pytest.raises(ArchitectureError):
        load_params(tmp_path / "g.ckpt", "generator", UNetArch(levels=2, base=8))
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "g.ckpt", "denoiser")


def test_checkpoint_corruption():
    buf = encode_records([network_record(Generator.create(RngStream(0), SMALL))])
    with pytest.raises(CheckpointError, match="magic"):
        decode_records(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_records(buf[:-8])
    with pytest.raises(CheckpointError, match="version"):
        decode_records(buf[:4] + b"\x09\x00" + buf[6:])


def test_create_is_seeded():
    assert Generator.create(RngStream(5), SMALL) == Generator.create(RngStream(5), SMALL)
    assert Generator.create(RngStream(5), SMALL) != Generator.create(RngStream(6), SMALL)
