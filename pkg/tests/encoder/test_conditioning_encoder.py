import numpy as np
import pytest

from gentract.config import EncoderConfig
from gentract.encoder import (
    ChannelVae, ConditioningEncoder, RefinedLatent, Refiner, fuse, refine,
    train_vae, vae_decode, vae_encode, vae_loss, vae_sample)
from gentract.errors import ShapeError
from gentract.ndiff import ComputationRecord, Tensor, check_gradients, tsum
from gentract.sh import sh_count
from gentract.volume import SHVolume, voxel_affine


def smooth_channels(count=1, extents=(8, 8, 8)):
    grid = np.stack(np.meshgrid(*[np.linspace(-1, 1, n) for n in extents],
                                indexing='ij'), axis=-1)
    return np.stack([np.sin(2 * grid[..., 0] + i) * np.cos(grid[..., 1])
                     for i in range(count)])


def test_vae_shapes_round_trip():
    vae = ChannelVae(c_z=4, hidden=4)
    channel = smooth_channels(extents=(16, 16, 8))[0]

    mu, logvar = vae_encode(vae, channel)
    reconstruction = vae_decode(vae, mu)

    assert mu.shape == logvar.shape == vae.latent_extents(channel.shape)
    assert mu.shape == (4, 4, 4, 2)
    assert reconstruction.shape == channel.shape


def test_vae_rejects_extents_not_divisible_by_four():
    with pytest.raises(ShapeError):
        vae_encode(ChannelVae(), np.zeros((6, 8, 8)))


def test_vanishing_variance_sample_equals_mean(rng):
    mu = rng.standard_normal((4, 2, 2, 2))

    z = vae_sample(mu, np.full(mu.shape, -40.0), seed=0)

    assert np.max(np.abs(z - mu)) < 1e-8


def test_vae_sample_is_seeded(rng):
    mu, logvar = np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2))

    assert np.array_equal(vae_sample(mu, logvar, 5), vae_sample(mu, logvar, 5))
    assert not np.array_equal(vae_sample(mu, logvar, 5),
                              vae_sample(mu, logvar, 6))


def test_perfect_reconstruction_with_prior_latents_has_zero_loss(rng):
    x = Tensor(rng.standard_normal((1, 1, 4, 4, 4)))
    zeros = Tensor(np.zeros((1, 2, 1, 1, 1)))

    loss = vae_loss(x, x, zeros, zeros, beta=1.0)

    assert loss.item() == 0.0


def test_vae_training_is_deterministic_and_learns():
    config = EncoderConfig(steps=30, batch=2, hidden=4, lr=1e-2)
    channels = smooth_channels(count=2)

    first, losses = train_vae(channels, 0, config, seed=3)
    second, again = train_vae(channels, 0, config, seed=3)

    assert losses == again
    for name, value in first.arrays().items():
        assert value.tobytes() == second.arrays()[name].tobytes()
    assert np.mean(losses[-5:]) < losses[0]
    assert not any(t.requires_grad for t in first.parameters().values())


def test_refiner_default_extents():
    refiner = Refiner(m=6, c_z=4, c_c=8)

    out = refine(refiner, np.zeros((4, 8, 8, 8)), 2)

    assert out.index == 2
    assert out.tensor.shape == (8, 4, 4, 4)


def test_refiner_output_depends_on_coefficient_index(rng):
    refiner = Refiner(m=3, c_z=2, c_c=4, seed=1)
    latent = rng.standard_normal((2, 4, 4, 4))

    first = refine(refiner, latent, 0).tensor.data
    second = refine(refiner, latent, 1).tensor.data

    assert np.max(np.abs(first - second)) > 0


def test_refiner_rejects_index_out_of_range():
    refiner = Refiner(m=2, c_z=2, c_c=2)

    with pytest.raises(ValueError):
        refine(refiner, np.zeros((2, 4, 4, 4)), 2)


def test_refiner_parameters_are_shared_across_coefficients():
    small, large = Refiner(m=1), Refiner(m=28)

    assert list(small.parameters()) == list(large.parameters())
    assert large['index_embedding'].shape == (28, 8)


def test_refiner_gradient_matches_central_differences(rng):
    refiner = Refiner(m=2, c_z=2, c_c=2, seed=4)
    latents = Tensor(rng.standard_normal((2, 2, 2, 2, 2)))
    weights = Tensor(rng.standard_normal((2, 2, 1, 1, 1)))
    params = refiner.parameters()

    errors = check_gradients(
        lambda: tsum(refiner(latents, [1, 0]) * weights), params)

    assert max(errors.values()) < 1e-5


def test_fuse_concatenates_channel_blocks_by_index():
    zeros = RefinedLatent(0, Tensor(np.zeros((3, 2, 2, 2))))
    ones = RefinedLatent(1, Tensor(np.ones((3, 2, 2, 2))))

    tokens = fuse([zeros, ones]).data

    assert tokens.shape == (8, 6)
    assert np.all(tokens[:, :3] == 0)
    assert np.all(tokens[:, 3:] == 1)


def test_fuse_of_single_latent_is_a_reshape(rng):
    latent = rng.standard_normal((2, 2, 3, 4))

    tokens = fuse([RefinedLatent(0, Tensor(latent))]).data

    assert np.array_equal(tokens, latent.reshape(2, -1).T)


def test_fuse_detects_permuted_inputs():
    a = RefinedLatent(0, Tensor(np.zeros((1, 1, 1, 1))))
    b = RefinedLatent(1, Tensor(np.zeros((1, 1, 1, 1))))

    with pytest.raises(ValueError):
        fuse([b, a])


def test_fuse_detects_mismatched_extents():
    a = RefinedLatent(0, Tensor(np.zeros((1, 2, 2, 2))))
    b = RefinedLatent(1, Tensor(np.zeros((1, 2, 2, 1))))

    with pytest.raises(ShapeError):
        fuse([a, b])


@pytest.fixture
def encoder():
    m = sh_count(2)
    vaes = [ChannelVae(c_z=2, hidden=2, seed=[0, i]) for i in range(m)]
    return ConditioningEncoder(vaes, Refiner(m, c_z=2, c_c=3, seed=1))


@pytest.fixture
def volume(rng):
    coeffs = rng.standard_normal((8, 8, 8, sh_count(2)))
    return SHVolume(coeffs, 2.0, voxel_affine(2.0))


def test_batched_conditioning_matches_per_coefficient_fusion(encoder, volume):
    latents = encoder.latents(volume)

    tokens = encoder.encode(volume).data
    expected = fuse([refine(encoder.refiner, latents[i], i)
                     for i in range(encoder.m)]).data

    assert tokens.shape == (1, 6 * 3)
    assert np.allclose(tokens, expected, atol=1e-12)


def test_stage_two_gradients_reach_refiner_but_not_vaes(encoder, volume):
    latents = encoder.latents(volume)[None]
    vae_params = {'vae%d.%s' % (i, name): t
                  for i, vae in enumerate(encoder.vaes)
                  for name, t in vae.parameters().items()}
    refiner_params = encoder.refiner.parameters()

    with ComputationRecord() as record:
        tokens = encoder.condition(latents)
        loss = tsum(tokens * tokens)
    grads = record.backward(loss, dict(vae_params, **refiner_params))

    assert all(not np.any(grads[name]) for name in vae_params)
    assert any(np.any(grads[name]) for name in refiner_params)


def test_encoder_requires_one_vae_per_coefficient():
    with pytest.raises(ShapeError):
        ConditioningEncoder([ChannelVae()], Refiner(m=6))


@pytest.mark.slow
def test_vae_overfits_a_single_channel():
    config = EncoderConfig(steps=200, batch=1, hidden=8, lr=1e-2)

    _, losses = train_vae(smooth_channels(), 0, config, seed=0)

    assert losses[-1] < 0.1 * losses[0]


@pytest.mark.slow
def test_kl_weight_trades_off_reconstruction():
    channels = smooth_channels(count=2)
    kwargs = dict(steps=100, batch=2, hidden=8, lr=1e-2)

    free, _ = train_vae(channels, 0, EncoderConfig(beta=0.0, **kwargs), 0)
    tight, _ = train_vae(channels, 0, EncoderConfig(beta=1.0, **kwargs), 0)

    def reconstruction_error(vae):
        return np.mean([np.mean((vae_decode(vae, vae_encode(vae, c)[0]) -
                                 c) ** 2) for c in channels])

    assert reconstruction_error(free) < reconstruction_error(tight)
