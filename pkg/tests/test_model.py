import numpy as np
import pytest

from volfit.core.autodiff import Tape
from volfit.core.errors import ShapeError
from volfit.models.camera import Aabb
from volfit.models.enums import LatentSource, ParameterizationMode
from volfit.models.scene import (
    decode,
    decode_on_tape,
    decode_volume,
    encode,
    eval_volume,
    init_scene_model,
    latent_interpolate,
    template_slice,
)
from volfit.schemas.config import ModelConfig

SOFTPLUS_ZERO = 0.6931471805599453


def direct_model(rng, **kwargs):
    config = ModelConfig(resolution=4, n_warps=2, warp_resolution=2, **kwargs)
    return init_scene_model(config, Aabb(np.zeros(3), 2.0), ["a", "b"], rng, dtype=np.float64)


def latent_model(rng, **kwargs):
    config = ModelConfig(mode=ParameterizationMode.LATENT, resolution=4, latent_dim=3, encoder_views=2,
                         encoder_size=4, encoder_hidden=5, decoder_hidden=6, n_warps=2, warp_resolution=2,
                         warp_hidden=4, **kwargs)
    return init_scene_model(config, Aabb(np.zeros(3), 2.0), ["a", "b"], rng, dtype=np.float64, frames=2,
                            encoder_cameras=["a", "b"])


def test_direct_template_starts_at_softplus_zero(rng):
    model = direct_model(rng)
    assert model.template.data.shape == (4, 4, 4, 4)
    assert np.allclose(model.template.data, SOFTPLUS_ZERO, atol=1e-9)
    assert model.warp.n_components == 2


def test_parameter_groups_and_calibration(rng):
    model = direct_model(rng)
    store = model.params
    assert store.groups["template.raw"] == "volume"
    assert store.groups["cam.a.gain"] == "color"
    assert np.array_equal(store["cam.b.gain"], np.ones(3))
    assert np.array_equal(store["cam.b.bias"], np.zeros(3))


def test_frozen_color_when_not_learned(rng):
    config = ModelConfig(resolution=4, use_warp=False)
    model = init_scene_model(config, Aabb(np.zeros(3), 2.0), ["a"], rng, learn_color=False)
    assert "cam.a.gain" not in model.params.trainable()
    assert model.warp is None


def test_decoded_init_matches_direct_init(rng):
    model = latent_model(rng)
    template_raw, warp_raw, weights_raw = decode(model, z=rng.normal(size=3))
    assert template_raw.shape == (4, 4, 4, 4)
    assert np.allclose(template_raw, 0.0)
    assert warp_raw.shape == (3, 10)
    assert np.allclose(warp_raw[0], [1, 0, 0, 0, 1, 1, 1, 0, 0, 0])
    assert np.allclose(weights_raw, 0.0)
    volume = decode_volume(model, z=rng.normal(size=3))
    assert np.allclose(volume.template.data, SOFTPLUS_ZERO)


def test_zero_decoder_gives_softplus_zero_opacity_and_unit_weights(rng):
    model = latent_model(rng)
    for name in model.params.names():
        if name.startswith("dec."):
            model.params.assign(name, np.zeros_like(model.params[name]))
    template_raw, warp_raw, weights_raw = decode(model, z=rng.normal(size=3))
    assert not template_raw.any()
    assert not warp_raw.any()
    assert not weights_raw.any()
    volume = decode_volume(model, z=rng.normal(size=3))
    assert np.allclose(volume.template.data[3], SOFTPLUS_ZERO, atol=1e-12)
    assert np.array_equal(volume.warp.weights, np.ones((2, 2, 2, 2)))


def test_latent_decode_requires_code(rng):
    model = latent_model(rng)
    tape = Tape(np.float64)
    tape.watch(model.params)
    with pytest.raises(ShapeError):
        decode_on_tape(model, tape)
    tape.constant("z", np.zeros(5))
    with pytest.raises(ShapeError):
        decode_on_tape(model, tape, "z")


def test_conditioning_length_is_checked(rng):
    model = latent_model(rng, conditioning_dim=2)
    with pytest.raises(ShapeError):
        decode(model, z=np.zeros(3))
    template_raw, _, _ = decode(model, z=np.zeros(3), c=np.array([0.5, 1.0]))
    assert template_raw.shape == (4, 4, 4, 4)


def test_encoder_mean_without_noise(rng):
    model = latent_model(rng)
    code = encode(model, rng.uniform(size=(2, 4, 4, 3)))
    assert code.z.shape == (3,)
    assert np.array_equal(code.z, code.mean)
    noisy = encode(model, rng.uniform(size=(2, 4, 4, 3)), eps=np.ones(3))
    assert np.allclose(noisy.z, noisy.mean + np.exp(noisy.log_std))


def test_encoder_rejects_wrong_views(rng):
    model = latent_model(rng)
    with pytest.raises(ShapeError):
        encode(model, np.zeros((3, 4, 4, 3)))


def test_codebook_source_has_per_frame_latents(rng):
    model = latent_model(rng, latent_source=LatentSource.CODEBOOK)
    assert "latents.frame1" in model.params
    assert not model.uses_encoder
    assert not any(name.startswith("enc.") for name in model.params.names())


def test_eval_volume_at_world_points(rng):
    model = direct_model(rng, use_warp=False)
    rgb, alpha = eval_volume(model, np.array([[0.0, 0.0, 0.0], [0.5, -0.5, 0.2]]))
    assert rgb.shape == (2, 3)
    assert np.allclose(alpha, SOFTPLUS_ZERO)
    _, outside = eval_volume(model, np.array([[3.0, 0.0, 0.0]]))
    assert outside[0] == 0.0


def test_latent_interpolation():
    a, b = np.array([0.0, 2.0]), np.array([4.0, -2.0])
    assert np.array_equal(latent_interpolate(a, b, 0.0), a)
    assert np.array_equal(latent_interpolate(a, b, 1.0), b)
    assert np.allclose(latent_interpolate(a, b, 0.25), [1.0, 1.0])
    with pytest.raises(ShapeError):
        latent_interpolate(a, np.zeros(3), 0.5)


def test_template_slice(rng):
    model = direct_model(rng)
    image = template_slice(model, 0.0, size=6)
    assert image.shape == (6, 6)
    assert np.allclose(image, SOFTPLUS_ZERO)
    with pytest.raises(ShapeError):
        template_slice(model, 1.5)
