import numpy as np

from nhmm.model import ModelConfig, flat_start_init


def finite_difference(f, param, eps=1e-5):
    """Central differences of scalar f() with respect to every entry of param.data."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f().data)
        flat[i] = orig - eps
        down = float(f().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def tiny_config(**kw):
    base = dict(
        vocab_size=5, acoustic_dim=3, embed_dim=4, encoder_dim=3, conv_kernel=3,
        states_per_symbol=2, state_dim=3, prenet_dims=(4,), decoder_dim=4, outputnet_dim=4,
    )
    base.update(kw)
    return ModelConfig(**base)


def randomized_model(cfg, seed=0, scale=0.5, initial_tau=0.3):
    """Flat-start model whose output layer is then perturbed so states differ."""
    model = flat_start_init(cfg, seed=seed, initial_tau=initial_tau)
    rng = np.random.default_rng(seed + 1000)
    w = model["outputnet.out.weight"]
    w.data[...] = rng.normal(0.0, scale, size=w.shape)
    model["go_token"].data[...] = rng.normal(0.0, 0.5, size=model["go_token"].shape)
    return model


def flat_closed_form(frames, n_states, tau):
    """Flat-start log-likelihood: every state is N(0, I) with constant tau."""
    from math import comb, log, pi

    T_, D = frames.shape
    gauss = float(np.sum(-0.5 * D * log(2 * pi) - 0.5 * np.sum(frames ** 2, axis=1)))
    return gauss + n_states * log(tau) + (T_ - n_states) * log(1 - tau) + log(comb(T_ - 1, n_states - 1))
