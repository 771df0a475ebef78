"""Shared gradient-check cases for the unit tests and the acceptance run."""
import numpy as np

from lrnoise import autodiff as ad
from lrnoise import blocks
from lrnoise.autodiff import Tensor
from lrnoise.autodiff.gradcheck import check_grad
from lrnoise.rng import RngStream

TOL = 1e-4


def _weights(shape, seed=99):
    return np.random.default_rng(seed).normal(size=shape)


def weighted(out: Tensor, seed=99) -> Tensor:
    """Scalar probe ``sum(out * R)`` with a fixed random R."""
    return ad.reduce_sum(ad.mul(out, _weights(out.shape, seed)))


def _rand(*shape, seed=0, away=0.0):
    x = np.random.default_rng(seed).normal(size=shape)
    # push samples off kinks so central differences stay on one side
    return x + np.sign(x) * away


def _pos(*shape, seed=0):
    return np.random.default_rng(seed).uniform(0.5, 2.0, shape)


OP_CASES = {
    "add": (lambda a, b: weighted(ad.add(a, b)), [_rand(3, 4), _rand(4, seed=1)]),
    "sub": (lambda a, b: weighted(ad.sub(a, b)), [_rand(2, 3, 4), _rand(3, 4, seed=1)]),
    "mul": (lambda a, b: weighted(ad.mul(a, b)), [_rand(2, 3, 4), _rand(3, 4, seed=1)]),
    "leaky_relu": (lambda a: weighted(ad.leaky_relu(a, 0.2)), [_rand(5, 6, away=0.05)]),
    "relu": (lambda a: weighted(ad.relu(a)), [_rand(5, 6, away=0.05)]),
    "abs": (lambda a: weighted(ad.abs(a)), [_rand(5, 6, away=0.05)]),
    "sqrt": (lambda a: weighted(ad.sqrt(a)), [_pos(4, 4)]),
    "square": (lambda a: weighted(ad.square(a)), [_rand(4, 4)]),
    "clip": (lambda a: weighted(ad.clip(a, -0.5, 0.5)),
             [np.array([-1.0, -0.3, 0.1, 0.4, 0.8, 1.2])]),
    "reduce_sum": (lambda a: weighted(ad.reduce_sum(a, axis=1)), [_rand(3, 4, 5)]),
    "reduce_mean": (lambda a: weighted(ad.reduce_mean(a, axis=(0, 2), keepdims=True)), [_rand(3, 4, 5)]),
    "l2_norm": (lambda a: weighted(ad.l2_norm(a, axis=-1)), [_rand(3, 5)]),
    "reshape": (lambda a: weighted(ad.reshape(a, (6, 4))), [_rand(2, 3, 4)]),
    "transpose": (lambda a: weighted(ad.transpose(a, (2, 0, 1))), [_rand(2, 3, 4)]),
    "broadcast": (lambda a: weighted(ad.broadcast(a, (3, 2, 4))), [_rand(2, 4)]),
    "concat": (lambda a, b: weighted(ad.concat([a, b], axis=1)), [_rand(2, 3), _rand(2, 2, seed=1)]),
    "split": (lambda a: ad.add(weighted(ad.split(a, [1, 3], axis=-1)[0], 1),
                               weighted(ad.split(a, [1, 3], axis=-1)[1], 2)), [_rand(3, 4)]),
    "matmul": (lambda a, b: weighted(ad.matmul(a, b)), [_rand(2, 3, 4), _rand(4, 5, seed=1)]),
    "matmul_batched": (lambda a, b: weighted(ad.matmul(a, b)), [_rand(2, 3, 4), _rand(2, 4, 2, seed=1)]),
    "conv2d": (lambda x, w, b: weighted(ad.conv2d(x, w, b, stride=1, pad=1)),
               [_rand(2, 3, 5, 6), _rand(4, 3, 3, 3, seed=1), _rand(4, seed=2)]),
    "conv2d_stride": (lambda x, w: weighted(ad.conv2d(x, w, stride=2)),
                      [_rand(1, 2, 6, 6), _rand(3, 2, 2, 2, seed=1)]),
    "transpose_conv2d": (lambda x, w, b: weighted(ad.transpose_conv2d(x, w, b, stride=2)),
                         [_rand(2, 3, 3, 2), _rand(3, 2, 2, 2, seed=1), _rand(2, seed=2)]),
    "transpose_conv2d_pad": (lambda x, w: weighted(ad.transpose_conv2d(x, w, stride=2, pad=1)),
                             [_rand(1, 2, 3, 3), _rand(2, 2, 3, 3, seed=1)]),
    "avg_pool2d": (lambda a: weighted(ad.avg_pool2d(a, 2)), [_rand(2, 2, 4, 6)]),
    "layer_norm": (lambda a, g, b: weighted(ad.layer_norm(a, g, b)),
                   [_rand(3, 6), _rand(6, seed=1), _rand(6, seed=2)]),
    "softmax": (lambda a: weighted(ad.softmax(a)), [_rand(3, 7)]),
    "softmax_axis0": (lambda a: weighted(ad.softmax(a, axis=0)), [_rand(4, 3)]),
    "dft2": (lambda a: ad.add(weighted(ad.dft2(a)[0], 1), weighted(ad.dft2(a)[1], 2)), [_rand(2, 4, 6)]),
    "idft2": (lambda re, im: weighted(ad.idft2(re, im)), [_rand(2, 5, 4), _rand(2, 5, 4, seed=1)]),
}


def op_error(name: str) -> float:
    fn, arrays = OP_CASES[name]
    return check_grad(fn, arrays)


# -- block-level checks ---------------------------------------------------------

def _directional(loss_fn, x: np.ndarray, params: dict, seed: int, h: float = 1e-5) -> float:
    """Central differences on the input coordinates, one random direction through all parameters."""
    xt = Tensor(x, requires_grad=True)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    ad.backward(loss_fn(xt, leaves))
    ana_x = xt.grad
    dirs = {k: np.random.default_rng([seed, i]).normal(size=v.shape) for i, (k, v) in enumerate(params.items())}
    # parameters off the probed path get no gradient and contribute zero
    ana_dir = sum(float(np.sum(leaves[k].grad * dirs[k])) for k in params if leaves[k].grad is not None)

    def f_x(xa):
        return loss_fn(Tensor(xa), {k: Tensor(v) for k, v in params.items()}).item()

    if x.size > 512:
        # large inputs: probe a random subset of coordinates
        pick = np.random.default_rng(seed).choice(x.size, 256, replace=False)
        num_x = np.zeros(x.size)
        for i in pick:
            e = np.zeros(x.size)
            e[i] = h
            num_x[i] = (f_x(x + e.reshape(x.shape)) - f_x(x - e.reshape(x.shape))) / (2 * h)
        ana_x = ana_x.reshape(-1)[pick]
        num_x = num_x[pick]
    else:
        num_x = ad.numeric_grad(f_x, [x], h)[0]

    def f_t(t):
        return loss_fn(Tensor(x), {k: Tensor(v + t * dirs[k]) for k, v in params.items()}).item()

    num_dir = (f_t(h) - f_t(-h)) / (2 * h)
    err_x = ad.max_rel_error(ana_x, num_x)
    err_dir = abs(ana_dir - num_dir) / max(abs(ana_dir), abs(num_dir), 1e-12)
    return max(err_x, err_dir)


def _params(init, *args) -> dict:
    p: dict = {}
    init(p, *args)
    # spread the weights so every path carries a visible gradient
    return {k: v + np.random.default_rng(abs(hash(k)) % 2**32).normal(0, 0.3, v.shape) for k, v in p.items()}


def _linear_case():
    p = _params(blocks.init_linear, "l", 5, 3, RngStream(0))
    return (lambda x, q: weighted(blocks.linear(x, q, "l"))), _rand(2, 4, 5), p


def _conv_case():
    p = _params(blocks.init_conv, "c", 3, 4, 3, RngStream(0))
    return (lambda x, q: weighted(blocks.conv(x, q, "c", stride=2))), _rand(1, 3, 6, 6), p


def _res_case():
    p = _params(blocks.init_res_block, "r", 3, RngStream(0))
    return (lambda x, q: weighted(blocks.res_block(x, q, "r", 0.2))), _rand(1, 3, 4, 4), p


def _patchify_case():
    p = _params(blocks.init_patchify, "e", 2, 6, RngStream(0), 4)
    return (lambda x, q: weighted(blocks.patchify(x, q, "e", 2).tokens)), _rand(1, 4, 4, 4), p


def _downsample_case():
    def f(x, q):
        return weighted(blocks.seq_downsample(blocks.TokenSequence(x, (4, 4)), 2).tokens)
    return f, _rand(2, 16, 3), {}


def _attention_case():
    p = _params(blocks.init_transformer, "t", 8, 2, 2, RngStream(0))
    return (lambda x, q: weighted(blocks.attention(blocks.TokenSequence(x, (2, 3)), q, "t", 2)[0])), \
        _rand(2, 6, 8), p


def _transformer_case():
    p = _params(blocks.init_transformer, "t", 8, 2, 2, RngStream(0))
    return (lambda x, q: weighted(blocks.transformer_block(blocks.TokenSequence(x, (2, 3)), q, "t", 2).tokens)), \
        _rand(2, 6, 8), p


def _fourier_case():
    p = _params(blocks.init_fourier_block, "f", 8, 2, 2, RngStream(0))
    return (lambda x, q: weighted(blocks.fourier_transformer_block(blocks.TokenSequence(x, (4, 4)), q, "f", 2).tokens)), \
        _rand(1, 16, 8), p


BLOCK_CASES = {
    "linear": _linear_case, "conv": _conv_case, "res_block": _res_case, "patchify": _patchify_case,
    "seq_downsample": _downsample_case, "attention": _attention_case,
    "transformer_block": _transformer_case, "fourier_transformer_block": _fourier_case,
}


def block_error(name: str, seed: int = 0) -> float:
    fn, x, p = BLOCK_CASES[name]()
    return _directional(fn, x, p, seed)


def _ftd_case():
    from lrnoise.models import Discriminator, FTDArch
    disc = Discriminator.create(RngStream(0), FTDArch(size=16, embed_dims=(8, 8, 8), heads=2))
    p = {k: v + np.random.default_rng(i).normal(0, 0.1, v.shape) for i, (k, v) in enumerate(disc.params.items())}
    return (lambda x, q: weighted(disc.forward(x, q))), _rand(2, 4, 16, 16) * 0.1, p


def _unet_case():
    from lrnoise.models import Generator, UNetArch
    gen = Generator.create(RngStream(0), UNetArch(levels=2, base=4, io_scale=3.0))
    return (lambda x, q: weighted(gen.forward(x, q))), _rand(1, 4, 8, 8) * 0.1, dict(gen.params)


BLOCK_CASES["ftd"] = _ftd_case
BLOCK_CASES["unet"] = _unet_case
