"""Fast self-check battery behind ``gpen selftest``.

Each check is a named callable that raises on failure.  The battery also
exposes the finite-difference gradient machinery used by the heavier test
suite: a miniature restorer probe whose analytic gradients are swept element
by element against centered differences.

``run_selftest(fault=...)`` can inject a known defect (currently a flipped
demodulation epsilon sign) to demonstrate that the checks actually detect it.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointFormatError, read_checkpoint, write_checkpoint
from .config import DegradationConfig, GeneratorConfig
from .degradation import degrade, gaussian_kernel, motion_kernel, sample_params
from .encoder import Encoder
from .generator import Generator
from .layers import demodulated_weight, modulated_conv2d
from .losses import (
    Discriminator,
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    feature_matching_loss,
    total_loss,
)
from .metrics import psnr
from .model import GPEN

FAULTS = ("demod-eps-sign",)

LN2 = math.log(2.0)


def mini_config() -> GeneratorConfig:
    """Smallest legal architecture, used by gradient probes."""
    return GeneratorConfig(
        resolution=8,
        latent_dim=8,
        mapping_depth=2,
        channel_base=16,
        channel_max=4,
    )


def build_gradient_probe(config: GeneratorConfig | None = None, seed: int = 0,
                         dtype=torch.float64):
    """Miniature restorer plus a total-loss closure over fixed probe inputs.

    Returns (parameters, loss_fn).  The loss is the full fine-tuning
    objective, so every encoder, generator and discriminator parameter
    influences it (the discriminator through both the real and fake paths).
    """
    if config is None:
        config = mini_config()
    torch.manual_seed(seed)
    model = GPEN(config, Encoder(config), Generator(config), Discriminator(config))
    model.to(dtype)
    gen = torch.Generator().manual_seed(seed + 1)
    r = config.resolution
    lq = torch.rand(1, 3, r, r, generator=gen).to(dtype)
    hq = torch.rand(1, 3, r, r, generator=gen).to(dtype)
    weights = LossWeights()

    def loss_fn():
        # clamp=False mirrors training and keeps the loss differentiable
        restored = model(lq, clamp=False)
        fake = model.discriminator(restored)
        real = model.discriminator(hq)
        l_a = adversarial_loss_g(fake.score)
        l_c = content_loss(restored, hq)
        l_f = feature_matching_loss(real.features, fake.features)
        return total_loss(l_a, l_c, l_f, weights)

    params = [p for p in model.parameters() if p.requires_grad]
    return params, loss_fn


def finite_difference_errors(loss_fn, params, h_scale: float = 1e-6,
                             denom_floor: float = 1e-4,
                             sample_per_tensor: int | None = None,
                             seed: int = 0):
    """Max relative error between analytic and centered-difference gradients.

    ``sample_per_tensor`` limits how many elements of each tensor are probed
    (None sweeps all of them).  Relative error uses
    |fd - grad| / max(|fd|, |grad|, denom_floor) so near-zero gradients are
    held to a proportional absolute tolerance.  Returns (max_error, checked).
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    max_err, checked = 0.0, 0
    with torch.no_grad():
        for param, grad in zip(params, grads):
            flat = param.data.reshape(-1)
            gflat = (torch.zeros_like(param) if grad is None else grad).reshape(-1)
            n = flat.numel()
            if sample_per_tensor is not None and sample_per_tensor < n:
                indices = rng.choice(n, size=sample_per_tensor, replace=False)
            else:
                indices = range(n)
            for i in indices:
                original = float(flat[i])
                h = h_scale * max(1.0, abs(original))
                flat[i] = original + h
                f_plus = float(loss_fn())
                flat[i] = original - h
                f_minus = float(loss_fn())
                flat[i] = original
                fd = (f_plus - f_minus) / (2.0 * h)
                analytic = float(gflat[i])
                err = abs(fd - analytic) / max(abs(fd), abs(analytic), denom_floor)
                max_err = max(max_err, err)
                checked += 1
    return max_err, checked


# ---------------------------------------------------------------------------
# individual checks


def check_kernel_normalization():
    rng = np.random.default_rng(7)
    for _ in range(40):
        sigma = float(rng.uniform(0.2, 9.0))
        size = 2 * int(rng.integers(0, 8)) + 1
        k = gaussian_kernel(sigma, size)
        assert abs(k.sum() - 1.0) < 1e-9, f"gaussian sum {k.sum()}"
        assert (k >= 0).all()
        assert np.allclose(k, k.T, atol=1e-12), "gaussian kernel not symmetric"
    for _ in range(40):
        length = 2 * int(rng.integers(0, 9)) + 1
        angle = float(rng.uniform(0, math.pi))
        k = motion_kernel(length, angle, length + 2)
        assert abs(k.sum() - 1.0) < 1e-9, f"motion sum {k.sum()}"
        assert (k >= 0).all()


def check_demodulation_stability(eps: float = 1e-8):
    # the epsilon must keep the per-channel tap energy at or just below one,
    # and keep an all-zero style finite
    torch.manual_seed(3)
    weight = torch.randn(6, 4, 3, 3, dtype=torch.float64) / 6.0
    style = 1.0 + 0.1 * torch.randn(5, 4, dtype=torch.float64)
    sums = demodulated_weight(weight, style, eps).pow(2).sum(dim=(2, 3, 4))
    assert torch.isfinite(sums).all(), "demodulation produced non-finite taps"
    assert float(sums.max()) <= 1.0 + 1e-10, f"tap energy {float(sums.max())} above 1"
    assert float(sums.min()) > 0.99, f"tap energy {float(sums.min())} too small"
    zero_style = torch.zeros(2, 4, dtype=torch.float64)
    zeroed = demodulated_weight(weight, zero_style, eps)
    assert torch.isfinite(zeroed).all(), "zero style must stay finite"
    assert float(zeroed.abs().max()) == 0.0, "zero style must zero the taps"


def check_demodulation_variance(eps: float = 1e-8):
    torch.manual_seed(5)
    x = torch.randn(8, 8, 32, 32)
    weight = torch.randn(8, 8, 3, 3)
    style = torch.randn(8, 8)
    out = modulated_conv2d(x, style, weight, eps=eps, demodulate=True)
    stds = out.std(dim=(0, 2, 3))
    assert float(stds.min()) > 0.8 and float(stds.max()) < 1.2, (
        f"per-channel std outside [0.8, 1.2]: {stds.tolist()}"
    )


def check_loss_identities():
    assert abs(float(adversarial_loss_g(0.0)) - LN2) < 1e-9
    assert abs(float(adversarial_loss_g(-2.0)) - 2.1269280110429727) < 1e-9
    assert abs(float(adversarial_loss_d(0.0, 0.0)) - 2 * LN2) < 1e-9
    assert abs(float(adversarial_loss_d(1.0, -1.0)) - 0.6265233750364457) < 1e-9
    for d in (-80.0, -5.0, -0.5, 0.0, 0.5, 5.0, 80.0):
        lhs = float(adversarial_loss_g(d)) - float(adversarial_loss_g(-d))
        assert abs(lhs - (-d)) < 1e-6, f"softplus identity broken at d={d}"
    real = [np.array([[0.0, 0.0]])]
    fake = [np.array([[3.0, 4.0]])]
    lf = float(feature_matching_loss(real, fake))
    assert abs(lf - 3.5355339059327378) < 1e-12
    lt = float(total_loss(1.0, 2.0, 3.0, LossWeights()))
    assert abs(lt - 3.06) < 1e-12


def check_gradient_probe():
    params, loss_fn = build_gradient_probe()
    max_err, checked = finite_difference_errors(loss_fn, params,
                                                sample_per_tensor=2, seed=11)
    assert checked > 0
    assert max_err < 1e-4, f"gradient mismatch {max_err:.2e} over {checked} probes"


def check_checkpoint_roundtrip():
    rng = np.random.default_rng(13)
    tensors = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "b.bias": rng.standard_normal((7,)).astype(np.float64),
        "c.step": np.asarray(42, dtype=np.int64),
    }
    metadata = {"kind": "prior", "step": "42"}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "ck.bin"
        write_checkpoint(path, tensors, metadata)
        loaded, meta = read_checkpoint(path)
        assert meta == metadata
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert np.array_equal(loaded[name], tensors[name])
        again = Path(tmp) / "ck2.bin"
        write_checkpoint(again, loaded, meta)
        assert path.read_bytes() == again.read_bytes(), "round trip not byte-identical"
        corrupt = Path(tmp) / "bad.bin"
        corrupt.write_bytes(b"X" + path.read_bytes()[1:])
        try:
            read_checkpoint(corrupt)
        except CheckpointFormatError:
            pass
        else:
            raise AssertionError("corrupt checkpoint was accepted")


def check_degradation_determinism():
    config = DegradationConfig(resolution=32, degraded_side_range=(5, 8))
    rng = np.random.default_rng(17)
    image = rng.random((3, 32, 32)).astype(np.float32)
    outs = []
    for _ in range(2):
        r = np.random.default_rng(99)
        params = sample_params(config, r)
        outs.append(degrade(image, params, r))
        assert 0.0 <= params.sigma <= 25.0
        assert params.quality is not None and 5 <= params.quality <= 50
        assert abs(params.kernel.sum() - 1.0) < 1e-6
    assert np.array_equal(outs[0], outs[1]), "degradation not reproducible"


def check_psnr():
    rng = np.random.default_rng(19)
    x = rng.random((3, 16, 16)).astype(np.float32)
    assert psnr(x, x) == 100.0
    a = np.zeros((3, 8, 8), dtype=np.float32)
    b = np.full((3, 8, 8), 0.1, dtype=np.float32)
    # float32 quantization of 0.1 shifts the MSE in the 7th decimal
    assert abs(psnr(a, b) - 20.0) < 1e-6
    try:
        psnr(a, np.zeros((3, 4, 4), dtype=np.float32))
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch was accepted")


def run_selftest(fault: str | None = None) -> list[tuple[str, str | None]]:
    """Run every check; returns (name, error-or-None) per check in order."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    eps = -1e-8 if fault == "demod-eps-sign" else 1e-8
    checks = [
        ("kernel_normalization", check_kernel_normalization),
        ("demodulation_stability", lambda: check_demodulation_stability(eps)),
        ("demodulation_variance", lambda: check_demodulation_variance(eps)),
        ("loss_identities", check_loss_identities),
        ("psnr", check_psnr),
        ("checkpoint_roundtrip", check_checkpoint_roundtrip),
        ("degradation_determinism", check_degradation_determinism),
        ("gradient_probe", check_gradient_probe),
    ]
    results = []
    for name, fn in checks:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report, do not abort the battery
            results.append((name, f"{type(exc).__name__}: {exc}"))
        else:
            results.append((name, None))
    return results
