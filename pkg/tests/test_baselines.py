import pytest
import torch

from symbiodiff.baselines import AssistantConfig, ControlAssistant, control_forward, make_reference, reference_forward
from symbiodiff.denoiser import compose_input, compose_subject_input, denoise_forward
from symbiodiff.diffusion_core import make_schedule
from symbiodiff.system import SYSTEMS, DiffusionSystem
from conftest import randomize_zero_init, small_config

SCHED = make_schedule()


def _batch(cfg, b=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    lc, n = cfg.latent_channels, cfg.latent_size
    z, scene, subject, noise = (torch.randn(b, lc, n, n, generator=g) for _ in range(4))
    mask = torch.ones(b, 1, n, n)
    mask[:, :, 2:, 2:] = 0
    return z, scene, mask, subject, noise


def test_assistant_config_validation():
    assert AssistantConfig("control_residual").trainable
    with pytest.raises(ValueError):
        AssistantConfig("adapter")


def test_control_residual_count_and_zero_init():
    s = DiffusionSystem(small_config(), "controlnet").eval()
    z, scene, mask, subject, _ = _batch(s.config)
    tokens = s.semantic_tokens(subject, scene, mask)
    x = compose_input(z, scene, mask)
    base_act = s.denoiser.conv_in(x.tensor())
    res = control_forward(s.assistant, compose_subject_input(z, subject), 5, tokens, base_act)
    assert len(res) == s.config.num_scales == 2
    assert [r.shape[1] for r in res] == [8, 16]
    assert all(not r.any() for r in res)
    with pytest.raises(ValueError):
        control_forward(s.assistant, compose_subject_input(z, subject), 5, tokens, base_act[:, :3])


def test_zero_init_control_is_noop():
    cfg = small_config()
    ctrl = DiffusionSystem(cfg, "controlnet", seed=0).eval()
    blocked = DiffusionSystem(cfg, "blocked", seed=0).eval()
    randomize_zero_init(ctrl.denoiser)
    blocked.denoiser.load_state_dict(ctrl.denoiser.state_dict())
    z, scene, mask, subject, noise = _batch(cfg)
    a, _ = ctrl.predict_eps(z, scene, mask, subject, noise, 40, SCHED, lam=1.0)
    b, _ = blocked.predict_eps(z, scene, mask, subject, noise, 40, SCHED)
    assert torch.equal(a, b)
    randomize_zero_init(ctrl.assistant, seed=5)
    c, _ = ctrl.predict_eps(z, scene, mask, subject, noise, 40, SCHED, lam=1.0)
    assert not torch.equal(a, c)


def test_control_assistant_starts_from_base_weights():
    s = DiffusionSystem(small_config(), "controlnet")
    assert torch.equal(s.assistant.conv_in.weight, s.denoiser.conv_in.weight)
    assert s.assistant.conv_in.weight.data_ptr() != s.denoiser.conv_in.weight.data_ptr()


def test_reference_with_copied_params_equals_recycled_extraction():
    cfg = small_config()
    s = DiffusionSystem(cfg, "symbiotic").eval()
    randomize_zero_init(s.denoiser)
    ref = make_reference(s.denoiser)
    z, scene, mask, subject, _ = _batch(cfg)
    tokens = s.semantic_tokens(subject, scene, mask)
    si = compose_subject_input(z, subject)
    c_ref = reference_forward(ref, si, 9, tokens)
    _, c_own, _ = denoise_forward(s.denoiser, si, 9, tokens, mode="extract")
    assert list(c_ref.states) == list(c_own.states)
    assert all(torch.equal(c_ref.states[k], c_own.states[k]) for k in c_own.states)


def test_referencenet_system_matches_symbiotic_at_init():
    cfg = small_config()
    sym = DiffusionSystem(cfg, "symbiotic", seed=0).eval()
    refn = DiffusionSystem(cfg, "referencenet", seed=0).eval()
    randomize_zero_init(sym.denoiser)
    refn.denoiser.load_state_dict(sym.denoiser.state_dict())
    refn.assistant.load_state_dict(sym.denoiser.state_dict())
    z, scene, mask, subject, noise = _batch(cfg)
    a, _ = sym.predict_eps(z, scene, mask, subject, noise, 77, SCHED, lam=1.0)
    b, _ = refn.predict_eps(z, scene, mask, subject, noise, 77, SCHED, lam=1.0)
    assert torch.equal(a, b)
    with torch.no_grad():
        for p in refn.assistant.parameters():
            p.add_(0.05)
    c, _ = refn.predict_eps(z, scene, mask, subject, noise, 77, SCHED, lam=1.0)
    assert not torch.equal(a, c)


def test_parameter_counts_and_kinds():
    cfg = small_config()
    n = {k: sum(p.numel() for p in DiffusionSystem(cfg, k).parameters()) for k in SYSTEMS}
    assert n["symbiotic"] == n["blocked"]
    assert n["controlnet"] > n["symbiotic"] and n["referencenet"] > n["controlnet"]
    with pytest.raises(ValueError):
        DiffusionSystem(cfg, "adapter")


def test_same_seed_same_init_across_kinds():
    cfg = small_config()
    a = DiffusionSystem(cfg, "symbiotic", seed=4).denoiser.state_dict()
    b = DiffusionSystem(cfg, "controlnet", seed=4).denoiser.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
