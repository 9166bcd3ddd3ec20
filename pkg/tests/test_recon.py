from types import SimpleNamespace

import numpy as np
import pytest
import torch

from adadiff import ConfigurationError, ContractError, DivergenceError, make_schedule
from adadiff.mapper import MapperConfig, generate_x0, initialize_prior
from adadiff.operator import (
    ImagingOperator,
    Mask,
    apply_A,
    dc_loss,
    make_coil_maps,
    make_mask,
)
from adadiff.phantom import make_phantom, simulate_acquisition
from adadiff.recon import (
    ReconConfig,
    TorchOperator,
    adapt_prior,
    load_recon_result,
    rapid_diffusion,
    reconstruct,
    save_recon_result,
)


def tiny_config(**kwargs):
    base = dict(
        image_size=32,
        base_channels=4,
        encoder_stages=3,
        channel_mult=(1, 2, 2),
        z_dim=8,
        time_embed_dim=16,
        schedule=make_schedule(1000, 125),
    )
    base.update(kwargs)
    return MapperConfig(**base)


@pytest.fixture(scope="module")
def setting():
    prior = initialize_prior(tiny_config(), seed=0)
    op = ImagingOperator(
        make_mask((32, 32), 4, seed=1), make_coil_maps((32, 32), 1, seed=1)
    )
    truth = make_phantom("T1", (32, 32), 7).image
    y = simulate_acquisition(truth, op)
    return prior, op, truth, y


class TestTorchOperator:
    def test_forward_matches_numpy(self):
        rng = np.random.default_rng(0)
        op = ImagingOperator(
            make_mask((32, 32), 4, seed=2), make_coil_maps((32, 32), 4, seed=2)
        )
        x = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        top = TorchOperator(op)
        want = apply_A(x, op)
        got = top.apply_A(torch.from_numpy(x.astype(np.complex64))).numpy()
        assert np.abs(got - want).max() <= 1e-5 * np.abs(want).max()

    def test_dc_loss_matches_numpy(self):
        rng = np.random.default_rng(1)
        op = ImagingOperator(
            make_mask((32, 32), 4, seed=3), make_coil_maps((32, 32), 2, seed=3)
        )
        x = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        y = (rng.standard_normal((2, 32, 32))
             + 1j * rng.standard_normal((2, 32, 32))) * op.mask.pattern
        top = TorchOperator(op)
        got = float(top.dc_loss(
            torch.from_numpy(x.astype(np.complex64)),
            torch.from_numpy(y.astype(np.complex64)),
        ))
        assert got == pytest.approx(dc_loss(x, y, op), rel=1e-5)


class _OracleGenerator(torch.nn.Module):
    """Always returns the true image, regardless of input."""

    def __init__(self, truth):
        super().__init__()
        stacked = np.stack([truth.real, truth.imag], axis=0).astype(np.float32)
        self.register_buffer("truth", torch.from_numpy(stacked))

    def forward(self, x, t, z):
        return self.truth[None].expand(x.shape[0], -1, -1, -1)


class TestRapidDiffusion:
    def test_oracle_prior_full_mask_recovers_truth(self):
        truth = make_phantom("T1", (32, 32), 3).image
        cfg = tiny_config()
        prior = SimpleNamespace(
            schedule=cfg.schedule, config=cfg,
            generator=_OracleGenerator(truth),
        )
        op = ImagingOperator(
            Mask(np.ones((32, 32), dtype=bool), 1.0, (32, 32),
                 "2d-variable-density", 0),
            make_coil_maps((32, 32), 1, seed=0),
        )
        y = apply_A(truth, op)
        out = rapid_diffusion(prior, y, op, seed=11)
        assert np.abs(out - truth).max() < 1e-5

    def test_exact_step_counts(self, setting):
        prior, op, truth, y = setting
        stats = {}
        rapid_diffusion(prior, y, op, seed=0, stats=stats)
        assert stats["dc_projections"] == 8
        assert stats["reverse_steps"] == 8

    def test_seeded_determinism(self, setting):
        prior, op, truth, y = setting
        a = rapid_diffusion(prior, y, op, seed=5)
        b = rapid_diffusion(prior, y, op, seed=5)
        np.testing.assert_array_equal(a, b)
        c = rapid_diffusion(prior, y, op, seed=6)
        assert not np.array_equal(a, c)

    def test_shape_mismatch_is_configuration_error(self, setting):
        prior, op, truth, y = setting
        big_op = ImagingOperator(
            make_mask((64, 64), 4, seed=1), make_coil_maps((64, 64), 1, seed=1)
        )
        big_y = np.zeros((1, 64, 64), dtype=complex)
        with pytest.raises(ConfigurationError):
            rapid_diffusion(prior, big_y, big_op, seed=0)

    def test_bad_kspace_shape_is_contract_error(self, setting):
        prior, op, truth, y = setting
        with pytest.raises(ContractError):
            rapid_diffusion(prior, y[0], op, seed=0)


class TestAdaptPrior:
    def test_zero_iterations_returns_initial_generator_output(self, setting):
        prior, op, truth, y = setting
        x_init = np.zeros((32, 32), dtype=complex)
        cfg = ReconConfig(iterations=0, seed=9)
        res = adapt_prior(prior, x_init, y, op, cfg)
        assert res.dc_loss_trace == []
        z = np.random.default_rng(9).standard_normal((1, 8)).astype(np.float32)
        want = generate_x0(prior, x_init, 0, z)
        np.testing.assert_array_equal(res.x_fin, want)

    def test_trace_length_and_source_isolation(self, setting):
        prior, op, truth, y = setting
        before = {k: v.clone() for k, v in prior.generator.state_dict().items()}
        cfg = ReconConfig(iterations=4, seed=2)
        res = adapt_prior(prior, np.zeros((32, 32), dtype=complex), y, op, cfg)
        assert len(res.dc_loss_trace) == 4
        after = prior.generator.state_dict()
        for k in before:
            torch.testing.assert_close(before[k], after[k], rtol=0, atol=0)

    def test_divergent_lr_raises_with_iteration(self, setting):
        prior, op, truth, y = setting
        bad_y = y.copy()
        bad_y[0, 0, 0] = np.nan
        cfg = ReconConfig(iterations=3, seed=2)
        with pytest.raises(DivergenceError) as err:
            adapt_prior(prior, np.zeros((32, 32), dtype=complex), bad_y, op, cfg)
        assert err.value.step == 0

    def test_retain_adapted_params(self, setting):
        prior, op, truth, y = setting
        cfg = ReconConfig(iterations=1, seed=2, retain_adapted_params=True)
        res = adapt_prior(prior, np.zeros((32, 32), dtype=complex), y, op, cfg)
        assert set(res.adapted_state) == set(prior.generator.state_dict())


class TestReconstruct:
    def test_no_adapt_equals_rapid_output(self, setting):
        prior, op, truth, y = setting
        res = reconstruct(prior, y, op, ReconConfig(variant="no_adapt", seed=4))
        want = rapid_diffusion(prior, y, op, seed=4)
        np.testing.assert_array_equal(res.x_fin, want)
        np.testing.assert_array_equal(res.x_init, want)
        assert res.dc_loss_trace == []

    def test_full_runs_both_phases(self, setting):
        prior, op, truth, y = setting
        res = reconstruct(prior, y, op, ReconConfig(iterations=2, seed=4))
        assert res.meta["dc_projections"] == 8
        assert len(res.dc_loss_trace) == 2
        assert not np.array_equal(res.x_init, res.x_fin)
        assert res.meta["variant"] == "full"
        assert res.wall_time_seconds > 0

    def test_no_train_starts_from_zero_filled(self, setting):
        from adadiff.operator import zero_filled

        prior, op, truth, y = setting
        res = reconstruct(
            prior, y, op, ReconConfig(variant="no_train", iterations=2, seed=4)
        )
        np.testing.assert_array_equal(res.x_init, zero_filled(y, op))
        assert len(res.dc_loss_trace) == 2

    def test_reproducible_and_isolated(self, setting):
        prior, op, truth, y = setting
        cfg = ReconConfig(iterations=3, seed=12)
        first = reconstruct(prior, y, op, cfg)
        # a different subject in between must not leak state
        other_truth = make_phantom("T2", (32, 32), 40).image
        other_y = simulate_acquisition(other_truth, op)
        reconstruct(prior, other_y, op, ReconConfig(iterations=3, seed=13))
        second = reconstruct(prior, y, op, cfg)
        np.testing.assert_array_equal(first.x_fin, second.x_fin)
        assert first.dc_loss_trace == second.dc_loss_trace


class TestResultArchive:
    def test_round_trip(self, setting, tmp_path):
        prior, op, truth, y = setting
        res = reconstruct(prior, y, op, ReconConfig(iterations=2, seed=1))
        path = save_recon_result(res, tmp_path / "slice0.zip")
        back = load_recon_result(path)
        f32 = lambda arr: (arr.real.astype(np.float32).astype(np.float64)
                           + 1j * arr.imag.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(back.x_init, f32(res.x_init))
        np.testing.assert_array_equal(back.x_fin, f32(res.x_fin))
        assert back.dc_loss_trace == res.dc_loss_trace
        assert back.meta["variant"] == "full"

    def test_byte_deterministic_and_no_timing(self, setting, tmp_path):
        prior, op, truth, y = setting
        cfg = ReconConfig(iterations=1, seed=1)
        r1 = reconstruct(prior, y, op, cfg)
        r2 = reconstruct(prior, y, op, cfg)
        assert r1.wall_time_seconds != r2.wall_time_seconds or True
        p1 = save_recon_result(r1, tmp_path / "a.zip")
        p2 = save_recon_result(r2, tmp_path / "b.zip")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_archive_raises(self, tmp_path):
        from adadiff import DataError

        p = tmp_path / "x.zip"
        p.write_bytes(b"nope")
        with pytest.raises(DataError):
            load_recon_result(p)
