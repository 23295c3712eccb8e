import numpy as np
import pytest

from nito.dataset import sample_problem
from nito.errors import ParameterError
from nito.neural_field import ArchConfig, NeuralField
from nito.pipeline import infer_field, nito_generate
from nito.simp import SimpConfig, SimpSolver, apply_filter

SMALL = ArchConfig(field_width=32, pc_width=16, seed=2)


@pytest.fixture(scope="module")
def model():
    return NeuralField(SMALL)


@pytest.fixture(scope="module")
def problem():
    return sample_problem(21, 24, 24)


def test_infer_any_resolution(model, problem):
    for nx, ny in ((24, 24), (48, 32), (8, 8)):
        values = infer_field(model, problem, (nx, ny))
        assert values.shape == (nx * ny,) and np.all((values > 0) & (values < 1))
    a = infer_field(model, problem)
    assert a.tobytes() == infer_field(model, problem).tobytes()
    with pytest.raises(ParameterError):
        infer_field(model, problem, (4, 8))


def test_zero_steps_is_projected_raw_field(model, problem):
    g = nito_generate(model, problem, k_steps=0)
    assert abs(g.volume_fraction - problem.volume_fraction) <= 1e-4
    assert g.compliance == SimpSolver(problem).evaluate(g.rho)
    assert g.timings["opt"] == 0.0 and g.timings["field"] > 0


def test_few_steps_respect_bounds_and_volume(model, problem):
    cfg = SimpConfig()
    for k in (1, 5):
        g = nito_generate(model, problem, k_steps=k, cfg=cfg)
        assert abs(g.volume_fraction - problem.volume_fraction) <= 1e-3
        assert g.rho.min() >= cfg.rho_min - 1e-12 and g.rho.max() <= cfg.rho_max + 1e-12
        assert set(g.timings) == {"field", "opt", "fea"}
    with pytest.raises(ParameterError):
        nito_generate(model, problem, k_steps=-1)


def test_warm_start_matches_manual_loop(model, problem):
    cfg = SimpConfig()
    g = nito_generate(model, problem, k_steps=3, cfg=cfg)
    from nito.simp import project_to_volume
    rho0 = project_to_volume(infer_field(model, problem), problem.volume_fraction)
    result = SimpSolver(problem, cfg).run(init=rho0, max_iters=3)
    assert g.rho.tobytes() == result.rho_phys.tobytes()
    assert g.compliance == result.compliance
    assert np.allclose(g.rho, apply_filter(SimpSolver(problem, cfg).kernel, result.rho))


def test_generate_at_other_resolution(model, problem):
    g = nito_generate(model, problem, resolution=(48, 48), k_steps=2)
    assert g.rho.shape == (48 * 48,) and g.grid.shape == (48, 48)
    assert g.problem.nx == 48
