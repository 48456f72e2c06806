import warnings

import numpy as np
import pytest
from scipy.integrate import trapezoid

from src.core.reference import (
    FourierBasis,
    ReferenceCache,
    compute_reference,
    grid_mass,
    solve_analytic,
    solve_burgers_fd,
    solve_cole_hopf,
    solve_etdrk4,
    solve_ode_adaptive,
    solve_spectral_etd,
    solve_split_step,
)
from src.core.systems import get_system
from src.utils.config import Config
from src.utils.exceptions import DomainError, SolverDivergedError, UnsupportedSystemError


def test_heat_closed_form():
    x = np.linspace(0.0, 1.0, 11)
    t = np.array([0.0, 0.5, 1.0])
    field = solve_analytic('heat', x, t)
    expected = np.sin(np.pi * x)[None, :] * np.exp(-0.01 * np.pi ** 2 * t)[:, None]
    assert field.values.shape == (3, 11, 1)
    assert np.allclose(field.values[..., 0], expected, atol=1e-15)
    assert field.estimated_error == 0.0


def test_analytic_rejects_other_systems():
    with pytest.raises(UnsupportedSystemError):
        solve_analytic('burgers', np.zeros(3), np.zeros(1))


def test_times_must_be_sorted():
    with pytest.raises(DomainError):
        solve_spectral_etd('allen-cahn', np.zeros(3), np.array([0.2, 0.1]))


def test_zero_initial_condition_stays_zero():
    x = np.linspace(0.0, 1.0, 9)
    t = np.array([0.0, 0.05])
    ac = solve_spectral_etd('allen-cahn', x, t, modes=32, initial_condition=lambda s: np.zeros((len(s), 1)))
    assert np.max(np.abs(ac.values)) == 0.0
    ks = solve_etdrk4('kuramoto-sivashinsky', np.linspace(0.0, 6.0, 9), t, modes=64,
                      initial_condition=lambda s: np.zeros((len(s), 1)))
    assert np.max(np.abs(ks.values)) == 0.0


def test_reaction_diffusion_uniform_state_follows_logistic():
    x = np.linspace(0.0, 1.0, 5)
    t = np.array([0.0, 0.5, 1.0])
    field = solve_spectral_etd('reaction-diffusion', x, t, modes=32, dt=1e-3,
                                initial_condition=lambda s: np.full((len(s), 1), 0.2))
    logistic = 0.2 * np.exp(t) / (1.0 - 0.2 + 0.2 * np.exp(t))
    assert np.allclose(field.values[:, :, 0], logistic[:, None], atol=1e-10)


def test_allen_cahn_self_convergence():
    x = np.linspace(0.0, 1.0, 20)
    t = np.linspace(0.0, 0.1, 5)
    field = solve_spectral_etd('allen-cahn', x, t, estimate_error=True)
    assert field.estimated_error < 1e-6, f"dt halving changed the field by {field.estimated_error:.2e}"


def test_cahn_hilliard_self_convergence():
    x = np.linspace(0.0, 1.0, 16, endpoint=False)
    field = solve_spectral_etd('cahn-hilliard', x, np.array([0.0, 0.01]), estimate_error=True)
    assert np.all(np.isfinite(field.values))
    assert field.estimated_error < 1e-6


def test_cahn_hilliard_conserves_mean():
    basis = FourierBasis((0.0, 1.0), 256)
    field = solve_spectral_etd('cahn-hilliard', basis.x, np.array([0.0, 0.01]))
    means = field.values[:, :, 0].mean(axis=1)
    assert abs(means[1] - means[0]) <= 1e-12


def test_kuramoto_sivashinsky_self_convergence():
    x = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    field = solve_etdrk4('kuramoto-sivashinsky', x, np.linspace(0.0, 0.5, 3), estimate_error=True)
    assert field.estimated_error < 1e-6


def test_kdv_mass_conserved():
    basis = FourierBasis((0.0, 1.0), 256)
    field = solve_etdrk4('kdv', basis.x, np.array([0.0, 0.01, 0.02]))
    masses = field.values[:, :, 0].mean(axis=1)
    assert np.max(np.abs(masses - masses[0])) <= 1e-10


def test_split_step_plane_wave_is_exact():
    amplitude, k = 0.5, 2.0 * np.pi
    x = np.linspace(0.0, 1.0, 13, endpoint=False)
    t = np.array([0.0, 0.05, 0.1])
    wave = lambda s: np.stack([amplitude * np.cos(k * s), amplitude * np.sin(k * s)], axis=-1)
    field = solve_split_step('schrodinger', x, t, modes=64, dt=1e-3, initial_condition=wave)
    phase = k * x[None, :] - (k ** 2 - amplitude ** 2) * t[:, None]
    assert np.allclose(field.values[..., 0], amplitude * np.cos(phase), atol=1e-10)
    assert np.allclose(field.values[..., 1], amplitude * np.sin(phase), atol=1e-10)


def test_split_step_conserves_mass():
    basis = FourierBasis((0.0, 1.0), 256)
    field = solve_split_step('schrodinger', basis.x, np.array([0.0, 0.01]))
    complex_field = field.values[..., 0] + 1j * field.values[..., 1]
    mass = grid_mass(complex_field, 1.0 / 256)
    assert abs(mass[1] - mass[0]) / mass[0] <= 1e-8


def test_seir_population_conserved():
    t = np.linspace(0.0, 3.0, 100)
    field = solve_ode_adaptive('seir', t)
    population = field.values.sum(axis=1)
    assert np.max(np.abs(population - 1.0)) <= 1e-9
    assert field.x is None and field.values.shape == (100, 4)


def test_lorenz_starts_at_initial_state():
    field = solve_ode_adaptive('lorenz', np.linspace(0.0, 1.0, 11))
    assert np.allclose(field.values[0], [1.0, 1.0, 1.0], atol=1e-14)
    custom = solve_ode_adaptive('lorenz', np.array([0.0, 0.1]), initial_state=np.zeros(3))
    assert np.max(np.abs(custom.values)) == 0.0, "origin is a fixed point"


def test_cole_hopf_matches_finite_differences():
    x = np.linspace(0.0, 1.0, 21)
    t = np.array([0.0, 0.1, 0.25])
    quadrature = solve_cole_hopf('burgers', x, t, estimate_error=True)
    fd = solve_burgers_fd('burgers', x, t)
    assert np.allclose(quadrature.values[0, :, 0], -np.sin(np.pi * x))
    gap = np.max(np.abs(quadrature.values - fd.values))
    assert gap <= 1e-3, f"cole-hopf vs finite differences max gap {gap:.2e}"
    assert quadrature.estimated_error < 1e-6


def test_solvers_reject_foreign_systems():
    with pytest.raises(UnsupportedSystemError):
        solve_etdrk4('heat', np.zeros(2), np.zeros(1))
    with pytest.raises(UnsupportedSystemError):
        solve_split_step('kdv', np.zeros(2), np.zeros(1))
    with pytest.raises(UnsupportedSystemError):
        solve_ode_adaptive('burgers', np.zeros(1))


def test_cache_round_trip(tmp_path):
    cache = ReferenceCache(str(tmp_path))
    spec = get_system('heat')
    x, t = np.linspace(0.0, 1.0, 7), np.linspace(0.0, 1.0, 4)
    first = compute_reference(spec, x, t, cache=cache)
    key = cache.key(spec, x, t)
    assert (tmp_path / f"{key}.npz").exists()
    again = cache.load(key)
    assert again is not None and np.array_equal(again.values, first.values)
    assert np.array_equal(again.x, x) and again.solver == 'analytic'
    assert not list(tmp_path.glob('*.tmp')), "temp files must be renamed into place"


def test_cache_key_depends_on_grid(tmp_path):
    cache = ReferenceCache(str(tmp_path))
    spec = get_system('heat')
    t = np.linspace(0.0, 1.0, 4)
    assert cache.key(spec, np.linspace(0, 1, 7), t) != cache.key(spec, np.linspace(0, 1, 8), t)


def test_cache_rejects_corrupt_entries(tmp_path):
    cache = ReferenceCache(str(tmp_path))
    (tmp_path / 'broken.npz').write_bytes(b'not an npz file')
    assert cache.load('broken') is None
    assert cache.load('missing') is None


def test_cache_ode_entry_has_no_grid(tmp_path):
    cache = ReferenceCache(str(tmp_path))
    t = np.linspace(0.0, 0.5, 6)
    field = compute_reference('seir', None, t, cache=cache)
    loaded = cache.load(cache.key(get_system('seir'), None, t))
    assert loaded.x is None and np.array_equal(loaded.values, field.values)


def _gradient_energy(u, ux, eps2):
    return 0.5 * eps2 * ux ** 2 + 0.25 * (u ** 2 - 1.0) ** 2


def test_allen_cahn_energy_non_increasing():
    x = np.linspace(0.0, 1.0, 2001)
    field = solve_spectral_etd('allen-cahn', x, np.linspace(0.0, 0.5, 6))
    eps = get_system('allen-cahn').coefficients['epsilon']
    energy = [trapezoid(_gradient_energy(u, np.gradient(u, x), eps), x) for u in field.values[:, :, 0]]
    assert np.all(np.diff(energy) <= 1e-9), f"allen-cahn energy increased: {energy}"
    assert energy[-1] < energy[0]


def test_cahn_hilliard_energy_non_increasing():
    basis = FourierBasis((0.0, 1.0), 256)
    field = solve_spectral_etd('cahn-hilliard', basis.x, np.linspace(0.0, 0.01, 5))
    eps = get_system('cahn-hilliard').coefficients['epsilon']
    energy = []
    for u in field.values[:, :, 0]:
        ux = np.fft.ifft(1j * basis.k_odd * np.fft.fft(u)).real
        energy.append(np.mean(_gradient_energy(u, ux, eps ** 2)))
    assert np.all(np.diff(energy) <= 1e-12), f"cahn-hilliard energy increased: {energy}"


@pytest.mark.parametrize('level', [1.0, -1.0])
def test_allen_cahn_pure_phases_are_stationary(level):
    x = np.linspace(0.0, 1.0, 11)
    field = solve_spectral_etd('allen-cahn', x, np.array([0.0, 0.1]), modes=64,
                               initial_condition=lambda s: np.full((len(s), 1), level))
    assert np.max(np.abs(field.values - level)) <= 1e-12
    assert field.solver == 'spectral-etdrk4'


def test_kuramoto_sivashinsky_single_mode_growth():
    k, amplitude = 2, 1e-6
    field = solve_etdrk4('kuramoto-sivashinsky', np.array([0.0]), np.array([0.0, 0.5]),
                         initial_condition=lambda s: amplitude * np.cos(k * s)[:, None])
    ratio = field.values[1, 0, 0] / field.values[0, 0, 0]
    expected = np.exp((k ** 2 - k ** 4) * 0.5)
    assert abs(ratio - expected) <= 1e-8, f"mode growth {ratio:.16g} vs {expected:.16g}"


def test_kuramoto_sivashinsky_fourth_order_in_time():
    x = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    t = np.array([0.0, 1.0])
    steps = np.array([0.04, 0.02, 0.01])
    fine = solve_etdrk4('kuramoto-sivashinsky', x, t, modes=32, dt=steps[0] / 32).values[-1]
    errors = [np.max(np.abs(solve_etdrk4('kuramoto-sivashinsky', x, t, modes=32, dt=dt).values[-1] - fine))
              for dt in steps]
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert 3.5 <= slope <= 4.7, f"dt-halving slope {slope:.2f}, errors {errors}"


def test_blow_up_is_detected_before_overflow():
    x = np.linspace(0.0, 1.0, 5)
    with warnings.catch_warnings():
        warnings.simplefilter('error', RuntimeWarning)
        with pytest.raises(SolverDivergedError):
            solve_spectral_etd('reaction-diffusion', x, np.array([0.0, 2.0]), modes=32, dt=1e-3,
                               initial_condition=lambda s: np.full((len(s), 1), -0.5))


def test_kdv_energy_conserved():
    basis = FourierBasis((0.0, 1.0), 256)
    field = solve_etdrk4('kdv', basis.x, np.array([0.0, 0.01, 0.02]))
    energy = np.mean(field.values[:, :, 0] ** 2, axis=1)
    drift = np.max(np.abs(energy - energy[0])) / energy[0]
    assert drift <= 1e-6, f"kdv energy drift {drift:.2e}"


def test_lorenz_matches_tighter_tolerance():
    t = np.linspace(0.0, 1.0, 101)
    field = solve_ode_adaptive('lorenz', t, estimate_error=True)
    tight = solve_ode_adaptive('lorenz', t, tol=1e-13)
    assert np.max(np.abs(field.values - tight.values)) <= 1e-6
    assert field.estimated_error is not None and field.estimated_error <= 1e-6


@pytest.mark.parametrize('name', ['seir', 'lorenz', 'heat', 'burgers'])
def test_compute_reference_carries_error_estimate(name, tmp_path):
    spec = get_system(name)
    x = None if spec.is_ode else np.linspace(0.0, 1.0, 9)
    t = np.linspace(0.0, 0.5, 6)
    cache = ReferenceCache(str(tmp_path))
    field = compute_reference(spec, x, t, cache=cache)
    assert field.estimated_error is not None
    if name != 'burgers':
        assert field.estimated_error < Config.REFERENCE_ERROR_TOLERANCE
    cached = cache.load(cache.key(spec, x, t))
    assert cached.estimated_error == field.estimated_error, "the estimate is stored with the cached field"


def test_large_error_estimate_is_flagged(monkeypatch, capsys):
    monkeypatch.setattr(Config, 'REFERENCE_ERROR_TOLERANCE', 1e-30)
    field = compute_reference('seir', None, np.linspace(0.0, 0.5, 6))
    assert field.estimated_error is not None
    assert '[WARNING] seir rk45 reference estimated error' in capsys.readouterr().out
