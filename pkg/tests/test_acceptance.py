"""Acceptance criteria 1-10, one test each; every test prints a PASS/FAIL line."""

import filecmp
import itertools
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from beamlab import design as D
from beamlab import experiments as E
from beamlab import fisher as F
from beamlab import geometry, hardware
from beamlab import synthesis as S

from conftest import P_DES, P_TX, five_point, random_fims, random_point, simplex_grid_best

_runs = {}


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    """Run a bundled preset once per session; returns ``(result, seconds, output dir)``."""
    root = tmp_path_factory.mktemp("presets")

    def get(name):
        if name not in _runs:
            cfg = E.load_config(name).with_output_dir(root / name)
            t0 = time.perf_counter()
            result = E.run(cfg)
            _runs[name] = (result, time.perf_counter() - t0, root / name)
        return _runs[name]

    return get


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return emit


def test_criterion_01_main_and_secondary_lobes(preset_run, report):
    res, seconds, _ = preset_run("table2")
    m = res.metrics
    peaks = {"unconstrained": (60.2, 0.1), "K2": (58.2, 1.0), "K1": (55.2, 1.0), "V": (54.2, 1.5)}
    lobes = {"K1": 0.9, "K2": 2.37, "V": 2.3}
    checks = [abs(m[t].main_peak_db - v) <= tol for t, (v, tol) in peaks.items()]
    checks += [m[t].secondary_peak_direction is not None
               and abs(m[t].secondary_peak_direction - v) <= 0.15 for t, v in lobes.items()]
    checks.append(seconds <= 120.0)
    detail = ", ".join(
        f"{t} {m[t].main_peak_db:.2f} dB"
        + ("" if m[t].secondary_peak_direction is None else f" / lobe {m[t].secondary_peak_direction:.3f} rad")
        for t in peaks
    ) + f"; {seconds:.1f} s for all four tables"
    assert report(1, all(checks), detail)


def _second_peak_gap(gain):
    """dB gap between the global maximum and the highest local maximum outside its lobe."""
    main = gain.max()
    lobe, _ = ndimage.label(gain >= main - 3.0103)
    main_label = lobe[np.unravel_index(np.argmax(gain), gain.shape)]
    is_peak = gain == ndimage.maximum_filter(gain, size=3, mode="nearest")
    others = gain[is_peak & (lobe != main_label)]
    return main - others.max(), np.unravel_index(np.argmax(gain), gain.shape)


def test_criterion_02_grating_lobes(preset_run, report):
    res, _, _ = preset_run("fig4")
    theta, phi, k1 = res.patterns_2d[("steering", "K1")]
    _, _, unc = res.patterns_2d[("steering", "unconstrained")]
    gap_k1, at = _second_peak_gap(k1)
    gap_unc, _ = _second_peak_gap(unc)
    on_target = abs(theta[at[1]] - np.pi / 2) < 0.05 and abs(phi[at[0]] - np.pi / 2) < 0.05
    ok = gap_k1 <= 6.0 and gap_unc >= 12.0 and on_target
    assert report(2, ok, f"K1 second lobe {gap_k1:.2f} dB below main (need <= 6); "
                         f"unconstrained {gap_unc:.2f} dB (need >= 12)")


def test_criterion_03_derivative_null(preset_run, report):
    res, _, _ = preset_run("fig3")
    depths = {}
    for t in ("unconstrained", "K2", "K1", "V"):
        pat = res.patterns[("derivative_theta", t, "theta")]
        i = int(np.argmin(np.abs(pat[:, 0] - np.pi / 2)))
        depths[t] = pat[:, 1].max() - pat[i, 1]
    ok = all(d >= 30.0 for d in depths.values())
    assert report(3, ok, ", ".join(f"{t} {d:.1f} dB" for t, d in depths.items()))


def test_criterion_04_derivatives_vs_finite_differences(report):
    rng = np.random.default_rng(2024)
    array = geometry.RisArray.half_wavelength(32, 32, 28e9)
    worst = {"steering": 0.0, "mu": 0.0, "jacobian": 0.0}
    n = 100
    for _ in range(n):
        s = random_point(rng)
        p = geometry.sph_to_cart(s)
        analytic = geometry.steering_derivatives(array, p)
        omega = np.exp(2j * np.pi * rng.uniform(size=(1024, 3)))
        P = omega * geometry.steering_vector(array, P_TX)[:, None]
        ch = F.ChannelState(F.channel_gain(P_TX, np.zeros(3), p, 28e9), p, P_TX)
        _, d_mu = F.mu_and_derivatives(array, P, ch)
        for k in range(3):
            h = 1e-4 * s[0] if k == 0 else 1e-5

            def a_of(x, k=k):
                t = s.copy()
                t[k] = x
                return geometry.steering_vector(array, geometry.sph_to_cart(t))

            num = five_point(a_of, s[k], h)
            worst["steering"] = max(worst["steering"],
                                    np.linalg.norm(num - analytic[k]) / np.linalg.norm(analytic[k]))
            num_mu = ch.alpha * P.T @ num
            worst["mu"] = max(worst["mu"], np.linalg.norm(num_mu - d_mu[:, k]) / np.linalg.norm(d_mu[:, k]))
        for k, z in ((3, 1.0), (4, 1j)):
            def mu_of(x, z=z):
                return (ch.alpha + x * z) * P.T @ geometry.steering_vector(array, p)

            num = five_point(mu_of, 0.0, 1e-3 * abs(ch.alpha))
            worst["mu"] = max(worst["mu"], np.linalg.norm(num - d_mu[:, k]) / np.linalg.norm(d_mu[:, k]))
        C = geometry.jacobian_sph_wrt_cart(p)
        cols = []
        for j in range(3):
            e = np.eye(3)[j] * s[0]
            cols.append(five_point(lambda t, e=e: np.array(geometry.cart_to_sph(p + t * e)), 0.0, 1e-5) / s[0])
        num_C = np.column_stack(cols)
        worst["jacobian"] = max(worst["jacobian"],
                                np.linalg.norm(num_C - C[:3, :3]) / np.linalg.norm(C[:3, :3]))
    ok = all(v < 1e-5 for v in worst.values())
    assert report(4, ok, f"{n} instances, worst relative errors "
                         + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_05_projection_oracle(report):
    t0 = time.perf_counter()
    array = geometry.RisArray.half_wavelength(2, 4, 28e9)
    table = hardware.get_table("K1")
    grid = S.default_slice_grid(geometry.cart_to_sph(P_DES))
    B = np.vstack([S.build_B_matrix(array, grid.points(a), P_TX) for a in S.SLICE_AXES])
    g = B @ S.ideal_profile(S.DesiredBeam("steering", P_DES, P_TX), array)
    res = S.synthesize_full(g, B, table)
    final = float(np.sum(np.abs(g - res.scale * (B @ res.omega)) ** 2))
    profiles = np.array(list(itertools.product(table.values, repeat=8))).T
    BW = B @ profiles
    s = np.sum(BW.conj() * g[:, None], axis=0) / np.sum(np.abs(BW) ** 2, axis=0)
    best = float(np.min(np.sum(np.abs(g[:, None] - s * BW) ** 2, axis=0)))
    seconds = time.perf_counter() - t0
    ratio = final / best
    ok = best * (1 - 1e-12) <= final <= 1.05 * best and seconds <= 10.0
    assert report(5, ok, f"objective {final:.6g} vs exhaustive {best:.6g} (ratio {ratio:.4f}), {seconds:.2f} s")


def test_criterion_06_allocation_oracle(report):
    rng = np.random.default_rng(6)
    T = 40
    worst, t_opt, t_grid = 0.0, 0.0, 0.0
    for _ in range(20):
        fims = random_fims(rng)
        t0 = time.perf_counter()
        lam = D.optimize_allocation(fims, T)
        peb_opt = D.allocation_peb(fims, lam.weights)
        t_opt += time.perf_counter() - t0
        t0 = time.perf_counter()
        peb_grid, _ = simplex_grid_best(fims, T)
        t_grid += time.perf_counter() - t0
        worst = max(worst, abs(peb_opt - peb_grid) / peb_grid)
    ok = worst <= 0.01 and t_opt + t_grid <= 60.0
    assert report(6, ok, f"20 instances, worst PEB mismatch {100 * worst:.3f} %, "
                         f"optimizer {t_opt:.2f} s, grid {t_grid:.1f} s")


def test_criterion_07_fim_additivity(report):
    array = geometry.RisArray.half_wavelength(32, 32, 28e9)
    p = np.array([-1.0, 1.0, 1.0])
    ch = F.ChannelState(F.channel_gain(P_TX, np.zeros(3), p, 28e9), p, P_TX)
    cfg = F.SignalConfig()
    basis = D.build_beam_basis(array, p)
    fims = D.per_beam_fims(basis, array, ch, cfg)
    alloc = D.optimize_allocation(fims, 40)
    counts = D.time_sharing_counts(fims, alloc, 40)
    errors = {}
    a_bs = geometry.steering_vector(array, P_TX)
    for table in (hardware.UNCONSTRAINED, hardware.get_table("K2")):
        P = D.time_sharing_precoder(basis, alloc, table, array, P_TX, counts=counts)
        J = F.compute_peb(array, P, ch, cfg).fim_cartesian
        prof = D.beam_profiles(basis, table, array, P_TX)
        Jk = np.stack([D.single_transmission_fim(array, prof[:, k] * a_bs, ch, cfg) for k in range(4)])
        expected = np.tensordot(counts.astype(float), Jk, axes=1)
        errors[table.name] = np.linalg.norm(J - expected) / np.linalg.norm(expected)
    ok = all(e <= 1e-10 for e in errors.values())
    assert report(7, ok, f"counts {counts.tolist()}, relative error "
                         + ", ".join(f"{k} {v:.1e}" for k, v in errors.items()))


def test_criterion_08_distance_trends(preset_run, report):
    res, seconds, _ = preset_run("fig5")
    curves = res.curves
    r = np.array(res.curves[("optimal", "unconstrained")][0])
    tables = ["unconstrained", "K2", "K1", "V"]
    a = all(np.all(curves[("optimal", t)][1] < curves[("random", t)][1]) for t in tables)
    far = r >= 3
    opt = np.array([curves[("optimal", t)][1][far] for t in tables])
    inversions = int(np.sum(opt[1:] < opt[:-1]))
    b = inversions <= 1
    window = (r >= 1) & (r <= 10)
    non_monotone = [k for k, (_, v) in curves.items() if np.any(np.diff(v[window]) < 0)]
    c = not non_monotone
    at = int(np.argmin(np.abs(np.sqrt(3) * r - 1.7)))
    peb_17 = curves[("optimal", "unconstrained")][1][at]
    d = 1.3e-3 / 2 <= peb_17 <= 1.3e-3 * 2
    ok = a and b and c and d and seconds <= 600.0
    assert report(8, ok, f"(a) {a}; (b) {inversions} inversions; (c) non-monotone {non_monotone or 'none'}; "
                         f"(d) PEB at rho={np.sqrt(3) * r[at]:.2f} m is {peb_17:.3g} m; {seconds:.0f} s")


def test_criterion_09_angle_trends(preset_run, report):
    failures, ratios = [], []
    for name in ("fig6", "fig7"):
        res, _, _ = preset_run(name)
        for (label, table), (x, peb) in res.curves.items():
            span = x[-1] - x[0]
            mid = np.abs(x - 0.5 * (x[0] + x[-1])) <= span / 6
            edge = (x <= x[0] + span / 6) | (x >= x[-1] - span / 6)
            if not peb[mid].min() <= peb[edge].min():
                failures.append(f"{name}:{label}/{table} ({peb[mid].min():.3g} vs {peb[edge].min():.3g})")
        small = res.curves[("directional-0.5m", "unconstrained")][1].mean()
        large = res.curves[("directional-2m", "unconstrained")][1].mean()
        ratios.append(small <= large)
        if small > large:
            failures.append(f"{name}: directional 0.5 m mean {small:.3g} > 2 m mean {large:.3g}")
    ok = not failures
    detail = "all curves inner <= edge, 0.5 m sphere better" if ok else "; ".join(failures)
    assert report(9, ok, detail)


def _tree(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_criterion_10_determinism(preset_run, report, tmp_path):
    mismatched = []
    for name in E.PRESETS:
        _, _, first = preset_run(name)
        cfg = E.load_config(name).with_output_dir(tmp_path / name)
        E.run(cfg)
        files = _tree(first)
        if files != _tree(tmp_path / name):
            mismatched.append(f"{name}: file lists differ")
            continue
        _, bad, errors = filecmp.cmpfiles(first, tmp_path / name, [str(f) for f in files], shallow=False)
        mismatched += [f"{name}/{f}" for f in bad + errors]
    ok = not mismatched
    assert report(10, ok, "all presets byte-identical on rerun" if ok else ", ".join(mismatched))
