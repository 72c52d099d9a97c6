"""Acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL`` line (also collected in the
terminal summary) and asserts the criterion at its stated tolerance. The
SER sweeps for criteria 7-10 are computed once per module; they take a few
minutes on one core.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from gmep.channel import sample_batch, sample_instance
from gmep.constellation import SUPPORTED_ORDERS, build_constellation
from gmep.detectors import (
    GmepConfig,
    ep_detect,
    gmep_detect,
    lmmse_detect,
    mixture_cavity,
    mixture_joint,
    mixture_node_cavity,
)
from gmep.harness import DetectorSpec, SweepConfig, format_csv, gain_at_ser, run_sweep, snr_at_ser
from gmep.harness import cli
from gmep.messages import (
    GaussianMsg,
    MixtureMsg,
    gaussian_divide,
    mil_precision,
    moment_match_discrete,
    project_mixture,
)
from gmep.oracle import quadrature_cavity

from conftest import ACCEPTANCE_LINES

mpmath.mp.dps = 40


def record(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES[num] = line
    assert ok, line


def rel_err(got, ref, floor=0.0):
    return abs(got - ref) / max(abs(ref), floor)


# ---------------------------------------------------------------------------
# 1. message algebra against arbitrary-precision brute force
# ---------------------------------------------------------------------------


def _mp_moment_match(t, h2, points):
    t, h2 = mpmath.mpf(t), mpmath.mpf(h2)
    w = [mpmath.exp(-((mpmath.mpf(a) - t) ** 2) / (2 * h2)) for a in points]
    z = mpmath.fsum(w)
    mean = mpmath.fsum(wi * mpmath.mpf(a) for wi, a in zip(w, points)) / z
    var = mpmath.fsum(wi * (mpmath.mpf(a) - mean) ** 2 for wi, a in zip(w, points)) / z
    return float(mean), float(var)


def _mp_project(w, m, v):
    w = [mpmath.mpf(x) for x in w]
    m = [mpmath.mpf(x) for x in m]
    v = [mpmath.mpf(x) for x in v]
    mean = mpmath.fsum(a * b for a, b in zip(w, m))
    var = mpmath.fsum(a * (c + (b - mean) ** 2) for a, b, c in zip(w, m, v))
    return float(mean), float(var)


def test_criterion_01_message_algebra():
    rng = np.random.default_rng(101)
    cases = 1000
    worst = {"moment_match": 0.0, "project": 0.0, "divide": 0.0}
    start = time.perf_counter()
    for _ in range(cases):
        c = build_constellation(int(rng.choice(SUPPORTED_ORDERS)), float(rng.uniform(0.5, 2.0)))
        a = c.real_points
        t = rng.uniform(1.3 * a[0], 1.3 * a[-1])
        h2 = c.spacing**2 * 10 ** rng.uniform(-2, 1)
        _, g = moment_match_discrete(GaussianMsg.from_moments(t, h2), c)
        m_ref, v_ref = _mp_moment_match(t, h2, a)
        worst["moment_match"] = max(
            worst["moment_match"], rel_err(float(g.mean), m_ref, 1e-3 * c.spacing), rel_err(float(g.var), v_ref)
        )

        K = int(rng.integers(1, 7))
        w = rng.dirichlet(np.ones(K))
        means = rng.normal(scale=2.0, size=K)
        vars_ = rng.uniform(0.01, 2.0, K)
        g = project_mixture(w, means, vars_)
        m_ref, v_ref = _mp_project(w, means, vars_)
        worst["project"] = max(worst["project"], rel_err(float(g.mean), m_ref, 1e-3), rel_err(float(g.var), v_ref))

        num = GaussianMsg.from_moments(rng.normal(), 10 ** rng.uniform(-2, 1))
        den = GaussianMsg.from_moments(rng.normal(), 10 ** rng.uniform(-2, 1))
        r = gaussian_divide(num, den)
        lam_ref = mpmath.mpf(float(num.lam)) - mpmath.mpf(float(den.lam))
        gam_ref = mpmath.mpf(float(num.gamma)) - mpmath.mpf(float(den.gamma))
        errs = [rel_err(float(r.lam), float(lam_ref)), rel_err(float(r.gamma), float(gam_ref), 1e-12)]
        if lam_ref > 0:
            errs += [rel_err(float(r.var), float(1 / lam_ref)), rel_err(float(r.mean), float(gam_ref / lam_ref), 1e-12)]
        worst["divide"] = max(worst["divide"], *errs)
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-9 for v in worst.values()) and elapsed < 10.0
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    record(1, ok, f"{cases} cases each; {detail}; {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 2. matrix inversion lemma
# ---------------------------------------------------------------------------


def test_criterion_02_mil_identity():
    rng = np.random.default_rng(202)
    worst, done, largest = 0.0, 0, 0
    while done < 1000:
        n = int(rng.integers(1, 13))
        m = int(rng.integers(n, n + 5))
        H_c = (rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))) / np.sqrt(2)
        H = np.block([[H_c.real, -H_c.imag], [H_c.imag, H_c.real]])
        N = 2 * n
        lam = rng.uniform(0.5, 5.0, N)
        s2 = 10 ** rng.uniform(-3, 0)
        G = H.T @ H
        if np.linalg.cond(G) > 1e6:
            continue
        Sigma = np.linalg.inv(G / s2 + np.diag(lam))
        direct = np.linalg.inv(np.diag(1.0 / lam) + s2 * np.linalg.inv(G))
        P = mil_precision(lam, Sigma)
        worst = max(worst, np.linalg.norm(P - direct) / np.linalg.norm(direct))
        largest = max(largest, n)
        done += 1
    record(2, worst <= 1e-8, f"{done} instances (n up to {largest}); max relative Frobenius error {worst:.1e}")


# ---------------------------------------------------------------------------
# 3. EP with L = 0 is LMMSE
# ---------------------------------------------------------------------------


def test_criterion_03_ep_l0_is_lmmse():
    rng = np.random.default_rng(303)
    mismatched, worst = 0, 0.0
    for k in range(1000):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(n, n + 5))
        c = build_constellation(int(rng.choice(SUPPORTED_ORDERS)))
        inst = sample_instance(n, m, c, float(rng.uniform(0, 40)), 303, trial=k)
        a = ep_detect(inst, c, L=0)
        b = lmmse_detect(inst, c)
        mismatched += int(not np.array_equal(a.hard_symbols, b.hard_symbols))
        scale = max(1.0, np.max(np.abs(b.state.joint_mean)))
        worst = max(worst, np.max(np.abs(a.state.joint_mean - b.state.joint_mean)) / scale)
    ok = mismatched == 0 and worst <= 1e-12
    record(3, ok, f"1000 instances; {mismatched} hard-decision mismatches; max joint-mean difference {worst:.1e}")


# ---------------------------------------------------------------------------
# 4. GMEP reduces to EP when no prior is improper
# ---------------------------------------------------------------------------


def test_criterion_04_gmep_reduces_to_ep():
    c = build_constellation(16)
    cfg = GmepConfig(iterations=2, beta=0.8)
    clean_total, differing, mixed_total = 0, 0, 0
    for k, snr in enumerate((14.0, 18.0, 22.0, 26.0, 30.0, 34.0)):
        inst = sample_batch(4, 4, c, snr, 404 + k, np.arange(800))
        g = gmep_detect(inst, c, cfg)
        e = ep_detect(inst, c, L=2)
        clean = g.diagnostics.improper_counts.sum(axis=1) == 0
        mixed_total += int((~clean).sum())
        clean_total += int(clean.sum())
        same = (
            np.all(g.hard_symbols == e.hard_symbols, axis=1)
            & np.all(g.soft_posteriors.probs == e.soft_posteriors.probs, axis=(1, 2))
            & np.all(g.state.cavity_mean == e.state.cavity_mean, axis=1)
            & np.all(g.state.cavity_var == e.state.cavity_var, axis=1)
        )
        differing += int((clean & ~same).sum())
    ok = clean_total >= 1000 and differing == 0
    record(4, ok, f"{clean_total} improper-free instances ({mixed_total} others in the same batches); "
                  f"{differing} not bit-identical")


# ---------------------------------------------------------------------------
# 5. mixture cavities against quadrature
# ---------------------------------------------------------------------------


def test_criterion_05_quadrature():
    c = build_constellation(4)
    rng = np.random.default_rng(505)
    s0 = GmepConfig().resolved_sigma0_sq(c.spacing)
    worst_gauss, worst_node = 0.0, 0.0
    for k in range(50):
        snr = float(rng.uniform(4.0, 16.0))
        inst = sample_instance(2, 2, c, snr, 505, trial=k)
        N = 4
        lam = rng.uniform(1.0, 4.0, N)
        gam = rng.normal(scale=0.5, size=N) * lam
        s = int(rng.integers(N))
        mix = MixtureMsg(rng.uniform(0.2, 1.0, 2), c.real_points, s0)
        priors = [GaussianMsg.from_natural(gam[j], lam[j]) for j in range(N)]
        priors[s] = mix
        mj = mixture_joint(inst, gam, lam, {s: mix})
        for i in range(N):
            q = quadrature_cavity(inst, priors, i)
            if i == s:
                got = mixture_node_cavity(inst, gam, lam, {s: mix}, s, energy=c.energy)
            else:
                got = mixture_cavity(mj, i)
            err = max(abs(float(got.mean) - float(q.mean)), abs(float(got.var) - float(q.var)))
            if i == s:
                worst_node = max(worst_node, err)
            else:
                worst_gauss = max(worst_gauss, err)
    ok = worst_gauss <= 1e-5 and worst_node <= 1e-5
    record(5, ok, f"50 instances; max abs moment error: mixture_cavity {worst_gauss:.1e}, "
                  f"mixture_node_cavity {worst_node:.1e}")


# ---------------------------------------------------------------------------
# 6. MAP is not beaten
# ---------------------------------------------------------------------------


def test_criterion_06_map_optimality():
    pilot = SweepConfig(
        n=2, m=2, qam_order=4, snr_db=tuple(range(8, 23, 2)), detectors=(DetectorSpec("ep", L=2),),
        trials=4000, seed=606,
    )
    snr_star = round(snr_at_ser(run_sweep(pilot).curve("ep"), 1e-2), 1)
    dets = (
        DetectorSpec("zf"), DetectorSpec("lmmse"), DetectorSpec("ep", L=1), DetectorSpec("ep", L=2),
        DetectorSpec("gmep", L=1), DetectorSpec("gmep", L=2, beta=0.8), DetectorSpec("map"),
    )
    res = run_sweep(SweepConfig(n=2, m=2, qam_order=4, snr_db=(snr_star,), detectors=dets, trials=10_000, seed=607))
    p_map = res.point("map", snr_star).ser
    margins = {}
    for d in dets[:-1]:
        pt = res.point(d.name, snr_star, d.L)
        sigma = math.sqrt(pt.ser * (1 - pt.ser) / pt.symbols)
        margins[f"{d.name}{d.L or ''}"] = (pt.ser, pt.ser + 3 * sigma - p_map)
    ok = all(m >= 0 for _, m in margins.values())
    worst = min(margins, key=lambda k: margins[k][1])
    record(6, ok, f"2x2 QPSK at {snr_star} dB, 1e4 trials: MAP SER {p_map:.2e}, EP(L=2) SER "
                  f"{margins['ep2'][0]:.2e}; tightest margin {worst} {margins[worst][1]:+.1e}")


# ---------------------------------------------------------------------------
# 7-10. SER sweeps
# ---------------------------------------------------------------------------

SER_LO, SER_HI = 1e-3, 1e-1
S0_VARIANTS = {"gmep_s0lo": 1e-5, "gmep_s0hi": 1e-3}


def _gmep_specs():
    specs = [DetectorSpec("gmep", L=1, beta=1.0), DetectorSpec("gmep", L=2, beta=0.8)]
    for label, scale in S0_VARIANTS.items():
        specs += [
            DetectorSpec("gmep", L=1, beta=1.0, sigma0_scale=scale, label=label),
            DetectorSpec("gmep", L=2, beta=0.8, sigma0_scale=scale, label=label),
        ]
    return tuple(specs)


@pytest.fixture(scope="module")
def fig3():
    dets = (
        DetectorSpec("zf"), DetectorSpec("lmmse"),
        DetectorSpec("ep", L=1), DetectorSpec("ep", L=2), DetectorSpec("ep", L=3),
    ) + _gmep_specs()
    cfg = SweepConfig(
        n=8, m=8, qam_order=64, snr_db=tuple(range(24, 41, 2)), detectors=dets,
        symbols_per_point=100_000, seed=2026,
    )
    return run_sweep(cfg)


@pytest.fixture(scope="module")
def fig4():
    dets = (DetectorSpec("ep", L=1), DetectorSpec("ep", L=2)) + _gmep_specs()
    cfg = SweepConfig(
        n=12, m=12, qam_order=256, snr_db=tuple(range(33, 52, 3)), detectors=dets,
        symbols_per_point=100_000, seed=2026,
    )
    return run_sweep(cfg)


def _gain(res, a, b, L, target=1e-2):
    return gain_at_ser(res.curve(a, L), res.curve(b, L), target)


def test_criterion_07_fig3(fig3):
    res = fig3
    chain = [(("zf", 0), ("lmmse", 0))]
    chain += [(("lmmse", 0), ("ep", L)) for L in (1, 2, 3)]
    chain += [(("ep", L), ("gmep", L)) for L in (1, 2)]
    violations, checked = [], 0
    for worse, better in chain:
        for snr in res.config.snr_db:
            pw = res.point(worse[0], snr, worse[1]).ser
            pb = res.point(better[0], snr, better[1]).ser
            if SER_LO <= pw <= SER_HI and SER_LO <= pb <= SER_HI:
                checked += 1
                if not pw > pb:
                    violations.append(f"{worse}>{better}@{snr:g}dB")
    g1 = _gain(res, "gmep", "ep", 1)
    g2 = _gain(res, "gmep", "ep", 2)
    ok = not violations and checked > 0 and abs(g1 - 2.5) <= 1.0 and abs(g2 - 1.5) <= 0.75
    record(7, ok, f"8x8 64-QAM: ordering {checked} comparisons, {len(violations)} violations "
                  f"{violations[:3]}; gain L=1 {g1:.2f} dB (2.5+-1.0), L=2 {g2:.2f} dB (1.5+-0.75)")


def test_fig3_ep3_between_ep2_and_gmep2(fig3):
    """EP with three iterations falls between EP and GMEP with two."""
    res = fig3
    for snr in res.config.snr_db:
        e2, e3 = res.point("ep", snr, 2).ser, res.point("ep", snr, 3).ser
        g2 = res.point("gmep", snr, 2).ser
        if SER_LO <= e3 <= SER_HI:
            assert g2 < e3 <= e2, (snr, e2, e3, g2)


def test_criterion_08_fig4(fig4):
    res = fig4
    g1 = _gain(res, "gmep", "ep", 1)
    g2 = _gain(res, "gmep", "ep", 2)
    outside, checked = [], 0
    for snr in res.config.snr_db:
        ref = res.point("ep", snr, 2)
        if SER_LO <= ref.ser <= SER_HI:
            checked += 1
            lo, hi = ref.ci
            p = res.point("gmep", snr, 1).ser
            if not lo <= p <= hi:
                outside.append(f"{snr:g}dB: {p:.2e} vs [{lo:.2e},{hi:.2e}]")
    ok = abs(g1 - 3.0) <= 1.0 and abs(g2 - 2.0) <= 1.0 and checked > 0 and not outside
    record(8, ok, f"12x12 256-QAM: gain L=1 {g1:.2f} dB (3+-1), L=2 {g2:.2f} dB (2+-1); GMEP L=1 outside "
                  f"EP L=2 95% band at {len(outside)}/{checked} points {outside}")


def test_criterion_09_fig5(fig4):
    res = fig4
    pts = [res.point("gmep", snr, 2) for snr in res.config.snr_db]
    min_count = 30
    problems = []
    for it in (0, 1):
        stats = [(p.snr_db, *p.mixture_order(it)) for p in pts]
        stats = [s for s in stats if s[3] >= min_count]
        for (s_a, m_a, se_a, _), (s_b, m_b, se_b, _) in zip(stats, stats[1:]):
            if m_b > m_a + 1.96 * math.hypot(se_a, se_b):
                problems.append(f"iter{it + 1} rises {s_a:g}->{s_b:g}dB ({m_a:.2f}->{m_b:.2f})")
    for p in pts:
        m1, _, n1 = p.mixture_order(0)
        m2, _, n2 = p.mixture_order(1)
        if n1 >= min_count and n2 >= min_count and not m2 < m1:
            problems.append(f"iter2>=iter1 at {p.snr_db:g}dB ({m2:.2f} vs {m1:.2f})")
    target = 2e-3
    op = min(pts, key=lambda p: abs(math.log(max(p.ser, 1e-12) / target)))
    m_op = op.mean_mixture_order
    ok = not problems and abs(m_op - 2.0) <= 1.0
    table = "; ".join(
        f"{p.snr_db:g}dB " + "/".join(f"{p.mixture_order(i)[0]:.2f}" for i in (0, 1)) for p in pts
    )
    record(9, ok, f"mean M (iter1/iter2) {table}; at {op.snr_db:g} dB (SER {op.ser:.1e}) M={m_op:.2f} (2+-1); "
                  f"{len(problems)} trend violations {problems}")


def test_criterion_10_sigma0_sensitivity(fig3, fig4):
    shifts = []
    for name, res in (("8x8", fig3), ("12x12", fig4)):
        for L in (1, 2):
            base = _gain(res, "gmep", "ep", L)
            for label in S0_VARIANTS:
                g = gain_at_ser(res.curve(label, L), res.curve("ep", L), 1e-2)
                shifts.append((abs(g - base), f"{name} L={L} {label}: {g:.2f} vs {base:.2f}"))
    worst = max(shifts)
    ok = worst[0] < 0.5
    record(10, ok, f"sigma0^2 over two decades ({'/'.join(f'{v:g}' for v in S0_VARIANTS.values())} x spacing^2): "
                   f"largest gain shift {worst[0]:.2f} dB ({worst[1]})")


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    dets = (DetectorSpec("lmmse"), DetectorSpec("ep", L=2), DetectorSpec("gmep", L=2, beta=0.8))
    base = dict(n=4, m=4, qam_order=16, snr_db=(10.0, 14.0), detectors=dets, trials=600, seed=1111, chunk_size=64)
    outputs = {}
    for tag, workers in (("serial_a", 1), ("serial_b", 1), ("two", 2), ("three", 3)):
        outputs[tag] = format_csv(run_sweep(SweepConfig(workers=workers, **base))).encode()
    cfg_path = tmp_path / "det.yaml"
    cfg_path.write_text(
        "n: 4\nm: 4\nqam_order: 16\nsnr_db: [10, 14]\ntrials: 600\nseed: 1111\nchunk_size: 64\n"
        "detectors: [lmmse, 'ep:L=2', 'gmep:L=2,beta=0.8']\n"
    )
    for workers in ("1", "2"):
        out = tmp_path / f"cli_{workers}.csv"
        assert cli.main(["sweep", "--config", str(cfg_path), "--out", str(out), "--workers", workers]) == 0
        outputs[f"cli_{workers}"] = out.read_bytes()
    reference = outputs["serial_a"]
    differing = [k for k, v in outputs.items() if v != reference]
    record(11, not differing, f"{len(outputs)} reruns (1-3 worker processes, API and CLI); "
                              f"{len(differing)} differ from the first {differing}")
