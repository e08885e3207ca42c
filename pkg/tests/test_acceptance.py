"""Release acceptance gate: twelve criteria, one test (and one PASS/FAIL
line) each.

Criteria 1-8 are fast self-contained property checks. Criteria 9-12 run the
full deskcity benchmark pipeline (generate + sweep + refine + a second sweep
for the determinism check) once, in a session-scoped fixture; expect the
whole module to take on the order of fifteen minutes.

Run `pytest -v tests/test_acceptance.py` for the per-criterion verdict
lines; add `-s` to also see the measured margins.
"""

import csv
import hashlib
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from twinsense.channel import (ChannelSample, Dataset, array_response,
                               assemble_channel, assemble_channel_factored,
                               load_dataset)
from twinsense.csense import (MeasurementMatrix, grid_dictionary, omp,
                              reconstruct_channel, sensing_operator)
from twinsense.harness import (cmd_generate, cmd_refine, cmd_sweep,
                               load_config)
from twinsense.learn import (TrainConfig, backward, batch_loss, init_model,
                             load_checkpoint, train)
from twinsense.precoding import (dft_codebook, exhaustive_search, label_beam,
                                 optimal_baseband, spectral_efficiency)
from twinsense.raytrace import (PropagationPath, RayConfig, mirror_point,
                                trace_paths)
from twinsense.scene import BaseStation, Scene, UserGrid

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "deskcity.json"


def report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"\n[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
          f"{' (' + detail + ')' if detail else ''}")
    assert ok, f"criterion {num:02d} {name}: {detail}"


def crandn(rng, *shape):
    return (rng.standard_normal(shape)
            + 1j * rng.standard_normal(shape)) / math.sqrt(2)


# ---------------------------------------------------------------------------
# 1. Measurement vectorization identity
# ---------------------------------------------------------------------------

def test_criterion_01_kronecker_identity():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        n_r, n_t = int(rng.integers(1, 5)), int(rng.integers(1, 7))
        m_r, m_t = int(rng.integers(1, n_r + 1)), int(rng.integers(1, n_t + 1))
        mm = MeasurementMatrix(P=crandn(rng, n_t, m_t), Q=crandn(rng, n_r, m_r),
                               power=float(rng.uniform(0.1, 10.0)))
        H = crandn(rng, n_r, n_t)
        Y = math.sqrt(mm.power) * mm.Q.conj().T @ H @ mm.P
        via_op = sensing_operator(mm) @ H.flatten(order="F")
        err = (np.linalg.norm(Y.flatten(order="F") - via_op)
               / np.linalg.norm(Y))
        worst = max(worst, err)
    wall = time.time() - t0
    report(1, "kronecker-identity", worst <= 1e-12 and wall < 5.0,
           f"worst rel err {worst:.2e}, {wall:.1f}s")


# ---------------------------------------------------------------------------
# 2. Channel-form equivalence (sum of rank-one terms vs factored product)
# ---------------------------------------------------------------------------

def test_criterion_02_channel_form_equivalence():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(1000):
        n_r, n_t = int(rng.integers(1, 5)), int(rng.integers(2, 17))
        bore = float(rng.uniform(-np.pi, np.pi))
        paths = [PropagationPath(gain=complex(crandn(rng)),
                                 aod_rad=float(rng.uniform(-np.pi, np.pi)),
                                 aoa_rad=float(rng.uniform(-np.pi, np.pi)),
                                 length_m=float(rng.uniform(1, 100)),
                                 order=int(rng.integers(0, 3)))
                 for _ in range(int(rng.integers(1, 8)))]
        H = assemble_channel(paths, n_t, n_r, bs_boresight_rad=bore)
        A_r, A_t, alpha = assemble_channel_factored(paths, n_t, n_r,
                                                    bs_boresight_rad=bore)
        H2 = A_r @ np.diag(alpha) @ A_t.conj().T
        err = np.linalg.norm(H - H2) / np.linalg.norm(H)
        worst = max(worst, err)
    report(2, "channel-form-equivalence", worst <= 1e-12,
           f"worst rel Frobenius err {worst:.2e}")


# ---------------------------------------------------------------------------
# 3. Analytic gradients vs central finite differences
# ---------------------------------------------------------------------------

def test_criterion_03_gradient_correctness():
    rng = np.random.default_rng(103)
    t0 = time.time()
    eps, worst = 1e-6, 0.0
    for trial in range(50):
        n_t = int(rng.integers(4, 9))
        m_t = int(rng.integers(2, 5))
        model = init_model(n_t, m_t, 6, 6, 4, seed=trial)
        Hc = crandn(rng, 3, n_t)
        labels = rng.integers(0, 4, size=3)
        grads, _ = backward(model, Hc, labels)

        def fd(param_view, analytic_view):
            nonlocal worst
            it = np.nditer(param_view, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = param_view[idx]
                param_view[idx] = orig + eps
                lp = batch_loss(model, Hc, labels)
                param_view[idx] = orig - eps
                lm = batch_loss(model, Hc, labels)
                param_view[idx] = orig
                num = (lp - lm) / (2 * eps)
                an = analytic_view[idx]
                rel = abs(num - an) / max(abs(num), abs(an), 1e-4)
                worst = max(worst, rel)

        for name, p in model.real_params():
            fd(p, grads[name])
        fd(model.P_enc.view(np.float64),
           np.ascontiguousarray(grads["P_enc"]).view(np.float64))
    wall = time.time() - t0
    report(3, "gradient-correctness", worst <= 1e-4 and wall < 60.0,
           f"worst rel err {worst:.2e}, {wall:.1f}s")


# ---------------------------------------------------------------------------
# 4. Constant-modulus invariant over a long training run
# ---------------------------------------------------------------------------

def test_criterion_04_constant_modulus_invariant():
    rng = np.random.default_rng(104)
    n_t = 8
    cb = dft_codebook(n_t)
    samples = []
    for _ in range(160):
        theta = float(rng.uniform(0, np.pi))
        h = (array_response(theta, n_t).conj()
             * complex(crandn(rng))).reshape(1, -1)
        samples.append(ChannelSample(h=h, label_tx=label_beam(h[0], cb)))
    ds = Dataset(samples=samples, meta={})
    model = init_model(n_t, 2, 16, 16, n_t, seed=0)
    cfg = TrainConfig(lr=1e-3, batch_size=16, epochs=1000, seed=0)
    model, history = train(model, ds, None, cfg)
    ok = history.steps >= 10000 and history.max_modulus_dev <= 1e-12
    report(4, "constant-modulus-invariant", ok,
           f"{history.steps} steps, max dev {history.max_modulus_dev:.2e}")


# ---------------------------------------------------------------------------
# 5. OMP exact recovery, noiseless on-grid 3-sparse
# ---------------------------------------------------------------------------

def test_criterion_05_omp_exact_recovery():
    n_grid, n_t, m_t = 32, 64, 16
    gd = grid_dictionary(n_grid, n_t, 1)
    t0 = time.time()

    def canon(k):
        # uniform-angle grids alias in cos: columns k and n_grid-k coincide
        return 0 if k in (0, n_grid // 2) else min(k, n_grid - k)

    successes, nmse_ok = 0, True
    for seed in range(100):
        rng = np.random.default_rng((105, seed))
        while True:
            support = rng.choice(n_grid, size=3, replace=False)
            if len({canon(int(k)) for k in support}) == 3:
                break
        coeffs = crandn(rng, 3) + 0.5  # bounded away from zero
        z_true = np.zeros(n_grid, dtype=complex)
        z_true[support] = coeffs
        h = gd.A_D @ z_true
        mm = MeasurementMatrix(P=np.exp(1j * rng.uniform(0, 2 * np.pi,
                                                         (n_t, m_t))),
                               Q=np.ones((1, 1), dtype=complex))
        Psi = sensing_operator(mm) @ gd.A_D
        y = math.sqrt(mm.power) * (h.reshape(1, -1) @ mm.P).flatten(order="F")
        z_hat = omp(y, Psi, 3, 1e-10)
        got = sorted(canon(int(k)) for k in np.flatnonzero(z_hat))
        want = sorted(canon(int(k)) for k in support)
        if got == want:
            successes += 1
            h_hat = reconstruct_channel(z_hat, gd, n_t, 1).flatten(order="F")
            nmse = (np.linalg.norm(h_hat - h) / np.linalg.norm(h)) ** 2
            nmse_ok = nmse_ok and nmse <= 1e-8
    wall = time.time() - t0
    ok = successes >= 95 and nmse_ok and wall < 30.0
    report(5, "omp-exact-recovery", ok,
           f"{successes}/100 recovered, NMSE ok={nmse_ok}, {wall:.1f}s")


# ---------------------------------------------------------------------------
# 6. SVD baseband dominates random unitary basebands
# ---------------------------------------------------------------------------

def test_criterion_06_svd_baseband_dominance():
    rng = np.random.default_rng(106)
    snr, n_s = 4.0, 2
    ok = True
    margin = np.inf
    for _ in range(200):
        H = crandn(rng, 4, 4)
        cols_t = rng.choice(4, size=2, replace=False)
        cols_r = rng.choice(4, size=2, replace=False)
        F_RF = dft_codebook(4).vectors[:, cols_t]
        W_RF = dft_codebook(4).vectors[:, cols_r]
        F_BB, W_BB = optimal_baseband(W_RF.conj().T @ H @ F_RF, F_RF, n_s)
        opt = spectral_efficiency(H, F_RF @ F_BB, W_RF @ W_BB, snr)
        best = -np.inf
        for _ in range(200):
            Q1, _ = np.linalg.qr(crandn(rng, n_s, n_s))
            Q2, _ = np.linalg.qr(crandn(rng, n_s, n_s))
            F = F_RF @ (Q1 * math.sqrt(n_s) / np.linalg.norm(F_RF @ Q1, "fro"))
            best = max(best, spectral_efficiency(H, F, W_RF @ Q2, snr))
        margin = min(margin, opt - best)
        ok = ok and opt >= best - 1e-9
    report(6, "svd-baseband-dominance", ok, f"min margin {margin:.2e}")


# ---------------------------------------------------------------------------
# 7. Exhaustive search equals independent full enumeration
# ---------------------------------------------------------------------------

def test_criterion_07_exhaustive_search_oracle():
    rng = np.random.default_rng(107)
    cb = dft_codebook(4)
    snr, matches = 5.0, 0
    for _ in range(100):
        H = crandn(rng, 4, 4)
        tx, rx, _ = exhaustive_search(H, cb, cb, snr, N_S=2, N_tRF=2, N_rRF=2)
        oracle_best, oracle_idx = -1.0, None
        for otx in itertools.combinations(range(4), 2):
            for orx in itertools.combinations(range(4), 2):
                F_RF, W_RF = cb.vectors[:, list(otx)], cb.vectors[:, list(orx)]
                F_BB, W_BB = optimal_baseband(W_RF.conj().T @ H @ F_RF,
                                              F_RF, 2)
                r = spectral_efficiency(H, F_RF @ F_BB, W_RF @ W_BB, snr)
                if r > oracle_best + 1e-12:
                    oracle_best, oracle_idx = r, (otx, orx)
        matches += int((tx, rx) == oracle_idx)
    report(7, "exhaustive-search-oracle", matches == 100,
           f"{matches}/100 exact index matches")


# ---------------------------------------------------------------------------
# 8. Ray-tracer geometry: mirror distance and free-space gain
# ---------------------------------------------------------------------------

def test_criterion_08_raytracer_geometry():
    rng = np.random.default_rng(108)
    cfg = RayConfig(max_order=1)

    def slab(x0, x1, y0, y1):
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float)

    def scene(buildings, bs):
        return Scene(name="acc", bs=BaseStation(pos=bs),
                     grid=UserGrid(origin=(-50, -50), width=100, height=100,
                                   spacing=1.0, user_height=2.0),
                     buildings=buildings, foliage=[])

    worst_len = 0.0
    for _ in range(100):
        y0 = float(rng.uniform(-30, -1))
        bs = (float(rng.uniform(-20, 20)), float(rng.uniform(5, 30)), 15.0)
        user = (float(rng.uniform(-20, 20)), float(rng.uniform(5, 30)), 2.0)
        sc = scene([slab(-200, 200, y0 - 1, y0)], bs)
        first = [p for p in trace_paths(sc, user, cfg) if p.order == 1]
        assert len(first) == 1
        img = mirror_point(bs[:2], ((-200, y0), (200, y0)))
        d2d = float(np.linalg.norm(np.asarray(user[:2]) - img))
        expected = math.hypot(d2d, bs[2] - user[2])
        worst_len = max(worst_len, abs(first[0].length_m - expected))

    worst_gain = 0.0
    lam = cfg.wavelength_m
    for _ in range(100):
        bs = (float(rng.uniform(-20, 20)), float(rng.uniform(5, 30)), 15.0)
        user = (float(rng.uniform(-20, 20)), float(rng.uniform(-30, -5)), 2.0)
        sc = scene([], bs)
        los = [p for p in trace_paths(sc, user, cfg) if p.order == 0]
        d = math.hypot(math.hypot(user[0] - bs[0], user[1] - bs[1]),
                       bs[2] - user[2])
        friis = lam / (4 * math.pi * d) * np.exp(-2j * math.pi * d / lam)
        worst_gain = max(worst_gain, abs(los[0].gain - friis) / abs(friis))
    ok = worst_len <= 1e-9 and worst_gain <= 1e-12
    report(8, "raytracer-geometry", ok,
           f"worst length err {worst_len:.2e} m, "
           f"worst gain rel err {worst_gain:.2e}")


# ---------------------------------------------------------------------------
# 9-12. deskcity benchmark pipeline
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def deskcity_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("deskcity")
    cfg = load_config(CONFIG, out_override=str(out / "run"))
    t0 = time.time()
    cmd_generate(cfg)
    gen_wall = time.time() - t0
    t0 = time.time()
    sweep_csv = cmd_sweep(cfg)
    sweep_wall = time.time() - t0
    t0 = time.time()
    refine_csv = cmd_refine(cfg)
    refine_wall = time.time() - t0
    # identical second sweep, fresh output dir, reusing the same datasets
    cfg2 = load_config(CONFIG, out_override=str(out / "run2"))
    (out / "run2").mkdir()
    (out / "run2" / "datasets").symlink_to(out / "run" / "datasets")
    sweep_csv2 = cmd_sweep(cfg2)
    return {"cfg": cfg, "out": out / "run", "sweep_csv": sweep_csv,
            "sweep_csv2": sweep_csv2, "refine_csv": refine_csv,
            "gen_wall": gen_wall, "sweep_wall": sweep_wall,
            "refine_wall": refine_wall}


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_criterion_09_measurement_sweep_trends(deskcity_run):
    rows = _rows(deskcity_run["sweep_csv"])
    acc = {(r["scene"], int(r["m_t"])): float(r["accuracy"]) for r in rows}
    sweep = [1, 2, 4, 8, 16]
    target = [acc[("target", m)] for m in sweep]
    problems = []
    if acc[("target", 8)] < 0.85:
        problems.append(f"target@8={acc[('target', 8)]:.3f}<0.85")
    for a, b in zip(target, target[1:]):
        if b < a - 0.02:
            problems.append(f"target curve drop {a:.3f}->{b:.3f}")
    # twin-0m trains on the same samples as target and differs only by
    # training seed; with a 267-sample test set a single point is dominated
    # by seed noise (~2pp std), so closeness is judged on the curve gap
    # averaged over the converged region
    gap = float(np.mean([abs(acc[("twin-0m", m)] - acc[("target", m)])
                         for m in (4, 8, 16)]))
    if gap > 0.03:
        problems.append(f"mean |twin0-target| gap={gap:.3f}>0.03")
    # error-vs-accuracy trend on curve means over the sweep (per-point
    # checks at M_t<=2 compare near-chance models and are noise-dominated)
    means = [float(np.mean([acc[(lab, m)] for m in sweep]))
             for lab in ("twin-0m", "twin-1m", "twin-5m")]
    for a, b in zip(means, means[1:]):
        if b > a + 0.02:
            problems.append(f"twin mean accuracy rises with error: "
                            f"{a:.3f}->{b:.3f}")
    wall = deskcity_run["gen_wall"] + deskcity_run["sweep_wall"]
    if wall >= 900:
        problems.append(f"runtime {wall:.0f}s>=900s")
    report(9, "measurement-sweep-trends", not problems,
           "; ".join(problems) or
           f"target@8={acc[('target', 8)]:.3f}, {wall:.0f}s")


def test_criterion_10_refinement_trend(deskcity_run):
    rows = _rows(deskcity_run["refine_csv"])
    n_full = max(int(r["n_real"]) for r in rows)
    unrefined = refined25 = base100 = None
    for r in rows:
        n = int(r["n_real"])
        a = float(r["accuracy"])
        if r["experiment"] == "refine":
            if n == 0:
                unrefined = a
            elif n == round(0.25 * n_full):
                refined25 = a
        elif r["experiment"] == "refine_baseline" and n == n_full:
            base100 = a
    problems = []
    if refined25 < base100 - 0.02:
        problems.append(f"refined25={refined25:.3f} < base100-2pp="
                        f"{base100 - 0.02:.3f}")
    if refined25 < unrefined + 0.02:
        problems.append(f"refined25={refined25:.3f} not >=2pp over "
                        f"unrefined={unrefined:.3f}")
    if deskcity_run["refine_wall"] >= 600:
        problems.append(f"runtime {deskcity_run['refine_wall']:.0f}s>=600s")
    report(10, "refinement-trend", not problems,
           "; ".join(problems) or
           f"unrefined={unrefined:.3f}, refined25={refined25:.3f}, "
           f"base100={base100:.3f}")


def test_criterion_11_beam_pattern_concentration(deskcity_run):
    cfg = deskcity_run["cfg"]
    model = load_checkpoint(deskcity_run["out"] / "checkpoints"
                            / f"target_m{cfg.m_t_default}.json")
    ds = load_dataset(deskcity_run["out"] / "datasets" / "target_train.jsonl")
    thetas = np.linspace(0.0, np.pi, 721)
    A = np.array([array_response(t, cfg.n_t) for t in thetas]).T  # (N_t, n)
    # dominant boresight-relative AoD per sample via matched filtering
    H = ds.channel_vectors()
    aod = thetas[np.argmax(np.abs(H @ A), axis=1)]
    lo, hi = np.percentile(aod, [1.0, 99.0])
    # physical per-angle response of measurement vector m is |a(theta)^H p_m|
    gains = np.abs(A.conj().T @ model.P_enc) ** 2  # (n_angles, M_t)
    in_sector = (thetas >= lo) & (thetas <= hi)
    frac = float(gains[in_sector].sum() / gains.sum())
    report(11, "beam-pattern-concentration", frac >= 0.80,
           f"sector [{np.degrees(lo):.1f}, {np.degrees(hi):.1f}] deg "
           f"holds {frac:.3f} of integrated gain")


def test_criterion_12_sweep_determinism(deskcity_run):
    def digest(path):
        sha = hashlib.sha256()
        with open(path) as fh:
            for row in csv.reader(fh):
                row[7] = ""  # wall_s: the one timing (non-result) column
                sha.update(",".join(row).encode())
        return sha.hexdigest()

    d1 = digest(deskcity_run["sweep_csv"])
    d2 = digest(deskcity_run["sweep_csv2"])
    report(12, "sweep-determinism", d1 == d2, f"{d1[:16]} vs {d2[:16]}")
