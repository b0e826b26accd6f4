"""End-to-end acceptance checks on the synthetic constrained benchmark.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers, then
asserts. Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest
from oracles import central_difference, checkpoints_oracle, smooth_at

from tabattack.benchmark import build_benchmark
from tabattack.caa import caa
from tabattack.cli import run
from tabattack.constraints import check, penalty
from tabattack.evaluation import ablation_matrix, robust_accuracy, success_set
from tabattack.gradient import CapgdConfig, CpgdConfig, capgd, capgd_checkpoints, cpgd, cpgd_schedule
from tabattack.model import MaskedClassifier, attack_objective
from tabattack.moeva import MoevaConfig, moeva
from tabattack.results import is_adv

SEEDS = (0, 1, 2)
ATTACKS = ("cpgd", "capgd", "moeva", "caa")


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _attack(name, b, seed):
    args = (b.model, b.X, b.Y, b.omega)
    if name == "cpgd":
        return cpgd(*args, CpgdConfig(), b.budget)
    if name == "capgd":
        return capgd(*args, CapgdConfig(seed=seed), b.budget)
    if name == "moeva":
        return moeva(*args, MoevaConfig(seed=seed), b.budget)
    return caa(*args[:4], b.budget, CapgdConfig(seed=seed), MoevaConfig(seed=seed))


@pytest.fixture(scope="module")
def runs():
    """Every attack on every benchmark seed, with wall-clock times."""
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        b = build_benchmark(seed)
        for name in ATTACKS:
            ts = time.perf_counter()
            res = _attack(name, b, seed)
            out[name, seed] = (res, time.perf_counter() - ts)
    return out, time.perf_counter() - t0


def test_criterion_01_validity(capsys, runs):
    results, seconds = runs
    bad = 0
    checked = 0
    for (name, seed), (res, _) in results.items():
        b = build_benchmark(seed)
        ok = is_adv(res.adversarial, b.X, b.Y, b.model, b.omega, b.budget)
        bad += int((res.success & ~ok).sum())
        checked += int(res.success.sum())
    verdict(capsys, 1, bad == 0 and seconds < 300,
            f"{checked} successes over {len(ATTACKS)} attacks x {len(SEEDS)} seeds, {bad} invalid; {seconds:.1f}s")


# (text, oracle for the satisfied set, oracle for the distance to the boundary)
TOL = 1e-6
BAND = 1e-9
CONSTRUCTS = {
    "<=": ("f1 + f2 <= f3", lambda x, x0: x[:, 0] + x[:, 1] - x[:, 2] <= TOL,
           lambda x, x0: np.abs(x[:, 0] + x[:, 1] - x[:, 2] - TOL)),
    "<": ("f1 - f2 < f3", lambda x, x0: x[:, 0] - x[:, 1] - x[:, 2] < 0,
          lambda x, x0: np.abs(x[:, 0] - x[:, 1] - x[:, 2])),
    ">=": ("f1 * f2 >= f3", lambda x, x0: x[:, 0] * x[:, 1] - x[:, 2] >= -TOL,
           lambda x, x0: np.abs(x[:, 0] * x[:, 1] - x[:, 2] + TOL)),
    ">": ("f1 / f2 > f3", lambda x, x0: x[:, 0] / x[:, 1] - x[:, 2] > 0,
          lambda x, x0: np.abs(x[:, 0] / x[:, 1] - x[:, 2])),
    "=": ("f3 = f1 + 2 * f2", lambda x, x0: np.abs(x[:, 2] - x[:, 0] - 2 * x[:, 1]) <= TOL,
          lambda x, x0: np.abs(np.abs(x[:, 2] - x[:, 0] - 2 * x[:, 1]) - TOL)),
    "!=": ("f3 != f1 + f2", lambda x, x0: np.abs(x[:, 2] - x[:, 0] - x[:, 1]) > TOL,
           lambda x, x0: np.abs(np.abs(x[:, 2] - x[:, 0] - x[:, 1]) - TOL)),
    "orig": ("f3 <= orig(f3) + f1", lambda x, x0: x[:, 2] - x0[:, 2] - x[:, 0] <= TOL,
             lambda x, x0: np.abs(x[:, 2] - x0[:, 2] - x[:, 0] - TOL)),
    "in": ("f4 in {0, 1, 2.5}", lambda x, x0: _set_dist(x) <= TOL, lambda x, x0: np.abs(_set_dist(x) - TOL)),
    "and": ("f1 + f2 <= f3 and f4 in {0, 1, 2.5}", None, None),
    "or": ("f1 + f2 <= f3 or f4 in {0, 1, 2.5}", None, None),
}


def _set_dist(x):
    return np.min(np.abs(x[:, 3:4] - np.array([0.0, 1.0, 2.5])), axis=1)


def _near_boundary(rng, n, key):
    """Random rows where the construct's gap sits at many scales, ties included."""
    x = rng.uniform(-10, 10, (n, 4))
    x0 = rng.uniform(-10, 10, (n, 4))
    gap = rng.choice([-1, 1], n) * 10.0 ** rng.uniform(-12, 1, n)
    gap[: n // 10] = 0.0
    gap[n // 10: n // 5] = rng.choice([-1, 1], n // 10) * TOL
    if key in ("<=", "and", "or"):
        x[:, 2] = x[:, 0] + x[:, 1] + gap
    elif key == "<":
        x[:, 2] = x[:, 0] - x[:, 1] + gap
    elif key == ">=":
        x[:, 2] = x[:, 0] * x[:, 1] + gap
    elif key == ">":
        x[:, 2] = x[:, 0] / x[:, 1] + gap
    elif key == "=":
        x[:, 2] = x[:, 0] + 2 * x[:, 1] + gap
    elif key == "!=":
        x[:, 2] = x[:, 0] + x[:, 1] + gap
    elif key == "orig":
        x[:, 2] = x0[:, 2] + x[:, 0] + gap
    if key in ("in", "and", "or"):
        x[:, 3] = rng.choice([0.0, 1.0, 2.5], n) + rng.permutation(gap)
    return x, x0


def test_criterion_02_penalty_soundness(capsys, omega_of):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20)
    mismatches = {}
    kept = {}
    for key, (text, sat_ref, dist_ref) in CONSTRUCTS.items():
        omega = omega_of(text)
        x, x0 = _near_boundary(rng, 1000, key)
        pen, sat = penalty(omega, x, x0), check(omega, x, x0)
        if key in ("and", "or"):
            a_sat, a_dist = CONSTRUCTS["<="][1](x, x0), CONSTRUCTS["<="][2](x, x0)
            b_sat, b_dist = CONSTRUCTS["in"][1](x, x0), CONSTRUCTS["in"][2](x, x0)
            ref = a_sat & b_sat if key == "and" else a_sat | b_sat
            away = (a_dist > BAND) & (b_dist > BAND)
        else:
            ref, away = sat_ref(x, x0), dist_ref(x, x0) > BAND
        mismatches[key] = int(((pen == 0) != sat)[away].sum() + (sat != ref)[away].sum())
        kept[key] = int(away.sum())
    seconds = time.perf_counter() - t0
    ok = not any(mismatches.values()) and min(kept.values()) >= 500 and seconds < 10
    verdict(capsys, 2, ok, f"mismatches {mismatches}; points kept per construct >= {min(kept.values())}; {seconds:.2f}s")


def test_criterion_03_gradient_oracle(capsys):
    t0 = time.perf_counter()
    b = build_benchmark(0)
    rng = np.random.default_rng(3)
    errors = []
    while len(errors) < 100:
        x = rng.uniform(0, 1, 6)
        x0 = x.copy()
        x0[:2] = rng.uniform(0, 1, 2)
        y = int(rng.integers(0, 2))
        if not smooth_at(b.model, b.omega, x, x0, y):
            continue
        g = attack_objective(b.model, x[None], x0[None], [y], b.omega).grad[0]
        fd = central_difference(lambda z: attack_objective(b.model, z[None], x0[None], [y], b.omega).total[0], x)
        errors.append(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    seconds = time.perf_counter() - t0
    worst = max(errors)
    verdict(capsys, 3, worst < 1e-4 and seconds < 10, f"max relative error {worst:.2e} on 100 points; {seconds:.2f}s")


def test_criterion_04_checkpoints(capsys):
    example = capgd_checkpoints(100) == [0, 22, 41, 57, 70, 80, 87, 93, 99, 100]
    diff = [n for n in range(1, 1001) if capgd_checkpoints(n) != checkpoints_oracle(n)]
    verdict(capsys, 4, example and not diff, f"n_iter=100 example {'matches' if example else 'differs'}; "
            f"{len(diff)} of 1000 lengths disagree with the rational recomputation")


def test_criterion_05_cpgd_schedule(capsys):
    got = [cpgd_schedule(k, 10, 7, 0.5) for k in range(10)]
    want = [float(Fraction(1, 2) / 10 ** (1 + k)) for k in range(10)]
    verdict(capsys, 5, got == want, f"schedule {got}")


def test_criterion_06_subsumption(capsys, runs):
    results, _ = runs
    lines = []
    ok = True
    for seed in SEEDS:
        b = build_benchmark(seed)
        full = results["caa", seed][0]
        stage = set(full.trace["stage_success"]["capgd"])
        alone = success_set(results["capgd", seed][0])
        ra_caa = robust_accuracy(b.model, b.X, full.adversarial, b.Y, b.omega, b.budget)
        ra_capgd = robust_accuracy(b.model, b.X, results["capgd", seed][0].adversarial, b.Y, b.omega, b.budget)
        caa_set = success_set(full)
        ok &= stage <= caa_set and alone <= caa_set and ra_caa <= ra_capgd
        lines.append(f"seed {seed}: |CAA|={len(caa_set)} |CAPGD|={len(alone)} RA {ra_caa:.3f}<={ra_capgd:.3f}")
    verdict(capsys, 6, ok, "; ".join(lines))


def _mean_ra(results, name):
    vals = []
    for seed in SEEDS:
        b = build_benchmark(seed)
        vals.append(robust_accuracy(b.model, b.X, results[name, seed][0].adversarial, b.Y, b.omega, b.budget))
    return float(np.mean(vals))


def test_criterion_07_capgd_beats_cpgd(capsys, runs):
    results, _ = runs
    ra_cpgd, ra_capgd = _mean_ra(results, "cpgd"), _mean_ra(results, "capgd")
    margin = ra_cpgd - ra_capgd
    verdict(capsys, 7, margin >= 0.05,
            f"mean robust accuracy CPGD {ra_cpgd:.3f}, CAPGD {ra_capgd:.3f}, margin {100 * margin:.1f} points")


def test_criterion_08_gradient_free_complement(capsys):
    lines = []
    ok = True
    for seed in SEEDS:
        b = build_benchmark(seed)
        masked = MaskedClassifier(b.model, step=0.25, critical_bias=12.0, critical_class=b.test.critical_class)
        wrong = masked.predict(b.X) != b.Y
        X, Y = b.X[~wrong], b.Y[~wrong]
        g = capgd(masked, X, Y, b.omega, CapgdConfig(seed=seed), b.budget).success_rate
        m = moeva(masked, X, Y, b.omega, MoevaConfig(seed=seed), b.budget).success_rate
        ok &= g == 0 and m > 0
        lines.append(f"seed {seed}: CAPGD {g:.3f}, MOEVA {m:.3f} on {len(X)} rows")
    verdict(capsys, 8, ok, "; ".join(lines))


def test_criterion_09_efficiency(capsys, runs):
    results, seconds = runs
    lines = []
    ok = True
    applicable = 0
    for seed in SEEDS:
        full = results["caa", seed][0]
        tried = full.trace["stage_attempted"]["capgd"]
        rate = len(full.trace["stage_success"]["capgd"]) / tried if tried else 0.0
        t_caa, t_moeva = results["caa", seed][1], results["moeva", seed][1]
        if rate >= 0.2:
            applicable += 1
            ok &= t_caa <= 1.1 * t_moeva
        lines.append(f"seed {seed}: CAPGD stage {rate:.2f}, CAA {t_caa:.2f}s vs MOEVA {t_moeva:.2f}s")
    ok &= applicable > 0 and seconds < 600
    verdict(capsys, 9, ok, "; ".join(lines) + f"; whole benchmark {seconds:.1f}s")


def test_criterion_10_ablation_coverage(capsys):
    b = build_benchmark(0)
    rep = ablation_matrix(b.model, b.X, b.Y, b.omega, b.budget, seeds=range(5))
    names, M = rep.coverage_matrix()
    cov = {names[i]: float(M[i, 0]) for i in range(1, len(names))}
    with capsys.disabled():
        print("\n" + "\n".join(f"  {a:>11s} " + " ".join(f"{v:.3f}" for v in row) for a, row in zip(names, M)))
    verdict(capsys, 10, min(cov.values()) >= 0.95,
            "coverage(variant, CAPGD) " + ", ".join(f"{k} {v:.3f}" for k, v in cov.items()))


def test_criterion_11_determinism(capsys, tmp_path):
    cfg = tmp_path / "caa.json"
    cfg.write_text(json.dumps({"attack": "caa", "moeva": {"n_gen": 20}}))
    d = tmp_path / "work"
    model = d / "model.json"
    common = ["--model", str(model), "--no-timing", "--seeds", "0,1"]
    commands = [
        ["synth", "--out", str(d / "data")],
        ["train", "--data", str(d / "data/data.csv"), "--spec", str(d / "data/spec.json"),
         "--constraints", str(d / "data/constraints.txt"), "--out", str(model)],
        ["evaluate", *common, "--attack", "cpgd,capgd", "--out", str(d / "eval.json")],
        ["attack", *common, "--config", str(cfg), "--out", str(d / "caa.json")],
        ["sweep", *common, "--config", str(cfg), "--axis", "capgd_iters", "--out", str(d / "sweep.json")],
        ["ablate", *common, "--out", str(d / "ablate.json")],
    ]
    artifacts = ("data/data.csv", "data/spec.json", "data/constraints.txt", "model.json", "eval.json",
                 "caa.json", "sweep.json", "ablate.json")
    outputs = []
    for _ in range(2):
        for argv in commands:
            assert run(argv) == 0, argv
        outputs.append({name: (d / name).read_bytes() for name in artifacts})
    differ = [k for k in artifacts if outputs[0][k] != outputs[1][k]]
    verdict(capsys, 11, not differ, f"{len(artifacts)} artifacts from {len(commands)} commands run twice, "
            f"differing: {differ or 'none'}")
