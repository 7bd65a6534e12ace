"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` (lines appear in the
"acceptance criteria" summary section) or ``python tests/test_acceptance.py``.
"""

import contextlib
import io
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

import oracles
from acceptance_log import record
from fixtures import clustered, grouped, hub
from tfpack.cli import main
from tfpack.dataset import Dataset, Sample, save_dataset
from tfpack.fairness import PredictionRecord, balanced_order, equalized_odds_difference, tfp_balanced, tfp_resampling
from tfpack.geometry import DistanceStats, calibrate_threshold, pairwise_stats
from tfpack.packstats import intra_pack_distance
from tfpack.strategies import PARTITION_KINDS, StrategyKind, StrategySpec, knn_packing, random_packing, run_strategy
from tfpack.tfp import RepetitionStats, TfpConfig, build_tfp_path, segment_into_packs

TFP_LIKE = {StrategyKind.TFP, StrategyKind.TFP_BALANCED, StrategyKind.TFP_RESAMPLING}


def test_path_fidelity():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    greedy_mismatch = threshold_bad = unjustified = fallbacks = 0
    for _ in range(100):
        n = int(rng.integers(1, 201))
        dim = int(rng.integers(1, 17))
        pts = rng.normal(size=(n, dim))
        lst = pts.tolist()
        if list(build_tfp_path(pts, TfpConfig(0.0, 0)).indices) != oracles.greedy_nn_tour(lst):
            greedy_mismatch += 1
        r = int(rng.integers(1, 9))
        t = calibrate_threshold(pairwise_stats(pts), float(rng.uniform(1, 30))) if n > 1 else 0.5
        p = build_tfp_path(pts, TfpConfig(t, r))
        path = list(p.indices)
        threshold_bad += len(oracles.threshold_violations(lst, path, p.fallback_positions, t, r))
        unjustified += sum(not oracles.fallback_justified(lst, path, q, t, r) for q in p.fallback_positions)
        fallbacks += len(p.fallback_positions)
    dt = time.perf_counter() - t0
    ok = greedy_mismatch == 0 and threshold_bad == 0 and unjustified == 0 and dt < 10
    detail = (
        f"greedy mismatches={greedy_mismatch}/100, threshold violations={threshold_bad}, "
        f"unjustified fallbacks={unjustified} (of {fallbacks}), {dt:.2f}s < 10s"
    )
    assert record(1, "path vs brute-force oracle", ok, detail)


def _partition_spec(kind, rng, n, emb):
    budget = int(rng.integers(1, 400))
    if kind in TFP_LIKE:
        t = calibrate_threshold(pairwise_stats(emb), float(rng.uniform(0.5, 50))) if n > 1 else 0.0
        return StrategySpec(kind, tfp=TfpConfig(t, int(rng.integers(0, 6)), int(rng.integers(0, n)), budget))
    if kind in (StrategyKind.VANILLA_PADDING, StrategyKind.SORTED_BATCHING):
        return StrategySpec(kind, batch_size=int(rng.integers(1, 10)), descending=bool(rng.integers(0, 2)))
    return StrategySpec(kind, seed=int(rng.integers(0, 2**31)), max_pack_tokens=budget)


def test_partition_invariants():
    rng = np.random.default_rng(7)
    kinds = sorted(PARTITION_KINDS, key=lambda k: k.value)
    t0 = time.perf_counter()
    instances = runs = failures = 0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        emb = rng.normal(size=(n, int(rng.integers(1, 8))))
        lengths = rng.integers(1, 300, n)
        groups = rng.permutation(["a"] + ["b"] + list(rng.choice(["a", "b"], n - 2)))
        ds = Dataset([Sample(f"i{j}", "x", token_length=int(lengths[j]), group=str(groups[j])) for j in range(n)], emb)
        instances += 1
        for kind in kinds:
            m = run_strategy(ds, _partition_spec(kind, rng, n, emb))
            runs += 1
            members = [i for p in m.packs for i in p.member_indices]
            ids = [s for p in m.packs for s in p.member_ids]
            disjoint = len(members) == len(set(members))
            covers = sorted(members) == list(range(n)) and sorted(ids) == sorted(ds.ids)
            failures += not (disjoint and covers)
    dt = time.perf_counter() - t0
    ok = failures == 0 and instances >= 1000 and dt < 30
    detail = f"{instances} instances x {len(kinds)} strategies = {runs} runs, {failures} violations, {dt:.2f}s < 30s"
    assert record(2, "disjoint and covering packs", ok, detail)


def test_intra_pack_distance_ordering():
    t0 = time.perf_counter()
    ds = clustered(seed=0)
    budget = 2048
    t = calibrate_threshold(pairwise_stats(ds), 2.0)
    tsp = intra_pack_distance(ds, segment_into_packs(ds, build_tfp_path(ds, TfpConfig(0.0, 0, 0, budget)), budget))
    tfp = intra_pack_distance(ds, segment_into_packs(ds, build_tfp_path(ds, TfpConfig(t, 4, 0, budget)), budget))
    knn_lo = intra_pack_distance(ds, knn_packing(ds, 3, budget, limit_overlap=True)[0])
    knn_plain = intra_pack_distance(ds, knn_packing(ds, 3, budget)[0])
    rnd = intra_pack_distance(ds, random_packing(ds, 0, budget))
    dt = time.perf_counter() - t0
    ok = tsp <= tfp < knn_lo < rnd and tfp <= 0.8 * rnd and dt < 20
    detail = (
        f"TSP {tsp:.3f} <= TFP {tfp:.3f} < kNN(limiting overlap, k=3) {knn_lo:.3f} < random {rnd:.3f}; "
        f"TFP/random = {tfp / rnd:.3f} <= 0.8; plain kNN k=3 (reused samples) {knn_plain:.3f}; {dt:.2f}s < 20s"
    )
    assert record(3, "intra-pack distance ordering", ok, detail)


def test_knn_repetition_pathology():
    t0 = time.perf_counter()
    ds = hub()
    _, rep_knn = knn_packing(ds, 3, 4096)
    t = calibrate_threshold(pairwise_stats(ds), 2.0)
    tfp_packs = segment_into_packs(ds, build_tfp_path(ds, TfpConfig(t, 4, 0, 4096)), 4096)
    rep_tfp = RepetitionStats.from_packs(tfp_packs, len(ds))
    dt = time.perf_counter() - t0
    ok = rep_knn.max >= 10 and rep_tfp.max == 1 and dt < 5
    detail = f"kNN k=3 max_repetition={rep_knn.max} (>= 10, centroid), TFP max_repetition={rep_tfp.max}, {dt:.2f}s < 5s"
    assert record(4, "kNN repetition vs TFP", ok, detail)


def test_fairness_exactness():
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    worst = 0.0
    eod_is_max = True
    for _ in range(20):
        rows = rng.integers(0, 2, size=(1000, 3))
        recs = [PredictionRecord(str(i), int(f), int(y), int(a)) for i, (f, y, a) in enumerate(rows)]
        dicts = [dict(prediction=int(f), label=int(y), group=int(a)) for f, y, a in rows]
        rep = equalized_odds_difference(recs)
        m_tp, m_fp, eod = oracles.eod_parts(dicts)
        worst = max(worst, abs(rep.dpd - oracles.dpd(dicts)), abs(rep.m_tp - m_tp), abs(rep.m_fp - m_fp), abs(rep.eod - eod))
        eod_is_max &= rep.eod == max(rep.m_tp, rep.m_fp)
    ya = rng.integers(0, 2, size=(1000, 2))
    perfect = equalized_odds_difference([PredictionRecord(str(i), int(y), int(y), int(a)) for i, (y, a) in enumerate(ya)])
    constant = equalized_odds_difference([PredictionRecord(str(i), 1, int(y), int(a)) for i, (y, a) in enumerate(ya)])
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and eod_is_max and perfect.eod == 0.0 and constant.eod == 0.0 and constant.dpd == 0.0 and dt < 5
    detail = (
        f"max |diff| vs counting oracle={worst:.1e} (<= 1e-12) over 20x1000 records, eod=max(m_tp,m_fp) {eod_is_max}, "
        f"perfect eod={perfect.eod}, constant eod={constant.eod} dpd={constant.dpd}, {dt:.2f}s < 5s"
    )
    assert record(5, "fairness metrics exactness", ok, detail)


def test_balanced_variants():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    instances = bal_bad = res_alt_bad = res_cover_bad = 0
    for _ in range(300):
        n_min = int(rng.integers(1, 30))
        n_maj = n_min + int(rng.integers(0, 40))
        ds = grouped(rng, n_maj, n_min, lengths=(1, 60))
        cfg = TfpConfig(float(rng.uniform(0, 1.5)), int(rng.integers(0, 5)), 0, int(rng.integers(60, 400)))
        instances += 1
        order, cut = balanced_order(ds, cfg)
        position = {idx: p for p, idx in enumerate(order)}
        for p in tfp_balanced(ds, cfg):
            before = [ds.samples[i].group for i in p.member_indices if position[i] < cut]
            if abs(before.count("maj") - before.count("min")) > 1:
                bal_bad += 1
        packs, _ = tfp_resampling(ds, cfg, seed=int(rng.integers(0, 1000)))
        for p in packs:
            g = [ds.samples[i].group for i in p.member_indices]
            if any(a == b for a, b in zip(g, g[1:])):
                res_alt_bad += 1
        unique = {i for p in packs for i in p.member_indices}
        res_cover_bad += unique != set(range(len(ds)))
    dt = time.perf_counter() - t0
    ok = bal_bad == 0 and res_alt_bad == 0 and res_cover_bad == 0 and dt < 10
    detail = (
        f"{instances} instances: balanced packs with count gap > 1 before exhaustion={bal_bad}, "
        f"resampling packs breaking alternation={res_alt_bad}, resampling coverage misses={res_cover_bad}, {dt:.2f}s < 10s"
    )
    assert record(6, "balanced / resampling invariants", ok, detail)


def test_threshold_calibration():
    rng = np.random.default_rng(12)
    pts = rng.uniform(-50, 50, size=(80, 1))
    known = oracles.all_pair_distances(pts.tolist())
    stats = pairwise_stats(pts)
    diff = abs(calibrate_threshold(stats, 2.0) - oracles.interpolated_percentile(known, 2.0))
    v = np.arange(1, 101, dtype=np.float64)
    hundred = calibrate_threshold(DistanceStats(100, 100, "exact", 1.0, 100.0, 50.5, v.copy()), 2.0)
    grid = [calibrate_threshold(stats, p) for p in np.linspace(0.01, 100, 400)]
    monotone = all(a <= b for a, b in zip(grid, grid[1:]))
    ok = diff <= 1e-12 and abs(hundred - 2.98) <= 1e-12 and monotone
    detail = f"|t - oracle|={diff:.1e} (<= 1e-12) on 3160 known distances, {{1..100}} at 2% -> {hundred:.12g}, monotone {monotone}"
    assert record(7, "threshold calibration", ok, detail)


def _scale_inputs(tmp: Path, n=20_000, dim=384):
    rng = np.random.default_rng(2024)
    centers = rng.normal(0, 1, (200, dim)).astype(np.float32)
    emb = centers[rng.integers(0, 200, n)] + rng.normal(0, 0.5, (n, dim)).astype(np.float32)
    lengths = rng.integers(20, 1500, n)
    samples = [Sample(f"q{i}", f"instruction {i}", output="o", token_length=int(lengths[i])) for i in range(n)]
    save_dataset(Dataset(samples, emb), tmp / "big.jsonl", tmp / "big.bin")


def _pack_subprocess(tmp: Path, out: str, threads: int) -> float:
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    cmd = [sys.executable, "-m", "tfpack", "pack", "--samples", str(tmp / "big.jsonl"),
           "--embeddings", str(tmp / "big.bin"), "--strategy", "tfp", "--out", str(tmp / out)]
    t0 = time.perf_counter()
    subprocess.run(cmd, env=env, check=True, capture_output=True)
    return time.perf_counter() - t0


def test_scale_and_thread_determinism(tmp_path):
    _scale_inputs(tmp_path)
    t1 = _pack_subprocess(tmp_path, "one.jsonl", 1)
    t2 = _pack_subprocess(tmp_path, "two.jsonl", 2)
    same = (tmp_path / "one.jsonl").read_bytes() == (tmp_path / "two.jsonl").read_bytes()
    header = json.loads((tmp_path / "one.jsonl").read_text().split("\n", 1)[0])
    ok = max(t1, t2) < 180 and same and header["dataset"]["size"] == 20_000
    detail = (
        f"20000x384 pack (calibrate + TFP + manifest): {t1:.1f}s with 1 thread, {t2:.1f}s with 2 threads "
        f"(< 180s, {os.cpu_count()} CPU(s) available), byte-identical across thread counts {same}"
    )
    assert record(8, "scale and determinism", ok, detail)


def test_reproducibility(tmp_path):
    rng = np.random.default_rng(8)
    n = 80
    samples = [Sample(f"d{i}", f"text {i}", token_length=int(rng.integers(10, 400)), group="xy"[i % 3 == 0]) for i in range(n)]
    ds = Dataset(samples, rng.normal(size=(n, 12)).astype(np.float32))
    save_dataset(ds, tmp_path / "s.jsonl", tmp_path / "e.bin")
    identical = 0
    kinds = [k.value for k in StrategyKind]
    for kind in kinds:
        a, b = tmp_path / f"{kind}.jsonl", tmp_path / f"{kind}.again.jsonl"
        main(["pack", "--samples", str(tmp_path / "s.jsonl"), "--embeddings", str(tmp_path / "e.bin"),
              "--strategy", kind, "--k", "4", "--max-pack-tokens", "1200", "--seed", "3", "--out", str(a)])
        main(["pack", "--config-from", str(a), "--out", str(b)])
        identical += a.read_bytes() == b.read_bytes()
    altered = [json.loads(l) for l in (tmp_path / "s.jsonl").read_text().splitlines()]
    altered[5]["instruction"] += "!"
    (tmp_path / "t.jsonl").write_text("".join(json.dumps(r) + "\n" for r in altered))
    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        rc = main(["stats", "--samples", str(tmp_path / "t.jsonl"), "--embeddings", str(tmp_path / "e.bin"),
                   "--manifest", str(tmp_path / "tfp.jsonl")])
    bound = rc == 3 and "bound to dataset" in err.getvalue()
    ok = identical == len(kinds) and bound
    detail = f"{identical}/{len(kinds)} strategies byte-identical on re-run from embedded config; altered dataset rejected {bound}"
    assert record(9, "reproducibility and dataset binding", ok, detail)


if __name__ == "__main__":
    import tempfile

    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            with tempfile.TemporaryDirectory() as d:
                kwargs = {"tmp_path": Path(d)} if fn.__code__.co_argcount else {}
                try:
                    fn(**kwargs)
                except AssertionError:
                    pass
