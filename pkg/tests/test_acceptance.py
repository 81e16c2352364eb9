"""Acceptance suite: one test per criterion, each recorded for the summary table."""

import contextlib
import copy
import json
import math
import time

import numpy as np

from liftseg.cli import main
from liftseg.config import RunConfig
from liftseg.decoder import (
    DecoderConfig,
    LayerWeights,
    bmca_layer,
    daca_layer,
    daca_mask,
    init_queries,
    positional_similarity,
    positional_terms,
    self_attn_ffn,
)
from liftseg.fusion import SuperpointFeatures
from liftseg.geometry import backproject_pixels, project_points
from liftseg.matching import compute_losses, cost_matrix, dice_term, hungarian, match_cost
from liftseg.metrics import evaluate_map
from liftseg.numerics import masked_softmax
from liftseg.pipeline import Predictions
from liftseg.queries2d import fps_downsample, medoid_index
from liftseg.scene import load_bundle
from liftseg.synth import GeneratorConfig, generate_synthetic
from liftseg.view_sampling import decorate_points, project_all, select_views

import conftest
from conftest import small_generator
from oracles import (
    assignment_brute_force,
    daca_allowed,
    decorate_point,
    dense_attention,
    fps_next,
    medoid,
    raycast_depth,
)

SUITE_START = time.perf_counter()
SEEDS = range(5)


@contextlib.contextmanager
def criterion(number, title):
    """Record the outcome of the enclosed checks under ``number``."""
    detail = {}
    try:
        yield detail
    except Exception as exc:
        conftest.ACCEPTANCE_RESULTS[number] = (title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0][:100]}")
        raise
    conftest.ACCEPTANCE_RESULTS[number] = (title, True, detail.get("text", ""))


def tree_bytes(path):
    if path.is_file():
        return {path.name: path.read_bytes()}
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def oracle_visibility(points, view, boxes, floor, tol):
    """Visibility from an independently ray-cast depth image.

    Projection goes through a 4x4 homogeneous camera matrix; the depth at a
    projection is the corner-weighted blend of the ray-cast depths of the four
    surrounding pixels (float32, as stored), with indices clamped to the image.
    """
    K, E = view.intrinsics, view.extrinsics
    R = np.asarray(E.rotation, dtype=np.float64)
    t = np.asarray(E.translation, dtype=np.float64)
    W, H = K.width, K.height
    T = np.eye(4)
    T[:3, :3], T[:3, 3] = R, t
    P = np.array([[K.fx, 0, K.cx, 0], [0, K.fy, K.cy, 0], [0, 0, 1.0, 0]]) @ T
    hom = np.column_stack([points, np.ones(len(points))]) @ P.T
    d = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u, v = hom[:, 0] / d, hom[:, 1] / d
    inside = (d > 1e-9) & (u > 0) & (u < W) & (v > 0) & (v < H)
    yy, xx = np.mgrid[0:H, 0:W]
    pixels = np.column_stack([xx.ravel(), yy.ravel()])
    image = raycast_depth(pixels, K.fx, K.fy, K.cx, K.cy, R, t, boxes, floor).astype(np.float32)
    image = image.astype(np.float64).reshape(H, W)
    uc, vc = np.minimum(np.where(inside, u, 0), W - 1.0), np.minimum(np.where(inside, v, 0), H - 1.0)
    x0, y0 = np.floor(uc).astype(int), np.floor(vc).astype(int)
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    fx, fy = uc - x0, vc - y0
    ref = (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, x1] * fx * (1 - fy)
        + image[y1, x0] * (1 - fx) * fy
        + image[y1, x1] * fx * fy
    )
    return inside & (d <= ref + tol)


def test_criterion_01_geometry_oracle():
    with criterion(1, "geometry: visibility vs ray-cast oracle, round trip") as info:
        start = time.perf_counter()
        checked, worst = 0, 0.0
        for seed in SEEDS:
            b = generate_synthetic(GeneratorConfig(), seed)
            assert b.num_points >= 1000
            pts = b.points.astype(np.float64)
            boxes = [(np.array(x[:3]), np.array(x[3:])) for x in b.meta["boxes"]]
            floor = b.meta["generator"]["room_size"]
            _, _, _, vis = project_all(pts, b.views, 0.05)
            for j, view in enumerate(b.views):
                ref = oracle_visibility(pts, view, boxes, floor, 0.05)
                mismatch = np.flatnonzero(ref != vis[:, j])
                assert mismatch.size == 0, f"seed {seed} view {j}: {mismatch.size} disagreements"
                checked += len(pts)
                u, v, d, front = project_points(pts, view.intrinsics, view.extrinsics)
                back = backproject_pixels(u[front], v[front], d[front], view.intrinsics, view.extrinsics)
                worst = max(worst, float(np.abs(back - pts[front]).max()))
        assert worst < 1e-9, f"round-trip error {worst:.3g}"
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"took {elapsed:.1f} s"
        info["text"] = f"{checked} point-view pairs agree, round trip {worst:.1e}, {elapsed:.1f} s"


def test_criterion_02_nearest_view_sampling(default_bundles):
    with criterion(2, "nearest view sampling vs exhaustive oracle") as info:
        worst, n = 0.0, 0
        for b in default_bundles:
            pts = b.points.astype(np.float64)
            dec = decorate_points(b, k=3, tolerance=0.05)
            _, _, dist, vis = project_all(pts, b.views, 0.05)
            chosen = select_views(dist, vis, 3)
            for i in np.random.default_rng(b.meta["seed"]).choice(len(pts), 100, replace=False):
                ref, ref_chosen = decorate_point(pts[i], b.views, 3, 0.05)
                assert chosen[i][chosen[i] >= 0].tolist() == ref_chosen
                worst = max(worst, float(np.abs(dec.features_2d[i] - ref).max()))
                n += 1
        assert worst < 1e-9
        info["text"] = f"{n} points, max feature diff {worst:.1e}"


def test_criterion_03_medoid():
    with criterion(3, "medoid equals exhaustive argmin") as info:
        r = np.random.default_rng(3)
        for trial in range(50):
            n = int(r.integers(1, 513))
            pts = r.normal(size=(n, 3)) * r.uniform(0.05, 2.0, 3)
            if trial % 5 == 0:  # depth-boundary style outliers
                pts[: max(1, n // 10)] += r.normal(0, 5, 3)
            assert medoid_index(pts) == medoid(pts.tolist()), f"trial {trial}"
        info["text"] = "50/50 sets"


def test_criterion_04_fps():
    with criterion(4, "farthest point sampling steps and deficit rule") as info:
        r = np.random.default_rng(4)
        steps = 0
        for trial in range(30):
            n = int(r.integers(2, 200))
            O = int(r.integers(1, 60))
            pts = r.normal(size=(n, 3)) if trial % 2 else r.integers(0, 5, (n, 3)).astype(float)
            out = fps_downsample(pts, O).tolist()
            if n <= O:
                assert out == list(range(n))
                continue
            assert len(out) == O and out[0] == 0
            for s in range(1, O):
                assert out[s] == fps_next(pts.tolist(), out[:s]), f"trial {trial} step {s}"
                steps += 1
        for n in (1, 5, 2048):
            assert fps_downsample(r.normal(size=(n, 3)), 2048).tolist() == list(range(n))
        info["text"] = f"{steps} greedy steps verified"


def test_criterion_05_attention_numerics():
    with criterion(5, "attention rows convex, masked exactly 0, fallback") as info:
        r = np.random.default_rng(5)
        fallbacks = 0
        for trial in range(1000):
            M, S = int(r.integers(1, 12)), int(r.integers(1, 15))
            logits = r.normal(size=(M, S)) * 10 ** r.uniform(-3, 3)
            keep = r.random((M, S)) < r.uniform(0, 1)
            A = masked_softmax(logits, np.where(keep, 0.0, -np.inf))
            assert np.all(np.isfinite(A)) and np.all(A >= 0)
            assert np.abs(A.sum(axis=1) - 1).max() < 1e-9
            live = keep.any(axis=1)
            assert np.all(A[live][~keep[live]] == 0.0)
            if (~live).any():
                fallbacks += int((~live).sum())
                plain = masked_softmax(logits[~live], np.zeros((int((~live).sum()), S)))
                assert np.array_equal(A[~live], plain)
            assert np.abs(A @ np.eye(S) - dense_attention(logits, keep, np.eye(S))).max() < 1e-9
        # the layers built on it: every update is a convex combination of key rows
        recovered = 0
        for trial in range(100):
            C = 10  # more dims than keys, so attention weights are recoverable from outputs
            sp = SuperpointFeatures(r.normal(size=(8, C)), r.uniform(0, 2, (8, 3)), np.ones(8, int))
            cfg = DecoderConfig(feature_dim=C, scene_extent=((0, 0, 0), (2, 2, 2)), tau_dist=1.0)
            s = init_queries(sp, cfg)
            s.mask = r.random((8, 8)) < 0.3
            s.attn_mask = np.where(s.mask, 0.0, -np.inf)
            w = LayerWeights.random(C, trial)
            keys = [(sp.features, lambda st: bmca_layer(st, sp, cfg, w))]
            R = r.normal(size=(5, C))
            keys.append((R, lambda st: daca_layer(st, R, r.uniform(0, 2, (5, 3)), sp.centers, cfg)))
            w.ffn.w2[:] = 0.0
            w.ffn.b2[:] = 0.0
            keys.append((s.content @ w.wv, lambda st: self_attn_ffn(st, cfg, w)))
            for rows, step in keys:
                delta = step(s.copy()).content - s.content
                system = np.vstack([rows.T, np.ones(len(rows))])
                if np.linalg.matrix_rank(system) == len(rows):  # weights are identifiable
                    coef = np.linalg.lstsq(system, np.vstack([delta.T, np.ones(8)]), rcond=None)[0]
                    assert np.all(coef > -1e-9) and np.abs(coef.sum(axis=0) - 1).max() < 1e-9
                    recovered += 1
                lo, hi = rows.min(0), rows.max(0)
                assert np.all(delta >= lo - 1e-9) and np.all(delta <= hi + 1e-9)
        info["text"] = f"1000 instances, {fallbacks} fallback rows, {recovered}/300 layer updates with recovered weights"


def test_criterion_06_modulation():
    with criterion(6, "modulation identity and exact per-axis scaling") as info:
        r = np.random.default_rng(6)
        worst = 0.0
        for trial in range(100):
            cfg = DecoderConfig(feature_dim=int(r.choice([32, 64, 256])), scene_extent=((0, 0, 0), (5, 5, 3)))
            M, S = int(r.integers(1, 8)), int(r.integers(1, 10))
            boxes = np.column_stack([r.uniform(0, 5, (M, 3)) * [1, 1, 0.6], r.uniform(0.01, 0.99, (M, 3))])
            centers = r.uniform(0, 3, (S, 3))
            mod = positional_similarity(boxes, boxes[:, 3:], centers, cfg, modulated=True)
            plain = positional_similarity(boxes, boxes[:, 3:], centers, cfg, modulated=False)
            worst = max(worst, float(np.abs(mod - plain).max()))
        assert worst < 1e-12
        for trial in range(100):
            cfg = DecoderConfig(feature_dim=32, scene_extent=((0, 0, 0), (5, 5, 3)))
            axis = trial % 3
            boxes = np.column_stack([r.uniform(0, 3, (4, 3)), r.uniform(0.02, 3, (4, 3))])
            ref = r.uniform(0.01, 0.99, (4, 3))
            centers = r.uniform(0, 3, (7, 3))
            half = boxes.copy()
            half[:, 3 + axis] /= 2
            a = positional_terms(boxes, ref, centers, cfg)
            b = positional_terms(half, ref, centers, cfg)
            assert np.array_equal(b[axis], 2 * a[axis]), f"trial {trial}"
            assert np.array_equal(np.delete(b, axis, 0), np.delete(a, axis, 0))
        info["text"] = f"identity max diff {worst:.1e}; 100/100 exact doublings"


def test_criterion_07_daca_mask():
    with criterion(7, "DACA mask vs triple-loop oracle") as info:
        r = np.random.default_rng(7)
        sizes = [(20, 30, 40)] + [tuple(int(x) for x in r.integers(1, [21, 31, 41])) for _ in range(199)]
        for M, S, O in sizes:
            mask = r.random((M, S)) < r.uniform(0, 0.5)
            spc, objc = r.uniform(0, 3, (S, 3)), r.uniform(0, 3, (O, 3))
            tau = r.uniform(0.1, 1.5)
            allowed, attn = daca_mask(mask, spc, objc, tau)
            assert np.array_equal(allowed, daca_allowed(mask, spc, objc, tau)), f"{M}x{S}x{O}"
            assert np.array_equal(attn == 0, allowed)
        info["text"] = f"{len(sizes)} instances up to 20x30x40"


def test_criterion_08_hungarian():
    with criterion(8, "Hungarian vs factorial brute force (6x6)") as info:
        r = np.random.default_rng(8)
        for trial in range(50):
            cost = r.uniform(-10, 10, (6, 6)) if trial % 2 else r.integers(0, 4, (6, 6)).astype(float)
            res = hungarian(cost)
            assert res.total_cost == assignment_brute_force(cost) or math.isclose(
                res.total_cost, assignment_brute_force(cost), rel_tol=0, abs_tol=1e-12
            ), f"trial {trial}"
            assert sorted(p for p, _ in res.pairs) == list(range(6)) == sorted(g for _, g in res.pairs)
        info["text"] = "50/50 totals equal"


def test_criterion_09_cost_and_loss():
    with criterion(9, "cost and loss arithmetic") as info:
        c = match_cost(np.ones(4), np.array([1.0, 0.0]), np.zeros(6), np.ones(4), 0, np.zeros(6))
        assert abs(c - (-0.5 - 1 / 9)) < 1e-9
        d = dice_term([1.0], [1.0])
        assert abs(d - (-1 / 3)) < 1e-9
        r = np.random.default_rng(9)
        worst = 0.0
        for _ in range(50):
            P, K, S = 6, 3, 25
            cls = r.dirichlet(np.ones(4), P)
            m = r.random((P, S))
            boxes = r.normal(size=(P, 6))
            g = r.random((K, S)) < 0.5
            gc, gb = r.integers(0, 3, K), r.normal(size=(K, 6))
            match = hungarian(cost_matrix(m, cls, boxes, g, gc, gb))
            L = compute_losses(cls, m, boxes, g, gc, gb, match, r.random((S, 3)), (r.random((S, 3)) < 0.4) * 1.0)
            total = 0.5 * L.l_cls + L.l_bce + L.l_dice + 0.5 * L.l_sem + 0.5 * L.l_box
            worst = max(worst, abs(L.total - total))
        assert worst < 1e-12
        info["text"] = f"cost {c:.10f}, dice {d:.10f}, total max diff {worst:.1e}"


def test_criterion_10_map():
    with criterion(10, "mAP hand cases and metric ordering") as info:
        g = np.eye(6, dtype=bool)[:3]
        perfect = evaluate_map(g, [0, 1, 1], [0.9, 0.8, 0.7], g, [0, 1, 1], 2)["overall"]
        assert perfect == {"mAP": 1.0, "mAP50": 1.0, "mAP25": 1.0}
        gt = np.zeros(10, bool)
        gt[:5] = True
        pred = np.zeros(10, bool)
        pred[:3] = True  # IoU 3/5
        r06 = evaluate_map([pred], [0], [0.9], [gt], [0], 1)["overall"]
        assert r06["mAP"] == 0.3 and r06["mAP50"] == 1.0 and r06["mAP25"] == 1.0, r06
        r = np.random.default_rng(10)
        for trial in range(20):
            N, K, P = 60, int(r.integers(1, 6)), int(r.integers(1, 10))
            owner = r.integers(0, K, N)
            gts = np.stack([owner == k for k in range(K)])
            gts[np.arange(K), np.arange(K)] = True
            preds = np.stack([gts[r.integers(0, K)] ^ (r.random(N) < r.uniform(0, 0.4)) for _ in range(P)])
            res = evaluate_map(preds, r.integers(0, 2, P), r.random(P), gts, r.integers(0, 2, K), 2)["overall"]
            # mAP is a mean of ten APs, each at most AP50; allow the last-bit rounding of that mean
            assert 0 <= res["mAP"] <= res["mAP50"] + 1e-12 and res["mAP50"] <= res["mAP25"] <= 1, (trial, res)
        info["text"] = f"IoU-0.6 case mAP {r06['mAP']}, 20 fuzzed scenes ordered"


def test_criterion_11_oracle_end_to_end(tmp_path):
    with criterion(11, "oracle mode gen -> infer -> eval") as info:
        start = time.perf_counter()
        cfg_path = tmp_path / "oracle.json"
        assert main(["config", "init", "--preset", "oracle", "--out", str(cfg_path)]) == 0
        m25, m50, exact = [], [], 0
        for seed in SEEDS:
            scene, preds, report = (tmp_path / f"{n}{seed}" for n in ("scene", "pred", "report"))
            assert main(["gen", "--config", str(cfg_path), "--seed", str(seed), "--out", str(scene)]) == 0
            assert main(["infer", str(scene), "--config", str(cfg_path), "--out", str(preds)]) == 0
            assert main(["eval", str(preds), str(scene), "--out", str(report)]) == 0
            overall = json.loads((report / "metrics.json").read_text())["overall"]
            m25.append(overall["mAP25"])
            m50.append(overall["mAP50"])
            b, p = load_bundle(scene), Predictions.load(preds)
            pm = {m.tobytes() for m in p.point_masks(b.superpoint_labels)}
            exact += sum(g.point_mask.tobytes() in pm for g in b.gt_instances) == len(b.gt_instances)
        assert min(m25) == 1.0, m25
        assert min(m50) >= 0.99, m50
        elapsed = time.perf_counter() - start
        info["text"] = f"mAP25 min {min(m25)}, mAP50 min {min(m50)}, {exact}/5 scenes exact, {elapsed:.1f} s"


def test_criterion_12_cli_determinism(tmp_path, capsys):
    with criterion(12, "CLI byte-identical across runs and worker counts") as info:
        base = RunConfig()
        base.generator = small_generator()
        cfgs = {}
        for workers in (1, 4):
            c = copy.deepcopy(base)
            c.sampling.workers = workers
            cfgs[workers] = tmp_path / f"w{workers}.json"
            cfgs[workers].write_text(c.to_json())

        def run(argv):
            capsys.readouterr()
            assert main(argv) == 0, argv
            return capsys.readouterr().out

        outputs = []
        for rep in range(2):
            d = tmp_path / f"run{rep}"
            o = {"config": run(["config", "init"])}
            o["gen"] = run(["gen", "--config", str(cfgs[1]), "--seed", "11", "--out", str(d / "scene")])
            o["inspect"] = run(["inspect", str(d / "scene")])
            for workers in (1, 4):
                o[f"infer{workers}"] = run(["infer", str(d / "scene"), "--config", str(cfgs[workers]), "--out", str(d / f"pred{workers}")])
            o["eval"] = run(["eval", str(d / "pred1"), str(d / "scene"), "--out", str(d / "report")])
            o["eval_report"] = tree_bytes(d / "report")
            o["scene"] = tree_bytes(d / "scene")
            for workers in (1, 4):
                o[f"pred{workers}"] = tree_bytes(d / f"pred{workers}")
            outputs.append(o)
        a, b = outputs
        # printed paths differ between the two run directories; compare with them normalized
        for key in a:
            va, vb = a[key], b[key]
            if isinstance(va, str):
                va, vb = va.replace(str(tmp_path / "run0"), "<d>"), vb.replace(str(tmp_path / "run1"), "<d>")
            assert va == vb, f"{key} differs between runs"
        assert a["pred1"] == a["pred4"], "worker count changed predictions"
        info["text"] = "config/gen/inspect/infer/eval identical; workers 1 vs 4 identical"


def test_suite_runtime_budget():
    elapsed = time.perf_counter() - SUITE_START
    title, ok, detail = conftest.ACCEPTANCE_RESULTS.get(11, ("oracle mode gen -> infer -> eval", False, "not run"))
    within = elapsed < 120.0
    conftest.ACCEPTANCE_RESULTS[11] = (title, ok and within, f"{detail}; acceptance suite {elapsed:.1f} s")
    assert within, f"acceptance suite took {elapsed:.1f} s"
