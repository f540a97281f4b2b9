import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import count_bad
from scenes import toy_scene
from splatstereo.errors import EmptyEvaluationSet, EmptyInput, InconsistentSuite, SizeMismatch
from splatstereo.evaluation import (
    EvalConfig,
    EvalReport,
    PairResult,
    aggregate,
    bad_tau,
    evaluate_manifest,
    evaluate_pair,
    load_disparity,
    render_report,
    report_json,
    select_best_checkpoint,
)
from splatstereo.formats import write_disparity_png16, write_pfm
from splatstereo.mesh import build_bvh
from splatstereo.rasters import DisparityMap
from splatstereo.stereo_synth import DatasetManifest, synth_dataset


def dmap(values, valid=None):
    values = np.asarray(values, float)
    return DisparityMap(values, np.ones(values.shape, bool) if valid is None else np.asarray(valid, bool))


def test_small_example():
    gt = dmap(np.full((1, 5), 10.0))
    pred = dmap([[10.0, 11.0, 12.0, 13.0, 14.0]])
    # error exactly tau is not bad
    assert bad_tau(pred, gt, None, 2.0) == 40.0


def test_identical_and_offset():
    gt = dmap(np.arange(12.0).reshape(3, 4) + 1)
    assert bad_tau(gt, gt, None, 1.0) == 0.0
    assert bad_tau(dmap(gt.values + 5), gt, None, 1.0) == 100.0


def test_invalid_prediction_counts_as_bad():
    gt = dmap(np.ones((2, 2)))
    pred = dmap(np.ones((2, 2)), [[True, False], [True, True]])
    assert bad_tau(pred, gt, None, 1.0) == 25.0


def test_errors():
    gt = dmap(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(EmptyEvaluationSet):
        bad_tau(dmap(np.ones((2, 2))), gt, None, 1.0)
    with pytest.raises(SizeMismatch):
        bad_tau(dmap(np.ones((2, 3))), dmap(np.ones((2, 2))), None, 1.0)
    with pytest.raises(SizeMismatch):
        bad_tau(dmap(np.ones((2, 2))), dmap(np.ones((2, 2))), np.ones((3, 3), bool), 1.0)
    with pytest.raises(ValueError):
        EvalConfig(0.0)


def test_matches_loop_oracle(rng):
    for _ in range(30):
        shape = (int(rng.integers(1, 20)), int(rng.integers(1, 20)))
        gt = rng.uniform(1, 50, shape)
        gv = rng.random(shape) > 0.2
        pred = np.abs(gt + rng.normal(0, 3, shape)) + 1e-3
        pv = rng.random(shape) > 0.1
        mask = rng.random(shape) > 0.3
        tau = float(rng.choice([1.0, 2.0, 3.0]))
        bad, n = count_bad(pred, pv, gt, gv, mask, tau)
        if n == 0:
            with pytest.raises(EmptyEvaluationSet):
                bad_tau(DisparityMap(pred, pv), DisparityMap(gt, gv), mask, tau)
            continue
        assert bad_tau(DisparityMap(pred, pv), DisparityMap(gt, gv), mask, tau) == 100.0 * bad / n


@given(err=hnp.arrays(float, (6, 7), elements=st.floats(0, 20)), t1=st.floats(0.01, 10), t2=st.floats(0.01, 10))
def test_anti_monotone_in_tau(err, t1, t2):
    gt = dmap(np.full((6, 7), 30.0))
    pred = dmap(30.0 + err)
    lo, hi = sorted((t1, t2))
    assert bad_tau(pred, gt, None, hi) <= bad_tau(pred, gt, None, lo)


@given(perm_seed=st.integers(0, 2**32 - 1))
def test_permutation_invariant(perm_seed):
    rng = np.random.default_rng(perm_seed)
    gt = rng.uniform(0, 10, (8, 8))
    pred = gt + rng.normal(0, 2, (8, 8))
    valid = rng.random((8, 8)) > 0.2
    p = rng.permutation(64)
    a = bad_tau(DisparityMap(pred, valid), dmap(gt), None, 1.0)
    b = bad_tau(DisparityMap(pred.ravel()[p].reshape(8, 8), valid.ravel()[p].reshape(8, 8)),
                dmap(gt.ravel()[p].reshape(8, 8)), None, 1.0)
    assert a == b


@given(bits=hnp.arrays(bool, (5, 9)))
def test_binary_error_map(bits):
    # errors of exactly 0 or 10 give the fraction of ones
    gt = dmap(np.full((5, 9), 20.0))
    pred = dmap(20.0 + 10.0 * bits)
    assert bad_tau(pred, gt, None, 3.0) == pytest.approx(100.0 * bits.mean())


def test_evaluate_pair_all_and_noc():
    gt = dmap(np.full((2, 5), 10.0))
    pred = dmap([[10, 10, 30, 10, 10], [10, 10, 10, 10, 30]])
    noc = np.array([[1, 1, 0, 1, 1], [1, 1, 1, 1, 1]], bool)
    r = evaluate_pair(pred, gt, noc, EvalConfig.for_family("kitti15"))
    assert (r.all_pct, r.noc_pct) == (20.0, pytest.approx(100 / 9))
    assert (r.evaluated_all, r.evaluated_noc, r.bad_all, r.bad_noc) == (10, 9, 2, 1)


def test_family_taus():
    assert EvalConfig.for_family("ETH3D").tau == 1.0
    assert EvalConfig.for_family("middlebury").tau == 2.0
    assert EvalConfig.for_family("kitti2012").tau == 3.0
    with pytest.raises(KeyError):
        EvalConfig.for_family("sintel")


def pr(pct, n, noc_pct=None, n_noc=None):
    noc_pct = pct if noc_pct is None else noc_pct
    n_noc = n if n_noc is None else n_noc
    return PairResult(pct, noc_pct, n, n_noc, round(pct * n / 100), round(noc_pct * n_noc / 100))


def test_aggregate_weightings():
    results = [pr(10.0, 100), pr(0.0, 900)]
    assert aggregate(results, "pixel")[0] == 1.0
    assert aggregate(results, "pair")[0] == 5.0
    with pytest.raises(EmptyInput):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate(results, "median")


def test_pair_result_invariants():
    with pytest.raises(ValueError):
        PairResult(10.0, 5.0, 10, 11, 1, 1)
    with pytest.raises(ValueError):
        PairResult(101.0, 5.0, 10, 10, 1, 1)


def report(**datasets):
    return EvalReport({k: [pr(v, 100) for v in vals] for k, vals in datasets.items()})


def test_checkpoint_selection_worked_example():
    reports = {
        "ckpt_a": report(eth3d=[4.0], middlebury=[12.0], kitti=[6.0]),  # mean 7.333
        "ckpt_b": report(eth3d=[5.0], middlebury=[9.0], kitti=[7.0]),  # mean 7.0
        "ckpt_c": report(eth3d=[3.0], middlebury=[14.0], kitti=[5.0]),  # mean 7.333
    }
    assert select_best_checkpoint(reports) == "ckpt_b"


def test_checkpoint_ties_and_errors():
    tied = {"x": report(a=[2.0], b=[4.0]), "y": report(a=[4.0], b=[2.0])}
    assert select_best_checkpoint(tied) == "x"
    assert select_best_checkpoint(dict(reversed(tied.items()))) == "y"
    with pytest.raises(InconsistentSuite):
        select_best_checkpoint({"x": report(a=[1.0]), "y": report(b=[1.0])})
    with pytest.raises(EmptyInput):
        select_best_checkpoint({})


@given(scores=st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=2, max_size=6, unique=True),
       scale=st.floats(0.1, 0.5), shift=st.floats(0, 20))
def test_checkpoint_choice_invariant_under_affine_map(scores, scale, shift):
    base = {f"c{i}": report(a=[s[0]], b=[s[1]]) for i, s in enumerate(scores)}
    moved = {f"c{i}": report(a=[s[0] * scale + shift], b=[s[1] * scale + shift]) for i, s in enumerate(scores)}
    means = [(s[0] + s[1]) / 2 for s in scores]
    if sorted(means)[0] == sorted(means)[1] or min(np.diff(sorted(means))) < 1e-6:
        return  # near ties can flip under rounding
    assert select_best_checkpoint(base) == select_best_checkpoint(moved)


def test_render_report():
    empty = render_report(EvalReport())
    assert empty.splitlines()[0].split() == ["Dataset", "tau", "Pairs", "All", "Noc"]
    assert len(empty.splitlines()) == 2
    rep = EvalReport({"eth3d": [pr(5.5209, 1000), pr(5.5209, 1000)]}, taus={"eth3d": 1.0})
    text = render_report(rep)
    row = text.splitlines()[2].split()
    assert row == ["eth3d", "1", "2", "5.52", "5.52"]
    assert text.splitlines()[-1].split() == ["Mean", "5.52", "5.52"]
    data = json.loads(report_json(rep))
    assert data["datasets"]["eth3d"]["all_pct"] == pytest.approx(5.5209)
    assert data["suite"]["all_pct"] == pytest.approx(5.5209)
    assert len(data["datasets"]["eth3d"]["pairs"]) == 2


def test_load_disparity_formats(tmp_path):
    values = np.array([[0.0, 1.5], [np.inf, 80.25]])
    write_pfm(tmp_path / "d.pfm", values.astype(np.float32))
    d = load_disparity(tmp_path / "d.pfm")
    np.testing.assert_array_equal(d.valid, [[False, True], [False, True]])
    write_disparity_png16(tmp_path / "d.png", np.array([[0.0, 1.5], [2.0, 80.25]]), np.array([[0, 1], [1, 1]], bool))
    p = load_disparity(tmp_path / "d.png")
    np.testing.assert_array_equal(p.valid, [[False, True], [True, True]])
    assert p.values[1, 1] == 80.25


def test_evaluate_manifest_against_ground_truth_copy(tmp_path):
    mesh, model = toy_scene(64, 48, 60.0)
    synth_dataset(build_bvh(mesh), model, [1, 2, 3], [0.2], tmp_path / "data")
    manifest = DatasetManifest.load(tmp_path / "data" / "manifest.json")
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    shifts = [0.0, 0.5, 5.0]
    for e, s in zip(manifest.entries, shifts):
        from splatstereo.formats import read_pfm

        gt = read_pfm(tmp_path / "data" / e.disparity)
        write_pfm(pred_dir / (e.disparity.rsplit("/", 1)[-1]), np.where(gt > 0, gt + s, 0).astype(np.float32))
    results = evaluate_manifest(pred_dir, tmp_path / "data" / "manifest.json", EvalConfig(1.0), jobs=2)
    assert [r.name for r in results] == [e.disparity.rsplit("/", 1)[-1][:-4] for e in manifest.entries]
    assert results[0].all_pct == 0.0 and results[1].all_pct == 0.0
    assert results[2].all_pct == 100.0
    with pytest.raises(FileNotFoundError):
        evaluate_manifest(tmp_path / "nowhere", tmp_path / "data" / "manifest.json", EvalConfig(1.0))
