import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudolab import metrics as M
from pseudolab.errors import ReportingError
from pseudolab.netcore import ScalableNetConfig, build_net, predict_proba
from pseudolab.pseudolabel import PseudoLabelDecision, Scheme, Source, batch_decide
from pseudolab.synthdata import ClipSpec, DatasetSpec, generate_dataset
from pseudolab.trainer import MetricsLog, EpochRecord, Snapshot


def _d(confident, target):
    return PseudoLabelDecision(confident=confident, target_class=target, source=Source.PRIMARY,
                               confidence=0.95 if confident else 0.5)


# pseudo-label ratio

def test_ratio_examples():
    truth = np.arange(10) % 3
    assert M.pseudo_label_ratio([_d(False, 0)] * 10, truth) == 0.0
    assert M.pseudo_label_ratio([_d(True, t) for t in truth], truth) == 1.0
    decisions = [_d(True, truth[0]), _d(True, truth[1]), _d(True, truth[2] + 1)] + \
        [_d(False, 0)] * 7
    assert M.pseudo_label_ratio(decisions, truth) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        M.pseudo_label_ratio(decisions, truth[:5])


def test_ratio_accepts_batches_and_arrays():
    pF = np.array([[0.95, 0.05], [0.2, 0.8], [0.05, 0.95]])
    batch = batch_decide(Scheme.FIXMATCH, pF, pF, 0.9)
    assert M.pseudo_label_ratio(batch, [0, 1, 0]) == pytest.approx(1 / 3)
    conf, target = np.array([True, True]), np.array([1, 0])
    assert M.pseudo_label_ratio((conf, target), [1, 1], total=4) == 0.25


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 2), st.integers(0, 2)), min_size=1,
                max_size=30),
       st.booleans(), st.booleans())
def test_ratio_monotone_in_added_decisions(items, confident, correct):
    total = len(items) + 1
    conf = np.array([c for c, _, _ in items])
    target = np.array([t for _, t, _ in items])
    truth = np.array([y for _, _, y in items])
    before = M.pseudo_label_ratio((conf, target), truth, total)
    label = 1 if correct else 2
    after = M.pseudo_label_ratio((np.append(conf, confident), np.append(target, label)),
                                 np.append(truth, 1), total)
    if confident and correct:
        assert after >= before
    else:
        assert after == before


# per-class accuracy and gaps

def test_class_accuracy_table():
    tab = M.ClassAccuracyTable.from_predictions([0, 1, 1, 2], [0, 1, 2, 2], 4)
    assert tab.correct.tolist() == [1, 1, 1, 0]
    assert tab.totals.tolist() == [1, 1, 2, 0]
    assert np.allclose(tab.accuracy[:3], [1, 1, 0.5]) and np.isnan(tab.accuracy[3])
    assert tab.mean_over([1, 2]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        M.ClassAccuracyTable(np.array([2]), np.array([1]))


def test_gap_examples():
    a = M.ClassAccuracyTable.from_accuracy([0.3, 0.6, 0.9])
    assert all(g.gap == 0 for g in M.per_class_gap(a, a))
    gaps = M.per_class_gap(M.ClassAccuracyTable.from_accuracy([1.0, 0.0]),
                           M.ClassAccuracyTable.from_accuracy([0.0, 1.0]))
    assert [g.gap for g in gaps] == [1.0, -1.0]
    assert [g.class_id for g in gaps] == [0, 1]
    with pytest.raises(ValueError):
        M.per_class_gap(a, M.ClassAccuracyTable.from_accuracy([0.5]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=12))
def test_gaps_match_subtraction_and_are_sorted(pairs):
    small = np.array([s for s, _ in pairs])
    large = np.array([l for _, l in pairs])
    gaps = M.per_class_gap(M.ClassAccuracyTable.from_accuracy(small),
                           M.ClassAccuracyTable.from_accuracy(large))
    assert sorted(g.class_id for g in gaps) == list(range(len(pairs)))
    for g in gaps:
        assert g.gap == pytest.approx(small[g.class_id] - large[g.class_id], abs=1e-12)
    assert [g.acc_large for g in gaps] == sorted(g.acc_large for g in gaps)


def test_gaps_csv_parses():
    gaps = M.per_class_gap(M.ClassAccuracyTable.from_accuracy([0.5, 0.25]),
                           M.ClassAccuracyTable.from_accuracy([0.75, 0.5]))
    rows = list(csv.reader(io.StringIO(M.gaps_csv(gaps))))
    assert rows[0][0] == "class_id"
    assert len(rows) == 3


# stride degradation

def test_repeat_extend_oracle():
    clips = np.arange(2 * 8 * 3, dtype=float).reshape(2, 8, 3)
    out = M.repeat_extend(clips, 8)
    for b in range(2):
        for t in range(8):
            assert np.array_equal(out[b, t], clips[b, 0])
    out2 = M.repeat_extend(clips, 2)
    assert np.array_equal(out2[0, [0, 1, 2, 3]], clips[0, [0, 0, 2, 2]])
    assert np.array_equal(M.repeat_extend(clips, 1), clips)
    with pytest.raises(ValueError):
        M.repeat_extend(clips, 3)


SPEC = DatasetSpec(num_classes=4, spatial_class_count=2, temporal_class_count=2,
                   videos_per_class=5, raw_length=64, spatial_dim=6)


def _net(seed=0):
    return build_net(ScalableNetConfig(1, 1.0, 4, 4, 8, 6), seed)


def test_stride_degradation_matches_manual_evaluation():
    data = generate_dataset(SPEC)
    net = _net()
    res = M.stride_degradation(net, data)
    assert res.strides == (1, 2, 4, 8)
    assert res.drop_at(1) == 0.0
    clips = data.frames[:, 0:64:8, :].astype(np.float64)
    single = np.repeat(clips[:, :1, :], 8, axis=1)
    expect = float(np.mean(predict_proba(net, single).argmax(axis=1) == data.labels))
    assert res.accuracy[-1] == expect
    base = res.accuracy[0]
    assert res.drop_at(8) == pytest.approx(1 - expect / base if expect != base else 0.0)
    with pytest.raises(ValueError):
        M.stride_degradation(net, data, strides=(3,))
    with pytest.raises(ValueError):
        M.stride_degradation(net, data, clip=ClipSpec(4, 8))


def test_constant_output_net_has_no_drop():
    net = _net()
    for k in net:
        if k != "head.bias":
            net[k][...] = 0.0
    net["head.bias"][...] = [0.0, 2.0, 0.0, 0.0]
    res = M.stride_degradation(net, generate_dataset(SPEC))
    assert res.drop == (0.0, 0.0, 0.0, 0.0)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["stride", "accuracy", "drop_ratio"]


# gain vs auxiliary accuracy

def test_gain_bins_examples():
    one = M.gain_vs_aux_bins([0.1, 0.3, -0.1], [0.51, 0.52, 0.53])
    assert len(one) == 1 and one[0].mean_gain == pytest.approx(0.1) and one[0].count == 3
    two = M.gain_vs_aux_bins([1.0, 2.0], [0.02, 0.07])
    assert [b.index for b in two] == [0, 1]
    assert all(b.mean_gain == 0 for b in M.gain_vs_aux_bins(np.zeros(5), np.linspace(0, 1, 5)))
    assert M.gain_vs_aux_bins([0.0], [0.15])[0].index == 3
    with pytest.raises(ValueError):
        M.gain_vs_aux_bins([0.0], [0.1, 0.2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_bin_means_lie_within_their_members(pairs):
    gain = np.array([g for g, _ in pairs])
    acc = np.array([a for _, a in pairs])
    bins = M.gain_vs_aux_bins(gain, acc)
    assert sum(b.count for b in bins) == len(pairs)
    idx = np.floor(acc / 0.05 + 1e-9).astype(int)
    for b in bins:
        members = gain[idx == b.index]
        assert members.min() - 1e-12 <= b.mean_gain <= members.max() + 1e-12


# subset curve

def _snapshot(epoch, truth, pred_F, pred_A, conf_A):
    truth = np.asarray(truth)
    return Snapshot(epoch, truth, np.asarray(pred_F), np.ones(len(truth)),
                    np.asarray(pred_A), np.asarray(conf_A))


def _log(snapshots, epochs):
    log = MetricsLog(4, 1, 4)
    for e in range(1, epochs + 1):
        log.records.append(EpochRecord(e, 0.1, 0, 0, 0, 0, 0, 0, 0.0, 0.5, 0.5))
    log.snapshots = {s.epoch: s for s in snapshots}
    return log


def test_subset_curve_recount():
    truth = [0, 1, 1, 0]
    snaps = [_snapshot(1, truth, [0, 1, 0, 0], [0, 1, 1, 1], [0.95, 0.95, 0.2, 0.9]),
             _snapshot(2, truth, [1, 1, 1, 1], [0, 0, 0, 0], [0.1, 0.1, 0.1, 0.1])]
    ref = _log([_snapshot(1, truth, [1, 1, 1, 1], [0] * 4, [0] * 4),
                _snapshot(2, truth, [0] * 4, [0] * 4, [0] * 4)], 2)
    points = M.subset_accuracy_curve(_log(snaps, 2), 1, ref)
    assert len(points) == 1
    p = points[0]
    assert (p.epoch, p.subset_size) == (1, 3)
    assert p.acc_F == pytest.approx(1.0)
    assert p.acc_A == pytest.approx(2 / 3)
    assert p.acc_reference == pytest.approx(1 / 3)


def test_subset_curve_aux_perfect_and_errors():
    truth = [2, 0]
    log = _log([_snapshot(2, truth, [0, 0], truth, [0.99, 0.99])], 2)
    assert M.subset_accuracy_curve(log, 2)[0].acc_A == 1.0
    with pytest.raises(ReportingError):
        M.subset_accuracy_curve(log, 1)
    other = _log([_snapshot(2, [0, 0], [0, 0], [0, 0], [1, 1])], 2)
    with pytest.raises(ReportingError):
        M.subset_accuracy_curve(log, 2, other)
    assert "acc_reference" in M.subset_curve_csv(M.subset_accuracy_curve(log, 2))


def test_mean_and_range():
    assert M.mean_and_range([1.0, 3.0, 2.0]) == (2.0, 1.0, 3.0)
    assert all(np.isnan(v) for v in M.mean_and_range([]))
