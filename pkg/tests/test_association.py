import numpy as np
import pytest

import flowseg.association as association
from flowseg.association import (
    AssocConfig,
    associate_sequence,
    neighbor_align,
    temporal_consistency_step,
    threeway_hungarian,
)
from flowseg.core import FrameMasks, ScoredMask, iou
from flowseg.errors import MissingInputError, ParameterError
from flowseg.flowio import FlowField, write_flo
from flowseg.synth import identity_scene, render

from conftest import strip


def fm(masks, frame_index=0):
    return FrameMasks(frame_index, tuple(
        ScoredMask(m, fiou=1.0, layer_rank=i) for i, m in enumerate(masks)
    ))


def constant_field(h, w, u, v, gap=1, source_frame=0):
    flow = np.empty((h, w, 2), dtype=np.float32)
    flow[:, :, 0] = u
    flow[:, :, 1] = v
    return FlowField(flow, gap=gap, source_frame=source_frame)


def disjoint_masks(n=3, width=30):
    return [strip((6 * i, 6 * i + 4), width=width) for i in range(n)]


class TestThreewayHungarian:
    def test_identity(self):
        masks = disjoint_masks()
        aligned, flags = threeway_hungarian(masks, masks, masks)
        assert flags == [True, True, True]
        for a, m in zip(aligned, masks):
            assert np.array_equal(a, m)

    def test_reversed_second_list(self):
        masks = disjoint_masks()
        aligned, flags = threeway_hungarian(masks, masks[::-1], masks)
        assert flags == [True, True, True]
        # Exhaustive check: each aligned entry is the unique max-IoU partner.
        for i, a in enumerate(aligned):
            best = max(masks[::-1], key=lambda m: iou(masks[i], m))
            assert np.array_equal(a, best)
            assert np.array_equal(a, masks[i])

    def test_neighbor_contradiction_flips_flags(self):
        # Current-frame masks share no pixels with the warped-previous ones,
        # so the warped->current matching falls back to the lexicographic
        # default {A->C, B->D}. The neighbor's first object is C displaced
        # toward B (IoU(B, Cn) = 3/9), which makes the neighbor-routed
        # matching prefer {B->C-slot}, contradicting the default.
        A, B = strip((0, 6)), strip((16, 22))
        C, D = strip((10, 16)), strip((24, 30))
        Cn, Dn = strip((13, 19)), strip((24, 30))
        aligned, flags = threeway_hungarian([A, B], [C, D], [Cn, Dn])
        assert flags == [False, False]

    def test_unmatched_rows_get_false_and_empty(self):
        masks = disjoint_masks(3)
        aligned, flags = threeway_hungarian(masks, masks[:2], masks[:2])
        assert flags == [True, True, False]
        assert not aligned[2].any()

    def test_empty_lists(self):
        assert threeway_hungarian([], [], []) == ([], [])
        masks = disjoint_masks(2)
        aligned, flags = threeway_hungarian(masks, [], [])
        assert flags == [False, False]
        assert all(not a.any() for a in aligned)

    def test_common_permutation_invariance(self, rng):
        # Distinct strip widths keep every matching unique, so the tie-break
        # never enters and permuting all three lists just relabels indices.
        m1 = [strip((7 * i, 7 * i + 2 + i), width=40) for i in range(4)]
        m2 = [strip((7 * i + 1, 7 * i + 3 + i), width=40) for i in range(4)]
        m3 = [strip((7 * i, 7 * i + 3 + i), width=40) for i in range(4)]
        base_aligned, base_flags = threeway_hungarian(m1, m2, m3)
        for _ in range(5):
            perm = rng.permutation(4).tolist()
            aligned, flags = threeway_hungarian(
                [m1[i] for i in perm], [m2[i] for i in perm], [m3[i] for i in perm]
            )
            assert flags == [base_flags[perm[i]] for i in range(4)]
            for i in range(4):
                assert np.array_equal(aligned[i], base_aligned[perm[i]])


class TestTemporalConsistencyStep:
    def test_perfect_data_updates_everywhere(self):
        masks = disjoint_masks()
        flow = constant_field(1, 30, 0.0, 0.0)
        current = fm(masks, frame_index=1)
        neighbors = {1: fm(masks), -1: fm(masks)}
        out, recs = temporal_consistency_step(masks, flow, current, neighbors, AssocConfig())
        assert all(r.decision == "update" for r in recs)
        for a, m in zip(out, masks):
            assert np.array_equal(a, m)

    def test_dropout_survives_via_propagation(self):
        # Object 1 disappears from the current frame; both neighbors keep it.
        prev = disjoint_masks(3)
        flow = constant_field(1, 30, 1.0, 0.0)
        shifted = [np.roll(m, 1, axis=1) for m in prev]
        current = fm([shifted[0], shifted[2]], frame_index=1)
        neighbors = {1: fm(shifted), -1: fm(shifted)}
        out, recs = temporal_consistency_step(prev, flow, current, neighbors, AssocConfig(deltas=(1, -1)))
        assert recs[1].decision == "propagate"
        assert recs[0].decision == "update" and recs[2].decision == "update"
        # Independent warp oracle: constant (1, 0) flow is a 1-px right shift.
        assert np.array_equal(out[1], np.roll(prev[1], 1, axis=1))

    def test_half_consistent_boundary_updates(self):
        # Two agreeing and two contradicting neighbors -> mean exactly 0.5,
        # which the update rule treats inclusively.
        A, B = strip((0, 6)), strip((16, 22))
        C, D = strip((10, 16)), strip((24, 30))
        Cn, Dn = strip((13, 19)), strip((24, 30))
        prev = [A, B]
        current = fm([C, D], frame_index=1)
        neighbors = {1: fm([C, D]), 2: fm([C, D]), -1: fm([Cn, Dn]), -2: fm([Cn, Dn])}
        flow = constant_field(1, 30, 0.0, 0.0)
        out, recs = temporal_consistency_step(prev, flow, current, neighbors, AssocConfig())
        assert [r.mean for r in recs] == [0.5, 0.5]
        assert all(r.decision == "update" for r in recs)
        assert np.array_equal(out[0], C) and np.array_equal(out[1], D)

    def test_one_of_four_consistent_propagates(self):
        A, B = strip((0, 6)), strip((16, 22))
        C, D = strip((10, 16)), strip((24, 30))
        Cn, Dn = strip((13, 19)), strip((24, 30))
        prev = [A, B]
        current = fm([C, D], frame_index=1)
        neighbors = {1: fm([C, D]), 2: fm([Cn, Dn]), -1: fm([Cn, Dn]), -2: fm([Cn, Dn])}
        flow = constant_field(1, 30, 0.0, 0.0)
        out, recs = temporal_consistency_step(prev, flow, current, neighbors, AssocConfig())
        assert [r.mean for r in recs] == [0.25, 0.25]
        assert all(r.decision == "propagate" for r in recs)
        assert np.array_equal(out[0], A) and np.array_equal(out[1], B)

    def test_missing_flow_hard_error(self):
        masks = disjoint_masks(2)
        with pytest.raises(MissingInputError):
            temporal_consistency_step(masks, None, fm(masks, 1), {}, AssocConfig())
        with pytest.raises(MissingInputError):
            temporal_consistency_step(masks, None, fm(masks, 1), {},
                                      AssocConfig(mode="propagation-only"))

    def test_hungarian_mode_works_without_flow(self):
        masks = disjoint_masks(2)
        out, recs = temporal_consistency_step(masks, None, fm(masks[::-1], 1), {},
                                              AssocConfig(mode="hungarian-only"))
        assert all(r.decision == "update" for r in recs)
        for a, m in zip(out, masks):
            assert np.array_equal(a, m)

    def test_relayering_uses_layer_order(self):
        # Two overlapping propagated masks: the track with rank 0 owns the
        # contested pixels.
        a, b = strip((0, 8)), strip((4, 12))
        flow = constant_field(1, 30, 0.0, 0.0)
        out, _ = temporal_consistency_step([a, b], flow, fm([], 1), {},
                                           AssocConfig(mode="propagation-only"),
                                           layer_order=[1, 0])
        assert np.array_equal(out[1], b)
        assert np.array_equal(out[0], a & ~b)


class TestNeighborAlign:
    def test_zero_flow_identity(self):
        masks = disjoint_masks(2)
        src = fm(masks, frame_index=3)
        out = neighbor_align(src, [constant_field(1, 30, 0.0, 0.0, gap=-1, source_frame=3)])
        assert out.frame_index == 2
        for a, m in zip(out.masks(), masks):
            assert np.array_equal(a, m)

    def test_backward_neighbor_shifts(self):
        masks = disjoint_masks(2)
        src = fm(masks, frame_index=0)
        out = neighbor_align(src, [constant_field(1, 30, 1.0, 0.0, gap=1, source_frame=0)])
        assert out.frame_index == 1
        for a, m in zip(out.masks(), masks):
            assert np.array_equal(a, np.roll(m, 1, axis=1))

    def test_single_gap2_equals_direct_warp(self):
        from flowseg.flowio import warp_mask
        masks = disjoint_masks(2)
        f = constant_field(1, 30, -2.0, 0.0, gap=-2, source_frame=5)
        out = neighbor_align(fm(masks, frame_index=5), [f])
        assert out.frame_index == 3
        for a, m in zip(out.masks(), masks):
            assert np.array_equal(a, warp_mask(m, f))

    def test_scores_carried(self):
        src = FrameMasks(2, (ScoredMask(strip((0, 4)), fiou=0.7, mos=0.3, layer_rank=5),))
        out = neighbor_align(src, [constant_field(1, 30, 0.0, 0.0, gap=1, source_frame=2)])
        sm = out.objects[0]
        assert (sm.fiou, sm.mos, sm.layer_rank) == (0.7, 0.3, 5)

    def test_broken_chain_rejected(self):
        src = fm(disjoint_masks(1), frame_index=2)
        with pytest.raises(ParameterError):
            neighbor_align(src, [constant_field(1, 30, 0.0, 0.0, gap=1, source_frame=4)])


def emit_flows(seq_dir, flows):
    for (t, g), f in flows.items():
        path = seq_dir / "flow" / f"gap_{g}" / f"{t:05d}.flo"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_flo(f))


def permuted_frames(tracks, seed=3):
    rng = np.random.default_rng(seed)
    frames = []
    for t, masks in enumerate(tracks.frames):
        order = rng.permutation(len(masks)).tolist()
        frames.append(fm([masks[i] for i in order], frame_index=t))
    return frames


class TestAssociateSequence:
    def test_single_frame(self):
        masks = disjoint_masks(2)
        tracks = associate_sequence([fm(masks)], None, AssocConfig(mode="hungarian-only"))
        assert tracks.num_frames == 1 and tracks.num_objects == 2
        for a, m in zip(tracks.frames[0], masks):
            assert np.array_equal(a, m)

    def test_identity_recovery_on_permuted_gt(self, tmp_path):
        spec = identity_scene(num_frames=12)
        gt, flows = render(spec)
        emit_flows(tmp_path, flows)
        frames = permuted_frames(gt)
        tracks = associate_sequence(frames, tmp_path, AssocConfig())
        # Frame-0 identities are the permuted order; find the map once.
        order = [next(j for j, g in enumerate(gt.frames[0]) if np.array_equal(g, m))
                 for m in tracks.frames[0]]
        for t in range(gt.num_frames):
            for i, j in enumerate(order):
                assert np.array_equal(tracks.frames[t][i], gt.frames[t][j])

    def test_empty_first_frame_warns(self, caplog):
        frames = [FrameMasks(0, ()), FrameMasks(1, ())]
        with caplog.at_level("WARNING"):
            tracks = associate_sequence(frames, None, AssocConfig(mode="hungarian-only"))
        assert tracks.num_objects == 0
        assert tracks.num_frames == 2

    def test_missing_flow_dir_errors_for_temporal(self):
        frames = [fm(disjoint_masks(2), 0), fm(disjoint_masks(2), 1)]
        with pytest.raises(MissingInputError):
            associate_sequence(frames, None, AssocConfig())

    def test_determinism(self, tmp_path):
        spec = identity_scene(num_frames=8)
        gt, flows = render(spec)
        emit_flows(tmp_path, flows)
        frames = permuted_frames(gt)
        a = associate_sequence(frames, tmp_path, AssocConfig())
        b = associate_sequence(frames, tmp_path, AssocConfig())
        for fa, fb in zip(a.frames, b.frames):
            for ma, mb in zip(fa, fb):
                assert np.array_equal(ma, mb)

    def test_forced_flags_collapse_to_pure_modes(self, tmp_path, monkeypatch):
        spec = identity_scene(num_frames=10)
        gt, flows = render(spec)
        emit_flows(tmp_path, flows)
        frames = permuted_frames(gt, seed=9)

        hungarian = associate_sequence(frames, tmp_path, AssocConfig(mode="hungarian-only"))
        propagation = associate_sequence(frames, tmp_path, AssocConfig(mode="propagation-only"))

        real = association.threeway_hungarian

        def all_true(m1, m2, m3):
            aligned, flags = real(m1, m2, m3)
            return aligned, [True] * len(flags)

        def all_false(m1, m2, m3):
            aligned, flags = real(m1, m2, m3)
            return aligned, [False] * len(flags)

        monkeypatch.setattr(association, "threeway_hungarian", all_true)
        forced_true = associate_sequence(frames, tmp_path, AssocConfig())
        monkeypatch.setattr(association, "threeway_hungarian", all_false)
        forced_false = associate_sequence(frames, tmp_path, AssocConfig())
        monkeypatch.undo()

        for fa, fb in zip(forced_true.frames, hungarian.frames):
            for ma, mb in zip(fa, fb):
                assert np.array_equal(ma, mb)
        for fa, fb in zip(forced_false.frames, propagation.frames):
            for ma, mb in zip(fa, fb):
                assert np.array_equal(ma, mb)

    def test_object_count_constant_and_disjoint(self, tmp_path):
        spec = identity_scene(num_frames=8)
        gt, flows = render(spec)
        emit_flows(tmp_path, flows)
        frames = permuted_frames(gt)
        tracks = associate_sequence(frames, tmp_path, AssocConfig())
        assert all(len(masks) == tracks.num_objects for masks in tracks.frames)
        for masks in tracks.frames:
            union = np.zeros(tracks.shape, dtype=bool)
            for m in masks:
                assert not (m & union).any()
                union |= m

    def test_records_written_per_frame(self, tmp_path):
        spec = identity_scene(num_frames=6)
        gt, flows = render(spec)
        emit_flows(tmp_path, flows)
        frames = permuted_frames(gt)
        tracks = associate_sequence(frames, tmp_path, AssocConfig(deltas=(1, -1)))
        assert len(tracks.records) == 6
        assert tracks.records[0] == []
        for recs in tracks.records[1:]:
            assert len(recs) == tracks.num_objects
            for r in recs:
                assert set(r.per_delta) <= {1, -1}
                assert r.decision in ("update", "propagate")
