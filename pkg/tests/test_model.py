"""Network dimension contract, forward semantics, gradients, checkpoints."""

import math

import numpy as np
import pytest

from vbin import model as md
from vbin import numerics as nm
from vbin.datamodel import LabeledSample, ValidationError

from test_numerics import central_diff

# encode(all-zero 20x6) with seed-0 default parameters (hidden 128); frozen
# after the build was verified against finite differences
GOLDEN_ZERO_ENCODING = np.array([
    -0.0324642167992561, -0.00674125207335798, 0.04826362089625629,
    0.06937610621982696, -0.07725777940386604, 0.11194257020490647,
    0.10519421346767593, 0.03880563372502426, -0.01984792385837381,
    -0.04765012112042404, -0.10477202073468617, -0.03964510299226735,
    -0.03882595234314606, -0.11838770796248813, 0.00715484375237483,
    0.02670049189753262, 0.08155907059344136, -0.11416383038299462,
    -0.02209685284097556, -0.07121536004264634, 0.1303416823252278,
    -0.02403703999880424, 0.00193109604213748, 0.06273780853996992,
    -0.04977785416380495, -0.06785309887173206, -0.02856652605327962,
    0.00909220420020998, -0.075304282977604, 0.00899218471287566,
    -0.0554168928803676, 0.08976255279707143, 0.01617724640520702,
    -0.03272611850923267, -0.06436799437382193, 0.04765356738200879,
    0.02099532318765034, -0.01090502358836269, 0.08435194788869023,
    0.06362160380284226, -0.00966997039440946, -0.05702348150994199,
    -0.02757394282392789, 0.09765564749892909, -0.02789198594503666,
    0.05053981432842389, -0.02300436860450337, -0.0168473538981983])


def random_sample(rng, scale=0.3):
    return LabeledSample(0, 1, 19, 0, math.inf, -1, 0,
                         rng.standard_normal((20, 6)) * scale,
                         rng.standard_normal((8, 20, 6)) * scale,
                         rng.standard_normal((8, 6)))


@pytest.fixture(scope="module")
def small_params():
    return md.VbinParameters.init(seed=1, hidden_size=8)


class TestDimensionContract:
    EXPECTED = {
        "piu.fc0_w": (102, 64), "piu.fc0_b": (64,),
        "niu.fc1_w": (512, 400), "niu.fc1_b": (400,),
        "niu.fc2_w": (400, 400), "niu.fc2_b": (400,),
        "niu.fc3_w": (400, 48), "niu.fc3_b": (48,),
        "dec.fc4_w": (96, 48), "dec.fc4_b": (48,),
        "dec.fc5_w": (48, 3), "dec.fc5_b": (3,),
    }

    def test_all_table_widths(self):
        params = md.VbinParameters.init(seed=0)
        tensors = params.tensors()
        for name, shape in self.EXPECTED.items():
            assert tensors[name].values.shape == shape, name
        assert tensors["enc.proj_w"].values.shape == (128, 48)
        assert md.ENCODING_SIZE == 48 and md.PAIR_EMBED_DIM == 64
        assert md.SOCIAL_DIM == 48 and md.NUM_NEIGHBOR_SLOTS == 8
        assert md.PIU_INPUT == 102 and md.NIU_INPUT == 512

    def test_wrong_shape_rejected(self):
        params = md.VbinParameters.init(seed=0, hidden_size=8)
        tensors = params.tensors()
        tensors["niu.fc1_w"] = nm.parameter(np.zeros((512, 399)), "niu.fc1_w")
        with pytest.raises(md.CheckpointError, match="400"):
            md.VbinParameters(tensors, 8)


class TestEncoder:
    def test_golden_zero_sequence(self):
        params = md.VbinParameters.init(seed=0)
        h = md.encode(np.zeros((20, 6)), params.encoder)
        assert np.allclose(h.values, GOLDEN_ZERO_ENCODING, atol=1e-12)

    def test_weight_sharing_identical_encodings(self, small_params):
        rng = np.random.default_rng(2)
        seq = rng.standard_normal((20, 6))
        a = md.encode(seq, small_params.encoder)
        b = md.encode(seq.copy(), small_params.encoder)
        assert np.array_equal(a.values, b.values)

    def test_nonfinite_input_rejected(self, small_params):
        seq = np.zeros((20, 6))
        seq[3, 2] = np.nan
        with pytest.raises(ValidationError):
            md.encode(seq, small_params.encoder)

    def test_gradient_of_every_gru_weight(self, small_params):
        rng = np.random.default_rng(3)
        seq = rng.standard_normal((20, 6)) * 0.5
        enc = small_params.encoder
        tensors = enc.tensors()

        def loss():
            return nm.tensor_sum(md.encode(seq, enc))

        base = loss()
        nm.zero_gradients(list(tensors.values()))
        nm.backward(base)
        check_rng = np.random.default_rng(4)
        for name, p in tensors.items():
            flat = list(np.ndindex(p.values.shape))
            picks = check_rng.choice(len(flat), size=min(4, len(flat)),
                                     replace=False)
            for k in picks:
                idx = flat[int(k)]
                fd = central_diff(lambda: float(loss().values), p.values, idx)
                ad = p.grad[idx]
                denom = max(abs(fd), abs(ad), 1e-8)
                assert abs(fd - ad) / denom < 1e-4, (name, idx)


class TestPairUnit:
    def test_output_width(self, small_params):
        rng = np.random.default_rng(5)
        out = md.piu(nm.constant(rng.standard_normal(48)),
                     nm.constant(rng.standard_normal(48)),
                     nm.constant(rng.standard_normal(6)), small_params)
        assert out.values.shape == (64,)

    def test_zero_inputs_give_relu_of_bias(self, small_params):
        out = md.piu(nm.constant(np.zeros(48)), nm.constant(np.zeros(48)),
                     nm.constant(np.zeros(6)), small_params)
        expect = np.maximum(small_params.fc0_b.values, 0.0)
        assert np.array_equal(out.values, expect)

    def test_asymmetric_in_pair_order(self, small_params):
        rng = np.random.default_rng(6)
        hi = nm.constant(rng.standard_normal(48))
        hj = nm.constant(rng.standard_normal(48))
        c = nm.constant(rng.standard_normal(6))
        ab = md.piu(hi, hj, c, small_params).values
        ba = md.piu(hj, hi, c, small_params).values
        assert np.max(np.abs(ab - ba)) > 1e-6


class TestNeighborhoodUnit:
    def test_output_width(self, small_params):
        rng = np.random.default_rng(7)
        pairs = [nm.constant(rng.standard_normal(64)) for _ in range(8)]
        assert md.niu(pairs, small_params).values.shape == (48,)

    def test_zero_embeddings_bias_propagation(self, small_params):
        pairs = [nm.constant(np.zeros(64)) for _ in range(8)]
        out = md.niu(pairs, small_params).values
        x = np.maximum(small_params.fc1_b.values, 0.0)
        x = np.maximum(x @ small_params.fc2_w.values
                       + small_params.fc2_b.values, 0.0)
        expect = np.maximum(x @ small_params.fc3_w.values
                            + small_params.fc3_b.values, 0.0)
        assert np.allclose(out, expect, atol=1e-12)

    def test_slot_order_matters(self, small_params):
        rng = np.random.default_rng(8)
        pairs = [nm.constant(rng.standard_normal(64)) for _ in range(8)]
        a = md.niu(pairs, small_params).values
        b = md.niu(pairs[::-1], small_params).values
        assert np.max(np.abs(a - b)) > 1e-6

    def test_wrong_slot_count(self, small_params):
        with pytest.raises(nm.ShapeError):
            md.niu([nm.constant(np.zeros(64))] * 7, small_params)


class TestDecoder:
    def test_probabilities_normalized_and_deterministic(self, small_params):
        rng = np.random.default_rng(9)
        s = nm.constant(rng.standard_normal(48))
        h = nm.constant(rng.standard_normal(48))
        p1 = md.decode(s, h, small_params)
        p2 = md.decode(s, h, small_params)
        assert p1.shape == (3,)
        assert abs(p1.sum() - 1.0) <= 1e-9
        assert np.array_equal(p1, p2)


class TestForwardBatch:
    def test_batch_of_one_equals_single_path_exactly(self, small_params):
        rng = np.random.default_rng(10)
        s = random_sample(rng)
        single = md.sample_forward(s, small_params)
        logits = md.forward_batch(md.assemble_batch([s]), small_params)
        batched = md._softmax(logits.values[0])
        assert np.array_equal(single, batched)

    def test_batch_of_seven_matches_sequential_oracle(self, small_params):
        rng = np.random.default_rng(11)
        samples = [random_sample(rng) for _ in range(7)]
        logits = md.forward_batch(md.assemble_batch(samples), small_params)
        batched = md._softmax(logits.values)
        for i, s in enumerate(samples):
            assert np.max(np.abs(batched[i] - md.sample_forward(s, small_params))) < 1e-9

    def test_shared_neighbors_encoded_once(self, small_params):
        rng = np.random.default_rng(12)
        base = random_sample(rng)
        other = random_sample(rng)
        # the two samples share every neighbor sequence and each other's
        # target, so only 2 distinct sequences + 8 shared neighbors exist
        other.neighbor_seqs = base.neighbor_seqs.copy()
        batch = md.assemble_batch([base, other])
        assert batch.sequences.shape[0] == 2 + 8
        assert len(batch) == 2

    def test_dangling_neighbor_index(self, small_params):
        rng = np.random.default_rng(13)
        batch = md.assemble_batch([random_sample(rng)])
        batch.neighbor_index[0, 3] = 99
        with pytest.raises(ValidationError, match="dangling"):
            md.forward_batch(batch, small_params)


class TestWeightSharing:
    def test_mutating_pair_weights_changes_all_pairs(self, small_params):
        rng = np.random.default_rng(14)
        s = random_sample(rng)
        h_t = md.encode(s.target_seq, small_params.encoder)
        before = [md.piu(h_t, md.encode(s.neighbor_seqs[j], small_params.encoder),
                         nm.constant(s.connections[j]), small_params).values
                  for j in range(8)]
        small_params.fc0_b.values += 0.5
        after = [md.piu(h_t, md.encode(s.neighbor_seqs[j], small_params.encoder),
                        nm.constant(s.connections[j]), small_params).values
                 for j in range(8)]
        small_params.fc0_b.values -= 0.5
        for b, a in zip(before, after):
            assert np.max(np.abs(b - a)) > 0


class TestVlstm:
    def test_neighbor_independence_exact(self):
        params = md.VlstmParameters.init(seed=2, hidden_size=8)
        rng = np.random.default_rng(15)
        s = random_sample(rng)
        base = md.vlstm_forward(s.target_seq, params)
        s.neighbor_seqs = rng.standard_normal((8, 20, 6)) * 100.0
        s.connections = rng.standard_normal((8, 6)) * 100.0
        probs = md.predict_probs([s], params)[0]
        assert np.array_equal(base, probs)

    def test_probabilities_sum_to_one(self):
        params = md.VlstmParameters.init(seed=2, hidden_size=8)
        rng = np.random.default_rng(16)
        probs = md.vlstm_forward(rng.standard_normal((20, 6)), params)
        assert abs(probs.sum() - 1.0) <= 1e-9

    def test_end_to_end_gradient(self):
        params = md.VlstmParameters.init(seed=3, hidden_size=8)
        rng = np.random.default_rng(17)
        seqs = rng.standard_normal((2, 20, 6)) * 0.5
        labels = [0, 2]
        tensors = params.tensors()

        def loss():
            return nm.softmax_nll(md.vlstm_logits_batch(seqs, params), labels)[1]

        nm.zero_gradients(list(tensors.values()))
        nm.backward(loss())
        check_rng = np.random.default_rng(18)
        for name, p in tensors.items():
            flat = list(np.ndindex(p.values.shape))
            picks = check_rng.choice(len(flat), size=min(3, len(flat)),
                                     replace=False)
            for k in picks:
                idx = flat[int(k)]
                fd = central_diff(lambda: float(loss().values), p.values, idx)
                denom = max(abs(fd), abs(p.grad[idx]), 1e-8)
                assert abs(fd - p.grad[idx]) / denom < 1e-4, (name, idx)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, small_params):
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(small_params, path, train_config={"epochs": 3},
                           seed_record=7)
        loaded, meta = md.load_checkpoint(path)
        assert isinstance(loaded, md.VbinParameters)
        assert meta["train_config"] == {"epochs": 3} and meta["seed"] == 7
        for name, tensor in small_params.tensors().items():
            assert np.array_equal(tensor.values, loaded.tensors()[name].values)

    def test_corrupted_payload(self, tmp_path, small_params):
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(small_params, path)
        blob = bytearray(path.read_bytes())
        blob[200] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(md.IntegrityError):
            md.load_checkpoint(path)

    def test_vlstm_checkpoint_rejected_by_vbin_loader(self, tmp_path):
        params = md.VlstmParameters.init(seed=0, hidden_size=8)
        path = tmp_path / "baseline.ckpt"
        md.save_checkpoint(params, path)
        with pytest.raises(md.CheckpointError, match="vlstm"):
            md.load_checkpoint(path, expected_kind="vbin")

    def test_version_guard(self, tmp_path, small_params):
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(small_params, path)
        blob = bytearray(path.read_bytes())
        blob[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(md.FormatError, match="version"):
            md.load_checkpoint(path)
