import struct
from dataclasses import replace

import numpy as np
import pytest

import oracles
from gatcap.checkpoint import (MAGIC, CheckpointError, CorruptError, MagicError, ShapeMismatchError,
                               TruncatedError, crc64, from_bytes, load_checkpoint, read_checkpoint,
                               save_checkpoint, to_bytes)
from gatcap.config import ModelConfig
from gatcap.model import collate_tokens, batch_logits
from gatcap.params import init_params
from gatcap.regions import RegionBatch
from gatcap.scenes import Vocabulary

CFG = ModelConfig(d=5, d_m=8, d_h=6, d_w=4, h=2, L_enc=1, L_dec=1, d_ff=7, V=9, T_max=5)
TINY = ModelConfig(d=4, d_m=4, d_h=3, d_w=3, h=2, L_enc=1, L_dec=1, d_ff=5, V=6, T_max=4)


@pytest.fixture
def params():
    return init_params(CFG, 3)


class TestCRC:
    def test_check_value(self):
        assert crc64(b"123456789") == 0x995DC9BBDF1939FA

    def test_empty(self):
        assert crc64(b"") == 0

    def test_incremental(self):
        data = bytes(range(200))
        assert crc64(data[120:], crc64(data[:120])) == crc64(data)


class TestLayout:
    def test_header_and_trailer(self, params):
        buf = to_bytes(params, CFG)
        assert buf[:8] == MAGIC
        (rec_len,) = struct.unpack("<Q", buf[8:16])
        record = buf[16: 16 + rec_len].decode()
        assert "d_m=8" in record.splitlines()
        assert struct.unpack("<Q", buf[-8:])[0] == crc64(buf[:-8])

    def test_first_parameter_record(self, params):
        buf = to_bytes(params, CFG)
        (rec_len,) = struct.unpack("<Q", buf[8:16])
        pos = 16 + rec_len
        first = sorted(params)[0]
        (n,) = struct.unpack("<Q", buf[pos: pos + 8])
        assert buf[pos + 8: pos + 8 + n].decode() == first
        pos += 8 + n
        (rank,) = struct.unpack("<Q", buf[pos: pos + 8])
        dims = struct.unpack(f"<{rank}Q", buf[pos + 8: pos + 8 + 8 * rank])
        assert dims == params[first].shape
        data = np.frombuffer(buf[pos + 8 + 8 * rank:], dtype="<f8", count=int(np.prod(dims)))
        np.testing.assert_array_equal(data.reshape(dims), params[first].data)


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, params, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, CFG, a)
        p2, cfg2 = load_checkpoint(a)
        save_checkpoint(p2, cfg2, b)
        assert a.read_bytes() == b.read_bytes()
        assert cfg2 == CFG

    def test_loaded_logits_exactly_equal(self, params, tmp_path):
        save_checkpoint(params, CFG, tmp_path / "m.ckpt")
        loaded, cfg = load_checkpoint(tmp_path / "m.ckpt")
        rng = np.random.default_rng(0)
        regions = RegionBatch.collate([oracles.random_regions(rng, n, CFG.d) for n in (1, 3, 2)])
        tokens = collate_tokens([[4, 5], [6, 7, 8], [3]], CFG.T_max)
        np.testing.assert_array_equal(batch_logits(regions, tokens, params, CFG).data,
                                      batch_logits(regions, tokens, loaded, cfg).data)

    def test_vocabulary_stored(self, params, tmp_path):
        vocab = Vocabulary(["red", "cup", "left", "of"])
        save_checkpoint(params, CFG, tmp_path / "v.ckpt", vocab)
        assert read_checkpoint(tmp_path / "v.ckpt").vocab == vocab

    @pytest.mark.parametrize("override", [dict(mode_geometry="add"), dict(mode_position="sinusoidal"),
                                          dict(glu_placement="enc_dec"), dict(glu_placement="none")])
    def test_every_variant(self, override):
        cfg = replace(CFG, **override)
        p = init_params(cfg, 1)
        ck = from_bytes(to_bytes(p, cfg))
        assert ck.config == cfg
        assert all(np.array_equal(ck.params[k].data, p[k].data) for k in p)

    def test_no_temp_files_left(self, params, tmp_path):
        save_checkpoint(params, CFG, tmp_path / "m.ckpt")
        assert [f.name for f in tmp_path.iterdir()] == ["m.ckpt"]


class TestErrors:
    def test_every_truncation(self):
        buf = to_bytes(init_params(TINY, 0), TINY)
        for n in range(len(buf)):
            with pytest.raises(TruncatedError):
                from_bytes(buf[:n])

    def test_truncated_file_on_disk(self, params, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, CFG, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(TruncatedError):
            load_checkpoint(path)

    @pytest.mark.parametrize("magic", [b"GATCKPT2", b"XXXXXXXX", b"gatckpt1"])
    def test_bad_magic(self, params, magic):
        buf = to_bytes(params, CFG)
        with pytest.raises(MagicError):
            from_bytes(magic + buf[8:])

    def test_flipped_bit(self, params):
        buf = bytearray(to_bytes(params, CFG))
        buf[-50] ^= 0x04
        with pytest.raises(CorruptError):
            from_bytes(bytes(buf))

    def test_extra_bytes(self, params):
        with pytest.raises(CheckpointError):
            from_bytes(to_bytes(params, CFG) + b"\0" * 8)

    def test_shape_mismatch(self, params):
        wrong = replace(CFG, d_ff=9)
        with pytest.raises(ShapeMismatchError):
            from_bytes(to_bytes(params, wrong))

    def test_missing_parameter(self, params):
        del params["out.b_p"]
        with pytest.raises(ShapeMismatchError):
            from_bytes(to_bytes(params, CFG))

    def test_error_kinds_distinct(self):
        kinds = {MagicError, TruncatedError, CorruptError, ShapeMismatchError}
        assert len(kinds) == 4 and all(issubclass(k, CheckpointError) for k in kinds)
