import struct

import pytest
import torch

from sglab import nets
from sglab.checkpoint import CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from sglab.config import TrainConfig
from sglab.training import init_state


@pytest.fixture(scope="module", params=["sigan", "giegan", "diegan"])
def ckpt(request):
    return init_state(TrainConfig(variant=request.param, lr_size=4, batch_size=4, seed=2), 3).to_checkpoint()


def test_roundtrip_bit_exact(ckpt, tmp_path):
    path = tmp_path / "m.sgck"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.variant == ckpt.variant and back.config == ckpt.config
    assert back.generator == ckpt.generator and back.discriminator == ckpt.discriminator
    for k, v in ckpt.tensors().items():
        assert torch.equal(back.tensors()[k], v), k
    assert to_bytes(back) == path.read_bytes()


def test_forward_after_reload_bit_exact(ckpt, tmp_path):
    path = tmp_path / "m.sgck"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    x = torch.rand(2, ckpt.generator.input_channels, 4, 4, generator=torch.Generator().manual_seed(0))
    a = nets.generator_forward(ckpt.generator, ckpt.gen_params, x)
    b = nets.generator_forward(back.generator, back.gen_params, x)
    assert torch.equal(a.output, b.output) and torch.equal(a.features, b.features)


def test_tensor_table_matches_spec_names(ckpt):
    names = set()
    data = to_bytes(ckpt)
    pos = 8
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4 + hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4 : pos + 4 + n].decode()
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 + 4 * rank + 1
        size = 4
        for d in dims:
            size *= d
        pos += size
        names.add(name)
    assert pos == len(data) - 4
    expected = {f"generator/{n}" for n in ckpt.generator.param_names()}
    expected |= {f"discriminator/{n}" for n in ckpt.discriminator.param_names()}
    assert names == expected


@pytest.mark.parametrize("cut", [3, 11, 100, -5, -1])
def test_truncated_rejected(ckpt, cut):
    data = to_bytes(ckpt)
    with pytest.raises(CheckpointError, match="corrupt checkpoint"):
        from_bytes(data[:cut])


def test_bad_magic(ckpt):
    with pytest.raises(CheckpointError, match="bad magic"):
        from_bytes(b"XXXX" + to_bytes(ckpt)[4:])


def test_version_mismatch(ckpt):
    data = bytearray(to_bytes(ckpt))
    data[4:8] = struct.pack("<I", 9)
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(bytes(data))


def test_bit_flip_detected(ckpt):
    data = bytearray(to_bytes(ckpt))
    data[len(data) // 2] ^= 0x10
    with pytest.raises(CheckpointError, match="corrupt checkpoint"):
        from_bytes(bytes(data))


def test_trailing_garbage(ckpt):
    with pytest.raises(CheckpointError):
        from_bytes(to_bytes(ckpt) + b"\0")


def test_failed_save_leaves_old_file(ckpt, tmp_path):
    path = tmp_path / "m.sgck"
    save_checkpoint(ckpt, path)
    before = path.read_bytes()
    broken = init_state(TrainConfig(lr_size=4, batch_size=4), 3).to_checkpoint()
    del broken.gen_params["head.bias"]
    with pytest.raises(CheckpointError):
        save_checkpoint(broken, path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["m.sgck"]
