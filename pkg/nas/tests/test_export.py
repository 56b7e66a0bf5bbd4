import json
import shutil
import subprocess

import numpy as np
import pytest
import torch
from torch import nn

from nas.blocks import ChannelMask
from nas.export import ExportError, _fold, _round_half_away, export_manifest
from nas.model import BlockSpec, PitNet, SearchNet, _Unit, select_architecture

KINDS = {"conv3x3", "dw3x3", "pw", "avgpool_global", "linear"}


@pytest.fixture(scope="module")
def exported(pruned_result, tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    summary = export_manifest(pruned_result.net, out, input_hw=96, seed=0)
    doc = json.loads((out / "model.json").read_text())
    blob = (out / "model.bin").read_bytes()
    return pruned_result, summary, doc, blob


def test_manifest_schema_and_exact_packing(exported):
    _, summary, doc, blob = exported
    assert list(doc) == ["name", "input", "layers", "weights_file"]
    assert doc["input"] == {"h": 96, "w": 96, "c": 1, "layout": "HWC"}
    assert doc["weights_file"] == "model.bin"
    cursor = 0
    for layer in doc["layers"]:
        assert layer["kind"] in KINDS
        q = layer["quant"]
        assert 1 <= q["mult"] <= 2**31 - 1 and 0 <= q["shift"] <= 31
        for ref in ("weights_ref", "bias_ref"):
            if ref in layer:
                assert layer[ref]["offset"] == cursor  # packed with no gaps
                cursor += layer[ref]["length"]
    assert cursor == len(blob) == summary["weight_params"] + sum(
        4 * l["c_out"] for l in doc["layers"] if "bias_ref" in l)


def test_weight_params_match_discrete_complexity(exported):
    result, summary, doc, _ = exported
    assert summary["weight_params"] == result.net.selected_param_count()
    manifest_weights = sum(
        l["weights_ref"]["length"] for l in doc["layers"] if "weights_ref" in l)
    assert manifest_weights == summary["weight_params"]


def test_noop_blocks_leave_no_layer(exported):
    result, summary, doc, _ = exported
    assert "noop" in result.selection  # the shared run must exercise the drop
    per_kind = {"dw_pw": 2, "pw": 1, "conv3x3": 1, "noop": 0}
    want = sum(per_kind[k] for k in result.selection) + 2  # + pool and fc
    assert len(doc["layers"]) == summary["n_layers"] == want


def test_reexport_is_byte_identical(pruned_result, tmp_path):
    export_manifest(pruned_result.net, tmp_path / "a", input_hw=96, seed=0)
    export_manifest(pruned_result.net, tmp_path / "b", input_hw=96, seed=0)
    assert (tmp_path / "a/model.json").read_bytes() == (tmp_path / "b/model.json").read_bytes()
    assert (tmp_path / "a/model.bin").read_bytes() == (tmp_path / "b/model.bin").read_bytes()


def test_engine_accepts_export(exported):
    _, summary, _, _ = exported
    engine = shutil.which("fusetile")
    assert engine, "deployment engine CLI must be installed"
    proc = subprocess.run([engine, "verify", summary["manifest"]],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr


def test_rounding_is_half_away_from_zero():
    vals = np.array([0.5, -0.5, 1.5, -1.5, 2.5, 0.49, -0.49])
    assert _round_half_away(vals).tolist() == [1, -1, 2, -2, 3, 0, -0]


def test_fold_normalizes_mantissa_and_saturates():
    assert _fold(1.0) == (16384, 14)
    assert _fold(3.0) == (24576, 13)
    assert _fold(2.0**20) == (2**20, 0)   # shift floor reached
    assert _fold(2.0**-40) == (1, 31)     # mult never drops to zero
    for ratio in (0.37, 1.0, 129.5, 3e-4):
        mult, shift = _fold(ratio)
        if 0 < shift < 31:
            assert 2**14 <= mult < 2**15


def _hand_net():
    torch.manual_seed(3)
    units = [
        _Unit("pw", nn.Conv2d(1, 6, 1), ChannelMask(6), 1, 6),
        _Unit("conv3x3", nn.Conv2d(6, 3, 3, padding=1), ChannelMask(3), 6, 3),
    ]
    return PitNet(units, nn.Linear(3, 2), c0=1)


def test_pruning_shrinks_consumer_channels(tmp_path):
    net = _hand_net()
    with torch.no_grad():
        net.units[0].mask.theta.copy_(torch.tensor([1.0, 0.0, 1.0, 1.0, 0.0, 1.0]))
        net.units[1].mask.theta.copy_(torch.tensor([0.0, 1.0, 1.0]))
    export_manifest(net, tmp_path, input_hw=16, seed=0)
    doc = json.loads((tmp_path / "model.json").read_text())
    pw, conv, pool, fc = doc["layers"]
    assert (pw["c_in"], pw["c_out"]) == (1, 4)
    assert pw["weights_ref"]["length"] == 1 * 4
    assert (conv["c_in"], conv["c_out"]) == (4, 2)  # rows for dropped inputs are gone
    assert conv["weights_ref"]["length"] == 2 * 4 * 9
    assert (pool["c_in"], pool["c_out"]) == (2, 2) and "weights_ref" not in pool
    assert (fc["c_in"], fc["c_out"]) == (2, 2)
    assert fc["weights_ref"]["length"] == 2 * 2


def test_all_zero_mask_still_exports_one_channel(tmp_path):
    net = _hand_net()
    with torch.no_grad():
        net.units[0].mask.theta.fill_(0.1)
    export_manifest(net, tmp_path, input_hw=16, seed=0)
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["layers"][0]["c_out"] == 1
    assert doc["layers"][1]["c_in"] == 1


def test_empty_chain_is_an_error(tmp_path):
    net = PitNet([], nn.Linear(4, 2), c0=4)
    with pytest.raises(ExportError):
        export_manifest(net, tmp_path, input_hw=16, seed=0)


def test_selected_noop_drops_from_exported_chain(tmp_path):
    torch.manual_seed(4)
    specs = [BlockSpec(1, 4, 2, False), BlockSpec(4, 4, 1, True)]
    net = SearchNet(specs, c0=1, n_out=2)
    with torch.no_grad():
        net.blocks[1].theta.copy_(torch.tensor([-5.0, -5.0, -5.0, 5.0]))
    selection = select_architecture(net)
    assert selection == ("dw_pw", "noop")
    pit = PitNet.from_search(net, selection)
    export_manifest(pit, tmp_path, input_hw=16, seed=0)
    doc = json.loads((tmp_path / "model.json").read_text())
    assert [l["id"] for l in doc["layers"]] == ["dw0", "pw0", "pool", "fc"]
