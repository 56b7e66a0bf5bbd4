import numpy as np
import pytest

from fusetile.errors import ConfigError, PlanInfeasible
from fusetile.fixtures import mobilenet_like, pw_dw_pair, random_input, random_network
from fusetile.memsim import MemoryConfig
from fusetile.netir import propagate_shapes
from fusetile.runtime import (
    execute,
    fusion_pass,
    golden_execute,
    plan_graph,
    predicted_report,
)


def cfg(l1, db=False):
    return MemoryConfig(l1_bytes=l1, l2_bytes=max(2 * l1, 1 << 20), double_buffer=db)


class TestFusionPass:
    def test_mobilenet_structure(self):
        net, _ = mobilenet_like()
        graph = fusion_pass(net, enable=True)
        kinds = [n.kind for n in graph.nodes]
        assert kinds.count("fused") == 12
        assert len(graph.nodes) == 16
        assert kinds[0] == "dw3x3"  # leading dw has no pw before it

    def test_disable_keeps_every_layer_separate(self):
        net, _ = mobilenet_like()
        graph = fusion_pass(net, enable=False)
        assert len(graph.nodes) == len(net.layers) == 28
        assert all(not n.fused for n in graph.nodes)

    def test_every_layer_in_exactly_one_node_in_order(self):
        for seed in range(6):
            net, _ = random_network(seed)
            graph = fusion_pass(net, enable=True)
            flat = [lid for n in graph.nodes for lid in
                    ([n.target] if not n.fused else list(n.target))]
            assert flat == [l.id for l in net.layers]

    def test_greedy_left_to_right(self):
        # pw pw dw -> the *second* pw fuses; the first stays single
        from fusetile.fixtures import _ChainBuilder
        from fusetile.netir import TensorShape

        b = _ChainBuilder(np.random.default_rng(0), TensorShape(8, 8, 4))
        b.add("p0", "pw", 4, 6)
        b.add("p1", "pw", 6, 8)
        b.add("d0", "dw3x3", 8, 8, stride=1, pad=1)
        net, _ = b.finish("chain")
        graph = fusion_pass(net, enable=True)
        assert [n.target for n in graph.nodes] == ["p0", ("p1", "d0")]


class TestExecution:
    @pytest.mark.parametrize("seed", range(8))
    def test_tiled_equals_golden_on_random_networks(self, seed):
        net, blob = random_network(seed)
        x = random_input(net, seed + 100)
        golden = golden_execute(net, blob, x)
        for fuse in (True, False):
            for l1 in (65536, 3072):
                c = cfg(l1)
                try:
                    graph = plan_graph(fusion_pass(net, fuse), c)
                except PlanInfeasible:
                    assert l1 == 3072  # only the tight budget may fail
                    continue
                out, _ = execute(graph, blob, x, c)
                assert np.array_equal(out, golden), (seed, fuse, l1)

    @pytest.mark.parametrize("seed", range(4))
    def test_instrumented_ledger_equals_prediction(self, seed):
        net, blob = random_network(seed)
        x = random_input(net, seed)
        for fuse in (True, False):
            for l1 in (65536, 4096):
                c = cfg(l1)
                try:
                    graph = plan_graph(fusion_pass(net, fuse), c)
                except PlanInfeasible:
                    continue
                _, rep = execute(graph, blob, x, c)
                pred = predicted_report(graph)
                for got, want in zip(rep.nodes, pred.nodes):
                    assert got.ledger == want.ledger, got.target
                assert rep.totals() == pred.totals()

    def test_double_buffer_execution_exact(self):
        net, blob = pw_dw_pair()
        x = random_input(net, 3)
        golden = golden_execute(net, blob, x)
        c = cfg(16384, db=True)
        graph = plan_graph(fusion_pass(net, True), c)
        out, rep = execute(graph, blob, x, c)
        assert np.array_equal(out, golden)
        assert rep.totals() == predicted_report(graph).totals()

    def test_mobilenet_all_paths(self):
        net, blob = mobilenet_like(seed=1)
        x = random_input(net, 9)
        golden = golden_execute(net, blob, x)
        for fuse in (True, False):
            c = cfg(65536)
            graph = plan_graph(fusion_pass(net, fuse), c)
            out, rep = execute(graph, blob, x, c)
            assert np.array_equal(out, golden)
            assert rep.totals() == predicted_report(graph).totals()

    def test_activations_stay_lively(self):
        # quantization scaling keeps intermediate tensors informative;
        # equivalence over saturated or all-zero tensors would be vacuous
        net, blob = mobilenet_like(seed=5)
        x = random_input(net, 5)
        shapes = propagate_shapes(net)
        from fusetile import kernels
        from fusetile.netir import decode_weights

        cur = x
        stds = []
        for layer, shp in zip(net.layers, shapes):
            if layer.kind == "pw":
                w, b = decode_weights(layer, blob)
                cur, _ = kernels.pw_conv(cur, w, b, layer.quant)
            elif layer.kind == "dw3x3":
                w, b = decode_weights(layer, blob)
                chw, _ = kernels.layout_convert(cur, "HWC", "CHW")
                y, _ = kernels.dw_conv3x3(chw, w, b, layer.stride, layer.pad,
                                          layer.quant)
                cur, _ = kernels.layout_convert(y, "CHW", "HWC")
            elif layer.kind == "avgpool_global":
                cur, _ = kernels.avgpool_global(cur, layer.quant)
            else:
                w, b = decode_weights(layer, blob)
                vec, _ = kernels.linear(cur, w, b, layer.quant)
                cur = vec.reshape(1, 1, -1)
            stds.append(float(cur.astype(np.float64).std()))
        assert all(s > 8.0 for s in stds), stds

    def test_unplanned_graph_rejected(self):
        net, blob = pw_dw_pair()
        graph = fusion_pass(net, True)
        with pytest.raises(ConfigError):
            execute(graph, blob, random_input(net, 0), cfg(65536))

    def test_runtime_arena_rejects_shrunken_budget(self):
        net, blob = pw_dw_pair()
        c = cfg(65536)
        graph = plan_graph(fusion_pass(net, True), c)
        with pytest.raises(PlanInfeasible):
            execute(graph, blob, random_input(net, 0), cfg(1024))

    def test_peak_l1_within_budget(self):
        net, blob = mobilenet_like(seed=2)
        x = random_input(net, 2)
        for l1 in (65536, 16384):
            c = cfg(l1)
            graph = plan_graph(fusion_pass(net, True), c)
            _, rep = execute(graph, blob, x, c)
            assert rep.totals().peak_l1_bytes <= l1


class TestMacAccounting:
    def test_macs_conserved_across_fusion_and_tiling(self):
        net, blob = mobilenet_like(seed=3)
        x = random_input(net, 3)
        totals = set()
        for fuse in (True, False):
            for l1 in (65536, 20000):
                c = cfg(l1)
                graph = plan_graph(fusion_pass(net, fuse), c)
                _, rep = execute(graph, blob, x, c)
                totals.add(rep.total_macs)
        assert len(totals) == 1

    def test_mobilenet_mac_total(self):
        net, blob = mobilenet_like()
        c = cfg(65536)
        graph = plan_graph(fusion_pass(net, True), c)
        _, rep = execute(graph, blob, random_input(net, 0), c)
        shapes = propagate_shapes(net)
        want = 0
        ins = [net.input] + shapes[:-1]
        for layer, i, o in zip(net.layers, ins, shapes):
            if layer.kind == "dw3x3":
                want += o.h * o.w * o.c * 9
            elif layer.kind == "pw":
                want += o.h * o.w * layer.c_in * layer.c_out
            elif layer.kind == "avgpool_global":
                want += i.h * i.w * i.c
            elif layer.kind == "linear":
                want += layer.c_in * layer.c_out
        assert rep.total_macs == want
