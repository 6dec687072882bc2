import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnarch.complexity import arch_cost
from dnarch.export import (ArchitectureSnapshot, BlockArch, export_table, parse_structured, snapshot, trim,
                           verify_equivalence)
from dnarch.network import DNArchNetwork, NetworkConfig


def config(**kw):
    base = dict(in_channels=2, out_dim=3, spatial_shape=(20,), depth_base=2, width_base=4,
                kernel_hidden=16, kernel_layers=2, encoding_features=8)
    base.update(kw)
    return NetworkConfig(**base)


def randomize(net, seed):
    rng = np.random.default_rng(seed)
    for name, (lo, hi) in net.mask_bounds.items():
        net.params[name].data = np.asarray(rng.uniform(lo, hi))


class TestTrim:
    @pytest.mark.parametrize("kw", [dict(), dict(spatial_shape=(9, 10)), dict(task="dense"),
                                    dict(learn=""), dict(learn="RW")])
    def test_equivalent(self, kw):
        net = DNArchNetwork(config(**kw), seed=2)
        randomize(net, 5)
        rep = verify_equivalence(net, trim(net), n_samples=100)
        assert rep.passed, rep

    def test_drops_gated_off_blocks(self):
        net = DNArchNetwork(config())
        t = trim(net)
        assert len(t.blocks) == len(net.active_blocks())

    def test_smaller_than_masked(self):
        net = DNArchNetwork(config())
        t = trim(net)
        masked = sum(p.size for p in net.params.values())
        assert t.parameter_count() < masked

    def test_trim_is_idempotent(self):
        net = DNArchNetwork(config())
        t = trim(net)
        t2 = trim(t)
        assert t2 is not t
        x = np.random.default_rng(0).standard_normal((4, 2, 20))
        np.testing.assert_array_equal(t.forward(x), t2.forward(x))

    def test_shape_mismatch_reported(self):
        a = DNArchNetwork(config())
        b = trim(DNArchNetwork(config(task="dense")))
        rep = verify_equivalence(a, b, n_samples=4)
        assert not rep.passed and "shape" in rep.message


@settings(max_examples=15)
@given(seed=st.integers(0, 10_000))
def test_trim_equivalence_random_masks(seed):
    net = DNArchNetwork(config(), seed=seed % 7)
    randomize(net, seed)
    rep = verify_equivalence(net, trim(net), n_samples=20, seed=seed)
    assert rep.passed, rep


class TestSnapshot:
    def test_fixed_architecture(self):
        snap = snapshot(DNArchNetwork(config(learn="")))
        assert snap.depth == 2
        assert snap.blocks[0].kernel == (19,) and snap.blocks[0].resolution == (20,)
        assert snap.blocks[0].widths == (4, 4, 4)

    def test_trimmed_matches_masked(self):
        net = DNArchNetwork(config(spatial_shape=(9, 10)))
        randomize(net, 1)
        assert snapshot(trim(net)).as_dict() == snapshot(net).as_dict()

    def test_cost_of_trimmed(self):
        net = DNArchNetwork(config(learn=""))
        assert arch_cost(net.config, snapshot(trim(net))) == arch_cost(net.config, snapshot(net))


class TestTables:
    snap = ArchitectureSnapshot(1, [BlockArch(0, (5,), (64,), (16, 16, 16)),
                                    BlockArch(2, (31,), (33,), (12, 20, 8))])

    def test_text(self):
        text = export_table(self.snap)
        lines = text.splitlines()
        assert [c.strip() for c in lines[0].strip("|").split("|")] == [
            "Block", "Depth", "Kernel Size", "Resolution", "Width"]
        assert [c.strip() for c in lines[3].strip("|").split("|")] == ["3", "", "31", "33", "[12 20 8]"]
        assert "| 2 " in lines[2]

    def test_text_2d_headers(self):
        snap = ArchitectureSnapshot(2, [BlockArch(0, (3, 5), (16, 15), (4, 4, 4))])
        text = export_table(snap)
        assert "Kernel Size [y x]" in text and "[3 5]" in text and "[16 15]" in text

    def test_structured_round_trip(self, tmp_path):
        path = tmp_path / "a.json"
        text = export_table(self.snap, "structured", path)
        assert path.read_text() == text
        assert json.loads(text)["format"] == "dnarch-arch/1"
        assert parse_structured(text).as_dict() == self.snap.as_dict()

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            export_table(self.snap, "xml")

    def test_parse_rejects_inconsistent_depth(self):
        d = self.snap.as_dict()
        d["depth"] = 5
        with pytest.raises(ValueError, match="depth"):
            parse_structured(json.dumps(d))

    def test_empty(self):
        assert "| -" in export_table(ArchitectureSnapshot(1, []))
