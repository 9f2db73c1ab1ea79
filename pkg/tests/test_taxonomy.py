import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiersearch import Taxonomy, parse_taxonomy, random_taxonomy
from hiersearch.errors import (
    CycleDetected,
    DegenerateTree,
    DuplicateName,
    EmptyInput,
    InvalidLevelOrder,
    LevelNotOnPath,
    MultipleParents,
    MultipleRoots,
    OrphanNode,
    UnknownNode,
)

from conftest import height_by_enumeration, lcs_by_enumeration, random_tree

EDGE_T0 = """
ROOT -> E_earlymodern [era]
ROOT -> E_classical [era]
E_earlymodern -> T_tomb [type]
E_earlymodern -> T_mosque [type]
E_classical -> T_stupa [type]
T_tomb -> D_mughal [dynasty]
T_tomb -> D_lodi [dynasty]
T_mosque -> D_mughal_m [dynasty]
T_stupa -> D_maurya [dynasty]
D_mughal -> humayun_tomb [monument]
D_mughal -> taj_mahal [monument]
D_lodi -> lodi_tomb [monument]
D_mughal_m -> jama_masjid [monument]
D_maurya -> sanchi_stupa [monument]
"""


class TestParse:
    def test_two_leaf_edges(self):
        t = parse_taxonomy("ROOT -> A\nROOT -> B\n")
        assert len(t) == 3
        assert t.height("ROOT") == 1
        assert t.leaf_ids == ("A", "B")

    def test_single_node(self):
        t = parse_taxonomy("ROOT\n")
        assert t.max_height == 0
        assert t.leaf_ids == ("ROOT",)

    def test_single_node_edge_form_declaration(self):
        t = parse_taxonomy("ROOT [era]\nROOT -> A\n")
        assert t.node("ROOT").level == "era"

    def test_cycle_names_members(self):
        with pytest.raises(CycleDetected) as exc:
            parse_taxonomy("A -> B\nB -> A\n")
        assert set(exc.value.nodes) == {"A", "B"}

    def test_cycle_detached_from_root(self):
        with pytest.raises(CycleDetected) as exc:
            parse_taxonomy("R -> X\nA -> B\nB -> C\nC -> A\n")
        assert set(exc.value.nodes) == {"A", "B", "C"}

    def test_multiple_roots(self):
        with pytest.raises(MultipleRoots):
            parse_taxonomy("R -> A\nS -> B\n")
        with pytest.raises(MultipleRoots):
            parse_taxonomy("R\n  A\nS\n")

    def test_multi_parent_rejected(self):
        with pytest.raises(MultipleParents):
            parse_taxonomy("R -> A\nR -> B\nA -> C\nB -> C\n")

    def test_duplicate_name_indented(self):
        with pytest.raises(DuplicateName) as exc:
            parse_taxonomy("R\n  A\n  A\n")
        assert exc.value.nodes == ("A",)
        assert exc.value.line == 3

    def test_orphan_indent(self):
        with pytest.raises(OrphanNode):
            parse_taxonomy("R\n      A\n")

    def test_empty(self):
        with pytest.raises(EmptyInput):
            parse_taxonomy("")
        with pytest.raises(EmptyInput):
            parse_taxonomy("# only a comment\n\n")

    def test_level_order_enforced(self):
        with pytest.raises(InvalidLevelOrder):
            parse_taxonomy("R\n  A:dynasty\n    B:era\n")
        with pytest.raises(InvalidLevelOrder):
            parse_taxonomy("R\n  A:custom\n    B:custom\n")

    def test_edge_and_indent_forms_agree(self, t0):
        e = parse_taxonomy(EDGE_T0)
        assert e.leaf_ids == t0.leaf_ids
        assert e.to_text() == t0.to_text()
        np.testing.assert_array_equal(e.similarity_matrix(), t0.similarity_matrix())

    def test_round_trip(self, t0):
        assert parse_taxonomy(t0.to_text()).to_text() == t0.to_text()

    def test_comments_ignored(self):
        t = parse_taxonomy("R  # root\n  A:era # first\n")
        assert t.node("A").level == "era"


class TestT0:
    def test_heights(self, t0):
        assert t0.max_height == 4
        assert t0.height("E_classical") == 3
        assert t0.height("T_tomb") == 2
        assert t0.height("D_mughal") == 1
        assert t0.height("taj_mahal") == 0

    def test_leaf_order(self, t0):
        assert t0.leaf_ids == ("humayun_tomb", "taj_mahal", "lodi_tomb", "jama_masjid", "sanchi_stupa")

    def test_lcs(self, t0):
        assert t0.lowest_common_subsumer("humayun_tomb", "taj_mahal") == "D_mughal"
        assert t0.lowest_common_subsumer("taj_mahal", "taj_mahal") == "taj_mahal"
        assert t0.lowest_common_subsumer("humayun_tomb", "sanchi_stupa") == "ROOT"

    def test_lcs_unknown(self, t0):
        with pytest.raises(UnknownNode):
            t0.lowest_common_subsumer("humayun_tomb", "qutub_minar")

    def test_dissimilarity(self, t0):
        assert t0.class_dissimilarity("humayun_tomb", "taj_mahal") == 0.25
        assert t0.class_dissimilarity("lodi_tomb", "lodi_tomb") == 0.0
        assert t0.class_dissimilarity("humayun_tomb", "sanchi_stupa") == 1.0

    def test_similarity(self, t0):
        assert t0.class_similarity("humayun_tomb", "taj_mahal") == 0.75
        assert t0.class_similarity("humayun_tomb", "lodi_tomb") == 0.5
        assert t0.class_similarity("humayun_tomb", "jama_masjid") == 0.25
        # a tomb is closer to another tomb than to a mosque
        assert t0.class_similarity("taj_mahal", "humayun_tomb") > t0.class_similarity("taj_mahal", "jama_masjid")

    def test_similarity_matrix_subset(self, t0):
        S = t0.similarity_matrix(["humayun_tomb", "taj_mahal", "lodi_tomb"])
        np.testing.assert_array_equal(S, [[1, 0.75, 0.5], [0.75, 1, 0.5], [0.5, 0.5, 1]])

    def test_similarity_matrix_trivial_cases(self):
        assert parse_taxonomy("R\n  A\n").similarity_matrix().tolist() == [[1.0]]
        np.testing.assert_array_equal(parse_taxonomy("R -> A\nR -> B").similarity_matrix(), np.eye(2))

    def test_degenerate(self):
        t = parse_taxonomy("ROOT")
        with pytest.raises(DegenerateTree):
            t.class_similarity("ROOT", "ROOT")
        with pytest.raises(DegenerateTree):
            t.similarity_matrix()

    def test_project(self, t0):
        assert t0.project_to_level("humayun_tomb", "dynasty") == "D_mughal"
        assert t0.project_to_level("humayun_tomb", "monument") == "humayun_tomb"
        assert t0.project_to_level("sanchi_stupa", "era") == "E_classical"
        with pytest.raises(LevelNotOnPath):
            t0.project_to_level("sanchi_stupa", "galaxy")

    def test_levels(self, t0):
        assert t0.levels() == ["era", "type", "dynasty", "monument"]
        assert t0.level_nodes("type") == ["T_tomb", "T_mosque", "T_stupa"]

    def test_graft(self, t0):
        t = t0.graft("T_tomb", [("D_new", "dynasty"), ("new_tomb", "monument")])
        assert t.leaf_ids[-1] == "new_tomb"
        assert t.class_similarity("new_tomb", "taj_mahal") == 0.5
        with pytest.raises(DuplicateName):
            t0.graft("T_tomb", [("D_lodi", "dynasty")])


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 50), st.integers(0, 2**32 - 1))
    def test_lcs_and_heights_match_enumeration(self, n, seed):
        rng = np.random.default_rng(seed)
        t = random_tree(n, rng)
        names = [node.id for node in t.nodes]
        for node in t.nodes:
            assert node.height == height_by_enumeration(t, node.id)
        for _ in range(20):
            u, v = rng.choice(names, 2)
            assert t.lowest_common_subsumer(u, v) == lcs_by_enumeration(t, u, v)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**32 - 1))
    def test_similarity_symmetric_and_bounded(self, n, seed):
        t = random_tree(n, np.random.default_rng(seed))
        if t.max_height == 0:
            return
        S = t.similarity_matrix()
        np.testing.assert_array_equal(S, S.T)
        assert S.min() >= 0 and S.max() <= 1
        np.testing.assert_array_equal(np.diag(S), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 40), st.integers(0, 2**32 - 1))
    def test_monotone_coarsening(self, n, seed):
        rng = np.random.default_rng(seed)
        t = random_tree(n, rng)
        leaves = t.leaf_ids
        if len(leaves) < 3:
            return
        for _ in range(20):
            u, v, w = rng.choice(leaves, 3)
            a, b = t.lowest_common_subsumer(u, v), t.lowest_common_subsumer(u, w)
            if a != b and b in t.ancestors(a):
                assert t.class_similarity(u, v) > t.class_similarity(u, w)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 60), st.integers(0, 2**32 - 1))
    def test_similarity_psd(self, n, seed):
        t = random_tree(n, np.random.default_rng(seed))
        if t.max_height == 0 or t.n_leaves > 30:
            return
        assert np.linalg.eigvalsh(t.similarity_matrix()).min() >= -1e-9

    def test_random_taxonomy_shape(self):
        t = random_taxonomy((5, 11, 37, 143), rng=0)
        assert t.n_leaves == 143
        assert t.max_height == 4
        assert [len(t.level_nodes(lv)) for lv in ("era", "type", "dynasty", "monument")] == [5, 11, 37, 143]
        assert all(t.node(leaf).depth == 4 for leaf in t.leaf_ids)

    def test_content_hash_stable(self, t0):
        assert t0.content_hash() == parse_taxonomy(EDGE_T0).content_hash()
