from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evcam_vlc.errors import InvalidArgument
from evcam_vlc.wh_codec import (
    Codebook, Codeword, bits_to_symbols, build_codebook, build_hadamard, codebook_rows, count_transitions,
    decode_codeword, decode_stream, encode_bits, encode_symbol, symbols_to_bits, transition_template,
)


@pytest.fixture(scope="module")
def book():
    return build_codebook()


def sign_template(book, s, prev=None):
    return np.sign(book.templates(prev)[s]).astype(np.int8)


class TestHadamard:
    def test_base_case(self):
        np.testing.assert_array_equal(build_hadamard(2), [[1, 1], [1, -1]])

    def test_first_row_all_ones(self):
        assert np.all(build_hadamard(16)[0] == 1)

    @pytest.mark.parametrize("order", [2, 4, 8, 16, 32])
    def test_orthogonal(self, order):
        h = build_hadamard(order).astype(int)
        np.testing.assert_array_equal(h @ h.T, order * np.eye(order, dtype=int))

    @pytest.mark.parametrize("order", [0, 1, 3, 12, 64, -4])
    def test_rejects_unsupported_order(self, order):
        with pytest.raises(InvalidArgument):
            build_hadamard(order)

    def test_invalid_argument_is_value_error(self):
        with pytest.raises(ValueError):
            build_hadamard(6)


class TestCodebook:
    def test_sixteen_entries_eight_negated(self, book):
        assert len(book) == 16
        for i in range(8):
            np.testing.assert_array_equal(book[i + 8].chips, -book[i].chips)

    def test_selected_rows_have_largest_transition_counts(self, book):
        h = build_hadamard(16)
        all_counts = sorted((count_transitions(r) for r in h), reverse=True)
        picked = [book[i].transitions for i in range(8)]
        assert picked == all_counts[:8]
        assert picked == sorted(picked, reverse=True)

    def test_ordering_convention(self, book):
        h = build_hadamard(16)
        rows = [int(np.flatnonzero((h == book[i].chips).all(axis=1))[0]) for i in range(8)]
        assert rows == [1, 9, 13, 5, 7, 15, 11, 3]
        assert [book[i].transitions for i in range(8)] == [15, 14, 13, 12, 11, 10, 9, 8]

    def test_entries_distinct(self, book):
        for a, b in itertools.combinations(range(16), 2):
            assert not np.array_equal(book[a].chips, book[b].chips)

    def test_orthogonality_table(self, book):
        gram = book.chips.astype(int) @ book.chips.T.astype(int)
        for i, j in itertools.product(range(16), repeat=2):
            if i == j:
                expected = 16
            elif abs(i - j) == 8:
                expected = -16
            else:
                expected = 0
            assert gram[i, j] == expected, (i, j)

    def test_deterministic(self):
        build_codebook.cache_clear()
        a = build_codebook()
        build_codebook.cache_clear()
        b = build_codebook()
        np.testing.assert_array_equal(a.chips, b.chips)
        assert a == b

    def test_chips_read_only(self, book):
        with pytest.raises(ValueError):
            book.chips[0, 0] = 0

    def test_codeword_validation(self):
        with pytest.raises(InvalidArgument):
            Codeword(index=0, chips=np.ones(15, np.int8), transitions=0)
        with pytest.raises(InvalidArgument):
            Codeword(index=0, chips=np.ones(16, np.int8), transitions=3)

    def test_codebook_needs_sixteen(self, book):
        with pytest.raises(InvalidArgument):
            Codebook(entries=book.entries[:15])

    def test_rows_for_csv(self, book):
        rows = codebook_rows(book)
        assert rows[0][0] == 0 and len(rows[0][1]) == 16 and rows[0][2] == 15
        assert rows[8][1] == [-c for c in rows[0][1]]


class TestEncode:
    def test_symbol_zero(self, book):
        assert encode_symbol(0, book) is book[0]

    def test_symbol_fifteen_negates_seven(self, book):
        np.testing.assert_array_equal(encode_symbol(15, book).chips, -encode_symbol(7, book).chips)

    @pytest.mark.parametrize("sym", [-1, 16, 100])
    def test_out_of_range(self, sym):
        with pytest.raises(InvalidArgument):
            encode_symbol(sym)

    def test_rate_one_quarter(self):
        assert encode_bits(np.zeros(8, np.uint8)).size == 32

    def test_msb_first_mapping(self, book):
        chips = encode_bits([0, 0, 0, 0, 1, 1, 1, 1], book)
        np.testing.assert_array_equal(chips, np.concatenate([book[0].chips, book[15].chips]))
        np.testing.assert_array_equal(encode_bits([0, 1, 1, 0], book), book[6].chips)

    def test_empty(self):
        assert encode_bits([]).size == 0

    def test_partial_nibble_zero_padded(self, book):
        np.testing.assert_array_equal(encode_bits([1, 0, 1], book), book[0b1010].chips)

    def test_rejects_non_binary(self):
        with pytest.raises(InvalidArgument):
            bits_to_symbols([0, 2, 1, 1])


class TestDecode:
    @pytest.mark.parametrize("sym", range(16))
    def test_round_trip(self, book, sym):
        assert decode_codeword(sign_template(book, sym), book)[0] == sym

    def test_template_of_five(self, book):
        sym, score = decode_codeword(sign_template(book, 5), book)
        assert (sym, score) == (5, book[5].transitions)

    def test_negated_template_decodes_to_negated_entry(self, book):
        assert decode_codeword(-sign_template(book, 5), book)[0] == 13

    def test_single_erasure_never_changes_decision(self, book):
        for s, j in itertools.product(range(16), range(16)):
            obs = sign_template(book, s)
            obs[j] = 0
            assert decode_codeword(obs, book)[0] == s, (s, j)

    def test_all_zero_ties_to_zero(self, book):
        assert decode_codeword(np.zeros(16, np.int8), book) == (0, 0)

    def test_wrong_length(self, book):
        with pytest.raises(InvalidArgument):
            decode_codeword(np.zeros(15), book)

    def test_competitors_non_positive_on_clean_chips(self, book):
        # chip-domain view of the "cross correlations stay below zero" property
        for s in range(16):
            scores = book.chips.astype(int) @ book[s].chips.astype(int)
            assert scores[s] == 16
            assert np.all(np.delete(scores, s) <= 0)

    def test_boundary_element_from_previous_chip(self, book):
        c = book[3].chips
        assert transition_template(c)[0] == 0
        assert transition_template(c, prev_chip=-c[0])[0] == np.sign(2 * c[0])
        assert transition_template(c, prev_chip=c[0])[0] == 0

    def test_stream_with_context(self, book):
        rng = np.random.default_rng(5)
        syms = rng.integers(0, 16, 40)
        chips = book.chips[syms].ravel()
        prev = -1
        obs = np.sign(np.diff(np.concatenate([[prev], chips])))
        np.testing.assert_array_equal(decode_stream(obs, book, prev_chip=prev), syms)

    def test_stream_length_check(self, book):
        with pytest.raises(InvalidArgument):
            decode_stream(np.zeros(20), book)

    def test_soft_matches_hard_on_clean_input(self, book):
        for s in range(16):
            obs = sign_template(book, s).astype(float) * 3.5
            assert decode_codeword(obs, book, soft=True)[0] == s

    def test_soft_uses_edge_strength(self, book):
        # weak crosstalk at the non-edge slots must not outvote strong true edges
        t = book.templates(None)[9].astype(float) / 2
        obs = 18 * t + 14 * (t == 0) * np.tile([1, -1], 8)
        assert decode_codeword(obs, book, soft=True)[0] == 9


class TestProperties:
    @given(st.lists(st.integers(0, 1), min_size=0, max_size=64).filter(lambda b: len(b) % 4 == 0))
    def test_bits_symbols_round_trip(self, bits):
        np.testing.assert_array_equal(symbols_to_bits(bits_to_symbols(bits)), np.array(bits, dtype=np.uint8))

    @given(st.lists(st.integers(0, 15), min_size=1, max_size=12), st.sampled_from([-1, 1]))
    def test_encode_decode_round_trip(self, syms, prev):
        book = build_codebook()
        chips = book.chips[syms].ravel()
        obs = np.sign(np.diff(np.concatenate([[prev], chips])))
        np.testing.assert_array_equal(decode_stream(obs, book, prev_chip=prev), syms)

    @settings(max_examples=50)
    @given(st.integers(0, 15), st.floats(0.01, 1e3))
    def test_soft_scale_invariance(self, sym, scale):
        book = build_codebook()
        obs = sign_template(book, sym).astype(float)
        obs[sym % 16] = 0.0
        assert decode_codeword(obs * scale, book, soft=True)[0] == decode_codeword(obs, book, soft=True)[0]
