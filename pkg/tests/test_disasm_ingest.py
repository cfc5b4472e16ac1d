import numpy as np
import pytest

from tests.conftest import OBJDUMP_TOKENS
from utilities.disasm_ingest import (
    MasterOpcodeList,
    OpcodeSequence,
    build_master_list,
    histogram,
    parse_directory,
    parse_disassembly,
    read_master_list,
    render_listing,
    write_master_list,
    zero_frequency_opcodes,
)
from utilities.errors import EmptyCorpus, NoInstructions


# ============================================================================
# parse_disassembly
# ============================================================================

def test_single_instruction_line():
    seq = parse_disassembly("8048400:\t55\tpush   %ebp", "a")
    assert seq.tokens == ("push",)
    assert seq.file_id == "a"


def test_empty_listing_has_no_instructions():
    with pytest.raises(NoInstructions) as err:
        parse_disassembly("", "empty")
    assert err.value.file_id == "empty"


def test_mnemonics_are_lowercased():
    text = "  401000:\t89 e5\tmov    %esp,%ebp\n  401002:\t89 e5\tMOV    %esp,%ebp\n"
    assert parse_disassembly(text, "x").tokens == ("mov", "mov")


def test_captured_listing_skips_headers_wraps_and_bad_bytes(objdump_listing):
    seq = parse_disassembly(objdump_listing, "sample")
    assert seq.tokens == OBJDUMP_TOKENS


def test_render_listing_parses_back():
    seq = OpcodeSequence("f", ("xor", "push", "ret"))
    assert parse_disassembly(render_listing(seq), "f") == seq


# ============================================================================
# Master list and histograms
# ============================================================================

def test_master_list_is_sorted_union():
    master = build_master_list([
        OpcodeSequence("a", ("push", "mov")),
        OpcodeSequence("b", ("mov", "call")),
    ])
    assert master.opcodes == ("call", "mov", "push")
    assert master.index == {"call": 0, "mov": 1, "push": 2}


def test_master_list_ignores_corpus_order():
    sequences = [
        OpcodeSequence("a", ("push", "mov", "rep")),
        OpcodeSequence("b", ("mov", "call")),
        OpcodeSequence("c", ("xor", "push", "jmp")),
        OpcodeSequence("d", ("lea",)),
    ]
    expected = build_master_list(sequences)
    rng = np.random.default_rng(9)
    for _ in range(10):
        shuffled = [sequences[i] for i in rng.permutation(len(sequences))]
        assert build_master_list(shuffled) == expected


def test_master_list_dedups():
    assert build_master_list([OpcodeSequence("a", ("add", "add"))]).opcodes == ("add",)


def test_master_list_of_nothing():
    with pytest.raises(EmptyCorpus):
        build_master_list([])


def test_histogram_counts_in_master_order():
    master = MasterOpcodeList.from_opcodes(["call", "mov", "push"])
    vec = histogram(OpcodeSequence("a", ("mov", "mov", "push")), master)
    assert vec.counts.tolist() == [0, 2, 1]
    assert vec.dropped == 0


def test_histogram_drops_unknown_tokens():
    vec = histogram(OpcodeSequence("a", ("xyz",)), MasterOpcodeList.from_opcodes(["mov"]))
    assert vec.counts.tolist() == [0]
    assert vec.dropped == 1


def test_histogram_singleton():
    vec = histogram(OpcodeSequence("a", ("mov",)), MasterOpcodeList.from_opcodes(["mov"]))
    assert vec.counts.tolist() == [1]


def test_histogram_sum_plus_dropped_is_length():
    master = MasterOpcodeList.from_opcodes(["a", "b"])
    seq = OpcodeSequence("s", ("a", "b", "c", "a", "d"))
    vec = histogram(seq, master)
    assert int(vec.counts.sum()) + vec.dropped == len(seq.tokens)


def test_zero_frequency_opcodes():
    master = MasterOpcodeList.from_opcodes(["a", "b", "c"])
    vectors = [histogram(OpcodeSequence("s", ("a", "c")), master)]
    assert zero_frequency_opcodes(master, vectors) == ["b"]


def test_master_list_file_round_trip(tmp_path):
    master = MasterOpcodeList.from_opcodes(["push", "mov", "call"])
    path = tmp_path / "master.txt"
    write_master_list(master, str(path), "# config_hash=abc master_seed=7")
    assert path.read_text().splitlines()[1:] == ["call", "mov", "push"]
    assert read_master_list(str(path)) == master


# ============================================================================
# Directory scanning
# ============================================================================

def test_parse_directory_excludes_empty_listings(asm_tree):
    sequences, excluded = parse_directory(str(asm_tree), jobs=2)
    assert excluded == ["benign/broken"]
    ids = [s.file_id for s in sequences]
    assert ids == sorted(ids)
    assert len(ids) == 8
    assert all(len(s.tokens) == 40 for s in sequences)


def test_parse_directory_is_thread_count_independent(asm_tree):
    one, _ = parse_directory(str(asm_tree), jobs=1)
    four, _ = parse_directory(str(asm_tree), jobs=4)
    assert one == four
    master = build_master_list(one)
    assert np.array_equal(
        np.array([histogram(s, master).counts for s in one]),
        np.array([histogram(s, master).counts for s in four]),
    )
