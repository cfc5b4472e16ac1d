"""Shared fixtures: small synthetic datasets and captured listings."""

import os

import numpy as np
import pytest

from utilities.disasm_ingest import OpcodeSequence, render_listing
from utilities.featurize import make_dataset, synth_corpus

# objdump -d output, trimmed; includes a wrapped instruction and an undecodable byte
OBJDUMP_LISTING = """
sample.exe:     file format pei-i386


Disassembly of section .text:

00401000 <.text>:
  401000:\t55                   \tpush   %ebp
  401001:\t89 e5                \tmov    %esp,%ebp
  401003:\t83 ec 08             \tsub    $0x8,%esp
  401006:\te8 f5 ff ff ff       \tcall   401000 <.text>
  40100b:\tff                   \t(bad)  
  40100c:\tc7 05 00 20 40 00 01 \tMOVL   $0x1,0x402000
  401013:\t00 00 00 
  401016:\tc9                   \tleave  
  401017:\tc3                   \tret    
"""

OBJDUMP_TOKENS = ("push", "mov", "sub", "call", "movl", "leave", "ret")


@pytest.fixture
def objdump_listing():
    return OBJDUMP_LISTING


@pytest.fixture
def tiny_dataset():
    """2 benign + 4 malware rows over 3 opcodes."""
    return make_dataset(
        [[0, 1, 2], [1, 1, 2], [5, 0, 1], [6, 0, 0], [5, 1, 0], [7, 0, 1]],
        [0, 0, 1, 1, 1, 1],
        ["call", "mov", "push"],
        ["b0", "b1", "m0", "m1", "m2", "m3"],
    )


@pytest.fixture
def small_corpus():
    """Separable synthetic corpus: 40 benign / 120 malware over 12 opcodes."""
    return synth_corpus(40, 120, 12, 0.9, seed=3, row_total=200)


@pytest.fixture
def asm_tree(tmp_path):
    """malware/ and benign/ listing directories, plus one empty listing."""
    rng = np.random.default_rng(0)
    vocab = ["mov", "push", "call", "ret", "xor", "jmp"]
    for label, weights in (("benign", [5, 3, 2, 2, 1, 1]), ("malware", [1, 1, 2, 2, 6, 5])):
        os.makedirs(tmp_path / label)
        p = np.array(weights, dtype=float) / sum(weights)
        for i in range(4):
            tokens = tuple(rng.choice(vocab, size=40, p=p))
            seq = OpcodeSequence(f"{label}/s{i}", tokens)
            (tmp_path / label / f"s{i}.asm").write_text(render_listing(seq))
    (tmp_path / "benign" / "broken.asm").write_text("broken.exe:     file format unknown\n")
    return tmp_path
