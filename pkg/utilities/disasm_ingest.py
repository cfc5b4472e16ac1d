"""
Disassembly ingestion: objdump-style listings -> opcode sequences ->
master opcode list -> per-file opcode frequency histograms.

Instruction lines look like:
    8048400:<TAB>55<TAB>push   %ebp
Only the first word of the third tab field is kept (the mnemonic).
Section headers, symbol labels, blank lines and byte-continuation lines are
skipped.
"""

import logging
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from utilities.errors import EmptyCorpus, NoInstructions

logger = logging.getLogger(__name__)

ADDRESS_RE = re.compile(r"^\s*[0-9a-fA-F]+:$")
BYTES_RE = re.compile(r"^[0-9a-fA-F]{2}( [0-9a-fA-F]{2})*$")
MNEMONIC_RE = re.compile(r"^[a-z][a-z0-9.]*$")

ASM_SUFFIX = ".asm"


@dataclass(frozen=True)
class OpcodeSequence:
    file_id: str
    tokens: Tuple[str, ...]


@dataclass(frozen=True)
class MasterOpcodeList:
    opcodes: Tuple[str, ...]
    index: Dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_opcodes(cls, opcodes: Iterable[str]) -> "MasterOpcodeList":
        ordered = tuple(sorted(set(opcodes)))
        return cls(ordered, {op: i for i, op in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.opcodes)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    file_id: str
    counts: np.ndarray
    dropped: int = 0


# ============================================================================
# Parsing
# ============================================================================

def _mnemonic(line: str) -> Optional[str]:
    """Return the lowercased mnemonic of an instruction line, else None."""
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) < 3:
        return None
    if not ADDRESS_RE.match(parts[0]) or not BYTES_RE.match(parts[1].strip()):
        return None
    words = "\t".join(parts[2:]).split()
    if not words:
        return None
    token = words[0].lower()
    # objdump prints "(bad)" for undecodable bytes
    if not MNEMONIC_RE.match(token):
        return None
    return token


def parse_disassembly(listing_text: str, file_id: str) -> OpcodeSequence:
    """
    Extract the ordered opcode mnemonics from a disassembly listing.

    Args:
        listing_text: objdump-style listing text
        file_id: Identifier for the source file

    Returns:
        OpcodeSequence with tokens in file order

    Raises:
        NoInstructions: if no instruction line was found
    """
    tokens = []
    for line in listing_text.splitlines():
        token = _mnemonic(line)
        if token is not None:
            tokens.append(token)
    if not tokens:
        raise NoInstructions(file_id)
    return OpcodeSequence(file_id, tuple(tokens))


def render_listing(sequence: OpcodeSequence, base_address: int = 0x401000) -> str:
    """Pretty-print a sequence back into a minimal listing (one nop byte per line)."""
    lines = [f"{sequence.file_id}:     file format text", ""]
    for offset, token in enumerate(sequence.tokens):
        lines.append(f"  {base_address + offset:x}:\t90\t{token}")
    return "\n".join(lines) + "\n"


# ============================================================================
# Master list and histograms
# ============================================================================

def build_master_list(sequences: Iterable[OpcodeSequence]) -> MasterOpcodeList:
    """
    Sorted union of all distinct tokens across the corpus.

    Raises:
        EmptyCorpus: if no sequences are supplied
    """
    seen = set()
    count = 0
    for seq in sequences:
        seen.update(seq.tokens)
        count += 1
    if count == 0:
        raise EmptyCorpus("no opcode sequences supplied")
    master = MasterOpcodeList.from_opcodes(seen)
    logger.info(f"[INGEST] Master opcode list: {len(master)} opcodes from {count} files")
    return master


def histogram(sequence: OpcodeSequence, master: MasterOpcodeList) -> FeatureVector:
    """
    Count each master-list opcode in a sequence.

    Tokens absent from the master list are ignored and tallied in
    FeatureVector.dropped.
    """
    counts = np.zeros(len(master), dtype=np.int64)
    dropped = 0
    for token, n in Counter(sequence.tokens).items():
        j = master.index.get(token)
        if j is None:
            dropped += n
        else:
            counts[j] = n
    if dropped:
        logger.debug(f"[INGEST] {sequence.file_id}: {dropped} tokens not in master list")
    return FeatureVector(sequence.file_id, counts, dropped)


def read_master_list(path: str) -> MasterOpcodeList:
    """Load a master list written by write_master_list (comment lines skipped)."""
    with open(path, "r", encoding="utf-8") as f:
        opcodes = [line.strip() for line in f if line.strip() and not line.startswith("#")]
    return MasterOpcodeList.from_opcodes(opcodes)


def write_master_list(master: MasterOpcodeList, path: str, header: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if header:
            f.write(header + "\n")
        for op in master.opcodes:
            f.write(op + "\n")


def zero_frequency_opcodes(master: MasterOpcodeList, vectors: List[FeatureVector]) -> List[str]:
    """Master-list opcodes that never occur in the given vectors."""
    if not vectors:
        return list(master.opcodes)
    totals = np.sum([v.counts for v in vectors], axis=0)
    return [op for op, total in zip(master.opcodes, totals) if total == 0]


# ============================================================================
# Directory scanning
# ============================================================================

def find_listings(asm_dir: str) -> List[str]:
    """All .asm files under asm_dir, as sorted paths relative to asm_dir."""
    found = []
    for root, _dirs, files in os.walk(asm_dir):
        for name in files:
            if name.endswith(ASM_SUFFIX):
                rel = os.path.relpath(os.path.join(root, name), asm_dir)
                found.append(rel.replace(os.sep, "/"))
    return sorted(found)


def file_id_for(rel_path: str) -> str:
    return rel_path[: -len(ASM_SUFFIX)] if rel_path.endswith(ASM_SUFFIX) else rel_path


def _parse_file(asm_dir: str, rel_path: str) -> Tuple[str, Optional[OpcodeSequence]]:
    file_id = file_id_for(rel_path)
    with open(os.path.join(asm_dir, rel_path), "r", encoding="utf-8", errors="replace") as f:
        text = f.read()
    try:
        return file_id, parse_disassembly(text, file_id)
    except NoInstructions:
        return file_id, None


def parse_directory(asm_dir: str, jobs: int = 1) -> Tuple[List[OpcodeSequence], List[str]]:
    """
    Parse every listing under asm_dir.

    Args:
        asm_dir: Directory containing .asm listings (searched recursively)
        jobs: Number of parser threads

    Returns:
        Tuple of (parsed sequences in sorted path order, excluded file_ids)
    """
    paths = find_listings(asm_dir)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda p: _parse_file(asm_dir, p), paths))

    sequences = []
    excluded = []
    for file_id, seq in results:
        if seq is None:
            logger.warning(f"[INGEST] Excluding {file_id}: no instructions (corrupted or encrypted)")
            excluded.append(file_id)
        else:
            sequences.append(seq)
    logger.info(f"[INGEST] Parsed {len(sequences)} listings, excluded {len(excluded)}")
    return sequences, excluded
