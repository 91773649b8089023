"""The 56 Autophase counters and the instruction-count metric."""
from __future__ import annotations

import re

import numpy as np

from passpilot.ir import BINARY_OPS, IrModule

FEATURE_NAMES = (
    "BBNumArgsHi", "BBNumArgsLo", "onePred", "onePredOneSuc", "onePredTwoSuc", "oneSuccessor",
    "twoPred", "twoPredOneSuc", "twoEach", "twoSuccessor", "morePreds", "BB03Phi", "BBHiPhi",
    "BBNoPhi", "BeginPhi", "BranchCount", "returnInt", "CriticalCount", "NumEdges", "const32Bit",
    "const64Bit", "numConstZeroes", "numConstOnes", "UncondBranches", "binaryConstArg",
    "NumAShrInst", "NumAddInst", "NumAllocaInst", "NumAndInst", "BlockMid", "BlockLow",
    "NumBitCastInst", "NumBrInst", "NumCallInst", "NumGetElementPtrInst", "NumICmpInst",
    "NumLShrInst", "NumLoadInst", "NumMulInst", "NumOrInst", "NumPHIInst", "NumRetInst",
    "NumSExtInst", "NumSelectInst", "NumShlInst", "NumStoreInst", "NumSubInst", "NumTruncInst",
    "NumXorInst", "NumZExtInst", "TotalBlocks", "TotalInsts", "TotalMemInst", "TotalFuncs",
    "ArgsPhi", "testUnary",
)
N_FEATURES = len(FEATURE_NAMES)
INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
TOTAL_INSTS = INDEX["TotalInsts"]
TOTAL_BLOCKS = INDEX["TotalBlocks"]

# per-opcode counters
_OPCODE_SLOTS = {
    "ashr": "NumAShrInst", "add": "NumAddInst", "alloca": "NumAllocaInst", "and": "NumAndInst",
    "bitcast": "NumBitCastInst", "br": "NumBrInst", "call": "NumCallInst",
    "getelementptr": "NumGetElementPtrInst", "icmp": "NumICmpInst", "lshr": "NumLShrInst",
    "load": "NumLoadInst", "mul": "NumMulInst", "or": "NumOrInst", "phi": "NumPHIInst",
    "ret": "NumRetInst", "sext": "NumSExtInst", "select": "NumSelectInst", "shl": "NumShlInst",
    "store": "NumStoreInst", "sub": "NumSubInst", "trunc": "NumTruncInst", "xor": "NumXorInst",
    "zext": "NumZExtInst",
}
_MEMORY_OPS = frozenset({"load", "store", "alloca", "getelementptr"})
_CALL_LIKE = frozenset({"call", "invoke", "callbr"})
_INT_TYPE = re.compile(r"i\d+")


def _is_constant_operand(tok: str) -> bool:
    tok = tok.strip()
    return bool(tok) and not tok.startswith("%")


def extract_autophase(m: IrModule) -> np.ndarray:
    """Return the 56 counters as an int64 vector in Autophase order."""
    f = np.zeros(N_FEATURES, dtype=np.int64)
    ix = INDEX
    for fn in m.functions:
        f[ix["TotalFuncs"]] += 1
        n_succ = {b.label: len(b.successors) for b in fn.blocks}
        n_pred = {b.label: len(b.predecessors) for b in fn.blocks}
        for b in fn.blocks:
            preds, succs = n_pred[b.label], n_succ[b.label]
            f[ix["TotalBlocks"]] += 1
            f[ix["onePred"]] += preds == 1
            f[ix["onePredOneSuc"]] += preds == 1 and succs == 1
            f[ix["onePredTwoSuc"]] += preds == 1 and succs == 2
            f[ix["oneSuccessor"]] += succs == 1
            f[ix["twoPred"]] += preds == 2
            f[ix["twoPredOneSuc"]] += preds == 2 and succs == 1
            f[ix["twoEach"]] += preds == 2 and succs == 2
            f[ix["twoSuccessor"]] += succs == 2
            f[ix["morePreds"]] += preds > 2
            f[ix["NumEdges"]] += succs
            if succs >= 2:
                f[ix["CriticalCount"]] += sum(1 for t in b.successors if n_pred[t] >= 2)

            n_insts = len(b.instructions)
            f[ix["TotalInsts"]] += n_insts
            f[ix["BlockLow"]] += n_insts < 15
            f[ix["BlockMid"]] += 15 <= n_insts <= 500

            phis = phi_args = begin_phi = 0
            leading = True
            for inst in b.instructions:
                op = inst.opcode
                if op == "phi":
                    phis += 1
                    phi_args += inst.phi_incoming
                    begin_phi += leading
                else:
                    leading = False
                slot = _OPCODE_SLOTS.get(op)
                if slot is not None:
                    f[ix[slot]] += 1
                if op == "br":
                    f[ix["BranchCount"]] += 1
                    f[ix["UncondBranches"]] += len(inst.targets) == 1
                if op in _CALL_LIKE and inst.result_type and _INT_TYPE.fullmatch(inst.result_type):
                    f[ix["returnInt"]] += 1
                if op in _MEMORY_OPS:
                    f[ix["TotalMemInst"]] += 1
                if op == "fneg":
                    f[ix["testUnary"]] += 1
                if op in BINARY_OPS and any(_is_constant_operand(t) for t in inst.operands[:2]):
                    f[ix["binaryConstArg"]] += 1
                for bits, value in inst.int_constants:
                    f[ix["const32Bit"]] += bits == 32
                    f[ix["const64Bit"]] += bits == 64
                    f[ix["numConstZeroes"]] += value == 0
                    f[ix["numConstOnes"]] += value == 1
            f[ix["BeginPhi"]] += begin_phi
            f[ix["ArgsPhi"]] += phi_args
            f[ix["BB03Phi"]] += 0 < phis <= 3
            f[ix["BBHiPhi"]] += phis > 3
            f[ix["BBNoPhi"]] += phis == 0
            f[ix["BBNumArgsHi"]] += phi_args > 5
            f[ix["BBNumArgsLo"]] += 1 <= phi_args <= 5
    return f


def instruction_count(m: IrModule) -> int:
    return int(extract_autophase(m)[TOTAL_INSTS])
