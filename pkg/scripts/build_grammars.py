"""Regenerate the grammar fixtures under corpus/grammars/.

Manual grammars are written from the simulator's header layouts. NLP grammars
come from the full extraction pipeline: models trained on the five other
corpus documents, then ``rfcfuzz extract`` on the held-out one.

Run from the repository root:  python3 scripts/build_grammars.py
"""
import json
import shutil
import sys
import tempfile
from pathlib import Path

from rfcfuzz import cli, grammar, simnet
from rfcfuzz.grammar import PropertyKind as K
from rfcfuzz.grammar import PropertyTuple
from rfcfuzz.type_extraction import FieldType

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "corpus" / "grammars"

MANUAL = {
    "tcp": [(K.Port, "Source Port"), (K.Port, "Destination Port"),
            (K.SequenceNumber, "Sequence Number"),
            (K.AcknowledgementNumber, "Acknowledgment Number"),
            (K.HeaderLength, "Data Offset"), (K.Multiple, "Data Offset"),
            (K.PacketType, "Control Bits"), (K.WindowFlowControl, "Window"),
            (K.Checksum, "Checksum")],
    "dccp": [(K.Port, "Source Port"), (K.Port, "Destination Port"),
             (K.HeaderLength, "Data Offset"), (K.Multiple, "Data Offset"),
             (K.Checksum, "Checksum"), (K.PacketType, "Type"),
             (K.SequenceNumber, "Sequence Number")],
}
PACKET_TYPES = {"tcp": simnet.TCP_TYPES, "dccp": simnet.DCCP_TYPES}


def manual_grammar(pid: str) -> grammar.ProtocolGrammar:
    layout = simnet.get_protocol(pid).layout
    # the DCCP layout repeats "Reserved"; the second copy gets its own name
    names, types = set(), []
    for i, (name, size) in enumerate(layout.fields):
        if name in names:
            name = f"{name} {i}"
        names.add(name)
        types.append(FieldType(name, size, i))
    tuples = [PropertyTuple(k, f, 1.0, "manual") for k, f in MANUAL[pid]]
    return grammar.postprocess(tuples, types, pid, guess=False, packet_types=PACKET_TYPES[pid])


def main() -> int:
    for pid in ("tcp", "dccp"):
        g = manual_grammar(pid)
        (OUT / f"{pid}_manual.json").write_text(grammar.serialize_grammar(g))
        types_path = OUT / f"{pid}_packet_types.json"
        types_path.write_text(json.dumps(PACKET_TYPES[pid], indent=2) + "\n")
        work = Path(tempfile.mkdtemp(prefix=f"grammar-{pid}-"))
        try:
            rc = cli.main(["train", "--corpus-dir", str(ROOT / "corpus"), "--exclude", pid,
                           "--seed", "0", "--out-dir", str(work)])
            rc = rc or cli.main(["extract", "--rfc", str(ROOT / "corpus" / "rfc" / f"{pid}.txt"),
                                 "--protocol", pid, "--model-dir", str(work),
                                 "--packet-types", str(types_path), "--out-dir", str(work)])
            if rc:
                return rc
            shutil.copy(work / f"{pid}.grammar.json", OUT / f"{pid}_nlp.json")
        finally:
            shutil.rmtree(work)
    return 0


if __name__ == "__main__":
    sys.exit(main())
