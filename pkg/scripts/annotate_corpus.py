"""Regenerate the gold annotation files under corpus/annotations/.

Annotation guidelines (applied uniformly to all six documents):

* type records: one per header field defined in the document, in header order.
* mention records: every body chunk that names a field.  Surface forms are
  listed per field below; matching is case-insensitive unless the form starts
  with ``=``.  ``word [next]`` matches ``word`` only when followed by ``next``
  (the mention span excludes ``next``).  Longest match wins, left to right.
* anaphor mentions: ``this field`` / ``that field`` anywhere inside a field's
  defining section, and a sentence-initial ``It`` in that section, refer to
  the field being defined.
* property records: phrases that state one of the nine properties, located
  inside the defining section of the property's argument.

Run from the repository root:  python scripts/annotate_corpus.py
"""
import json
import re
import sys
from pathlib import Path

from rfcfuzz.corpus import load_document
from rfcfuzz.type_extraction import FieldType, extract_entity_types, format_types

ROOT = Path(__file__).resolve().parent.parent

GOLD = {
    "tcp": [
        ("Source Port", 16, ["source port"]),
        ("Destination Port", 16, ["destination port"]),
        ("Sequence Number", 32, ["sequence number"]),
        ("Acknowledgment Number", 32, ["acknowledgment number", "acknowledgment [field]"]),
        ("Data Offset", 4, ["data offset"]),
        ("Reserved", 6, ["=Reserved"]),
        ("Control Bits", 6, ["control bits"]),
        ("Window", 16, ["=Window", "window [sent]"]),
        ("Checksum", 16, ["checksum"]),
        ("Urgent Pointer", 16, ["urgent pointer", "urgent [field]"]),
        ("Options", None, ["=Options"]),
        ("Padding", None, ["=Padding"]),
    ],
    "dccp": [
        ("Source Port", 16, ["source port"]),
        ("Destination Port", 16, ["destination port", "dest port"]),
        ("Data Offset", 8, ["data offset"]),
        ("CCVal", 4, ["ccval"]),
        ("Checksum Coverage", 4, ["checksum coverage", "cscov"]),
        ("Checksum", 16, ["checksum"]),
        ("Reserved", 3, ["=Reserved", "=Res"]),
        ("Type", 4, ["=Type"]),
        ("Extended Sequence Numbers", 1, ["extended sequence numbers", "=X"]),
        ("Sequence Number", 48, ["sequence number"]),
        ("Service Code", 32, ["service code"]),
        ("Acknowledgement Number", 48, ["acknowledgement number"]),
        ("Reset Code", 8, ["reset code"]),
    ],
    "ip": [
        ("Version", 4, ["=Version"]),
        ("IHL", 4, ["ihl", "internet header length"]),
        ("Type of Service", 8, ["type of service"]),
        ("Total Length", 16, ["total length"]),
        ("Identification", 16, ["identification", "=ID"]),
        ("Flags", 3, ["=Flags"]),
        ("Fragment Offset", 13, ["fragment offset"]),
        ("Time to Live", 8, ["time to live", "ttl"]),
        ("Protocol", 8, ["=Protocol [field]", "=Protocol [fields]", "protocol [fields]",
                         "=Protocol [Header]"]),
        ("Header Checksum", 16, ["header checksum"]),
        ("Source Address", 32, ["source address"]),
        ("Destination Address", 32, ["destination address"]),
        ("Options", None, ["=Options"]),
        ("Padding", None, ["=Padding"]),
    ],
    "ipv6": [
        ("Version", 4, ["=Version"]),
        ("Traffic Class", 8, ["traffic class"]),
        ("Flow Label", 20, ["flow label"]),
        ("Payload Length", 16, ["payload length"]),
        ("Next Header", 8, ["next header"]),
        ("Hop Limit", 8, ["hop limit"]),
        ("Source Address", 128, ["source address"]),
        ("Destination Address", 128, ["destination address"]),
        ("Reserved", 8, ["=Reserved"]),
        ("Fragment Offset", 13, ["fragment offset"]),
        ("M flag", 1, ["m flag"]),
        ("Identification", 32, ["identification"]),
    ],
    "gre": [
        ("Checksum Present", 1, ["checksum present"]),
        ("Reserved0", 12, ["reserved0"]),
        ("Version Number", 3, ["=Version Number", "=Ver"]),
        ("Protocol Type", 16, ["protocol type"]),
        ("Checksum", 16, ["checksum"]),
        ("Reserved1", 16, ["reserved1"]),
    ],
    "sctp": [
        ("Source Port Number", 16, ["source port number"]),
        ("Destination Port Number", 16, ["destination port number"]),
        ("Verification Tag", 32, ["verification tag"]),
        ("Checksum", 32, ["checksum"]),
        ("Chunk Type", 8, ["chunk type"]),
        ("Chunk Flags", 8, ["chunk flags", "=Flag [field]"]),
        ("Chunk Length", 16, ["chunk length"]),
        ("Chunk Value", None, ["chunk value", "=Value [field]", "=Value [fields]"]),
        ("Length", 16, ["=Length"]),
        ("TSN", 32, ["tsn"]),
        ("Stream Identifier S", 16, ["stream identifier s"]),
        ("Stream Sequence Number n", 16, ["stream sequence number n", "stream sequence number"]),
        ("Payload Protocol Identifier", 32, ["payload protocol identifier"]),
    ],
}

# (kind, argument, phrase)
PROPERTIES = {
    "tcp": [
        ("Port", "Source Port", "source port number"),
        ("Port", "Destination Port", "destination port number"),
        ("SequenceNumber", "Sequence Number", "sequence number of the first data octet"),
        ("AcknowledgementNumber", "Acknowledgment Number",
         "next sequence number the sender of the segment is expecting to receive"),
        ("HeaderLength", "Data Offset", "number of 32 bit words in the TCP Header"),
        ("HeaderLength", "Data Offset", "indicates where the data begins"),
        ("Multiple", "Data Offset", "integral number of 32 bits long"),
        ("PacketType", "Control Bits", "determine the type of the segment"),
        ("PacketType", "Control Bits", "Synchronize sequence numbers"),
        ("WindowFlowControl", "Window", "willing to accept"),
        ("Checksum", "Checksum", "one's complement of the one's complement sum"),
        ("Multiple", "Options", "multiple of 8 bits"),
    ],
    "dccp": [
        ("Port", "Source Port", "identify the connection"),
        ("HeaderLength", "Data Offset", "offset from the start of the packet's DCCP header"),
        ("Multiple", "Data Offset", "in 32-bit words"),
        ("Checksum", "Checksum", "Internet checksum"),
        ("Checksum", "Checksum", "one's complement of the one's complement sum"),
        ("PacketType", "Type", "specifies the type of the packet"),
        ("SequenceNumber", "Sequence Number", "Identifies the packet uniquely in the sequence"),
        ("AcknowledgementNumber", "Acknowledgement Number", "Greatest Sequence Number Received"),
    ],
    "ip": [
        ("HeaderLength", "IHL", "length of the internet header in 32 bit words"),
        ("PayloadLength", "Total Length", "length of the datagram, measured in octets"),
        ("Multiple", "Fragment Offset", "measured in units of 8 octets"),
        ("Checksum", "Header Checksum", "checksum on the header only"),
        ("Checksum", "Header Checksum", "one's complement of the one's complement sum"),
        ("Port", "Protocol", "indicates the next level protocol"),
    ],
    "ipv6": [
        ("PayloadLength", "Payload Length", "Length of the IPv6 payload"),
        ("Port", "Next Header", "Identifies the type of header immediately following"),
        ("Multiple", "Fragment Offset", "in 8-octet units"),
    ],
    "gre": [
        ("Checksum", "Checksum", "one's complement) checksum sum"),
        ("Port", "Protocol Type", "contains the protocol type of the payload packet"),
    ],
    "sctp": [
        ("Port", "Source Port Number", "sender's port number"),
        ("Port", "Destination Port Number", "port number to which this packet is destined"),
        ("Checksum", "Checksum", "checksum of this SCTP packet"),
        ("PacketType", "Chunk Type", "identifies the type of information"),
        ("PayloadLength", "Chunk Length", "size of the chunk in bytes"),
        ("Multiple", "Chunk Length", "multiple of 4 bytes"),
        ("PayloadLength", "Length", "length of the DATA chunk in bytes"),
        ("SequenceNumber", "Stream Sequence Number n",
         "Stream Sequence Number of the following user data"),
    ],
}


def _parse_surface(form):
    exact = form.startswith("=")
    form = form.lstrip("=")
    nxt = None
    if form.endswith("]"):
        form, nxt = form[:-1].split(" [")
    return tuple(form.split()), exact, nxt


def _eq(a, b, exact):
    return a == b if exact else a.lower() == b.lower()


def _defining_section(doc, name):
    for ft in extract_entity_types(doc.raw, doc.sections):
        if ft.key == name.casefold():
            return ft.source_section
    return None


def annotate(protocol):
    doc = load_document(ROOT / "corpus" / "rfc" / f"{protocol}.txt", protocol)
    gold = GOLD[protocol]
    records = []
    for order, (name, size, _forms) in enumerate(gold):
        sec = _defining_section(doc, name)
        span = doc.sections[sec].char_span if sec is not None else (0, 1)
        records.append({"doc": protocol, "start": span[0], "end": span[1],
                        "label_type": "type", "label": name,
                        "size_bits": size, "order": order})

    surfaces = []
    for name, _size, forms in gold:
        for form in forms:
            toks, exact, nxt = _parse_surface(form)
            surfaces.append((toks, exact, nxt, name))
    surfaces.sort(key=lambda s: -len(s[0]))

    own_section = {}
    for name, _size, _forms in gold:
        sec = _defining_section(doc, name)
        if sec is not None:
            own_section.setdefault(sec, name)

    chunk_spans = {c.char_span for c in doc.chunks}
    mentions = []
    for sent in doc.sentences:
        toks = sent.tokens
        words = [t.text for t in toks]
        i = 0
        while i < len(words):
            hit = None
            for stoks, exact, nxt, name in surfaces:
                n = len(stoks)
                if all(i + k < len(words) and _eq(words[i + k], stoks[k], exact)
                       for k in range(n)):
                    if nxt is not None and (i + n >= len(words) or words[i + n].lower() != nxt.lower()):
                        continue
                    hit = (n, name)
                    break
            if hit is None:
                owner = own_section.get(sent.section_index)
                two = tuple(w.lower() for w in words[i:i + 2])
                if owner and two in {("this", "field"), ("that", "field")}:
                    hit = (2, owner)
                elif owner and i == 0 and words[i] == "It":
                    hit = (1, owner)
            if hit is None:
                i += 1
                continue
            n, name = hit
            span = (toks[i].start, toks[i + n - 1].end)
            if span not in chunk_spans:
                raise SystemExit(f"{protocol}: gold mention {doc.text[span[0]:span[1]]!r} is not a chunk")
            mentions.append({"doc": protocol, "start": span[0], "end": span[1],
                             "label_type": "mention", "label": name})
            i += n
    records.extend(mentions)

    for group, (kind, arg, phrase) in enumerate(PROPERTIES[protocol]):
        sec = _defining_section(doc, arg)
        if sec is None:
            raise SystemExit(f"{protocol}: no defining section for {arg}")
        lo, hi = doc.sections[sec].char_span
        body = doc.text[lo:hi]
        # phrases may wrap across lines
        pattern = r"\s+".join(re.escape(w) for w in phrase.split())
        m = re.search(pattern, body)
        if not m:
            raise SystemExit(f"{protocol}: phrase {phrase!r} not found in section {arg}")
        records.append({"doc": protocol, "start": lo + m.start(), "end": lo + m.end(),
                        "label_type": "property", "label": kind, "argument": arg,
                        "group": group})
    return doc, records


def main(argv):
    out_dir = ROOT / "corpus" / "annotations"
    out_dir.mkdir(parents=True, exist_ok=True)
    for protocol in argv or list(GOLD):
        doc, records = annotate(protocol)
        with open(out_dir / f"{protocol}.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        types = [FieldType(name=n, size_bits=s, order=i)
                 for i, (n, s, _f) in enumerate(GOLD[protocol])]
        (out_dir / f"{protocol}.types").write_text(format_types(types))
        counts = {}
        for r in records:
            counts[r["label_type"]] = counts.get(r["label_type"], 0) + 1
        print(protocol, counts)


if __name__ == "__main__":
    main(sys.argv[1:])
