"""Transcripts as JSON lines, one message per line."""

import json
from pathlib import Path

from qotmpc.wire import Tag, TranscriptEntry

SCHEMA_VERSION = 1


def entry_to_dict(entry: TranscriptEntry) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "seq": entry.seq,
        "sender": entry.sender,
        "tag": entry.tag.name,
        "payload": entry.payload.hex(),
    }


def entry_from_dict(doc: dict) -> TranscriptEntry:
    if doc.get("v") != SCHEMA_VERSION:
        raise ValueError(f"Unsupported transcript schema version {doc.get('v')!r}")
    try:
        return TranscriptEntry(int(doc["seq"]), doc["sender"], Tag[doc["tag"]], bytes.fromhex(doc["payload"]))
    except KeyError as e:
        raise ValueError(f"Transcript entry {doc} is missing or misnames {e}") from None


def to_jsonl(entries) -> str:
    return "".join(json.dumps(entry_to_dict(e), separators=(",", ":")) + "\n" for e in entries)


def write_transcript(path, entries):
    """Appends, so several sessions can share one file."""
    with open(path, "a", encoding="utf-8") as f:
        f.write(to_jsonl(entries))


def read_transcript(path) -> list[TranscriptEntry]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [entry_from_dict(json.loads(line)) for line in lines if line.strip()]
