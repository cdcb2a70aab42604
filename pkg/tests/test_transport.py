import threading

import pytest

from qotmpc.testutils import free_port
from qotmpc.transport import LocalChannel, TcpChannel, TransportError, parse_endpoint, tcp_transport
from qotmpc.wire import FrameError, Tag, WireMessage


def test_local_pair_delivers_in_order():
    a, b = LocalChannel.pair()
    for k in range(5):
        a.send(WireMessage(Tag.TEST_CHALLENGE, bytes([k])))
    assert [b.recv().payload for _ in range(5)] == [bytes([k]) for k in range(5)]
    b.send(WireMessage(Tag.TEST_OPENINGS, b"back"))
    assert a.recv().payload == b"back"


def test_transcripts_and_byte_counts():
    a, b = LocalChannel.pair("alice", "bob")
    a.send(WireMessage(Tag.ROUND_SELECTION, b"12345"))
    b.recv()
    assert a.bytes_sent == b.bytes_received == 5 + 5
    assert [(e.seq, e.sender, e.tag) for e in a.transcript] == [(0, "alice", Tag.ROUND_SELECTION)]
    assert a.transcript == b.transcript


def test_local_timeout_and_close():
    a, b = LocalChannel.pair()
    with pytest.raises(TransportError, match="no message"):
        b.recv(timeout=0.01)
    a.close()
    with pytest.raises(TransportError, match="closed"):
        b.recv(timeout=1)


def test_parse_endpoint():
    assert parse_endpoint("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_endpoint(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_endpoint("localhost")
    with pytest.raises(ValueError):
        tcp_transport("alice", "bob")


def _listen_in_thread(port, box):
    def serve():
        box["server"] = TcpChannel.listen("127.0.0.1", port, "alice", "bob", timeout=10)

    thread = threading.Thread(target=serve)
    thread.start()
    return thread


def _connect(port):
    return TcpChannel.connect("127.0.0.1", port, "bob", "alice", timeout=10)


def test_tcp_loopback_roundtrip():
    port = free_port()
    box = {}
    thread = _listen_in_thread(port, box)
    client = _connect(port)
    thread.join()
    server = box["server"]
    with server, client:
        big = bytes(range(256)) * 4000
        client.send(WireMessage(Tag.NO_CLICK_REPORT, big))
        client.send(WireMessage(Tag.COMMITMENT_BATCH, b"c"))
        assert server.recv(timeout=10).payload == big
        assert server.recv(timeout=10).tag == Tag.COMMITMENT_BATCH
        server.send(WireMessage(Tag.ROUND_SELECTION, b"r"))
        assert client.recv(timeout=10) == WireMessage(Tag.ROUND_SELECTION, b"r")
        assert server.transcript == client.transcript


def test_tcp_peer_closing_surfaces_as_error():
    port = free_port()
    box = {}
    thread = _listen_in_thread(port, box)
    client = _connect(port)
    thread.join()
    client.close()
    with pytest.raises((FrameError, TransportError)):
        box["server"].recv(timeout=10)
    box["server"].close()


def test_tcp_truncated_frame():
    port = free_port()
    box = {}
    thread = _listen_in_thread(port, box)
    client = _connect(port)
    thread.join()
    # A header announcing 100 bytes followed by only 3 of them.
    client._sock.sendall(b"\x00\x00\x00\x64\x01abc")
    client.close()
    with pytest.raises(FrameError, match="Truncated"):
        box["server"].recv(timeout=10)
    box["server"].close()


def test_connect_gives_up_after_the_timeout():
    with pytest.raises(TransportError, match="Cannot connect"):
        TcpChannel.connect("127.0.0.1", free_port(), "bob", "alice", timeout=0.2)
