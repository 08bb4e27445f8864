"""Thin real-socket transport for live demos.

A loopback TCP pair: the sender thread paces frames against the wall
clock (scaled by ``time_scale``), the receiver timestamps arrivals, and
the result is folded back into the same DeliverySchedule the virtual link
produces, so the rest of the pipeline is unchanged.  Virtual mode remains
the determinism and acceptance reference; this adapter exists for demos.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

from .wire import DeliverySchedule, FrameDelivery, LinkModel

_LEN_FMT = "<I"


def _send_all(sock: socket.socket, offered, t0: float, time_scale: float):
    for send_time, data in offered:
        now = time.monotonic() - t0
        wait = send_time / time_scale - now
        if wait > 0:
            time.sleep(wait)
        sock.sendall(struct.pack(_LEN_FMT, len(data)) + data)
    sock.shutdown(socket.SHUT_WR)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def live_transmit(
    link: LinkModel,
    offered: list[tuple[float, bytes]],
    host: str = "127.0.0.1",
    port: int = 0,
    time_scale: float = 1.0,
) -> DeliverySchedule:
    """Stream frames over a real loopback TCP connection.

    ``time_scale`` > 1 speeds up pacing (demo convenience).  Bandwidth,
    latency, and congestion shaping are whatever the real path provides;
    the LinkModel is accepted for interface parity but only its mode
    matters (TCP is the reliable stream of the wire design).
    """
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    addr = server.getsockname()

    client = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    client.connect(addr)
    conn, _ = server.accept()
    server.close()

    t0 = time.monotonic()
    sender = threading.Thread(
        target=_send_all, args=(client, offered, t0, time_scale), daemon=True
    )
    sender.start()

    deliveries: list[FrameDelivery] = []
    seq = 0
    while True:
        head = _recv_exact(conn, struct.calcsize(_LEN_FMT))
        if head is None:
            break
        (length,) = struct.unpack(_LEN_FMT, head)
        data = _recv_exact(conn, length)
        if data is None:
            break
        arrival = (time.monotonic() - t0) * time_scale
        send_time = offered[seq][0] if seq < len(offered) else arrival
        deliveries.append(
            FrameDelivery(
                sequence=seq,
                send_time=send_time,
                enqueue_time=send_time,
                arrival_time=arrival,
                size_bytes=len(data),
                queue_depth_bytes=0,
                data=data,
            )
        )
        seq += 1
    sender.join()
    conn.close()
    client.close()
    return DeliverySchedule(deliveries=deliveries)
