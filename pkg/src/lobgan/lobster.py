"""LOBSTER message / orderbook files.

Message files have six columns ``time,type,order_id,size,price,direction``;
orderbook files have ``4 * depth`` columns, level by level
``ask_price,ask_size,bid_price,bid_size``. Prices are integers in units of
1e-4 currency. Missing levels use sentinel prices with size 0.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

NEW_LIMIT = 1
PARTIAL_CANCEL = 2
DELETE = 3
EXECUTE_VISIBLE = 4
EXECUTE_HIDDEN = 5
CROSS = 6
HALT = 7
MESSAGE_TYPES = frozenset(range(1, 8))

ASK_SENTINEL = 9999999999
BID_SENTINEL = -9999999999


class LobsterFormatError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class LobsterMessage:
    time: Decimal
    type: int
    order_id: int
    size: int
    price: int
    direction: int

    @property
    def time_ns(self) -> int:
        return int(self.time * 1_000_000_000)

    def to_row(self) -> str:
        return f"{self.time},{self.type},{self.order_id},{self.size},{self.price},{self.direction}"


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", newline="")
    return open(path, newline="")


@dataclass
class LobsterData:
    messages: list
    books: np.ndarray  # (n, 4 * depth) int64
    errors: list  # (line_number, reason)

    @property
    def depth(self) -> int:
        return self.books.shape[1] // 4

    def __len__(self):
        return len(self.messages)

    def best(self, i):
        """(bid_price, bid_size, ask_price, ask_size) of book row i; None prices when absent."""
        row = self.books[i]
        ask_p, ask_s, bid_p, bid_s = (int(v) for v in row[:4])
        return (
            None if bid_s == 0 or bid_p == BID_SENTINEL else bid_p, bid_s,
            None if ask_s == 0 or ask_p == ASK_SENTINEL else ask_p, ask_s,
        )

    def mid(self, i) -> Optional[Fraction]:
        return book_row_mid(self.books[i])

    def levels(self, i):
        """((bids best-first), (asks best-first)) of present (price, size) levels."""
        row = self.books[i]
        asks, bids = [], []
        for k in range(self.depth):
            ap, az, bp, bz = (int(v) for v in row[4 * k:4 * k + 4])
            if az > 0 and ap != ASK_SENTINEL:
                asks.append((ap, az))
            if bz > 0 and bp != BID_SENTINEL:
                bids.append((bp, bz))
        return tuple(bids), tuple(asks)


def book_row_mid(row) -> Optional[Fraction]:
    ask_p, ask_s, bid_p, bid_s = (int(v) for v in row[:4])
    if ask_s == 0 or bid_s == 0 or ask_p == ASK_SENTINEL or bid_p == BID_SENTINEL:
        return None
    return Fraction(ask_p + bid_p, 2)


def parse_message_row(text: str) -> LobsterMessage:
    parts = text.strip().split(",")
    if len(parts) != 6:
        raise LobsterFormatError(f"expected 6 fields, got {len(parts)}")
    try:
        t = Decimal(parts[0])
        typ, oid, size, price, direction = (int(p) for p in parts[1:])
    except (InvalidOperation, ValueError) as exc:
        raise LobsterFormatError(f"bad field: {exc}") from None
    if typ not in MESSAGE_TYPES:
        raise LobsterFormatError(f"unknown message type {typ}")
    if direction not in (-1, 1):
        raise LobsterFormatError(f"direction must be -1 or 1, got {direction}")
    if size < 0:
        raise LobsterFormatError(f"negative size {size}")
    return LobsterMessage(t, typ, oid, size, price, direction)


def parse_lobster(message_path, book_path) -> LobsterData:
    """Read a message file and its orderbook file as aligned rows.

    Raises on a row-count mismatch. Malformed rows are skipped (with their
    partner row) and reported in ``errors`` with 1-based line numbers.
    """
    for p in (message_path, book_path):
        if not Path(p).exists():
            raise FileNotFoundError(p)
    with _open(message_path) as fh:
        msg_lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    with _open(book_path) as fh:
        book_lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(msg_lines) != len(book_lines):
        raise LobsterFormatError(
            f"row-count mismatch: {len(msg_lines)} messages vs {len(book_lines)} book rows")

    width = None
    messages, rows, errors = [], [], []
    last_time = None
    for lineno, (m_line, b_line) in enumerate(zip(msg_lines, book_lines), start=1):
        try:
            msg = parse_message_row(m_line)
            fields = b_line.strip().split(",")
            if width is None:
                if len(fields) % 4:
                    raise LobsterFormatError(f"book row has {len(fields)} columns, not a multiple of 4")
                width = len(fields)
            if len(fields) != width:
                raise LobsterFormatError(f"book row has {len(fields)} columns, expected {width}")
            row = [int(f) for f in fields]
            if last_time is not None and msg.time < last_time:
                raise LobsterFormatError("time decreased")
        except (LobsterFormatError, ValueError) as exc:
            errors.append((lineno, str(exc)))
            continue
        last_time = msg.time
        messages.append(msg)
        rows.append(row)
    if errors:
        logger.warning("%d malformed LOBSTER rows skipped (first: line %d, %s)",
                       len(errors), *errors[0])
    books = np.asarray(rows, dtype=np.int64).reshape(len(rows), width or 0)
    return LobsterData(messages, books, errors)


def _open_write(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "wt", newline="")
    return open(path, "w", newline="")


def write_lobster(data: LobsterData, message_path, book_path):
    with _open_write(message_path) as fh:
        for m in data.messages:
            fh.write(m.to_row())
            fh.write("\n")
    with _open_write(book_path) as fh:
        for row in data.books:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")


def book_row(bids, asks, depth: int) -> list:
    """Encode best-first (price, size) levels into a LOBSTER book row."""
    row = []
    for k in range(depth):
        if k < len(asks):
            row += [asks[k][0], asks[k][1]]
        else:
            row += [ASK_SENTINEL, 0]
        if k < len(bids):
            row += [bids[k][0], bids[k][1]]
        else:
            row += [BID_SENTINEL, 0]
    return row


def find_files(directory, pattern_msg="*_message_*.csv*", pattern_book="*_orderbook_*.csv*"):
    d = Path(directory)
    msgs = sorted(d.glob(pattern_msg))
    books = sorted(d.glob(pattern_book))
    if len(msgs) != 1 or len(books) != 1:
        raise FileNotFoundError(f"expected one message and one orderbook file in {d}")
    return msgs[0], books[0]
