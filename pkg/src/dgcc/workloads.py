"""Workload generators: a YCSB-style key-value workload with Zipfian
skew, and a compact TPC-C subset at one warehouse.

Both generators are deterministic per seed and emit transactions whose
piece access sets are pure functions of the encoded parameters, so the
same stream can be chopped, executed, logged, and replayed bit for bit.
TPC-C order numbers are assigned by the generator rather than read from
the district row, which is what keeps the insert keys static.
"""

from __future__ import annotations

import bisect
import random
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Optional

from .errors import EngineError
from .storage import Key, Record, Store, TableSchema
from .txmodel import (
    PieceKind,
    PieceTemplate,
    ProcedureRegistry,
    StoredProcedure,
    Transaction,
)

MASK = (1 << 64) - 1


class ZipfSampler:
    """Draws ranks in [1, n] with P(r) proportional to 1 / r**theta.

    The cumulative distribution is materialized once and sampled by
    binary search, so the sampler is exact for any exponent including
    theta = 0 (uniform).
    """

    def __init__(self, n: int, theta: float, rng: random.Random) -> None:
        if n < 1:
            raise EngineError("sampler needs at least one item")
        if theta < 0:
            raise EngineError("zipf exponent must be >= 0")
        self.n = n
        self.theta = theta
        self._rng = rng
        cdf: list[float] = []
        total = 0.0
        for rank in range(1, n + 1):
            total += 1.0 / rank ** theta
            cdf.append(total)
        self._cdf = cdf
        self._total = total

    def sample(self) -> int:
        u = self._rng.random() * self._total
        return bisect.bisect_right(self._cdf, u) + 1

    def pmf(self, rank: int) -> float:
        if not 1 <= rank <= self.n:
            raise EngineError(f"rank {rank} outside [1, {self.n}]")
        return (1.0 / rank ** self.theta) / self._total


# ---------------------------------------------------------------------------
# YCSB
# ---------------------------------------------------------------------------

YCSB_TABLE = 0
YCSB_FUNCTION_ID = 1
_OP_READ = 0
_OP_RMW = 1


@dataclass(frozen=True)
class YcsbConfig:
    theta: float = 0.8
    rw_ratio: float = 1.0  # reads per write; P(read) = ratio / (ratio + 1)
    table_size: int = 100_000
    ops_per_txn: int = 16
    seed: int = 1
    field_count: int = 10
    field_width: int = 100

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise EngineError("theta must be >= 0")
        if self.rw_ratio <= 0:
            raise EngineError("rw_ratio must be > 0")
        if self.table_size < self.ops_per_txn:
            raise EngineError("table must hold at least ops_per_txn keys")
        if self.field_width < 8:
            raise EngineError("field_width must be >= 8")


@lru_cache(maxsize=1 << 17)
def ycsb_key(key_id: int) -> Key:
    return Key(YCSB_TABLE, struct.pack(">Q", key_id))


def _ycsb_decode(raw: bytes) -> dict:
    (count,) = struct.unpack_from(">H", raw, 0)
    ops = []
    offset = 2
    for _ in range(count):
        kind, key_id = struct.unpack_from(">BQ", raw, offset)
        offset += 9
        ops.append((kind, ycsb_key(key_id)))
    return {"ops": ops}


def _ycsb_encode(ops: list[tuple[int, int]]) -> bytes:
    parts = [struct.pack(">H", len(ops))]
    parts.extend(struct.pack(">BQ", kind, key_id) for kind, key_id in ops)
    return b"".join(parts)


class YcsbWorkload:
    """Builds the table, the stored procedure, and the transaction stream."""

    def __init__(self, cfg: YcsbConfig) -> None:
        self.cfg = cfg
        self._rng = random.Random(cfg.seed)
        self.sampler = ZipfSampler(cfg.table_size, cfg.theta, self._rng)
        self._next_ts = 1
        self.registry = ProcedureRegistry()
        self.registry.register(self._build_procedure())

    @property
    def schema(self) -> TableSchema:
        cfg = self.cfg
        return TableSchema(
            "usertable",
            (cfg.field_width,) * cfg.field_count,
            initial_capacity=max(256, cfg.table_size),
        )

    def create_tables(self, store: Store, versioned: bool = False) -> None:
        store.create_table(YCSB_TABLE, self.schema, versioned=versioned)

    def populate(self, store: Store, versioned: bool = False) -> None:
        self.create_tables(store, versioned=versioned)
        cfg = self.cfg
        for key_id in range(cfg.table_size):
            pattern = bytes([key_id % 251]) * cfg.field_width
            store.put(ycsb_key(key_id), (pattern,) * cfg.field_count)

    def _build_procedure(self) -> StoredProcedure:
        cfg = self.cfg
        width = cfg.field_width

        def body(ctx, params, index):
            kind, key = params["ops"][index]
            record = ctx.read(key)
            if kind == _OP_RMW and record is not None:
                old = int.from_bytes(record[0][:8], "big")
                ts = params["__ts"]
                mixed = (old * 1000003 + ts * 31 + index + 1) & MASK
                head = mixed.to_bytes(8, "big").ljust(width, b"\0")
                ctx.write(key, (head,) + tuple(record[1:]))

        templates = []
        for i in range(cfg.ops_per_txn):
            def read_keys(params, i=i):
                return (params["ops"][i][1],)

            def write_keys(params, i=i):
                kind, key = params["ops"][i]
                return (key,) if kind == _OP_RMW else ()

            templates.append(
                PieceTemplate(
                    name=f"op{i}",
                    read_keys=read_keys,
                    write_keys=write_keys,
                    body=lambda ctx, params, i=i: body(ctx, params, i),
                )
            )

        return StoredProcedure(
            function_id=YCSB_FUNCTION_ID,
            name="ycsb",
            decode_params=self._decode_with_ts,
            templates=tuple(templates),
        )

    @staticmethod
    def _decode_with_ts(raw: bytes) -> dict:
        ts = struct.unpack_from(">Q", raw, 0)[0]
        params = _ycsb_decode(raw[8:])
        params["__ts"] = ts
        return params

    def stream(self, count: int) -> Iterator[Transaction]:
        cfg = self.cfg
        p_read = cfg.rw_ratio / (cfg.rw_ratio + 1.0)
        for _ in range(count):
            ts = self._next_ts
            self._next_ts += 1
            chosen: set[int] = set()
            ops: list[tuple[int, int]] = []
            while len(ops) < cfg.ops_per_txn:
                key_id = self.sampler.sample() - 1
                if key_id in chosen:
                    continue  # de-duplicate within the transaction by redraw
                chosen.add(key_id)
                kind = _OP_READ if self._rng.random() < p_read else _OP_RMW
                ops.append((kind, key_id))
            raw = struct.pack(">Q", ts) + _ycsb_encode(ops)
            yield Transaction(ts, YCSB_FUNCTION_ID, raw)


def gen_ycsb(cfg: YcsbConfig, count: int) -> list[Transaction]:
    return list(YcsbWorkload(cfg).stream(count))


# ---------------------------------------------------------------------------
# TPC-C subset (one warehouse by default)
# ---------------------------------------------------------------------------

T_WAREHOUSE = 1
T_DISTRICT = 2
T_CUSTOMER = 3
T_ITEM = 4
T_STOCK = 5
T_ORDER = 6
T_ORDER_LINE = 7

FID_NEW_ORDER_BASE = 10  # + order line count
FID_PAYMENT = 30
FID_DELIVERY = 31
FID_ORDER_STATUS = 32
FID_STOCK_LEVEL = 33

MIN_ORDER_LINES = 5
MAX_ORDER_LINES = 15

NEW_ORDER = "new_order"
PAYMENT = "payment"
DELIVERY = "delivery"
ORDER_STATUS = "order_status"
STOCK_LEVEL = "stock_level"
TXN_NAMES = (NEW_ORDER, PAYMENT, DELIVERY, ORDER_STATUS, STOCK_LEVEL)


def warehouse_key(w: int) -> Key:
    return Key(T_WAREHOUSE, struct.pack(">Q", w))


def district_key(w: int, d: int) -> Key:
    return Key(T_DISTRICT, struct.pack(">II", w, d))


def customer_key(w: int, d: int, c: int) -> Key:
    return Key(T_CUSTOMER, struct.pack(">HHI", w, d, c))


def item_key(i: int) -> Key:
    return Key(T_ITEM, struct.pack(">Q", i))


def stock_key(w: int, i: int) -> Key:
    return Key(T_STOCK, struct.pack(">II", w, i))


def order_key(w: int, d: int, o: int) -> Key:
    return Key(T_ORDER, struct.pack(">HHI", w, d, o))


def order_line_key(w: int, d: int, o: int, line: int) -> Key:
    return Key(T_ORDER_LINE, struct.pack(">HBIB", w, d, o, line))


@dataclass(frozen=True)
class TpccConfig:
    warehouses: int = 1
    mix: tuple[float, ...] = (0.45, 0.43, 0.04, 0.04, 0.04)
    seed: int = 1
    items: int = 1000
    districts: int = 10
    customers_per_district: int = 300
    invalid_item_rate: float = 0.01

    def __post_init__(self) -> None:
        if self.warehouses < 1:
            raise EngineError("need at least one warehouse")
        if len(self.mix) != 5:
            raise EngineError("mix needs one weight per transaction type")
        if any(w < 0 for w in self.mix) or abs(sum(self.mix) - 1.0) > 1e-9:
            raise EngineError("mix weights must be non-negative and sum to 1")


def _u64(value: int) -> tuple[bytes]:
    return (value.to_bytes(8, "big"),)


def _u64x2(a: int, b: int) -> tuple[bytes, bytes]:
    return (a.to_bytes(8, "big"), b.to_bytes(8, "big"))


def _get_int(record: Optional[Record], column: int = 0) -> int:
    return 0 if record is None else int.from_bytes(record[column], "big")


def _bump(record: Optional[Record], column: int, delta: int) -> Record:
    cols = list(record) if record is not None else []
    while len(cols) <= column:
        cols.append((0).to_bytes(8, "big"))
    value = (int.from_bytes(cols[column], "big") + delta) & MASK
    cols[column] = value.to_bytes(8, "big")
    return tuple(cols)


# -- parameter codecs -------------------------------------------------------

def _encode_new_order(w, d, c, o_id, lines) -> bytes:
    parts = [struct.pack(">HBIIB", w, d, o_id, c, len(lines))]
    parts.extend(struct.pack(">IB", item, qty) for item, qty in lines)
    return b"".join(parts)


def _decode_new_order(raw: bytes) -> dict:
    w, d, o_id, c, n = struct.unpack_from(">HBIIB", raw, 0)
    offset = struct.calcsize(">HBIIB")
    lines = []
    for _ in range(n):
        item, qty = struct.unpack_from(">IB", raw, offset)
        offset += 5
        lines.append((item, qty))
    return {
        "w": w, "d": d, "c": c, "o_id": o_id, "lines": lines,
        "item_keys": [item_key(i) for i, _ in lines],
        "stock_keys": [stock_key(w, i) for i, _ in lines],
        "ol_keys": [order_line_key(w, d, o_id, l) for l in range(n)],
        "district_key": district_key(w, d),
        "order_key": order_key(w, d, o_id),
    }


def _encode_payment(w, d, c, amount) -> bytes:
    return struct.pack(">HBIQ", w, d, c, amount)


def _decode_payment(raw: bytes) -> dict:
    w, d, c, amount = struct.unpack(">HBIQ", raw)
    return {
        "amount": amount,
        "customer_key": customer_key(w, d, c),
        "district_key": district_key(w, d),
        "warehouse_key": warehouse_key(w),
    }


def _encode_delivery(w, customers) -> bytes:
    return struct.pack(">H", w) + b"".join(struct.pack(">I", c) for c in customers)


def _decode_delivery(raw: bytes) -> dict:
    (w,) = struct.unpack_from(">H", raw, 0)
    customers = [
        struct.unpack_from(">I", raw, 2 + 4 * i)[0] for i in range((len(raw) - 2) // 4)
    ]
    return {
        "customer_keys": [
            customer_key(w, d + 1, c) for d, c in enumerate(customers)
        ],
    }


def _encode_order_status(w, d, c) -> bytes:
    return struct.pack(">HBI", w, d, c)


def _decode_order_status(raw: bytes) -> dict:
    w, d, c = struct.unpack(">HBI", raw)
    return {
        "customer_key": customer_key(w, d, c),
        "district_key": district_key(w, d),
    }


def _encode_stock_level(w, d, items) -> bytes:
    return struct.pack(">HB", w, d) + b"".join(struct.pack(">I", i) for i in items)


def _decode_stock_level(raw: bytes) -> dict:
    w, d = struct.unpack_from(">HB", raw, 0)
    items = [
        struct.unpack_from(">I", raw, 3 + 4 * i)[0] for i in range((len(raw) - 3) // 4)
    ]
    return {
        "district_key": district_key(w, d),
        "stock_keys": [stock_key(w, i) for i in items],
    }


# -- procedure bodies -------------------------------------------------------

def _no_check_body(ctx, params) -> bool:
    """All ordered items must exist; one bad id fails the whole order."""
    for key in params["item_keys"]:
        if ctx.read(key) is None:
            return False
    return True


def _no_district_body(ctx, params) -> None:
    district = ctx.read(params["district_key"])
    updated = _bump(district, 1, 1)  # advance next-order counter
    ctx.write(params["district_key"], updated)


def _no_line_body(ctx, params, index) -> None:
    item, qty = params["lines"][index]
    price = _get_int(ctx.read(params["item_keys"][index]))
    stock = ctx.read(params["stock_keys"][index])
    stock = _bump(stock, 0, -qty)
    stock = _bump(stock, 1, qty)
    ctx.write(params["stock_keys"][index], stock)
    amount = (price * qty) & MASK
    ctx.insert(params["ol_keys"][index], _u64x2(item, amount))


def _no_order_body(ctx, params) -> None:
    ctx.insert(params["order_key"], _u64x2(params["c"], len(params["lines"])))


def _pay_customer_body(ctx, params) -> None:
    customer = ctx.read(params["customer_key"])
    customer = _bump(customer, 0, params["amount"])
    customer = _bump(customer, 1, 1)
    ctx.write(params["customer_key"], customer)


def _pay_district_body(ctx, params) -> None:
    ctx.write(params["district_key"], _bump(ctx.read(params["district_key"]), 0, params["amount"]))


def _pay_warehouse_body(ctx, params) -> None:
    ctx.write(params["warehouse_key"], _bump(ctx.read(params["warehouse_key"]), 0, params["amount"]))


def _delivery_body(ctx, params, index) -> None:
    key = params["customer_keys"][index]
    ctx.write(key, _bump(ctx.read(key), 0, 10))


def _read_only_body(keys_field: str):
    def body(ctx, params) -> None:
        ctx.read(params[keys_field])
    return body


def _stock_level_body(ctx, params) -> None:
    for key in params["stock_keys"]:
        ctx.read(key)


class TpccWorkload:
    """One-warehouse TPC-C subset with the standard transaction mix."""

    def __init__(self, cfg: TpccConfig) -> None:
        self.cfg = cfg
        self._rng = random.Random(cfg.seed)
        self._next_ts = 1
        # Per-(warehouse, district) order counters live in the generator so
        # order and order-line keys are static functions of the parameters.
        self._next_o_id = {
            (w, d): 1
            for w in range(1, cfg.warehouses + 1)
            for d in range(1, cfg.districts + 1)
        }
        self.counts = {name: 0 for name in TXN_NAMES}
        self.invalid_new_orders = 0
        self.registry = ProcedureRegistry()
        self._register_all()

    # -- schema and population ------------------------------------------
    def create_tables(self, store: Store, versioned: bool = False) -> None:
        cfg = self.cfg
        specs = [
            (T_WAREHOUSE, TableSchema("warehouse", (8,), max(8, cfg.warehouses))),
            (T_DISTRICT, TableSchema("district", (8, 8), max(16, cfg.warehouses * cfg.districts))),
            (T_CUSTOMER, TableSchema(
                "customer", (8, 8),
                max(256, cfg.warehouses * cfg.districts * cfg.customers_per_district))),
            (T_ITEM, TableSchema("item", (8,), max(256, cfg.items))),
            (T_STOCK, TableSchema("stock", (8, 8), max(256, cfg.warehouses * cfg.items))),
            (T_ORDER, TableSchema("orders", (8, 8), 1024)),
            (T_ORDER_LINE, TableSchema("order_line", (8, 8), 4096)),
        ]
        for table_id, schema in specs:
            store.create_table(table_id, schema, versioned=versioned)

    def populate(self, store: Store, versioned: bool = False) -> None:
        cfg = self.cfg
        self.create_tables(store, versioned=versioned)
        for w in range(1, cfg.warehouses + 1):
            store.put(warehouse_key(w), _u64(0))
            for d in range(1, cfg.districts + 1):
                store.put(district_key(w, d), _u64x2(0, 1))
                for c in range(1, cfg.customers_per_district + 1):
                    store.put(customer_key(w, d, c), _u64x2(0, 0))
            for i in range(1, cfg.items + 1):
                store.put(stock_key(w, i), _u64x2(100, 0))
        for i in range(1, cfg.items + 1):
            store.put(item_key(i), _u64((i * 100 + i % 97) & MASK))

    # -- procedure registration ------------------------------------------
    def _register_all(self) -> None:
        for n_lines in range(MIN_ORDER_LINES, MAX_ORDER_LINES + 1):
            self.registry.register(self._new_order_proc(n_lines))
        self.registry.register(StoredProcedure(
            FID_PAYMENT, PAYMENT, _decode_payment,
            (
                PieceTemplate("customer",
                              lambda p: (p["customer_key"],),
                              lambda p: (p["customer_key"],), _pay_customer_body),
                PieceTemplate("district",
                              lambda p: (p["district_key"],),
                              lambda p: (p["district_key"],), _pay_district_body),
                PieceTemplate("warehouse",
                              lambda p: (p["warehouse_key"],),
                              lambda p: (p["warehouse_key"],), _pay_warehouse_body),
            ),
            logic_edges=((0, 1), (1, 2)),  # strictly serial chain
        ))
        delivery_templates = tuple(
            PieceTemplate(
                f"deliver{d}",
                lambda p, d=d: (p["customer_keys"][d],),
                lambda p, d=d: (p["customer_keys"][d],),
                lambda ctx, p, d=d: _delivery_body(ctx, p, d),
            )
            for d in range(self.cfg.districts)
        )
        self.registry.register(StoredProcedure(
            FID_DELIVERY, DELIVERY, _decode_delivery, delivery_templates))
        self.registry.register(StoredProcedure(
            FID_ORDER_STATUS, ORDER_STATUS, _decode_order_status,
            (
                PieceTemplate("customer",
                              lambda p: (p["customer_key"],), lambda p: (),
                              _read_only_body("customer_key")),
                PieceTemplate("district",
                              lambda p: (p["district_key"],), lambda p: (),
                              _read_only_body("district_key")),
            ),
        ))
        self.registry.register(StoredProcedure(
            FID_STOCK_LEVEL, STOCK_LEVEL, _decode_stock_level,
            (
                PieceTemplate("district",
                              lambda p: (p["district_key"],), lambda p: (),
                              _read_only_body("district_key")),
                PieceTemplate("stock",
                              lambda p: tuple(p["stock_keys"]), lambda p: (),
                              _stock_level_body),
            ),
        ))

    def _new_order_proc(self, n_lines: int) -> StoredProcedure:
        templates = [
            PieceTemplate(
                "check_items",
                lambda p: tuple(p["item_keys"]),
                lambda p: (),
                _no_check_body,
                kind=PieceKind.CONDITION_CHECK,
            ),
            PieceTemplate(
                "district",
                lambda p: (p["district_key"],),
                lambda p: (p["district_key"],),
                _no_district_body,
            ),
        ]
        for line in range(n_lines):
            templates.append(PieceTemplate(
                f"line{line}",
                lambda p, l=line: (p["item_keys"][l], p["stock_keys"][l]),
                lambda p, l=line: (p["stock_keys"][l], p["ol_keys"][l]),
                lambda ctx, p, l=line: _no_line_body(ctx, p, l),
            ))
        templates.append(PieceTemplate(
            "order",
            lambda p: (),
            lambda p: (p["order_key"],),
            _no_order_body,
        ))
        edges = tuple((0, j) for j in range(1, len(templates)))
        return StoredProcedure(
            FID_NEW_ORDER_BASE + n_lines,
            f"{NEW_ORDER}_{n_lines}",
            _decode_new_order,
            tuple(templates),
            logic_edges=edges,
        )

    # -- stream -----------------------------------------------------------
    def _pick_type(self) -> int:
        u = self._rng.random()
        acc = 0.0
        for i, weight in enumerate(self.cfg.mix):
            acc += weight
            if u < acc:
                return i
        return len(self.cfg.mix) - 1

    def _gen_new_order(self) -> Transaction:
        cfg = self.cfg
        rng = self._rng
        w = rng.randint(1, cfg.warehouses)
        d = rng.randint(1, cfg.districts)
        c = rng.randint(1, cfg.customers_per_district)
        o_id = self._next_o_id[(w, d)]
        self._next_o_id[(w, d)] = o_id + 1
        n_lines = rng.randint(MIN_ORDER_LINES, MAX_ORDER_LINES)
        items: set[int] = set()
        while len(items) < n_lines:
            items.add(rng.randint(1, cfg.items))
        lines = [(i, rng.randint(1, 10)) for i in sorted(items)]
        if rng.random() < cfg.invalid_item_rate:
            slot = rng.randrange(n_lines)
            lines[slot] = (cfg.items + 1 + rng.randint(0, 1000), lines[slot][1])
            self.invalid_new_orders += 1
        raw = _encode_new_order(w, d, c, o_id, lines)
        return self._emit(FID_NEW_ORDER_BASE + n_lines, raw)

    def _gen_payment(self) -> Transaction:
        cfg = self.cfg
        rng = self._rng
        raw = _encode_payment(
            rng.randint(1, cfg.warehouses),
            rng.randint(1, cfg.districts),
            rng.randint(1, cfg.customers_per_district),
            rng.randint(1, 5000),
        )
        return self._emit(FID_PAYMENT, raw)

    def _gen_delivery(self) -> Transaction:
        cfg = self.cfg
        rng = self._rng
        customers = [
            rng.randint(1, cfg.customers_per_district) for _ in range(cfg.districts)
        ]
        return self._emit(FID_DELIVERY, _encode_delivery(rng.randint(1, cfg.warehouses), customers))

    def _gen_order_status(self) -> Transaction:
        cfg = self.cfg
        rng = self._rng
        raw = _encode_order_status(
            rng.randint(1, cfg.warehouses),
            rng.randint(1, cfg.districts),
            rng.randint(1, cfg.customers_per_district),
        )
        return self._emit(FID_ORDER_STATUS, raw)

    def _gen_stock_level(self) -> Transaction:
        cfg = self.cfg
        rng = self._rng
        w = rng.randint(1, cfg.warehouses)
        d = rng.randint(1, cfg.districts)
        items = sorted(rng.sample(range(1, cfg.items + 1), min(20, cfg.items)))
        return self._emit(FID_STOCK_LEVEL, _encode_stock_level(w, d, items))

    def _emit(self, function_id: int, raw: bytes) -> Transaction:
        ts = self._next_ts
        self._next_ts += 1
        return Transaction(ts, function_id, raw)

    def stream(self, count: int) -> Iterator[Transaction]:
        makers = (
            self._gen_new_order,
            self._gen_payment,
            self._gen_delivery,
            self._gen_order_status,
            self._gen_stock_level,
        )
        for _ in range(count):
            pick = self._pick_type()
            self.counts[TXN_NAMES[pick]] += 1
            yield makers[pick]()


def gen_tpcc(cfg: TpccConfig, count: int) -> list[Transaction]:
    return list(TpccWorkload(cfg).stream(count))
