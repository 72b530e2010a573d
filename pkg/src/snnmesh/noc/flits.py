"""Flit codecs: bundled AER (one flit per row chunk) and legacy per-spike AER.

Bundled flit layout, least-significant bit first (bit 0 is the LSB of byte
0 in a little-endian dump)::

    bits  0..2    m     remaining vertical hops
    bits  3..5    n     remaining horizontal hops
    bits  6..7    type  0 beginning, 1 body, 2 ending (a lone flit is ending)
    bits  8..19   st_id spine/token id
    bits 20..     slots, 13 bits each: position (12) then sign (1 = negative)
    top 15 bits   check: occupancy (5) then CRC-10 (10)

With 256 bits there are exactly 17 slots and no gap. Other widths keep the
35 header/check bits and fit ``(flit_bits - 35) // 13`` slots; unused bits
are zero. The CRC covers every bit below it (the top 10 bits), serialised
MSB-first after left-aligning to a byte boundary, polynomial 0x233, init 0.

Legacy packets are 25 bits: st_id (12), position (12), sign (1).
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ChecksumMismatch, HopOverflow, PositionOverflow, ValidationError

HEADER_BITS = 6 + 2 + 12
CHECK_BITS = 15
OCC_BITS = 5
CRC_BITS = 10
SLOT_BITS = 13
POS_BITS = 12
ID_BITS = 12
AER_BITS = 25
MAX_HOPS = 7

BEGINNING, BODY, ENDING = 0, 1, 2

CRC_POLY = 0x233


def _crc_table():
    table = []
    top = 1 << (CRC_BITS - 1)
    mask = (1 << CRC_BITS) - 1
    for byte in range(256):
        reg = byte << (CRC_BITS - 8)
        for _ in range(8):
            reg = ((reg << 1) ^ CRC_POLY) if reg & top else (reg << 1)
        table.append(reg & mask)
    return table


_TABLE = _crc_table()


def crc10(data: bytes) -> int:
    """CRC-10/ATM (poly 0x233, init 0, no reflection, no final xor)."""
    reg = 0
    for b in data:
        reg = ((reg << 8) & 0x3FF) ^ _TABLE[((reg >> (CRC_BITS - 8)) ^ b) & 0xFF]
    return reg


def slots_for(flit_bits: int) -> int:
    slots = (flit_bits - HEADER_BITS - CHECK_BITS) // SLOT_BITS
    if slots < 1 or slots >= 1 << OCC_BITS:
        raise ValidationError(f"flit width {flit_bits} gives {slots} slots, need 1..31",
                              field="flit_bits")
    return slots


def _content_crc(content: int, flit_bits: int) -> int:
    nbits = flit_bits - CRC_BITS
    pad = -nbits % 8
    return crc10((content << pad).to_bytes((nbits + pad) // 8, "big"))


@dataclass(frozen=True)
class BaerFlit:
    word: int
    flit_bits: int = 256

    @property
    def m(self) -> int:
        return self.word & 7

    @property
    def n(self) -> int:
        return (self.word >> 3) & 7

    @property
    def dest(self) -> tuple[int, int]:
        return self.m, self.n

    @property
    def type(self) -> int:
        return (self.word >> 6) & 3

    @property
    def st_id(self) -> int:
        return (self.word >> 8) & 0xFFF

    @property
    def occupancy(self) -> int:
        return (self.word >> (self.flit_bits - CHECK_BITS)) & 0x1F

    def to_bytes(self) -> bytes:
        return self.word.to_bytes((self.flit_bits + 7) // 8, "little")

    @classmethod
    def from_bytes(cls, raw: bytes, flit_bits: int = 256) -> "BaerFlit":
        return cls(int.from_bytes(raw, "little"), flit_bits)


def pack_flit(st_id: int, spikes, dest=(0, 0), ftype: int = ENDING,
              flit_bits: int = 256) -> BaerFlit:
    slots = slots_for(flit_bits)
    if len(spikes) > slots:
        raise ValidationError(f"{len(spikes)} spikes exceed {slots} slots", field="spikes")
    m, n = dest
    if not (0 <= m <= MAX_HOPS and 0 <= n <= MAX_HOPS):
        raise HopOverflow(f"hop counts {dest} do not fit 3 bits", field="dest")
    if not 0 <= st_id < 1 << ID_BITS:
        raise PositionOverflow(f"st_id {st_id} does not fit {ID_BITS} bits", field="st_id")
    word = m | (n << 3) | (ftype << 6) | (st_id << 8)
    shift = HEADER_BITS
    for pos, sign in spikes:
        if not 0 <= pos < 1 << POS_BITS:
            raise PositionOverflow(f"position {pos} does not fit {POS_BITS} bits", field="position")
        word |= (pos | ((1 if sign < 0 else 0) << POS_BITS)) << shift
        shift += SLOT_BITS
    word |= len(spikes) << (flit_bits - CHECK_BITS)
    word |= _content_crc(word, flit_bits) << (flit_bits - CRC_BITS)
    return BaerFlit(word, flit_bits)


def encode_baer(st_id: int, spikes, dest=(0, 0), flit_bits: int = 256,
                per_flit: int | None = None) -> list[BaerFlit]:
    """Split one row's spikes into flits; ``per_flit`` may lower the fill cap."""
    spikes = list(spikes)
    if not spikes:
        return []
    cap = slots_for(flit_bits) if per_flit is None else min(per_flit, slots_for(flit_bits))
    chunks = [spikes[i:i + cap] for i in range(0, len(spikes), cap)]
    out = []
    for i, chunk in enumerate(chunks):
        ftype = ENDING if i == len(chunks) - 1 else (BEGINNING if i == 0 else BODY)
        out.append(pack_flit(st_id, chunk, dest, ftype, flit_bits))
    return out


def decode_baer(flit: BaerFlit) -> tuple[int, list[tuple[int, int]]]:
    fb = flit.flit_bits
    content = flit.word & ((1 << (fb - CRC_BITS)) - 1)
    if _content_crc(content, fb) != flit.word >> (fb - CRC_BITS):
        raise ChecksumMismatch(f"flit check failed (st_id field {flit.st_id})")
    occ = flit.occupancy
    if occ > slots_for(fb):
        raise ChecksumMismatch(f"occupancy {occ} exceeds slot count")
    spikes = []
    word = flit.word >> HEADER_BITS
    for _ in range(occ):
        pos = word & 0xFFF
        spikes.append((pos, -1 if (word >> POS_BITS) & 1 else 1))
        word >>= SLOT_BITS
    return flit.st_id, spikes


@dataclass(frozen=True)
class AerPacket:
    word: int

    @property
    def st_id(self) -> int:
        return self.word & 0xFFF

    @property
    def position(self) -> int:
        return (self.word >> 12) & 0xFFF

    @property
    def sign(self) -> int:
        return -1 if (self.word >> 24) & 1 else 1


def encode_aer(st_id: int, spikes) -> list[AerPacket]:
    if not 0 <= st_id < 1 << ID_BITS:
        raise PositionOverflow(f"st_id {st_id} does not fit {ID_BITS} bits", field="st_id")
    out = []
    for pos, sign in spikes:
        if not 0 <= pos < 1 << POS_BITS:
            raise PositionOverflow(f"position {pos} does not fit {POS_BITS} bits", field="position")
        out.append(AerPacket(st_id | (pos << 12) | ((1 if sign < 0 else 0) << 24)))
    return out


def decode_aer(packet: AerPacket) -> tuple[int, int, int]:
    return packet.st_id, packet.position, packet.sign


def wire_bits(n_spikes_per_row, aer: str, flit_bits: int = 256, per_flit: int | None = None) -> int:
    """Bits on the wire to ship rows with the given spike counts."""
    if aer == "legacy":
        return AER_BITS * sum(n_spikes_per_row)
    cap = slots_for(flit_bits) if per_flit is None else min(per_flit, slots_for(flit_bits))
    return flit_bits * sum(-(-k // cap) for k in n_spikes_per_row)


def write_dump(flits, path) -> None:
    """Binary trace: consecutive little-endian records of ``flit_bits / 8`` bytes."""
    with open(path, "wb") as fh:
        for f in flits:
            fh.write(f.to_bytes())


def read_dump(path, flit_bits: int = 256) -> list[BaerFlit]:
    size = (flit_bits + 7) // 8
    raw = open(path, "rb").read()
    if len(raw) % size:
        raise ValidationError(f"dump length {len(raw)} is not a multiple of {size}", field="path")
    return [BaerFlit.from_bytes(raw[i:i + size], flit_bits) for i in range(0, len(raw), size)]
