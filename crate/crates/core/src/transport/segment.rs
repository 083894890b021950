use std::fmt;
use std::net::Ipv4Addr;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TransportError;

/// Monotonic time in integer nanoseconds. The simulator uses it as its
/// virtual clock; the live backend counts from transport creation.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs(s: u64) -> Self {
        Timestamp(s * 1_000_000_000)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Timestamp((s * 1e9).round() as u64)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(other.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;
    fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0 + d.as_nanos() as u64)
    }
}

impl Sub for Timestamp {
    type Output = Duration;
    fn sub(self, other: Timestamp) -> Duration {
        self.saturating_sub(other)
    }
}

/// TCP control bits we craft and interpret.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const SYN_ACK: TcpFlags = TcpFlags(0x12);
    pub const RST_ACK: TcpFlags = TcpFlags(0x14);
    const MASK: u8 = 0x17;

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits_truncate(bits: u8) -> Self {
        TcpFlags(bits & Self::MASK)
    }

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_syn_ack(self) -> bool {
        self.contains(Self::SYN_ACK)
    }

    pub fn is_bare_syn(self) -> bool {
        self.contains(Self::SYN) && !self.contains(Self::ACK)
    }

    pub fn is_rst(self) -> bool {
        self.contains(Self::RST)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (flag, c) in [
            (Self::SYN, 'S'),
            (Self::ACK, 'A'),
            (Self::RST, 'R'),
            (Self::FIN, 'F'),
        ] {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for TcpFlags {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut flags = TcpFlags::empty();
        for c in s.chars() {
            flags = flags
                | match c.to_ascii_uppercase() {
                    'S' => Self::SYN,
                    'A' => Self::ACK,
                    'R' => Self::RST,
                    'F' => Self::FIN,
                    other => return Err(format!("unknown TCP flag {other:?}")),
                };
        }
        Ok(flags)
    }
}

impl Serialize for TcpFlags {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TcpFlags {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Exact 4-tuple of a segment, oriented as the segment travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_addr: Ipv4Addr,
    pub dst_port: u16,
}

impl FlowKey {
    pub fn new(src_addr: Ipv4Addr, src_port: u16, dst_addr: Ipv4Addr, dst_port: u16) -> Self {
        Self {
            src_addr,
            src_port,
            dst_addr,
            dst_port,
        }
    }

    pub fn reversed(self) -> Self {
        Self {
            src_addr: self.dst_addr,
            src_port: self.dst_port,
            dst_addr: self.src_addr,
            dst_port: self.src_port,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpSegment {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ttl: u8,
    pub ipid: u16,
    pub timestamp: Timestamp,
}

pub const DEFAULT_TTL: u8 = 64;
const WINDOW: u16 = 1024;
pub const WIRE_LEN: usize = 40;

impl TcpSegment {
    pub fn flow_key(&self) -> FlowKey {
        FlowKey::new(self.src_addr, self.src_port, self.dst_addr, self.dst_port)
    }

    /// Reply skeleton travelling the reverse flow.
    pub fn reply(&self, flags: TcpFlags, seq: u32, ack: u32) -> TcpSegment {
        TcpSegment {
            src_addr: self.dst_addr,
            dst_addr: self.src_addr,
            src_port: self.dst_port,
            dst_port: self.src_port,
            seq,
            ack,
            flags,
            ttl: DEFAULT_TTL,
            ipid: 0,
            timestamp: self.timestamp,
        }
    }

    /// Minimal IPv4 + TCP header, no options, no payload.
    pub fn to_bytes(&self) -> [u8; WIRE_LEN] {
        let mut b = [0u8; WIRE_LEN];
        b[0] = 0x45;
        b[2..4].copy_from_slice(&(WIRE_LEN as u16).to_be_bytes());
        b[4..6].copy_from_slice(&self.ipid.to_be_bytes());
        b[8] = self.ttl;
        b[9] = 6;
        b[12..16].copy_from_slice(&self.src_addr.octets());
        b[16..20].copy_from_slice(&self.dst_addr.octets());
        let ip_sum = checksum(&[&b[..20]]);
        b[10..12].copy_from_slice(&ip_sum.to_be_bytes());

        let t = &mut b[20..];
        t[0..2].copy_from_slice(&self.src_port.to_be_bytes());
        t[2..4].copy_from_slice(&self.dst_port.to_be_bytes());
        t[4..8].copy_from_slice(&self.seq.to_be_bytes());
        t[8..12].copy_from_slice(&self.ack.to_be_bytes());
        t[12] = 5 << 4;
        t[13] = self.flags.bits();
        t[14..16].copy_from_slice(&WINDOW.to_be_bytes());
        let tcp_sum = tcp_checksum(self.src_addr, self.dst_addr, &b[20..]);
        b[36..38].copy_from_slice(&tcp_sum.to_be_bytes());
        b
    }

    /// Parses an IPv4 packet carrying TCP. The wire has no timestamp, so the
    /// caller supplies the capture time.
    pub fn parse(bytes: &[u8], timestamp: Timestamp) -> Result<TcpSegment, TransportError> {
        if bytes.len() < 20 || bytes[0] >> 4 != 4 {
            return Err(TransportError::Malformed("not an IPv4 packet".into()));
        }
        let ihl = usize::from(bytes[0] & 0x0f) * 4;
        if ihl < 20 || bytes.len() < ihl + 20 {
            return Err(TransportError::Malformed("truncated header".into()));
        }
        if bytes[9] != 6 {
            return Err(TransportError::Malformed("not TCP".into()));
        }
        let t = &bytes[ihl..];
        Ok(TcpSegment {
            src_addr: Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]),
            dst_addr: Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]),
            src_port: u16::from_be_bytes([t[0], t[1]]),
            dst_port: u16::from_be_bytes([t[2], t[3]]),
            seq: u32::from_be_bytes([t[4], t[5], t[6], t[7]]),
            ack: u32::from_be_bytes([t[8], t[9], t[10], t[11]]),
            flags: TcpFlags::from_bits_truncate(t[13]),
            ttl: bytes[8],
            ipid: u16::from_be_bytes([bytes[4], bytes[5]]),
            timestamp,
        })
    }
}

fn checksum(parts: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for part in parts {
        let mut chunks = part.chunks_exact(2);
        for c in &mut chunks {
            sum += u32::from(u16::from_be_bytes([c[0], c[1]]));
        }
        if let [last] = chunks.remainder() {
            sum += u32::from(*last) << 8;
        }
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn tcp_checksum(src: Ipv4Addr, dst: Ipv4Addr, tcp: &[u8]) -> u16 {
    let mut pseudo = [0u8; 12];
    pseudo[0..4].copy_from_slice(&src.octets());
    pseudo[4..8].copy_from_slice(&dst.octets());
    pseudo[9] = 6;
    pseudo[10..12].copy_from_slice(&(tcp.len() as u16).to_be_bytes());
    let mut hdr = [0u8; 20];
    hdr.copy_from_slice(&tcp[..20]);
    hdr[16] = 0;
    hdr[17] = 0;
    checksum(&[&pseudo, &hdr])
}

/// Deterministic initial-sequence-number source. Two vantage points sharing
/// the seed can reconstruct each other's sequence numbers by index.
#[derive(Debug, Clone)]
pub struct IsnGenerator {
    seed: u64,
    next_index: u64,
}

impl IsnGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            next_index: 0,
        }
    }

    pub fn isn_at(&self, index: u64) -> u32 {
        (splitmix64(self.seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)) >> 32) as u32
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Returns `(index, isn)` and advances.
    pub fn next(&mut self) -> (u64, u32) {
        let i = self.next_index;
        self.next_index += 1;
        (i, self.isn_at(i))
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a caller wants on the wire. `src_addr = None` means "our own
/// address"; anything else is a spoofed source.
#[derive(Debug, Clone, Copy)]
pub struct SegmentSpec {
    pub src_addr: Option<Ipv4Addr>,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: Option<u32>,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ttl: u8,
    pub ipid: u16,
}

impl SegmentSpec {
    pub fn new(dst_addr: Ipv4Addr, src_port: u16, dst_port: u16, flags: TcpFlags) -> Self {
        Self {
            src_addr: None,
            dst_addr,
            src_port,
            dst_port,
            seq: None,
            ack: 0,
            flags,
            ttl: DEFAULT_TTL,
            ipid: 0,
        }
    }

    pub fn spoofed_from(mut self, src: Ipv4Addr) -> Self {
        self.src_addr = Some(src);
        self
    }

    pub fn seq(mut self, seq: u32) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn ack(mut self, ack: u32) -> Self {
        self.ack = ack;
        self
    }

    pub fn ttl(mut self, ttl: u8) -> Self {
        self.ttl = ttl;
        self
    }
}

/// Builds a segment from `spec`, validating field ranges and the spoofing
/// capability of the backend.
pub fn craft_segment(
    spec: &SegmentSpec,
    local_addr: Ipv4Addr,
    spoofing_supported: bool,
    isn: &mut IsnGenerator,
) -> Result<TcpSegment, TransportError> {
    if spec.ttl == 0 {
        return Err(TransportError::InvalidField("ttl must be 1..=255".into()));
    }
    if spec.flags.is_empty() {
        return Err(TransportError::InvalidField(
            "crafted probes need at least one flag".into(),
        ));
    }
    let src_addr = spec.src_addr.unwrap_or(local_addr);
    if src_addr != local_addr && !spoofing_supported {
        return Err(TransportError::UnsupportedSpoofing);
    }
    let seq = match spec.seq {
        Some(s) => s,
        None => isn.next().1,
    };
    Ok(TcpSegment {
        src_addr,
        dst_addr: spec.dst_addr,
        src_port: spec.src_port,
        dst_port: spec.dst_port,
        seq,
        ack: spec.ack,
        flags: spec.flags,
        ttl: spec.ttl,
        ipid: spec.ipid,
        timestamp: Timestamp::ZERO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(n: u32) -> Ipv4Addr {
        Ipv4Addr::from(n)
    }

    #[test]
    fn craft_syn_ack_with_ttl() {
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(addr(0x0a00_0001), 9001, 80, TcpFlags::SYN_ACK).ttl(5);
        let seg = craft_segment(&spec, addr(0x0a00_0002), false, &mut isn).unwrap();
        assert!(seg.flags.is_syn_ack());
        assert_eq!(seg.ttl, 5);
        assert_eq!(seg.src_port, 9001);
        assert_eq!(seg.seq, IsnGenerator::new(1).isn_at(0));
    }

    #[test]
    fn craft_rst_copies_seq() {
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(addr(1), 1, 2, TcpFlags::RST).seq(0xdead_beef);
        let seg = craft_segment(&spec, addr(2), false, &mut isn).unwrap();
        assert_eq!(seg.seq, 0xdead_beef);
        assert_eq!(isn.next_index(), 0, "explicit seq must not consume an ISN");
    }

    #[test]
    fn craft_rejects_ttl_zero_and_empty_flags() {
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(addr(1), 1, 2, TcpFlags::SYN).ttl(0);
        assert!(matches!(
            craft_segment(&spec, addr(2), true, &mut isn),
            Err(TransportError::InvalidField(_))
        ));
        let spec = SegmentSpec::new(addr(1), 1, 2, TcpFlags::empty());
        assert!(matches!(
            craft_segment(&spec, addr(2), true, &mut isn),
            Err(TransportError::InvalidField(_))
        ));
    }

    #[test]
    fn spoofing_needs_backend_support() {
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(addr(1), 1, 2, TcpFlags::SYN).spoofed_from(addr(9));
        assert!(matches!(
            craft_segment(&spec, addr(2), false, &mut isn),
            Err(TransportError::UnsupportedSpoofing)
        ));
        let seg = craft_segment(&spec, addr(2), true, &mut isn).unwrap();
        assert_eq!(seg.src_addr, addr(9));
    }

    #[test]
    fn isn_generators_agree_by_index() {
        let mut a = IsnGenerator::new(77);
        let b = IsnGenerator::new(77);
        for i in 0..100 {
            assert_eq!(a.next(), (i, b.isn_at(i)));
        }
        assert_ne!(IsnGenerator::new(78).isn_at(0), b.isn_at(0));
    }

    #[test]
    fn wire_checksums_verify() {
        let seg = TcpSegment {
            src_addr: addr(0xc0a8_0001),
            dst_addr: addr(0xc0a8_00c7),
            src_port: 9001,
            dst_port: 443,
            seq: 1,
            ack: 2,
            flags: TcpFlags::SYN_ACK,
            ttl: 3,
            ipid: 77,
            timestamp: Timestamp::ZERO,
        };
        let b = seg.to_bytes();
        assert_eq!(checksum(&[&b[..20]]), 0);
        let mut pseudo = [0u8; 12];
        pseudo[0..4].copy_from_slice(&b[12..16]);
        pseudo[4..8].copy_from_slice(&b[16..20]);
        pseudo[9] = 6;
        pseudo[11] = 20;
        assert_eq!(checksum(&[&pseudo, &b[20..]]), 0);
    }

    #[test]
    fn flags_text_form() {
        assert_eq!(TcpFlags::SYN_ACK.to_string(), "SA");
        assert_eq!("RA".parse::<TcpFlags>().unwrap(), TcpFlags::RST_ACK);
        assert!("X".parse::<TcpFlags>().is_err());
    }

    prop_compose! {
        fn any_segment()(src in any::<u32>(), dst in any::<u32>(), sp in any::<u16>(),
                         dp in any::<u16>(), seq in any::<u32>(), ack in any::<u32>(),
                         flags in 1u8..0x18, ttl in 1u8..=255, ipid in any::<u16>(),
                         ts in any::<u64>()) -> TcpSegment {
            TcpSegment {
                src_addr: addr(src), dst_addr: addr(dst), src_port: sp, dst_port: dp,
                seq, ack, flags: TcpFlags::from_bits_truncate(flags), ttl, ipid,
                timestamp: Timestamp(ts),
            }
        }
    }

    proptest! {
        #[test]
        fn wire_round_trip(seg in any_segment()) {
            let parsed = TcpSegment::parse(&seg.to_bytes(), seg.timestamp).unwrap();
            prop_assert_eq!(parsed, seg);
        }

        #[test]
        fn json_round_trip(seg in any_segment()) {
            let line = serde_json::to_string(&seg).unwrap();
            let back: TcpSegment = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back, seg);
        }
    }
}
