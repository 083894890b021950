//! Drives the simulator by hand: one SYN to an open port, one to a closed
//! port, and the event trace that results.

use inferscan::simnet::{read_trace, write_trace, PairPolicy, PairPreset, PAIR_MM, PAIR_PORT, PAIR_SERVER};
use inferscan::transport::{TcpFlags, TcpSegment, Timestamp};

fn syn(dst_port: u16, seq: u32) -> TcpSegment {
    TcpSegment {
        src_addr: PAIR_MM,
        dst_addr: PAIR_SERVER,
        src_port: 40_000,
        dst_port,
        seq,
        ack: 0,
        flags: TcpFlags::SYN,
        ttl: 64,
        ipid: 0,
        timestamp: Timestamp::ZERO,
    }
}

fn main() {
    let mut sim = PairPreset::new(PairPolicy::Open, 5).scenario().build();
    sim.inject(PAIR_MM, syn(PAIR_PORT, 1), Timestamp::ZERO);
    sim.inject(PAIR_MM, syn(81, 2), Timestamp::from_secs(1));
    let events = sim.step(Timestamp::from_secs(40));

    let mut buf = Vec::new();
    write_trace(&mut buf, &events).expect("in-memory write");
    let back = read_trace(buf.as_slice()).expect("read back");
    assert_eq!(back, events);
    for e in &events {
        println!("{:>9.3}s {e:?}", e.at().as_secs_f64());
    }
    let path = sim.path(PAIR_MM, PAIR_SERVER);
    println!("\n{} events; one-way delay {:?}", events.len(), path.total_delay());
}
