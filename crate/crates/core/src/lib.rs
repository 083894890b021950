//! Indirect inference of TCP/IP connectivity between hosts you do not
//! control.
//!
//! Three techniques are implemented on top of a backend-neutral
//! [`transport::Transport`]:
//!
//! * the hybrid IPID idle scan ([`idlescan`], [`classify`]), which tells
//!   whether SYN/ACKs or RSTs between a client and a server are dropped;
//! * SYN-backlog scans ([`backlog`]), which tell whether SYNs and RSTs from
//!   a second vantage point reach a server;
//! * dual-port TCP traceroutes ([`tracer`]), which locate where filtering
//!   happens.
//!
//! [`simnet`] is a deterministic network simulator used as ground truth,
//! [`analytics`] reproduces the aggregate analyses, and [`store`] persists
//! and prunes records.

pub mod analytics;
pub mod backlog;
pub mod campaign;
pub mod classify;
pub mod cli;
pub mod endpoint;
pub mod idlescan;
pub mod prefix;
pub mod simnet;
pub mod store;
pub mod tracer;
pub mod transport;
