//! ContentFlow: mapping HTTP content to network flows.
//!
//! A content-management layer sits on top of an OpenFlow-style switch fabric.
//! Client HTTP sessions are redirected to a transparent proxy, which names the
//! requested content and asks the controller where to fetch it from. On a miss
//! the controller hands out a source-port *handle* that identifies the
//! server-to-proxy flow, installs a fork rule that duplicates that flow toward a
//! cache, and tells the cache which content name to file the stream under. The
//! cache reassembles the one-sided stream without a TCP session of its own and
//! acknowledges the controller once the whole body is stored; later requests
//! for the same name are served from the cache.
//!
//! Everything runs inside a deterministic discrete-event simulator
//! ([`netmodel`]), driven by the scenario runner in [`scenarios`].

pub mod cache;
pub mod controller;
pub mod exec;
pub mod httpsem;
pub mod msg;
pub mod netmodel;
pub mod proxy;
pub mod scenarios;
pub mod switchfab;
pub mod trace;

pub use httpsem::ContentName;
pub use netmodel::{NodeId, SimPacket, Time};
