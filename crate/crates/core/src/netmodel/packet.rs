use std::fmt;
use std::net::SocketAddrV4;

use bitflags::bitflags;
use bytes::Bytes;

use super::NetError;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const SYN = 0b001;
        const ACK = 0b010;
        const FIN = 0b100;
    }
}

/// A TCP-like segment. `seq` is the byte offset of the first payload byte in
/// the sender's stream (the SYN does not consume sequence space); `ack` is the
/// number of contiguous bytes the sender has received from its peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPacket {
    pub src: SocketAddrV4,
    pub dst: SocketAddrV4,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub payload: Bytes,
}

impl SimPacket {
    pub fn control(src: SocketAddrV4, dst: SocketAddrV4, seq: u32, ack: u32, flags: TcpFlags) -> Self {
        Self {
            src,
            dst,
            seq,
            ack,
            flags,
            payload: Bytes::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn is_syn(&self) -> bool {
        self.flags.contains(TcpFlags::SYN)
    }

    pub fn is_fin(&self) -> bool {
        self.flags.contains(TcpFlags::FIN)
    }

    pub fn validate(&self, mss: usize) -> Result<(), NetError> {
        if self.src.port() == 0 || self.dst.port() == 0 {
            return Err(NetError::InvalidPacket(format!("port 0 in {self}")));
        }
        if self.payload.len() > mss {
            return Err(NetError::InvalidPacket(format!(
                "payload {} exceeds mss {mss}",
                self.payload.len()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SimPacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut flags = String::new();
        if self.flags.contains(TcpFlags::SYN) {
            flags.push('S');
        }
        if self.flags.contains(TcpFlags::FIN) {
            flags.push('F');
        }
        if self.flags.contains(TcpFlags::ACK) {
            flags.push('.');
        }
        write!(
            f,
            "{}>{} [{}] seq={} ack={} len={}",
            self.src,
            self.dst,
            flags,
            self.seq,
            self.ack,
            self.payload.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> SocketAddrV4 {
        s.parse().unwrap()
    }

    #[test]
    fn rejects_oversized_payload_and_port_zero() {
        let mut pkt = SimPacket::control(addr("10.0.0.1:1000"), addr("10.0.0.2:80"), 0, 0, TcpFlags::SYN);
        assert!(pkt.validate(1460).is_ok());
        pkt.payload = Bytes::from(vec![0; 1461]);
        assert!(pkt.validate(1460).is_err());
        let zero = SimPacket::control(addr("10.0.0.1:0"), addr("10.0.0.2:80"), 0, 0, TcpFlags::SYN);
        assert!(zero.validate(1460).is_err());
    }

    #[test]
    fn display_is_compact() {
        let pkt = SimPacket::control(
            addr("10.0.0.1:1000"),
            addr("10.0.0.2:80"),
            0,
            0,
            TcpFlags::SYN | TcpFlags::ACK,
        );
        assert_eq!(pkt.to_string(), "10.0.0.1:1000>10.0.0.2:80 [S.] seq=0 ack=0 len=0");
    }
}
