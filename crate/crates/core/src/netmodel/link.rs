use super::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// From the link's first endpoint to its second.
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Drop,
    Duplicate,
    /// Hold the packet back by this many extra units (breaks FIFO on purpose).
    Delay(Time),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Only the n-th data packet (1-based).
    Nth(u64),
    /// Every n-th data packet.
    Every(u64),
}

impl Trigger {
    fn fires(self, count: u64) -> bool {
        match self {
            Trigger::Nth(n) => count == n,
            Trigger::Every(n) => n > 0 && count.is_multiple_of(n),
        }
    }
}

/// Injectable fault on one direction of a link. Only packets carrying
/// payload are counted, so handshakes and FINs are never disturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkFault {
    pub direction: Direction,
    pub kind: FaultKind,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmission {
    Deliver(Time),
    Duplicate(Time),
    Delayed(Time),
    Dropped,
}

/// One direction of a link: a FIFO serializer followed by a fixed delay.
///
/// Occupancy is tracked in byte-time (`time * rate + bytes`) so many small
/// packets on a fast link add up exactly; only the arrival is rounded up to
/// an integer time.
#[derive(Debug, Clone, Default)]
pub(crate) struct Channel {
    busy_until: u128,
    data_packets: u64,
}

impl Channel {
    pub fn transmit(&mut self, now: Time, len: usize, delay: Time, rate: u64) -> Time {
        let rate = u128::from(rate);
        let start = (u128::from(now) * rate).max(self.busy_until);
        self.busy_until = start + len as u128;
        let done = self.busy_until.div_ceil(rate);
        done as Time + delay
    }

    pub fn apply_faults<'a>(
        &mut self,
        len: usize,
        arrival: Time,
        faults: impl Iterator<Item = &'a LinkFault>,
    ) -> Transmission {
        if len == 0 {
            return Transmission::Deliver(arrival);
        }
        self.data_packets += 1;
        let count = self.data_packets;
        for fault in faults {
            if fault.trigger.fires(count) {
                return match fault.kind {
                    FaultKind::Drop => Transmission::Dropped,
                    FaultKind::Duplicate => Transmission::Duplicate(arrival),
                    FaultKind::Delay(extra) => Transmission::Delayed(arrival + extra),
                };
            }
        }
        Transmission::Deliver(arrival)
    }
}
